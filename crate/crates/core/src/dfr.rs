//! Deep feature rotation: loss targets built from feature maps rotated in the
//! spatial plane and blended with the originals.
//!
//! Rotations are counter-clockwise. For a plane with `h` rows and `w` columns:
//!
//! | angle | output dims | `out[i][j]`            |
//! |-------|-------------|------------------------|
//! | 0     | `h × w`     | `in[i][j]`             |
//! | 90    | `w × h`     | `in[j][w − 1 − i]`     |
//! | 180   | `h × w`     | `in[h − 1 − i][w − 1 − j]` |
//! | 270   | `w × h`     | `in[h − 1 − j][i]`     |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor4};
use crate::vgg::{FeatureSet, LayerSelection};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Angle {
    #[default]
    Deg0,
    Deg90,
    Deg180,
    Deg270,
}

impl Angle {
    pub const ALL: [Angle; 4] = [Angle::Deg0, Angle::Deg90, Angle::Deg180, Angle::Deg270];

    pub fn degrees(self) -> u32 {
        match self {
            Angle::Deg0 => 0,
            Angle::Deg90 => 90,
            Angle::Deg180 => 180,
            Angle::Deg270 => 270,
        }
    }
}

impl TryFrom<u32> for Angle {
    type Error = Error;

    fn try_from(deg: u32) -> Result<Self> {
        match deg {
            0 => Ok(Angle::Deg0),
            90 => Ok(Angle::Deg90),
            180 => Ok(Angle::Deg180),
            270 => Ok(Angle::Deg270),
            other => Err(Error::config(format!(
                "rotation angle must be one of 0, 90, 180, 270; got {other}"
            ))),
        }
    }
}

impl From<Angle> for u32 {
    fn from(a: Angle) -> u32 {
        a.degrees()
    }
}

impl FromStr for Angle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let deg: u32 = s
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("invalid angle {s:?}")))?;
        Angle::try_from(deg)
    }
}

impl fmt::Display for Angle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.degrees())
    }
}

/// Which loss targets are rotated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApplyTo {
    #[default]
    Both,
    StyleOnly,
    ContentOnly,
}

impl ApplyTo {
    fn content(self) -> bool {
        matches!(self, ApplyTo::Both | ApplyTo::ContentOnly)
    }

    fn style(self) -> bool {
        matches!(self, ApplyTo::Both | ApplyTo::StyleOnly)
    }
}

impl FromStr for ApplyTo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(ApplyTo::Both),
            "style_only" => Ok(ApplyTo::StyleOnly),
            "content_only" => Ok(ApplyTo::ContentOnly),
            other => Err(Error::config(format!(
                "apply-to must be both, style_only or content_only; got {other:?}"
            ))),
        }
    }
}

/// One cell of the (angle × λ) grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationConfig {
    angle: Angle,
    lambda: f32,
    apply_to: ApplyTo,
}

impl RotationConfig {
    pub fn new(angle: Angle, lambda: f32, apply_to: ApplyTo) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::config(format!(
                "rotation weight must lie in [0, 1], got {lambda}"
            )));
        }
        Ok(Self {
            angle,
            lambda,
            apply_to,
        })
    }

    pub fn angle(&self) -> Angle {
        self.angle
    }

    pub fn lambda(&self) -> f32 {
        self.lambda
    }

    pub fn apply_to(&self) -> ApplyTo {
        self.apply_to
    }
}

impl Default for RotationConfig {
    fn default() -> Self {
        Self {
            angle: Angle::Deg0,
            lambda: 1.0,
            apply_to: ApplyTo::Both,
        }
    }
}

/// Rotate every channel plane counter-clockwise by `angle`.
pub fn rotate_feature(w: &Tensor4, angle: Angle) -> Tensor4 {
    let [n, c, h, wd] = w.dims();
    if angle == Angle::Deg0 {
        return w.clone();
    }
    let (oh, ow) = match angle {
        Angle::Deg90 | Angle::Deg270 => (wd, h),
        _ => (h, wd),
    };
    let mut out = Vec::with_capacity(w.len());
    for ni in 0..n {
        for ci in 0..c {
            let plane = w.plane(ni, ci);
            for i in 0..oh {
                for j in 0..ow {
                    let (y, x) = match angle {
                        Angle::Deg90 => (j, wd - 1 - i),
                        Angle::Deg180 => (h - 1 - i, wd - 1 - j),
                        Angle::Deg270 => (h - 1 - j, i),
                        Angle::Deg0 => unreachable!(),
                    };
                    out.push(plane[y * wd + x]);
                }
            }
        }
    }
    Tensor4::from_vec([n, c, oh, ow], out).expect("rotation preserves element count")
}

/// `(1 − λ)·W + λ·rot(W)`; a rotated map whose shape changed is bilinearly
/// resized back to the shape of `W` first.
pub fn make_target(w: &Tensor4, config: &RotationConfig) -> Result<Tensor4> {
    if config.lambda == 0.0 || config.angle == Angle::Deg0 {
        return Ok(w.clone());
    }
    let mut rotated = rotate_feature(w, config.angle);
    if !rotated.same_shape(w) {
        rotated = tensor::resize_bilinear_spatial(&rotated, w.height(), w.width())?;
    }
    tensor::axpy_blend(w, &rotated, config.lambda)
}

/// Content and style targets for one job. Computed once, before optimization starts.
pub fn build_loss_targets(
    content_feats: &FeatureSet,
    style_feats: &FeatureSet,
    selection: &LayerSelection,
    config: &RotationConfig,
) -> Result<(FeatureSet, FeatureSet)> {
    let layer = &selection.content_layer;
    let content = content_feats
        .get(layer)
        .ok_or_else(|| Error::config(format!("content features lack content layer {layer}")))?;
    let mut content_target = FeatureSet::new();
    content_target.insert(
        layer.as_str(),
        if config.apply_to.content() {
            make_target(content, config)?
        } else {
            content.clone()
        },
    );

    let mut style_targets = FeatureSet::new();
    for layer in &selection.style_layers {
        let f = style_feats
            .get(layer)
            .ok_or_else(|| Error::config(format!("style features lack style layer {layer}")))?;
        style_targets.insert(
            layer.as_str(),
            if config.apply_to.style() {
                make_target(f, config)?
            } else {
                f.clone()
            },
        );
    }
    Ok((content_target, style_targets))
}
