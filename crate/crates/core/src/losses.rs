//! Gram-matrix style loss, feature-space content loss and their weighted sum,
//! each with its gradient with respect to the output image's features.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ensure_same_shape, Tensor4};
use crate::vgg::{FeatureSet, LayerSelection};

/// Unnormalized channel correlations `F·Fᵀ` of a `(1, D, H, W)` feature map
/// viewed as a `D × M` matrix with `M = H·W`.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    c: usize,
    values: Vec<f32>,
}

impl GramMatrix {
    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.c + j]
    }

    /// Row-major `c × c` values.
    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

pub type GramTargets = BTreeMap<String, GramMatrix>;

/// Dot product accumulated in f64 over eight fixed lanes.
fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    let mut lanes = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in ca.by_ref().zip(cb.by_ref()) {
        for k in 0..8 {
            lanes[k] += x[k] as f64 * y[k] as f64;
        }
    }
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| *x as f64 * *y as f64)
        .sum();
    lanes.iter().sum::<f64>() + tail
}

/// Upper triangle computed once and mirrored, so the result is exactly symmetric.
/// Products are accumulated in f64 before rounding, which keeps the f32 result
/// independent of the order of spatial positions for all practical inputs.
pub fn gram(f: &Tensor4) -> Result<GramMatrix> {
    let [n, c, _, _] = f.dims();
    if n != 1 {
        return Err(Error::config(format!("gram expects batch 1, got {n}")));
    }
    let mut values = vec![0.0f32; c * c];
    for i in 0..c {
        let fi = f.plane(0, i);
        for j in i..c {
            let v = dot_f64(fi, f.plane(0, j)) as f32;
            values[i * c + j] = v;
            values[j * c + i] = v;
        }
    }
    Ok(GramMatrix { c, values })
}

/// `½‖f − target‖²` and its gradient `f − target`.
pub fn content_loss(f: &Tensor4, target: &Tensor4) -> Result<(f32, Tensor4)> {
    ensure_same_shape("content_loss", f, target)?;
    let mut grad = f.clone();
    let mut acc = 0.0f64;
    for (g, &t) in grad.data_mut().iter_mut().zip(target.data()) {
        *g -= t;
        acc += (*g as f64) * (*g as f64);
    }
    Ok(((0.5 * acc) as f32, grad))
}

/// Style loss of a single layer: `w/(4D²M²)·‖G − Ĝ‖²` and its feature gradient
/// `w/(D²M²)·(G − Ĝ)·F`.
///
/// The two chain-rule terms through `G = F·Fᵀ` coincide because `G − Ĝ` is
/// symmetric, which turns the `1/4` of the loss into the `1` of the gradient.
pub fn layer_style_loss(f: &Tensor4, target: &GramMatrix, layer_weight: f32) -> Result<(f32, Tensor4)> {
    let g = gram(f)?;
    let [_, d, h, w] = f.dims();
    if target.c != d {
        return Err(Error::config(format!(
            "target Gram is {0}x{0} but the feature map has {d} channels",
            target.c
        )));
    }
    let m = h * w;
    let diff: Vec<f32> = g.values.iter().zip(&target.values).map(|(a, b)| a - b).collect();
    let sq: f64 = diff.iter().map(|&v| (v as f64) * (v as f64)).sum();
    let norm = (d as f64 * d as f64) * (m as f64 * m as f64);
    let loss = (layer_weight as f64 * sq / (4.0 * norm)) as f32;

    let scale = (layer_weight as f64 / norm) as f32;
    let mut grad = f.zeros_like();
    // SAFETY: diff is d × d, the feature map is d × m contiguous, grad is d × m.
    unsafe {
        matrixmultiply::sgemm(
            d,
            d,
            m,
            scale,
            diff.as_ptr(),
            d as isize,
            1,
            f.data().as_ptr(),
            m as isize,
            1,
            0.0,
            grad.data_mut().as_mut_ptr(),
            m as isize,
            1,
        );
    }
    Ok((loss, grad))
}

/// Sum of [`layer_style_loss`] over the selected style layers.
///
/// Returns the total, the per-layer losses in selection order, and the per-layer gradients.
pub fn style_loss(
    feats: &FeatureSet,
    target_grams: &GramTargets,
    selection: &LayerSelection,
) -> Result<(f32, Vec<f32>, FeatureSet)> {
    let mut total = 0.0f64;
    let mut per_layer = Vec::with_capacity(selection.style_layers.len());
    let mut grads = FeatureSet::new();
    for (layer, &weight) in selection.style_layers.iter().zip(&selection.style_layer_weights) {
        let f = feats.require(layer)?;
        let target = target_grams
            .get(layer)
            .ok_or_else(|| Error::config(format!("no target Gram for style layer {layer}")))?;
        let (loss, grad) = layer_style_loss(f, target, weight)?;
        total += loss as f64;
        per_layer.push(loss);
        grads.accumulate(layer, grad)?;
    }
    Ok((total as f32, per_layer, grads))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f32,
    pub beta: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1e4,
            beta: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) || !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::config(format!(
                "loss weights must be finite and non-negative, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f32,
    pub content: f32,
    pub style: f32,
    pub per_style_layer: Vec<f32>,
}

/// `α·content + β·style` and the gradient at each feature layer. A layer used
/// both as content and style layer receives the sum of both gradients.
pub fn total_loss(
    feats: &FeatureSet,
    content_target: &FeatureSet,
    style_target_grams: &GramTargets,
    weights: &LossWeights,
    selection: &LayerSelection,
) -> Result<(LossReport, FeatureSet)> {
    let layer = &selection.content_layer;
    let (content, mut content_grad) = content_loss(feats.require(layer)?, content_target.require(layer)?)?;
    let (style, per_style_layer, style_grads) = style_loss(feats, style_target_grams, selection)?;

    let mut grads = FeatureSet::new();
    content_grad.scale(weights.alpha);
    grads.accumulate(layer, content_grad)?;
    for (l, g) in style_grads.iter() {
        let mut g = g.clone();
        g.scale(weights.beta);
        grads.accumulate(l, g)?;
    }
    let total = (weights.alpha as f64 * content as f64 + weights.beta as f64 * style as f64) as f32;
    Ok((
        LossReport {
            total,
            content,
            style,
            per_style_layer,
        },
        grads,
    ))
}
