//! The VGG19 convolutional trunk up to `conv5_1`, run forward with a tape and
//! backward to the input image.

use std::collections::BTreeMap;
use std::path::Path;

use crate::dfrw::{self, DfrwFile, Manifest, Preprocess, RawTensor};
use crate::error::{Error, Result};
use crate::raster::Image;
use crate::tensor::{self, PoolIndices, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: &'static str,
    pub in_channels: usize,
    pub out_channels: usize,
    /// 1-based block; a 2×2 pool precedes the first layer of blocks 2..=5.
    pub block: u32,
}

const fn layer(name: &'static str, in_channels: usize, out_channels: usize, block: u32) -> LayerSpec {
    LayerSpec {
        name,
        in_channels,
        out_channels,
        block,
    }
}

/// VGG19 convolutions in network order, truncated after `conv5_1`.
pub const LAYERS: [LayerSpec; 13] = [
    layer("conv1_1", 3, 64, 1),
    layer("conv1_2", 64, 64, 1),
    layer("conv2_1", 64, 128, 2),
    layer("conv2_2", 128, 128, 2),
    layer("conv3_1", 128, 256, 3),
    layer("conv3_2", 256, 256, 3),
    layer("conv3_3", 256, 256, 3),
    layer("conv3_4", 256, 256, 3),
    layer("conv4_1", 256, 512, 4),
    layer("conv4_2", 512, 512, 4),
    layer("conv4_3", 512, 512, 4),
    layer("conv4_4", 512, 512, 4),
    layer("conv5_1", 512, 512, 5),
];

pub fn layer_index(name: &str) -> Option<usize> {
    LAYERS.iter().position(|l| l.name == name)
}

fn pooled_before(index: usize) -> bool {
    index > 0 && LAYERS[index].block != LAYERS[index - 1].block
}

#[derive(Clone, Debug)]
struct ConvLayer {
    kernel: Tensor4,
    bias: Vec<f32>,
}

/// Frozen convolution weights plus the input normalization they were trained with.
#[derive(Clone, Debug)]
pub struct VggWeights {
    layers: Vec<ConvLayer>,
    mean: [f32; 3],
    std: [f32; 3],
}

impl VggWeights {
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_dfrw(dfrw::read(path)?)
    }

    pub fn from_dfrw(file: DfrwFile) -> Result<Self> {
        let Preprocess { mean, std } = file.manifest.preprocess;
        if std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::format(
                "manifest",
                format!("invalid preprocessing constants mean={mean:?} std={std:?}"),
            ));
        }
        let mut by_name: BTreeMap<String, RawTensor> = BTreeMap::new();
        for t in file.tensors {
            if by_name.contains_key(&t.name) {
                return Err(Error::format(&t.name, "duplicate tensor"));
            }
            by_name.insert(t.name.clone(), t);
        }
        let mut take = |name: String, dims: Vec<usize>| -> Result<Vec<f32>> {
            let t = by_name
                .remove(&name)
                .ok_or_else(|| Error::format(&name, "missing layer"))?;
            if t.dims != dims {
                return Err(Error::format(
                    &name,
                    format!("shape {:?}, expected {dims:?}", t.dims),
                ));
            }
            Ok(t.data)
        };
        let mut layers = Vec::with_capacity(LAYERS.len());
        for spec in &LAYERS {
            let kdims = [spec.out_channels, spec.in_channels, 3, 3];
            let kernel = take(format!("{}.weight", spec.name), kdims.to_vec())?;
            let bias = take(format!("{}.bias", spec.name), vec![spec.out_channels])?;
            if kernel.iter().chain(&bias).any(|v| !v.is_finite()) {
                return Err(Error::format(spec.name, "non-finite weight"));
            }
            layers.push(ConvLayer {
                kernel: Tensor4::from_vec(kdims, kernel)?,
                bias,
            });
        }
        if let Some(extra) = by_name.keys().next() {
            log::warn!("ignoring {} unexpected tensor(s), first: {extra}", by_name.len());
        }
        Ok(Self { layers, mean, std })
    }

    /// Serialize back to the DFRW container, tensors in network order.
    pub fn to_dfrw(&self, source_checksum: &str) -> DfrwFile {
        let mut tensors = Vec::with_capacity(2 * LAYERS.len());
        for (spec, layer) in LAYERS.iter().zip(&self.layers) {
            tensors.push(RawTensor {
                name: format!("{}.weight", spec.name),
                dims: layer.kernel.dims().to_vec(),
                data: layer.kernel.data().to_vec(),
            });
            tensors.push(RawTensor {
                name: format!("{}.bias", spec.name),
                dims: vec![layer.bias.len()],
                data: layer.bias.clone(),
            });
        }
        DfrwFile {
            manifest: Manifest {
                layer_order: LAYERS.iter().map(|l| l.name.to_owned()).collect(),
                preprocess: Preprocess {
                    mean: self.mean,
                    std: self.std,
                },
                source_checksum: source_checksum.to_owned(),
            },
            tensors,
        }
    }

    pub fn kernel(&self, name: &str) -> Option<&Tensor4> {
        layer_index(name).map(|i| &self.layers[i].kernel)
    }

    pub fn bias(&self, name: &str) -> Option<&[f32]> {
        layer_index(name).map(|i| self.layers[i].bias.as_slice())
    }

    pub fn mean(&self) -> [f32; 3] {
        self.mean
    }

    pub fn std(&self) -> [f32; 3] {
        self.std
    }
}

/// Which layers feed the content and style terms, and how style layers are weighted.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSelection {
    pub content_layer: String,
    pub style_layers: Vec<String>,
    pub style_layer_weights: Vec<f32>,
}

impl Default for LayerSelection {
    fn default() -> Self {
        Self {
            content_layer: "conv4_2".into(),
            style_layers: ["conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1"]
                .map(String::from)
                .to_vec(),
            style_layer_weights: vec![1.0; 5],
        }
    }
}

impl LayerSelection {
    pub fn validate(&self) -> Result<()> {
        if self.style_layers.is_empty() {
            return Err(Error::config("at least one style layer is required"));
        }
        if self.style_layers.len() != self.style_layer_weights.len() {
            return Err(Error::config(format!(
                "{} style layers but {} style layer weights",
                self.style_layers.len(),
                self.style_layer_weights.len()
            )));
        }
        for name in std::iter::once(&self.content_layer).chain(&self.style_layers) {
            if layer_index(name).is_none() {
                return Err(Error::config(format!("unknown layer {name:?}")));
            }
        }
        if let Some(w) = self.style_layer_weights.iter().find(|w| !(**w >= 0.0)) {
            return Err(Error::config(format!("style layer weight {w} is negative")));
        }
        Ok(())
    }

    /// Every layer the selection reads, deduplicated, in network order.
    pub fn layers(&self) -> Vec<&'static str> {
        LAYERS
            .iter()
            .filter(|l| l.name == self.content_layer || self.style_layers.iter().any(|s| s == l.name))
            .map(|l| l.name)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PoolMode {
    #[default]
    Max,
    Avg,
}

/// Feature maps keyed by layer name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureSet(BTreeMap<String, Tensor4>);

impl FeatureSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, layer: &str) -> Option<&Tensor4> {
        self.0.get(layer)
    }

    pub fn insert(&mut self, layer: impl Into<String>, t: Tensor4) -> Option<Tensor4> {
        self.0.insert(layer.into(), t)
    }

    /// Add `t` into the entry for `layer`, creating it when absent.
    pub fn accumulate(&mut self, layer: &str, t: Tensor4) -> Result<()> {
        match self.0.get_mut(layer) {
            Some(existing) => existing.add_assign(&t),
            None => {
                self.0.insert(layer.to_owned(), t);
                Ok(())
            }
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor4)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub(crate) fn require(&self, layer: &str) -> Result<&Tensor4> {
        self.get(layer)
            .ok_or_else(|| Error::config(format!("feature set has no layer {layer}")))
    }
}

/// Forward-pass record sufficient to back-propagate to the image.
///
/// Post-ReLU activations double as ReLU masks; convolution input gradients
/// only need the kernels.
#[derive(Clone, Debug)]
pub struct Tape {
    pool: PoolMode,
    input_dims: [usize; 4],
    activations: Vec<Tensor4>,
    pools: Vec<Option<PoolIndices>>,
}

impl Tape {
    /// Number of layers recorded, counting from `conv1_1`.
    pub fn depth(&self) -> usize {
        self.activations.len()
    }
}

/// Normalize an RGB image into a `(1, 3, H, W)` tensor: `(p/255 − mean) / std` per channel.
pub fn preprocess(image: &Image, weights: &VggWeights) -> Tensor4 {
    let (w, h) = (image.width(), image.height());
    let mut data = vec![0.0f32; 3 * w * h];
    for (i, px) in image.pixels().chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * w * h + i] = (px[c] as f32 / 255.0 - weights.mean[c]) / weights.std[c];
        }
    }
    Tensor4::from_vec([1, 3, h, w], data).expect("image dims are non-zero")
}

/// Inverse of [`preprocess`], clamping to `[0, 255]` and rounding to the nearest level.
pub fn postprocess(t: &Tensor4, weights: &VggWeights) -> Result<Image> {
    let [n, c, h, w] = t.dims();
    if n != 1 || c != 3 {
        return Err(Error::config(format!(
            "postprocess expects a (1, 3, H, W) tensor, got {:?}",
            t.dims()
        )));
    }
    let mut pixels = vec![0u8; 3 * w * h];
    for ch in 0..3 {
        for (i, &v) in t.plane(0, ch).iter().enumerate() {
            let p = (v * weights.std[ch] + weights.mean[ch]) * 255.0;
            pixels[3 * i + ch] = p.round().clamp(0.0, 255.0) as u8;
        }
    }
    Image::new(w as u32, h as u32, pixels)
}

/// Run the trunk as far as the deepest selected layer, capturing post-ReLU
/// features at the selected layers.
pub fn extract_features(
    image: &Tensor4,
    weights: &VggWeights,
    selection: &LayerSelection,
    pool: PoolMode,
) -> Result<(FeatureSet, Tape)> {
    selection.validate()?;
    let wanted = selection.layers();
    let deepest = wanted
        .iter()
        .filter_map(|l| layer_index(l))
        .max()
        .expect("validated selection is non-empty");
    let [n, c, h, w] = image.dims();
    if n != 1 || c != 3 {
        return Err(Error::config(format!(
            "expected a (1, 3, H, W) image tensor, got {:?}",
            image.dims()
        )));
    }
    let divisor = 1usize << (LAYERS[deepest].block - 1);
    if h % divisor != 0 || w % divisor != 0 {
        return Err(Error::config(format!(
            "image is {h}x{w} but height and width must be divisible by {divisor} to reach {}",
            LAYERS[deepest].name
        )));
    }

    let mut activations: Vec<Tensor4> = Vec::with_capacity(deepest + 1);
    let mut pools = Vec::with_capacity(deepest + 1);
    for (i, spec) in LAYERS.iter().enumerate().take(deepest + 1) {
        let input = match activations.last() {
            None => image,
            Some(prev) => prev,
        };
        let (conv_in, indices) = if pooled_before(i) {
            match pool {
                PoolMode::Max => {
                    let (p, idx) = tensor::maxpool2x2_forward(input)?;
                    (Some(p), Some(idx))
                }
                PoolMode::Avg => (Some(tensor::avgpool2x2_forward(input)?), None),
            }
        } else {
            (None, None)
        };
        let layer = &weights.layers[i];
        let pre = tensor::conv2d_forward(conv_in.as_ref().unwrap_or(input), &layer.kernel, &layer.bias)
            .map_err(|e| Error::config(format!("{}: {e}", spec.name)))?;
        activations.push(tensor::relu_forward(&pre));
        pools.push(indices);
    }

    let mut features = FeatureSet::new();
    for name in wanted {
        let i = layer_index(name).expect("validated");
        features.insert(name, activations[i].clone());
    }
    let tape = Tape {
        pool,
        input_dims: image.dims(),
        activations,
        pools,
    };
    Ok((features, tape))
}

/// Back-propagate gradients injected at feature layers to a gradient on the image tensor.
pub fn backward_to_image(feature_grads: &FeatureSet, tape: &Tape, weights: &VggWeights) -> Result<Tensor4> {
    let mut injected: Vec<Option<&Tensor4>> = vec![None; tape.depth()];
    for (name, g) in feature_grads.iter() {
        let i = layer_index(name)
            .filter(|&i| i < tape.depth())
            .ok_or_else(|| Error::config(format!("gradient for layer {name} which was not taped")))?;
        if !g.same_shape(&tape.activations[i]) {
            return Err(Error::config(format!(
                "gradient for {name} has shape {:?}, feature has {:?}",
                g.dims(),
                tape.activations[i].dims()
            )));
        }
        injected[i] = Some(g);
    }
    let Some(deepest) = injected.iter().rposition(Option::is_some) else {
        let [n, c, h, w] = tape.input_dims;
        return Tensor4::zeros(n, c, h, w);
    };

    let mut carried: Option<Tensor4> = None;
    for i in (0..=deepest).rev() {
        let grad = match (carried.take(), injected[i]) {
            (Some(mut g), Some(extra)) => {
                g.add_assign(extra)?;
                g
            }
            (Some(g), None) => g,
            (None, Some(extra)) => extra.clone(),
            (None, None) => unreachable!("deepest layer always has an injected gradient"),
        };
        let pre_grad = tensor::relu_backward(&grad, &tape.activations[i])?;
        let mut input_grad = tensor::conv2d_input_grad(&pre_grad, &weights.layers[i].kernel)?;
        if pooled_before(i) {
            input_grad = match (tape.pool, &tape.pools[i]) {
                (PoolMode::Max, Some(idx)) => tensor::maxpool2x2_backward(&input_grad, idx)?,
                (PoolMode::Avg, None) => tensor::avgpool2x2_backward(&input_grad)?,
                _ => return Err(Error::Internal(format!("pool record missing at {}", LAYERS[i].name))),
            };
        }
        carried = Some(input_grad);
    }
    Ok(carried.expect("loop ran at least once"))
}
