//! Independent f64 reference implementations used as test oracles.
//!
//! Nothing here calls into the library's kernels: convolutions are direct
//! nested loops, pooling scans windows, Grams are double loops.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::OnceLock;

use dfr::fixture;
use dfr::tensor::Tensor4;
use dfr::vgg::{LayerSelection, VggWeights, LAYERS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn weights() -> &'static VggWeights {
    static W: OnceLock<VggWeights> = OnceLock::new();
    W.get_or_init(|| fixture::synthetic_weights(7))
}

/// Plain `(c, h, w)` array in f64.
#[derive(Clone, Debug)]
pub struct Map {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Map {
    pub fn from_tensor(t: &Tensor4) -> Self {
        let [n, c, h, w] = t.dims();
        assert_eq!(n, 1);
        Self {
            c,
            h,
            w,
            v: t.data().iter().map(|&x| x as f64).collect(),
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.v[(c * self.h + y) * self.w + x]
    }
}

pub fn conv(input: &Map, kernel: &Tensor4, bias: &[f32]) -> Map {
    let oc = kernel.batch();
    let mut v = vec![0.0; oc * input.h * input.w];
    for o in 0..oc {
        for y in 0..input.h {
            for x in 0..input.w {
                let mut acc = bias[o] as f64;
                for ic in 0..input.c {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let sy = y as isize + ky as isize - 1;
                            let sx = x as isize + kx as isize - 1;
                            if sy < 0 || sx < 0 || sy >= input.h as isize || sx >= input.w as isize {
                                continue;
                            }
                            acc += input.at(ic, sy as usize, sx as usize) * kernel.at(o, ic, ky, kx) as f64;
                        }
                    }
                }
                v[(o * input.h + y) * input.w + x] = acc;
            }
        }
    }
    Map {
        c: oc,
        h: input.h,
        w: input.w,
        v,
    }
}

pub fn relu(m: &Map) -> Map {
    Map {
        v: m.v.iter().map(|&x| x.max(0.0)).collect(),
        ..m.clone()
    }
}

pub fn maxpool(m: &Map) -> Map {
    let (h, w) = (m.h / 2, m.w / 2);
    let mut v = Vec::with_capacity(m.c * h * w);
    for c in 0..m.c {
        for y in 0..h {
            for x in 0..w {
                let window = [
                    m.at(c, 2 * y, 2 * x),
                    m.at(c, 2 * y, 2 * x + 1),
                    m.at(c, 2 * y + 1, 2 * x),
                    m.at(c, 2 * y + 1, 2 * x + 1),
                ];
                v.push(window.into_iter().fold(f64::NEG_INFINITY, f64::max));
            }
        }
    }
    Map { c: m.c, h, w, v }
}

/// Post-ReLU features of the reference VGG trunk at every layer up to `deepest`.
pub fn forward(image: &Map, weights: &VggWeights, deepest: &str) -> BTreeMap<&'static str, Map> {
    let mut out = BTreeMap::new();
    let mut x = image.clone();
    for (i, spec) in LAYERS.iter().enumerate() {
        if i > 0 && spec.block != LAYERS[i - 1].block {
            x = maxpool(&x);
        }
        x = relu(&conv(&x, weights.kernel(spec.name).unwrap(), weights.bias(spec.name).unwrap()));
        out.insert(spec.name, x.clone());
        if spec.name == deepest {
            break;
        }
    }
    out
}

pub fn gram(m: &Map) -> Vec<f64> {
    let hw = m.h * m.w;
    let mut g = vec![0.0; m.c * m.c];
    for i in 0..m.c {
        for j in 0..m.c {
            g[i * m.c + j] = (0..hw).map(|k| m.v[i * hw + k] * m.v[j * hw + k]).sum();
        }
    }
    g
}

/// Full objective `α·½‖F − T‖² + β·Σ w/(4D²M²)‖G − Ĝ‖²` in f64.
pub fn objective(
    image: &Map,
    weights: &VggWeights,
    selection: &LayerSelection,
    content_target: &Map,
    style_grams: &BTreeMap<String, Vec<f64>>,
    alpha: f64,
    beta: f64,
) -> f64 {
    let feats = forward(image, weights, "conv5_1");
    let f = &feats[selection.content_layer.as_str()];
    let content: f64 = 0.5 * f.v.iter().zip(&content_target.v).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let mut style = 0.0;
    for (layer, &w) in selection.style_layers.iter().zip(&selection.style_layer_weights) {
        let f = &feats[layer.as_str()];
        let g = gram(f);
        let (d, m) = (f.c as f64, (f.h * f.w) as f64);
        let sq: f64 = g.iter().zip(&style_grams[layer]).map(|(a, b)| (a - b).powi(2)).sum();
        style += w as f64 / (4.0 * d * d * m * m) * sq;
    }
    alpha * content + beta * style
}

/// Central difference of `f` at coordinate `i` of `x`.
pub fn central_diff(x: &Map, i: usize, step: f64, f: impl Fn(&Map) -> f64) -> f64 {
    let mut plus = x.clone();
    plus.v[i] += step;
    let mut minus = x.clone();
    minus.v[i] -= step;
    (f(&plus) - f(&minus)) / (2.0 * step)
}

/// `|a − b| / max(|a|, |b|)`, zero when both vanish.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub fn random(dims: [usize; 4], lo: f32, hi: f32, rng: &mut ChaCha8Rng) -> Tensor4 {
    let len = dims.iter().product();
    Tensor4::from_vec(dims, (0..len).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` distinct coordinates out of `len`, deterministic for a given seed.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng(seed);
    let mut idx: Vec<usize> = (0..len).collect();
    for i in 0..n.min(len) {
        let j = rng.gen_range(i..len);
        idx.swap(i, j);
    }
    idx.truncate(n.min(len));
    idx
}

pub fn tensor_from_map(m: &Map) -> Tensor4 {
    Tensor4::from_vec([1, m.c, m.h, m.w], m.v.iter().map(|&x| x as f32).collect()).unwrap()
}
