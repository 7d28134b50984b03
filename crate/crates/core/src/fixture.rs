//! Deterministic synthetic inputs: random-weight VGG19 files and procedural
//! content/style images. Lets the whole pipeline run without pretrained weights.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dfrw::{self, DfrwFile, Manifest, Preprocess, RawTensor};
use crate::error::Result;
use crate::raster::Image;
use crate::tensor::Tensor4;
use crate::vgg::{VggWeights, LAYERS};

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// DFRW file with He-normal kernels and small random biases at canonical VGG19 shapes.
pub fn synthetic_dfrw(seed: u64) -> DfrwFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = Vec::with_capacity(2 * LAYERS.len());
    for spec in &LAYERS {
        let fan_in = (spec.in_channels * 9) as f32;
        let he = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let count = spec.out_channels * spec.in_channels * 9;
        tensors.push(RawTensor {
            name: format!("{}.weight", spec.name),
            dims: vec![spec.out_channels, spec.in_channels, 3, 3],
            data: (0..count).map(|_| he.sample(&mut rng)).collect(),
        });
        tensors.push(RawTensor {
            name: format!("{}.bias", spec.name),
            dims: vec![spec.out_channels],
            data: (0..spec.out_channels).map(|_| rng.gen_range(-0.05..0.05)).collect(),
        });
    }
    DfrwFile {
        manifest: Manifest {
            layer_order: LAYERS.iter().map(|l| l.name.to_owned()).collect(),
            preprocess: Preprocess {
                mean: IMAGENET_MEAN,
                std: IMAGENET_STD,
            },
            source_checksum: format!("synthetic-seed-{seed}"),
        },
        tensors,
    }
}

pub fn synthetic_weights(seed: u64) -> VggWeights {
    VggWeights::from_dfrw(synthetic_dfrw(seed)).expect("synthetic file is well-formed")
}

pub fn write_synthetic_weights(path: &Path, seed: u64) -> Result<()> {
    dfrw::write(path, &synthetic_dfrw(seed))
}

/// Uniform `[-1, 1)` values.
pub fn random_tensor(dims: [usize; 4], seed: u64) -> Tensor4 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = dims.iter().product();
    Tensor4::from_vec(dims, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .expect("dims are non-zero")
}

/// Smooth "landscape": vertical sky gradient, a sun disc and a dark block.
pub fn content_image(width: u32, height: u32) -> Image {
    let (w, h) = (width as f32, height as f32);
    let mut pixels = Vec::with_capacity((width * height * 3) as usize);
    for y in 0..height {
        for x in 0..width {
            let (fx, fy) = (x as f32 / w, y as f32 / h);
            let mut rgb = [60.0 + 120.0 * fy, 110.0 + 90.0 * fy, 230.0 - 80.0 * fy];
            let d = ((fx - 0.7).powi(2) + (fy - 0.3).powi(2)).sqrt();
            if d < 0.15 {
                rgb = [250.0, 220.0 - 200.0 * d, 80.0];
            }
            if fx > 0.15 && fx < 0.45 && fy > 0.55 {
                rgb = [70.0 + 40.0 * fx, 50.0, 40.0 + 60.0 * fy];
            }
            pixels.extend(rgb.map(|v| v.clamp(0.0, 255.0) as u8));
        }
    }
    Image::new(width, height, pixels).expect("buffer sized from dims")
}

/// High-frequency "painting": coloured diagonal stripes over a checkerboard.
pub fn style_image(width: u32, height: u32) -> Image {
    let mut pixels = Vec::with_capacity((width * height * 3) as usize);
    for y in 0..height {
        for x in 0..width {
            let stripe = ((x + 2 * y) / 3) % 3;
            let check = ((x / 4) + (y / 4)) % 2 == 0;
            let base = match stripe {
                0 => [220u8, 40, 30],
                1 => [250, 200, 20],
                _ => [20, 40, 160],
            };
            pixels.extend(base.map(|v| if check { v } else { v / 3 }));
        }
    }
    Image::new(width, height, pixels).expect("buffer sized from dims")
}
