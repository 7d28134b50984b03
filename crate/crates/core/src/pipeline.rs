//! End-to-end stylization: one optimization job per (angle, λ) cell, and a
//! grid runner that executes jobs on a bounded worker pool and writes results.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dfr::{self, Angle, ApplyTo, RotationConfig};
use crate::error::{Error, Result};
use crate::losses::{self, GramTargets, LossReport, LossWeights};
use crate::optim::{AdamConfig, AdamState};
use crate::raster::{self, Image};
use crate::tensor::Tensor4;
use crate::vgg::{self, LayerSelection, PoolMode, VggWeights};

/// Loss is recorded every this many iterations.
pub const DEFAULT_SAMPLE_EVERY: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    #[default]
    Content,
    Noise,
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "content" => Ok(InitMode::Content),
            "noise" => Ok(InitMode::Noise),
            other => Err(Error::config(format!("init must be content or noise, got {other:?}"))),
        }
    }
}

/// Everything except the images and the rotation cell: shared by all jobs of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct JobSettings {
    pub loss_weights: LossWeights,
    pub selection: LayerSelection,
    pub adam: AdamConfig,
    pub pool: PoolMode,
    pub iterations: usize,
    pub seed: u64,
    pub init: InitMode,
    pub sample_every: usize,
}

impl Default for JobSettings {
    fn default() -> Self {
        Self {
            loss_weights: LossWeights::default(),
            selection: LayerSelection::default(),
            adam: AdamConfig::default(),
            pool: PoolMode::Max,
            iterations: 3000,
            seed: 0,
            init: InitMode::Content,
            sample_every: DEFAULT_SAMPLE_EVERY,
        }
    }
}

impl JobSettings {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("iterations must be at least 1"));
        }
        if self.sample_every == 0 {
            return Err(Error::config("loss sampling interval must be at least 1"));
        }
        self.loss_weights.validate()?;
        self.selection.validate()?;
        AdamState::new([1, 1, 1, 1], self.adam).map(|_| ())
    }
}

#[derive(Clone, Debug)]
pub struct StylizationJob {
    pub content: Image,
    pub style: Image,
    pub rotation: RotationConfig,
    pub settings: JobSettings,
}

/// Resolved configuration of a finished job, as echoed in manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobConfig {
    pub angle: Angle,
    pub lambda: f32,
    pub apply_to: ApplyTo,
    pub alpha: f32,
    pub beta: f32,
    pub content_layer: String,
    pub style_layers: Vec<String>,
    pub style_layer_weights: Vec<f32>,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub pool: String,
    pub iterations: usize,
    pub seed: u64,
    pub init: InitMode,
    pub width: usize,
    pub height: usize,
}

impl JobConfig {
    fn of(job: &StylizationJob) -> Self {
        let s = &job.settings;
        Self {
            angle: job.rotation.angle(),
            lambda: job.rotation.lambda(),
            apply_to: job.rotation.apply_to(),
            alpha: s.loss_weights.alpha,
            beta: s.loss_weights.beta,
            content_layer: s.selection.content_layer.clone(),
            style_layers: s.selection.style_layers.clone(),
            style_layer_weights: s.selection.style_layer_weights.clone(),
            lr: s.adam.lr,
            beta1: s.adam.beta1,
            beta2: s.adam.beta2,
            eps: s.adam.eps,
            pool: format!("{:?}", s.pool).to_lowercase(),
            iterations: s.iterations,
            seed: s.seed,
            init: s.init,
            width: job.content.width(),
            height: job.content.height(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LossSample {
    pub iteration: usize,
    pub report: LossReport,
}

#[derive(Clone, Debug)]
pub struct JobResult {
    pub output: Image,
    /// Losses at iteration 0, every `sample_every` iterations, and after the final step.
    pub loss_curve: Vec<LossSample>,
    pub wall_time: f64,
    pub config_echo: JobConfig,
}

impl JobResult {
    pub fn initial_loss(&self) -> f32 {
        self.loss_curve[0].report.total
    }

    pub fn final_loss(&self) -> f32 {
        self.loss_curve.last().expect("curve is never empty").report.total
    }

    /// `iter,total,content,style` CSV with a header row.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("iter,total,content,style\n");
        for s in &self.loss_curve {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                s.iteration, s.report.total, s.report.content, s.report.style
            );
        }
        out
    }
}

struct Objective<'a> {
    weights: &'a VggWeights,
    settings: &'a JobSettings,
    content_target: vgg::FeatureSet,
    style_grams: GramTargets,
}

impl Objective<'_> {
    fn evaluate(&self, x: &Tensor4) -> Result<(LossReport, vgg::FeatureSet, vgg::Tape)> {
        let s = self.settings;
        let (feats, tape) = vgg::extract_features(x, self.weights, &s.selection, s.pool)?;
        let (report, grads) = losses::total_loss(
            &feats,
            &self.content_target,
            &self.style_grams,
            &s.loss_weights,
            &s.selection,
        )?;
        if !report.total.is_finite() {
            return Err(Error::Numeric(format!("loss is {}", report.total)));
        }
        Ok((report, grads, tape))
    }
}

fn initial_image(job: &StylizationJob, content: &Tensor4) -> Tensor4 {
    match job.settings.init {
        InitMode::Content => content.clone(),
        InitMode::Noise => {
            let mut rng = ChaCha8Rng::seed_from_u64(job.settings.seed);
            let mut x = content.zeros_like();
            x.data_mut()
                .iter_mut()
                .for_each(|v| *v = StandardNormal.sample(&mut rng));
            x
        }
    }
}

/// Precomputed loss targets for a job: the (possibly rotated) content
/// features and the Gram matrices of the (possibly rotated) style features.
pub fn job_targets(job: &StylizationJob, weights: &VggWeights) -> Result<(vgg::FeatureSet, GramTargets)> {
    let s = &job.settings;
    let content = vgg::preprocess(&job.content, weights);
    let style = vgg::preprocess(&job.style, weights);
    let (content_feats, _) = vgg::extract_features(&content, weights, &s.selection, s.pool)?;
    let (style_feats, _) = vgg::extract_features(&style, weights, &s.selection, s.pool)?;
    let (content_target, style_targets) =
        dfr::build_loss_targets(&content_feats, &style_feats, &s.selection, &job.rotation)?;
    let mut grams = GramTargets::new();
    for (layer, f) in style_targets.iter() {
        grams.insert(layer.to_owned(), losses::gram(f)?);
    }
    Ok((content_target, grams))
}

pub fn run_job(job: &StylizationJob, weights: &VggWeights) -> Result<JobResult> {
    run_named_job(job, weights, "job")
}

fn run_named_job(job: &StylizationJob, weights: &VggWeights, name: &str) -> Result<JobResult> {
    let started = Instant::now();
    let wrap = |iteration: usize| {
        move |e: Error| Error::Job {
            job: name.to_owned(),
            iteration,
            source: Box::new(e),
        }
    };
    job.settings.validate().map_err(wrap(0))?;
    let s = &job.settings;

    let (content_target, style_grams) = job_targets(job, weights).map_err(wrap(0))?;
    let objective = Objective {
        weights,
        settings: s,
        content_target,
        style_grams,
    };
    let mut x = initial_image(job, &vgg::preprocess(&job.content, weights));
    let mut adam = AdamState::new(x.dims(), s.adam).map_err(wrap(0))?;
    let mut curve = Vec::with_capacity(s.iterations / s.sample_every + 2);

    for it in 0..s.iterations {
        let (report, grads, tape) = objective.evaluate(&x).map_err(wrap(it))?;
        if it % s.sample_every == 0 {
            curve.push(LossSample {
                iteration: it,
                report,
            });
        }
        let grad = vgg::backward_to_image(&grads, &tape, weights).map_err(wrap(it))?;
        if !grad.is_finite() {
            return Err(wrap(it)(Error::Numeric("non-finite image gradient".into())));
        }
        adam.step(&mut x, &grad).map_err(wrap(it))?;
    }
    let (report, _, _) = objective.evaluate(&x).map_err(wrap(s.iterations))?;
    curve.push(LossSample {
        iteration: s.iterations,
        report,
    });
    log::debug!("{name}: final loss {}", curve.last().map_or(0.0, |c| c.report.total));

    Ok(JobResult {
        output: vgg::postprocess(&x, weights).map_err(wrap(s.iterations))?,
        loss_curve: curve,
        wall_time: started.elapsed().as_secs_f64(),
        config_echo: JobConfig::of(job),
    })
}

/// A full (angle × λ) run over one content/style pair.
#[derive(Clone, Debug)]
pub struct GridSpec {
    pub content_path: PathBuf,
    pub style_path: PathBuf,
    pub angles: Vec<Angle>,
    pub lambdas: Vec<f32>,
    pub apply_to: ApplyTo,
    pub width: u32,
    pub height: u32,
    pub parallelism: usize,
    pub out_dir: PathBuf,
    pub settings: JobSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobSummary {
    pub angle: Angle,
    pub lambda: f32,
    pub file: String,
    pub wall_time_s: f64,
    pub final_loss: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub content: String,
    pub style: String,
    pub requested_width: u32,
    pub requested_height: u32,
    pub width: u32,
    pub height: u32,
    pub parallelism: usize,
    pub apply_to: ApplyTo,
    pub alpha: f32,
    pub beta: f32,
    pub lr: f32,
    pub iterations: usize,
    pub seed: u64,
    pub init: InitMode,
    pub content_layer: String,
    pub style_layers: Vec<String>,
}

/// Contents of `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub jobs: Vec<JobSummary>,
    pub config: RunConfig,
    pub total_wall_time_s: f64,
}

pub const MANIFEST_FILE: &str = "run.json";

/// `{content}_{style}_a{angle}_l{lambda}`, without extension.
pub fn job_stem(content: &str, style: &str, angle: Angle, lambda: f32) -> String {
    format!("{content}_{style}_a{angle}_l{lambda:?}")
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".dfr-write-probe");
    fs::write(&probe, b"").map_err(|e| Error::io(dir, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn run_grid(spec: &GridSpec, weights: &VggWeights) -> Result<RunManifest> {
    if spec.angles.is_empty() || spec.lambdas.is_empty() {
        return Err(Error::config("angle and lambda lists must be non-empty"));
    }
    if spec.parallelism == 0 {
        return Err(Error::config("parallelism must be at least 1"));
    }
    spec.settings.validate()?;
    let rotations = spec
        .angles
        .iter()
        .flat_map(|&a| spec.lambdas.iter().map(move |&l| (a, l)))
        .map(|(a, l)| RotationConfig::new(a, l, spec.apply_to))
        .collect::<Result<Vec<_>>>()?;
    ensure_writable(&spec.out_dir)?;

    let content = raster::load_and_resize(&spec.content_path, spec.width, spec.height)?;
    let style = raster::load_and_resize(&spec.style_path, spec.width, spec.height)?;
    let (content_name, style_name) = (file_stem(&spec.content_path), file_stem(&spec.style_path));

    let jobs: Vec<(String, StylizationJob)> = rotations
        .into_iter()
        .map(|rotation| {
            let stem = job_stem(&content_name, &style_name, rotation.angle(), rotation.lambda());
            let job = StylizationJob {
                content: content.clone(),
                style: style.clone(),
                rotation,
                settings: spec.settings.clone(),
            };
            (stem, job)
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.parallelism)
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    let started = Instant::now();
    log::info!("running {} job(s) on {} worker(s)", jobs.len(), spec.parallelism);
    let results: Vec<Result<JobResult>> = pool.install(|| {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|(stem, job)| {
                let r = run_named_job(job, weights, stem);
                if let Ok(res) = &r {
                    log::info!("{stem}: loss {} -> {} in {:.1}s", res.initial_loss(), res.final_loss(), res.wall_time);
                }
                r
            })
            .collect()
    });
    let total_wall_time_s = started.elapsed().as_secs_f64();

    let mut summaries = Vec::with_capacity(jobs.len());
    for ((stem, job), result) in jobs.iter().zip(results) {
        let result = result?;
        let file = format!("{stem}.png");
        result.output.save_png(&spec.out_dir.join(&file))?;
        write_file(&spec.out_dir.join(format!("{stem}.csv")), result.loss_csv().as_bytes())?;
        summaries.push(JobSummary {
            angle: job.rotation.angle(),
            lambda: job.rotation.lambda(),
            file,
            wall_time_s: result.wall_time,
            final_loss: result.final_loss(),
        });
    }

    let s = &spec.settings;
    let manifest = RunManifest {
        jobs: summaries,
        config: RunConfig {
            content: spec.content_path.display().to_string(),
            style: spec.style_path.display().to_string(),
            requested_width: spec.width,
            requested_height: spec.height,
            width: content.width() as u32,
            height: content.height() as u32,
            parallelism: spec.parallelism,
            apply_to: spec.apply_to,
            alpha: s.loss_weights.alpha,
            beta: s.loss_weights.beta,
            lr: s.adam.lr,
            iterations: s.iterations,
            seed: s.seed,
            init: s.init,
            content_layer: s.selection.content_layer.clone(),
            style_layers: s.selection.style_layers.clone(),
        },
        total_wall_time_s,
    };
    let json = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| Error::Internal(format!("manifest serialization: {e}")))?;
    write_file(&spec.out_dir.join(MANIFEST_FILE), &json)?;
    Ok(manifest)
}
