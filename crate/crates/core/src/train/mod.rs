//! Training recipe, model selection, evaluation, prediction and the
//! ablation runner.

mod ablation;
mod checkpoint;

pub use ablation::{parse_matrix, run_ablation, AblationReport, AblationRow, AblationRun, AblationTable};
pub use checkpoint::Checkpoint;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tsonet_tensor::optim::{clip_global_norm, AdamW, AdamWConfig};
use tsonet_tensor::{Bound, Graph, ParamStore, Tensor};

use crate::dataset::{band_statistics, Dataset, Patch, Split};
use crate::error::{Error, Result};
use crate::model::{Ablation, ModelConfig, Tsonet};
use crate::objectives::{multitask_loss, LossConfig, MetricsAccumulator, MetricsReport, TargetVars};
use crate::supervision::SupervisionPack;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub data_dir: PathBuf,
    /// Where logs and checkpoints go. Nothing is written when absent.
    pub out_dir: Option<PathBuf>,
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub grad_clip_l2: f64,
    pub seed: u64,
    /// Stop after this many optimizer steps; the schedule is stretched over
    /// the shorter run.
    pub max_steps: Option<usize>,
    pub use_csem: bool,
    pub use_febr: bool,
    pub use_footprint_stream: bool,
    pub loss: LossConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            out_dir: None,
            batch_size: 10,
            epochs: 30,
            base_lr: 1e-4,
            weight_decay: 0.01,
            warmup_fraction: 0.3,
            grad_clip_l2: 10.0,
            seed: 0,
            max_steps: None,
            use_csem: true,
            use_febr: true,
            use_footprint_stream: true,
            loss: LossConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn ablation(&self) -> Ablation {
        Ablation {
            use_csem: self.use_csem,
            use_febr: self.use_febr,
            use_footprint_stream: self.use_footprint_stream,
        }
    }

    pub fn set_ablation(&mut self, a: Ablation) {
        self.use_csem = a.use_csem;
        self.use_febr = a.use_febr;
        self.use_footprint_stream = a.use_footprint_stream;
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.max_steps == Some(0) {
            return Err(Error::config("batch_size, epochs and max_steps must be positive"));
        }
        let rates = [self.base_lr, self.grad_clip_l2];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::config("base_lr and grad_clip_l2 must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay must be non-negative"));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(Error::config(format!("warmup_fraction {} must lie in (0, 1)", self.warmup_fraction)));
        }
        self.ablation().validate()?;
        self.loss.validate()?;
        self.model.validate()
    }

    /// `epochs * ceil(n_train / batch_size)`, capped by `max_steps`.
    pub fn total_steps(&self, n_train: usize) -> usize {
        let full = self.epochs * n_train.div_ceil(self.batch_size);
        self.max_steps.map_or(full, |m| m.min(full))
    }
}

/// Linear warm-up over the first `warmup_fraction * total_steps` steps, then
/// half-cosine decay to zero at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, base_lr: f64, warmup_fraction: f64) -> f64 {
    let total = total_steps as f64;
    let warm = warmup_fraction * total;
    let s = step as f64;
    if s < warm {
        return base_lr * s / warm;
    }
    let span = total - warm;
    let t = if span > 0.0 { ((s - warm) / span).clamp(0.0, 1.0) } else { 1.0 };
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Stacked inputs and supervision for a group of patches.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[B, bands, H, W]`
    pub image: Tensor<f32>,
    /// The rest are `[B, 1, H, W]`.
    pub heights: Tensor<f32>,
    pub valid: Tensor<f32>,
    pub footprint: Tensor<f32>,
    pub weights: Tensor<f32>,
}

impl Batch {
    pub fn new(patches: &[&Patch], loss: &LossConfig) -> Result<Self> {
        if patches.is_empty() {
            return Err(Error::config("empty batch"));
        }
        let mut images = Vec::with_capacity(patches.len());
        let mut heights = Vec::new();
        let mut valid = Vec::new();
        let mut footprint = Vec::new();
        let mut weights = Vec::new();
        for p in patches {
            let sup = SupervisionPack::derive(&p.heights, loss.tau_fp as f32, loss.alpha_outer as f32)?;
            let hw = [1, p.height(), p.width()];
            images.push(p.image.clone());
            heights.push(p.heights.clone().reshape(hw)?);
            valid.push(p.valid.cast_u8().reshape(hw)?);
            footprint.push(sup.footprint.cast_u8().reshape(hw)?);
            weights.push(sup.weights.reshape(hw)?);
        }
        let stack = |t: &[Tensor<f32>]| Tensor::stack(t).map_err(|e| Error::Shape(format!("cannot batch patches: {e}")));
        Ok(Self {
            image: stack(&images)?,
            heights: stack(&heights)?,
            valid: stack(&valid)?,
            footprint: stack(&footprint)?,
            weights: stack(&weights)?,
        })
    }

    fn targets<'g>(&self, g: &'g Graph<f32>) -> TargetVars<'g, f32> {
        TargetVars {
            heights: g.constant(self.heights.clone()),
            valid: g.constant(self.valid.clone()),
            footprint: g.constant(self.footprint.clone()),
            weights: g.constant(self.weights.clone()),
        }
    }
}

trait MaskExt {
    fn cast_u8(&self) -> Tensor<f32>;
}

impl MaskExt for Tensor<u8> {
    fn cast_u8(&self) -> Tensor<f32> {
        self.map(|v| v as f32)
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogRecord {
    Step {
        step: usize,
        epoch: usize,
        lr: f64,
        loss: f64,
        loss_height: f64,
        loss_tversky: Option<f64>,
        loss_bce: Option<f64>,
        grad_norm: f64,
        grad_norm_clipped: f64,
    },
    Val {
        step: usize,
        epoch: usize,
        val_rmse: Option<f64>,
        val_mae: Option<f64>,
        val_iou: f64,
        best: bool,
    },
}

pub struct TrainRun {
    /// The config actually used, with input statistics filled in.
    pub config: TrainConfig,
    pub model: Tsonet,
    /// Lowest validation RMSE, earliest epoch on ties.
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: Vec<LogRecord>,
}

/// Loads the dataset named in the config and trains on its train split,
/// selecting on val. Writes `train_log.jsonl`, `best.ckpt` and `last.ckpt`
/// into `out_dir` when set.
pub fn train(config: &TrainConfig) -> Result<TrainRun> {
    config.validate()?;
    let dataset = Dataset::open(&config.data_dir)?;
    let train_set = dataset.load(Split::Train)?;
    let val_set = dataset.load(Split::Val)?;
    let mut sink = match &config.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(Error::io(dir))?;
            let path = dir.join("train_log.jsonl");
            Some((fs::File::create(&path).map_err(Error::io(&path))?, path))
        }
        None => None,
    };
    let run = train_on(config, &train_set, &val_set, |rec| {
        if let Some((file, path)) = sink.as_mut() {
            let line = serde_json::to_string(rec).expect("log record serialises");
            writeln!(file, "{line}").map_err(Error::io(path.as_path()))?;
        }
        Ok(())
    })?;
    if let Some(dir) = &config.out_dir {
        run.best.save(&dir.join("best.ckpt"))?;
        run.last.save(&dir.join("last.ckpt"))?;
    }
    Ok(run)
}

/// Trains on in-memory patches. `on_record` sees every log line as it is
/// produced.
pub fn train_on(
    config: &TrainConfig,
    train_set: &[Patch],
    val_set: &[Patch],
    mut on_record: impl FnMut(&LogRecord) -> Result<()>,
) -> Result<TrainRun> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::config("train and val splits must both be non-empty"));
    }
    let mut config = config.clone();
    if config.model.input_mean.is_empty() {
        let (mean, std) = band_statistics(train_set)?;
        config.model.input_mean = mean;
        config.model.input_std = std;
    }
    let config = &config;
    let (model, mut params) = Tsonet::new(&config.model, config.ablation(), config.seed)?;
    let mut optimizer = AdamW::new(
        AdamWConfig {
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        },
        &params,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let total = config.total_steps(train_set.len());
    let mut log = Vec::new();
    let mut emit = |rec: LogRecord, log: &mut Vec<LogRecord>| -> Result<()> {
        on_record(&rec)?;
        log.push(rec);
        Ok(())
    };

    let mut step = 0;
    let mut best: Option<Checkpoint> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epoch = 0;
    while step < total {
        epoch += 1;
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            if step >= total {
                break;
            }
            let patches: Vec<&Patch> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch = Batch::new(&patches, &config.loss)?;
            let lr = lr_at(step, total, config.base_lr, config.warmup_fraction);
            let s = train_step(&model, &mut params, &mut optimizer, &batch, config, lr)?;
            step += 1;
            emit(
                LogRecord::Step {
                    step,
                    epoch,
                    lr,
                    loss: s.loss,
                    loss_height: s.height,
                    loss_tversky: s.tversky,
                    loss_bce: s.bce,
                    grad_norm: s.grad_norm,
                    grad_norm_clipped: s.grad_norm_clipped,
                },
                &mut log,
            )?;
        }

        let report = evaluate(&model, &params, val_set, &config.loss, config.batch_size)?;
        let rmse = report.rmse;
        let improved = match &best {
            None => true,
            Some(b) => rank(rmse) < rank(b.best_val_rmse),
        };
        if improved {
            best = Some(Checkpoint {
                config: config.clone(),
                step: step as u64,
                epoch,
                best_val_rmse: rmse,
                params: params.clone(),
            });
        }
        emit(
            LogRecord::Val {
                step,
                epoch,
                val_rmse: rmse,
                val_mae: report.mae,
                val_iou: report.iou,
                best: improved,
            },
            &mut log,
        )?;
    }

    let best = best.expect("at least one epoch ran");
    let last = Checkpoint {
        config: config.clone(),
        step: step as u64,
        epoch,
        best_val_rmse: best.best_val_rmse,
        params,
    };
    Ok(TrainRun {
        config: config.clone(),
        model,
        best,
        last,
        log,
    })
}

/// Undefined RMSE (no building pixels) never beats a defined one.
fn rank(rmse: Option<f64>) -> f64 {
    rmse.unwrap_or(f64::INFINITY)
}

struct StepStats {
    loss: f64,
    height: f64,
    tversky: Option<f64>,
    bce: Option<f64>,
    grad_norm: f64,
    grad_norm_clipped: f64,
}

fn train_step(
    model: &Tsonet,
    params: &mut ParamStore<f32>,
    optimizer: &mut AdamW<f32>,
    batch: &Batch,
    config: &TrainConfig,
    lr: f64,
) -> Result<StepStats> {
    let scalar = |v: tsonet_tensor::Var<'_, f32>| v.value().data()[0] as f64;
    let (mut grads, loss, height, tversky, bce) = {
        let g = Graph::new();
        let p = Bound::new(&g, params, true);
        let out = model.forward(&p, g.constant(batch.image.clone()))?;
        let terms = multitask_loss(out.height, out.footprint_logits, &batch.targets(&g), &config.loss);
        let loss = scalar(terms.total);
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss {loss} (height term {})",
                scalar(terms.height)
            )));
        }
        let grads = g.backward(terms.total);
        (
            p.collect(&grads),
            loss,
            scalar(terms.height),
            terms.tversky.map(scalar),
            terms.bce.map(scalar),
        )
    };
    let (grad_norm, grad_norm_clipped) = clip_global_norm(&mut grads, config.grad_clip_l2);
    if !grad_norm.is_finite() {
        return Err(Error::Numerical(format!("non-finite gradient norm at loss {loss}")));
    }
    optimizer.step(params, &grads, lr);
    Ok(StepStats {
        loss,
        height,
        tversky,
        bce,
        grad_norm,
        grad_norm_clipped,
    })
}

/// Heights `[B, 1, H, W]` and, with a footprint stream, footprint
/// probabilities of the same shape.
pub fn predict_batch(model: &Tsonet, params: &ParamStore<f32>, image: &Tensor<f32>) -> Result<(Tensor<f32>, Option<Tensor<f32>>)> {
    let g = Graph::new();
    let p = Bound::new(&g, params, false);
    let out = model.forward(&p, g.constant(image.clone()))?;
    let height = (*out.height.value()).clone();
    if !height.is_finite() {
        return Err(Error::Numerical("non-finite height prediction".into()));
    }
    let prob = out.footprint_logits.map(|l| (*l.sigmoid().value()).clone());
    Ok((height, prob))
}

/// Single deterministic pass with globally accumulated metrics. Without a
/// footprint stream the footprint is read off the height map as `h > tau`.
pub fn evaluate(
    model: &Tsonet,
    params: &ParamStore<f32>,
    patches: &[Patch],
    loss: &LossConfig,
    batch_size: usize,
) -> Result<MetricsReport> {
    let mut acc = MetricsAccumulator::with_defaults(loss);
    for chunk in patches.chunks(batch_size.max(1)) {
        let refs: Vec<&Patch> = chunk.iter().collect();
        let batch = Batch::new(&refs, loss)?;
        let (height, prob) = predict_batch(model, params, &batch.image)?;
        let prob = prob.unwrap_or_else(|| height.map(|h| if h as f64 > loss.tau_fp { 1.0 } else { 0.0 }));
        let valid: Vec<u8> = batch.valid.data().iter().map(|&v| v as u8).collect();
        acc.add(height.data(), prob.data(), batch.heights.data(), &valid);
    }
    Ok(acc.finish())
}

impl Checkpoint {
    pub fn evaluate(&self, patches: &[Patch]) -> Result<MetricsReport> {
        let (model, params) = self.build_model()?;
        evaluate(&model, &params, patches, &self.config.loss, self.config.batch_size)
    }
}

/// Runs the model over every patch header in `input` (or `input/samples`)
/// and writes `<id>.height.f32`, `<id>.footprint.f32` when available, and a
/// `<id>.json` header into `out`. Returns the number of patches written.
pub fn predict_dir(ckpt: &Checkpoint, input: &Path, out: &Path) -> Result<usize> {
    let (model, params) = ckpt.build_model()?;
    let samples = input.join("samples");
    let dir = if samples.is_dir() { samples } else { input.to_path_buf() };
    let mut headers: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(Error::io(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    headers.sort();
    if headers.is_empty() {
        return Err(Error::data(format!("no patch headers in {}", dir.display())));
    }
    fs::create_dir_all(out).map_err(Error::io(out))?;
    for path in &headers {
        let patch = crate::dataset::load_patch(path)?;
        let image = patch.image.clone().reshape([1, patch.bands(), patch.height(), patch.width()])?;
        let (height, prob) = predict_batch(&model, &params, &image)?;
        let id = patch.meta.scene_id.clone();
        write_f32(&out.join(format!("{id}.height.f32")), height.data())?;
        if let Some(prob) = &prob {
            write_f32(&out.join(format!("{id}.footprint.f32")), prob.data())?;
        }
        let header = serde_json::json!({
            "scene_id": id,
            "shape": [patch.height(), patch.width()],
            "dtype": "float32",
            "height_file": format!("{id}.height.f32"),
            "footprint_file": prob.as_ref().map(|_| format!("{id}.footprint.f32")),
        });
        let hpath = out.join(format!("{id}.json"));
        fs::write(&hpath, serde_json::to_string_pretty(&header).expect("header serialises")).map_err(Error::io(&hpath))?;
    }
    Ok(headers.len())
}

fn write_f32(path: &Path, data: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(Error::io(path))
}
