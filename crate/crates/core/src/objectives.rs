//! Training losses on the autodiff graph and the evaluation metric suite.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tsonet_tensor::{Real, Var};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub tau_fp: f64,
    pub alpha_outer: f64,
    pub alpha_t: f64,
    pub beta_t: f64,
    pub lambda_bce: f64,
    pub lambda_f: f64,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau_fp: 2.0,
            alpha_outer: 0.1,
            alpha_t: 0.7,
            beta_t: 0.3,
            lambda_bce: 1.0,
            lambda_f: 1.0,
            epsilon: 1e-3,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.tau_fp, self.alpha_t, self.beta_t, self.epsilon];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::config("loss: tau_fp, alpha_t, beta_t and epsilon must be positive"));
        }
        if !(self.alpha_outer > 0.0 && self.alpha_outer <= 1.0) {
            return Err(Error::config("loss: alpha_outer must lie in (0, 1]"));
        }
        if [self.lambda_bce, self.lambda_f].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config("loss: lambda_bce and lambda_f must be non-negative"));
        }
        Ok(())
    }
}

/// `sum(v w |pred - h|) / (sum(v w) + eps)`.
pub fn weighted_l1_loss<'g, T: Real>(
    pred: Var<'g, T>,
    target: Var<'g, T>,
    valid: Var<'g, T>,
    weights: Var<'g, T>,
    eps: f64,
) -> Var<'g, T> {
    let vw = valid * weights;
    (vw * (pred - target).abs()).sum_all() / vw.sum_all().add_scalar(eps)
}

/// `sum(v |pred - h|) / (sum(v) + eps)`.
pub fn l1_loss<'g, T: Real>(pred: Var<'g, T>, target: Var<'g, T>, valid: Var<'g, T>, eps: f64) -> Var<'g, T> {
    (valid * (pred - target).abs()).sum_all() / valid.sum_all().add_scalar(eps)
}

/// Masked Tversky loss; `alpha` weighs false negatives, `beta` false
/// positives.
pub fn tversky_loss<'g, T: Real>(
    prob: Var<'g, T>,
    target: Var<'g, T>,
    valid: Var<'g, T>,
    alpha: f64,
    beta: f64,
    eps: f64,
) -> Var<'g, T> {
    let tp = prob * target;
    let fn_ = target * prob.one_minus();
    let fp = target.one_minus() * prob;
    let denom = (valid * (tp + fn_.scale(alpha) + fp.scale(beta))).sum_all().add_scalar(eps);
    ((valid * tp).sum_all().add_scalar(eps) / denom).one_minus()
}

/// Masked binary cross-entropy with `eps` inside the logs.
pub fn bce_loss<'g, T: Real>(prob: Var<'g, T>, target: Var<'g, T>, valid: Var<'g, T>, eps: f64) -> Var<'g, T> {
    let pos = target * prob.add_scalar(eps).ln();
    let neg = target.one_minus() * prob.one_minus().add_scalar(eps).ln();
    -((valid * (pos + neg)).sum_all() / valid.sum_all().add_scalar(eps))
}

/// `L_h + lambda_f (L_tver + lambda_bce L_bce)`.
pub fn total_loss<'g, T: Real>(
    height: Var<'g, T>,
    tversky: Var<'g, T>,
    bce: Var<'g, T>,
    lambda_f: f64,
    lambda_bce: f64,
) -> Var<'g, T> {
    height + (tversky + bce.scale(lambda_bce)).scale(lambda_f)
}

/// Per-batch supervision as graph constants, each `[B, 1, H, W]`.
pub struct TargetVars<'g, T: Real> {
    pub heights: Var<'g, T>,
    pub valid: Var<'g, T>,
    pub footprint: Var<'g, T>,
    pub weights: Var<'g, T>,
}

pub struct LossTerms<'g, T: Real> {
    pub total: Var<'g, T>,
    pub height: Var<'g, T>,
    pub tversky: Option<Var<'g, T>>,
    pub bce: Option<Var<'g, T>>,
}

/// Full objective when footprint logits exist, plain masked L1 otherwise.
pub fn multitask_loss<'g, T: Real>(
    height: Var<'g, T>,
    footprint_logits: Option<Var<'g, T>>,
    t: &TargetVars<'g, T>,
    cfg: &LossConfig,
) -> LossTerms<'g, T> {
    match footprint_logits {
        Some(logits) => {
            let l_h = weighted_l1_loss(height, t.heights, t.valid, t.weights, cfg.epsilon);
            let prob = logits.sigmoid();
            let tv = tversky_loss(prob, t.footprint, t.valid, cfg.alpha_t, cfg.beta_t, cfg.epsilon);
            let bce = bce_loss(prob, t.footprint, t.valid, cfg.epsilon);
            LossTerms {
                total: total_loss(l_h, tv, bce, cfg.lambda_f, cfg.lambda_bce),
                height: l_h,
                tversky: Some(tv),
                bce: Some(bce),
            }
        }
        None => {
            let l1 = l1_loss(height, t.heights, t.valid, cfg.epsilon);
            LossTerms {
                total: l1,
                height: l1,
                tversky: None,
                bce: None,
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HeightMetrics {
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub rel: Option<f64>,
    pub count: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FootprintMetrics {
    pub iou: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl FootprintMetrics {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, eps: f64) -> Self {
        let (t, p, n) = (tp as f64, fp as f64, fn_ as f64);
        let iou = (t + eps) / (t + p + n + eps);
        let recall = (t + eps) / (t + n + eps);
        let precision = (t + eps) / (t + p + eps);
        let f1 = 2.0 * precision * recall / (precision + recall + eps);
        Self {
            iou,
            recall,
            precision,
            f1,
            tp,
            fp,
            fn_,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub lo: f64,
    /// `None` for the open-ended last bin.
    pub hi: Option<f64>,
    pub count: u64,
    pub rmse: Option<f64>,
}

/// `0, 10, ..., 100` metres; the final bin is open-ended.
pub fn default_bin_edges() -> Vec<f64> {
    (0..=10).map(|i| i as f64 * 10.0).collect()
}

fn bin_index(edges: &[f64], h: f64) -> Option<usize> {
    if h < edges[0] {
        return None;
    }
    Some(edges.partition_point(|&e| e <= h) - 1)
}

/// Running sums over any number of patches; ratios are formed once in
/// [`MetricsAccumulator::finish`].
#[derive(Clone, Debug)]
pub struct MetricsAccumulator {
    pub tau_fp: f64,
    pub epsilon: f64,
    pub threshold: f64,
    edges: Vec<f64>,
    count: u64,
    sum_abs: f64,
    sum_sq: f64,
    sum_rel: f64,
    tp: u64,
    fp: u64,
    fn_: u64,
    valid_pixels: u64,
    bin_count: Vec<u64>,
    bin_sq: Vec<f64>,
}

impl MetricsAccumulator {
    pub fn new(tau_fp: f64, epsilon: f64, edges: Vec<f64>) -> Self {
        assert!(!edges.is_empty() && edges.windows(2).all(|w| w[0] < w[1]), "bin edges must increase");
        let n = edges.len();
        Self {
            tau_fp,
            epsilon,
            threshold: 0.5,
            edges,
            count: 0,
            sum_abs: 0.0,
            sum_sq: 0.0,
            sum_rel: 0.0,
            tp: 0,
            fp: 0,
            fn_: 0,
            valid_pixels: 0,
            bin_count: vec![0; n],
            bin_sq: vec![0.0; n],
        }
    }

    pub fn with_defaults(cfg: &LossConfig) -> Self {
        Self::new(cfg.tau_fp, cfg.epsilon, default_bin_edges())
    }

    /// Adds pixels: predicted heights, footprint probabilities, reference
    /// heights and the valid mask, all of equal length.
    pub fn add(&mut self, pred: &[f32], prob: &[f32], heights: &[f32], valid: &[u8]) {
        assert!(pred.len() == heights.len() && prob.len() == heights.len() && valid.len() == heights.len());
        for i in 0..heights.len() {
            if valid[i] == 0 {
                continue;
            }
            self.valid_pixels += 1;
            let h = heights[i] as f64;
            let building = h > self.tau_fp;
            let predicted = prob[i] as f64 > self.threshold;
            match (predicted, building) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, true) => self.fn_ += 1,
                (false, false) => {}
            }
            if building {
                let err = (pred[i] as f64).max(0.0) - h;
                self.count += 1;
                self.sum_abs += err.abs();
                self.sum_sq += err * err;
                self.sum_rel += err.abs() / (h + self.epsilon);
                if let Some(b) = bin_index(&self.edges, h) {
                    self.bin_count[b] += 1;
                    self.bin_sq[b] += err * err;
                }
            }
        }
    }

    pub fn height(&self) -> HeightMetrics {
        let n = self.count as f64;
        let mean = |s: f64| (self.count > 0).then(|| s / n);
        HeightMetrics {
            mae: mean(self.sum_abs),
            rmse: mean(self.sum_sq).map(f64::sqrt),
            rel: mean(self.sum_rel),
            count: self.count,
        }
    }

    pub fn footprint(&self) -> FootprintMetrics {
        FootprintMetrics::from_counts(self.tp, self.fp, self.fn_, self.epsilon)
    }

    pub fn bins(&self) -> Vec<BinStat> {
        (0..self.edges.len())
            .map(|b| BinStat {
                lo: self.edges[b],
                hi: self.edges.get(b + 1).copied(),
                count: self.bin_count[b],
                rmse: (self.bin_count[b] > 0).then(|| (self.bin_sq[b] / self.bin_count[b] as f64).sqrt()),
            })
            .collect()
    }

    pub fn finish(&self) -> MetricsReport {
        let h = self.height();
        let f = self.footprint();
        MetricsReport {
            mae: h.mae,
            rmse: h.rmse,
            rel: h.rel,
            iou: f.iou,
            recall: f.recall,
            precision: f.precision,
            f1: f.f1,
            building_pixels: h.count,
            valid_pixels: self.valid_pixels,
            tp: f.tp,
            fp: f.fp,
            fn_: f.fn_,
            bins: self.bins(),
        }
    }
}

/// Regression metrics over `{v = 1, h > tau}` with negative predictions
/// clipped to zero. Empty sets give `None`.
pub fn height_metrics(pred: &[f32], heights: &[f32], valid: &[u8], tau_fp: f64, eps: f64) -> HeightMetrics {
    let mut acc = MetricsAccumulator::new(tau_fp, eps, vec![0.0]);
    acc.add(pred, &vec![0.0; pred.len()], heights, valid);
    acc.height()
}

/// Segmentation metrics for `prob > 0.5` against `h > tau`, over valid
/// pixels.
pub fn footprint_metrics(prob: &[f32], heights: &[f32], valid: &[u8], tau_fp: f64, eps: f64) -> FootprintMetrics {
    let mut acc = MetricsAccumulator::new(tau_fp, eps, vec![0.0]);
    acc.add(&vec![0.0; prob.len()], prob, heights, valid);
    acc.footprint()
}

pub fn rmse_by_height_bin(pred: &[f32], heights: &[f32], valid: &[u8], tau_fp: f64, edges: &[f64]) -> Vec<BinStat> {
    let mut acc = MetricsAccumulator::new(tau_fp, 1e-3, edges.to_vec());
    acc.add(pred, &vec![0.0; pred.len()], heights, valid);
    acc.bins()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub rel: Option<f64>,
    pub iou: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub building_pixels: u64,
    pub valid_pixels: u64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub bins: Vec<BinStat>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Headline row, a blank line, then one row per height bin. Missing
    /// values are empty cells.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        w.write_record(["mae", "rmse", "rel", "iou", "recall", "precision", "f1", "building_pixels"])?;
        w.write_record([
            opt(self.mae),
            opt(self.rmse),
            opt(self.rel),
            self.iou.to_string(),
            self.recall.to_string(),
            self.precision.to_string(),
            self.f1.to_string(),
            self.building_pixels.to_string(),
        ])?;
        w.write_record([""])?;
        w.write_record(["bin_lo", "bin_hi", "count", "rmse"])?;
        for b in &self.bins {
            w.write_record([b.lo.to_string(), opt(b.hi), b.count.to_string(), opt(b.rmse)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// JSON unless the extension is `.csv`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(Error::io(parent))?;
        }
        if is_csv {
            let file = std::fs::File::create(path).map_err(Error::io(path))?;
            self.write_csv(file).map_err(|e| Error::data(format!("{}: {e}", path.display())))
        } else {
            std::fs::write(path, self.to_json()).map_err(Error::io(path))
        }
    }
}
