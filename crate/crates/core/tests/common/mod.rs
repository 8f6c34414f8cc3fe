//! Independent loop oracles and random case generators shared by the
//! integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Height map with a few rectangles, a sprinkle of isolated pixels and
/// values at the threshold itself.
pub fn random_heights(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; h * w];
    for _ in 0..rng.gen_range(0..5) {
        let (y0, x0) = (rng.gen_range(0..h), rng.gen_range(0..w));
        let (rh, rw) = (rng.gen_range(1..=h - y0), rng.gen_range(1..=w - x0));
        let v = rng.gen_range(0.0..40.0);
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                out[y * w + x] = v;
            }
        }
    }
    for _ in 0..rng.gen_range(0..6) {
        let i = rng.gen_range(0..h * w);
        out[i] = *[0.0, 2.0, 2.5, 15.0].get(rng.gen_range(0..4)).unwrap();
    }
    out
}

pub fn footprint(heights: &[f32], tau: f32) -> Vec<u8> {
    heights.iter().map(|&v| if v > tau { 1 } else { 0 }).collect()
}

/// A pixel is interior when it and every neighbour that exists inside the
/// frame is a building pixel.
pub fn erode(fp: &[u8], h: usize, w: usize) -> Vec<u8> {
    let mut out = vec![0u8; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut ok = true;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (yy, xx) = (y + dy, x + dx);
                    if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                        continue;
                    }
                    if fp[yy as usize * w + xx as usize] != 1 {
                        ok = false;
                    }
                }
            }
            out[y as usize * w + x as usize] = ok as u8;
        }
    }
    out
}

pub fn weights(interior: &[u8], alpha: f32) -> Vec<f32> {
    interior.iter().map(|&i| if i == 1 { 1.0 } else { alpha }).collect()
}

pub fn weighted_l1(pred: &[f64], h: &[f64], v: &[f64], w: &[f64], eps: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..pred.len() {
        num += v[i] * w[i] * (pred[i] - h[i]).abs();
        den += v[i] * w[i];
    }
    num / (den + eps)
}

pub fn tversky(p: &[f64], y: &[f64], v: &[f64], alpha: f64, beta: f64, eps: f64) -> f64 {
    let (mut tp, mut fn_, mut fp) = (0.0, 0.0, 0.0);
    for i in 0..p.len() {
        tp += v[i] * p[i] * y[i];
        fn_ += v[i] * (1.0 - p[i]) * y[i];
        fp += v[i] * p[i] * (1.0 - y[i]);
    }
    1.0 - (tp + eps) / (tp + alpha * fn_ + beta * fp + eps)
}

pub fn bce(p: &[f64], y: &[f64], v: &[f64], eps: f64) -> f64 {
    let mut sum = 0.0;
    let mut n = 0.0;
    for i in 0..p.len() {
        if v[i] == 0.0 {
            continue;
        }
        sum += y[i] * (p[i] + eps).ln() + (1.0 - y[i]) * (1.0 - p[i] + eps).ln();
        n += 1.0;
    }
    -sum / (n + eps)
}

pub struct HeightOracle {
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub rel: Option<f64>,
    pub count: u64,
}

pub fn height_metrics(pred: &[f32], h: &[f32], v: &[u8], tau: f64, eps: f64) -> HeightOracle {
    let mut errs = Vec::new();
    let mut rels = Vec::new();
    for i in 0..pred.len() {
        let hi = h[i] as f64;
        if v[i] == 1 && hi > tau {
            let p = if pred[i] < 0.0 { 0.0 } else { pred[i] as f64 };
            errs.push(p - hi);
            rels.push((p - hi).abs() / (hi + eps));
        }
    }
    if errs.is_empty() {
        return HeightOracle {
            mae: None,
            rmse: None,
            rel: None,
            count: 0,
        };
    }
    let n = errs.len() as f64;
    HeightOracle {
        mae: Some(errs.iter().map(|e| e.abs()).sum::<f64>() / n),
        rmse: Some((errs.iter().map(|e| e * e).sum::<f64>() / n).sqrt()),
        rel: Some(rels.iter().sum::<f64>() / n),
        count: errs.len() as u64,
    }
}

/// `(iou, recall, precision, f1)` from thresholded probabilities.
pub fn seg_metrics(prob: &[f32], h: &[f32], v: &[u8], tau: f64, eps: f64) -> (f64, f64, f64, f64) {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for i in 0..prob.len() {
        if v[i] != 1 {
            continue;
        }
        let pred = prob[i] as f64 > 0.5;
        let truth = h[i] as f64 > tau;
        if pred && truth {
            tp += 1.0;
        } else if pred {
            fp += 1.0;
        } else if truth {
            fn_ += 1.0;
        }
    }
    let iou = (tp + eps) / (tp + fp + fn_ + eps);
    let r = (tp + eps) / (tp + fn_ + eps);
    let p = (tp + eps) / (tp + fp + eps);
    (iou, r, p, 2.0 * p * r / (p + r + eps))
}

/// Per-bin RMSE over building pixels; bin `i` holds `edges[i] <= h <
/// edges[i + 1]`, the last bin is open.
pub fn bin_rmse(pred: &[f32], h: &[f32], v: &[u8], tau: f64, edges: &[f64]) -> Vec<(u64, Option<f64>)> {
    let mut out = Vec::new();
    for b in 0..edges.len() {
        let hi = edges.get(b + 1).copied().unwrap_or(f64::INFINITY);
        let mut sq = 0.0;
        let mut n = 0u64;
        for i in 0..pred.len() {
            let t = h[i] as f64;
            if v[i] == 1 && t > tau && t >= edges[b] && t < hi {
                let e = (pred[i] as f64).max(0.0) - t;
                sq += e * e;
                n += 1;
            }
        }
        out.push((n, (n > 0).then(|| (sq / n as f64).sqrt())));
    }
    out
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

pub fn close_opt(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => close(x, y, tol),
        (None, None) => true,
        _ => false,
    }
}
