use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::mask::BinaryMask;

/// Pixel counts and the scores derived from them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tolerance_px: f64,
}

impl MetricsReport {
    /// Scores from counts. With no predicted positives the scores are all 1
    /// when the ground truth is empty too and all 0 otherwise; ratios with
    /// a zero denominator are 0.
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tolerance_px: f64) -> Self {
        let (precision, recall, f1) = if tp + fp == 0 {
            if fn_ == 0 {
                (1.0, 1.0, 1.0)
            } else {
                (0.0, 0.0, 0.0)
            }
        } else {
            let p = tp as f64 / (tp + fp) as f64;
            let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            (p, r, f)
        };
        Self { tp, fp, fn_, precision, recall, f1, tolerance_px }
    }

    /// Sum of counts, with scores recomputed.
    pub fn merge(&self, other: &MetricsReport) -> Self {
        Self::from_counts(self.tp + other.tp, self.fp + other.fp, self.fn_ + other.fn_, self.tolerance_px)
    }

    pub fn empty(tolerance_px: f64) -> Self {
        Self::from_counts(0, 0, 0, tolerance_px)
    }
}

/// Sentinel of [`squared_distance_transform`] for "no feature pixel".
pub const NO_FEATURE: u64 = u64::MAX;

/// Exact squared Euclidean distance from every pixel to the nearest set
/// pixel of `mask` (separable lower-envelope method, integer arithmetic).
pub fn squared_distance_transform(mask: &BinaryMask) -> Vec<u64> {
    let (h, w) = (mask.height(), mask.width());
    let inf = (h + w) as i64;
    let mut g = vec![inf; h * w];
    for x in 0..w {
        if mask.get(0, x) {
            g[x] = 0;
        }
        for y in 1..h {
            g[y * w + x] = if mask.get(y, x) { 0 } else { (g[(y - 1) * w + x] + 1).min(inf) };
        }
        for y in (0..h.saturating_sub(1)).rev() {
            if g[(y + 1) * w + x] < g[y * w + x] {
                g[y * w + x] = g[(y + 1) * w + x] + 1;
            }
        }
    }
    let mut out = vec![NO_FEATURE; h * w];
    let mut s = vec![0i64; w];
    let mut t = vec![0i64; w];
    for y in 0..h {
        let row = &g[y * w..(y + 1) * w];
        let f = |x: i64, i: i64| (x - i) * (x - i) + row[i as usize] * row[i as usize];
        let sep = |i: i64, u: i64| {
            (u * u - i * i + row[u as usize] * row[u as usize] - row[i as usize] * row[i as usize])
                .div_euclid(2 * (u - i))
        };
        let mut q: i64 = 0;
        s[0] = 0;
        t[0] = 0;
        for u in 1..w as i64 {
            while q >= 0 && f(t[q as usize], s[q as usize]) > f(t[q as usize], u) {
                q -= 1;
            }
            if q < 0 {
                q = 0;
                s[0] = u;
            } else {
                let sv = 1 + sep(s[q as usize], u);
                if sv < w as i64 {
                    q += 1;
                    s[q as usize] = u;
                    t[q as usize] = sv;
                }
            }
        }
        for u in (0..w as i64).rev() {
            let d = f(u, s[q as usize]);
            if d < inf * inf {
                out[y * w + u as usize] = d as u64;
            }
            if u == t[q as usize] {
                q -= 1;
            }
        }
    }
    out
}

fn within(d2: u64, tol: f64) -> bool {
    d2 != NO_FEATURE && d2 as f64 <= tol * tol
}

/// Many-to-one matching with Euclidean tolerance: a predicted pixel is a
/// true positive when some ground-truth pixel lies within `tol`; a
/// ground-truth pixel is a false negative when no predicted pixel does.
pub fn tolerance_metrics(pred: &BinaryMask, gt: &BinaryMask, tol: f64) -> Result<MetricsReport> {
    pred.check_same_size(gt)?;
    if !(tol >= 0.0 && tol.is_finite()) {
        return config(format!("tolerance must be finite and non-negative, got {tol}"));
    }
    let to_gt = squared_distance_transform(gt);
    let to_pred = squared_distance_transform(pred);
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for i in 0..pred.data().len() {
        if pred.data()[i] == 1 {
            if within(to_gt[i], tol) {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        if gt.data()[i] == 1 && !within(to_pred[i], tol) {
            fn_ += 1;
        }
    }
    Ok(MetricsReport::from_counts(tp, fp, fn_, tol))
}
