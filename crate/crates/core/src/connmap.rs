//! Eight-direction connectivity maps.
//!
//! Channel `k` marks a pixel when it and its neighbor in direction `k` are
//! both crack. Directions are ordered NW, W, SW, N, S, NE, E, SE, so the
//! opposite of channel `k` is channel `7 − k`.

use conncrack_nn::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{config, dimension, Result};
use crate::mask::BinaryMask;

/// `(dy, dx)` neighbor offsets per channel.
pub const DIRECTIONS: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

pub const DIRECTION_NAMES: [&str; 8] = ["nw", "w", "sw", "n", "s", "ne", "e", "se"];

pub const fn opposite(k: usize) -> usize {
    7 - k
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConnectivityMaps {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ConnectivityMaps {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0.0; 8 * height * width] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 8 * height * width {
            return dimension(format!(
                "8×{height}×{width} maps need {} values, got {}",
                8 * height * width,
                data.len()
            ));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return dimension(format!("map entries must lie in [0, 1], found {v}"));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let (c, h, w) = t.dims3()?;
        if c != 8 {
            return dimension(format!("connectivity maps need 8 channels, got {c}"));
        }
        Self::from_vec(h, w, t.data().iter().map(|v| v.as_f64() as f32).collect())
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| T::of_f64(f64::from(v))).collect();
        Tensor::from_vec(&[8, self.height, self.width], data).expect("shape matches data")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, k: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[k * plane..(k + 1) * plane]
    }

    pub fn get(&self, k: usize, y: usize, x: usize) -> f32 {
        self.data[(k * self.height + y) * self.width + x]
    }

    fn get_signed(&self, k: usize, y: isize, x: isize) -> f32 {
        if y < 0 || x < 0 || y as usize >= self.height || x as usize >= self.width {
            return 0.0;
        }
        self.get(k, y as usize, x as usize)
    }
}

pub fn encode(mask: &BinaryMask) -> ConnectivityMaps {
    let (h, w) = (mask.height(), mask.width());
    let mut maps = ConnectivityMaps::zeros(h, w);
    for (k, &(dy, dx)) in DIRECTIONS.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                if mask.get(y, x) && mask.get_signed(y as isize + dy, x as isize + dx) {
                    maps.data[(k * h + y) * w + x] = 1.0;
                }
            }
        }
    }
    maps
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeOptions {
    pub tau: f64,
    /// Require both ends of a link to agree: use `min(A_k(p), A_opp(k)(p + offset_k))`.
    pub reciprocal: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self { tau: 0.5, reciprocal: false }
    }
}

pub fn decode(maps: &ConnectivityMaps, tau: f64) -> Result<BinaryMask> {
    decode_with(maps, &DecodeOptions { tau, reciprocal: false })
}

pub fn decode_with(maps: &ConnectivityMaps, opts: &DecodeOptions) -> Result<BinaryMask> {
    if !(opts.tau > 0.0 && opts.tau < 1.0) {
        return config(format!("decode threshold must lie in (0, 1), got {}", opts.tau));
    }
    let tau = opts.tau as f32;
    Ok(BinaryMask::from_fn(maps.height, maps.width, |y, x| {
        (0..8).any(|k| {
            let v = maps.get(k, y, x);
            let v = if opts.reciprocal {
                let (dy, dx) = DIRECTIONS[k];
                v.min(maps.get_signed(opposite(k), y as isize + dy, x as isize + dx))
            } else {
                v
            };
            v >= tau
        })
    }))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue<T> {
    pub value: f64,
    /// Gradient with respect to the loss input (logits or probabilities).
    pub gradient: Tensor<T>,
}

fn check_target<T: Scalar>(input: &Tensor<T>, target: &ConnectivityMaps) -> Result<()> {
    let (c, h, w) = input.dims3()?;
    if (c, h, w) != (8, target.height, target.width) {
        return dimension(format!("prediction {c}×{h}×{w} does not match target 8×{}×{}", target.height, target.width));
    }
    Ok(())
}

fn scale_for(reduction: Reduction, n: usize) -> f64 {
    match reduction {
        Reduction::Mean => 1.0 / n.max(1) as f64,
        Reduction::Sum => 1.0,
    }
}

/// Binary cross-entropy of `σ(z)` against the target, in the stable form
/// `max(z, 0) − z·y + ln(1 + e^{−|z|})`. The gradient is `(σ(z) − y)` times
/// the reduction scale.
pub fn content_loss<T: Scalar>(
    logits: &Tensor<T>,
    target: &ConnectivityMaps,
    reduction: Reduction,
) -> Result<LossValue<T>> {
    check_target(logits, target)?;
    let scale = scale_for(reduction, logits.len());
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.data().iter().zip(&target.data) {
        let (z, y) = (z.as_f64(), f64::from(y));
        total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        let s = conncrack_nn::ops::sigmoid(z);
        grad.push(T::of_f64((s - y) * scale));
    }
    Ok(LossValue { value: total * scale, gradient: Tensor::from_vec(logits.shape(), grad)? })
}

/// Probability-domain counterpart of [`content_loss`]; inputs are clamped to
/// `[1e-7, 1 − 1e-7]` and the gradient vanishes where clamping is active.
pub fn content_loss_probs<T: Scalar>(
    probs: &Tensor<T>,
    target: &ConnectivityMaps,
    reduction: Reduction,
) -> Result<LossValue<T>> {
    const EPS: f64 = 1e-7;
    check_target(probs, target)?;
    let scale = scale_for(reduction, probs.len());
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(probs.len());
    for (&p, &y) in probs.data().iter().zip(&target.data) {
        let raw = p.as_f64();
        let (p, y) = (raw.clamp(EPS, 1.0 - EPS), f64::from(y));
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        let g = if raw == p { (p - y) / (p * (1.0 - p)) } else { 0.0 };
        grad.push(T::of_f64(g * scale));
    }
    Ok(LossValue { value: total * scale, gradient: Tensor::from_vec(probs.shape(), grad)? })
}

/// Crack pixels with no crack 8-neighbor removed.
pub fn remove_isolated(mask: &BinaryMask) -> BinaryMask {
    BinaryMask::from_fn(mask.height(), mask.width(), |y, x| {
        mask.get(y, x) && DIRECTIONS.iter().any(|&(dy, dx)| mask.get_signed(y as isize + dy, x as isize + dx))
    })
}
