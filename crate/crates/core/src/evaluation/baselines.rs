//! Rule-based edge detectors used as comparison rows.

use crate::data_io::Image;
use crate::error::{config, Result};
use crate::mask::BinaryMask;

/// Luminance `0.299 R + 0.587 G + 0.114 B`, row-major.
pub fn luminance(image: &Image) -> Vec<f64> {
    let mut out = Vec::with_capacity(image.height() * image.width());
    for y in 0..image.height() {
        for x in 0..image.width() {
            let [r, g, b] = image.rgb(y, x);
            out.push(0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b));
        }
    }
    out
}

fn clamp_at(v: &[f64], h: usize, w: usize, y: isize, x: isize) -> f64 {
    let y = y.clamp(0, h as isize - 1) as usize;
    let x = x.clamp(0, w as isize - 1) as usize;
    v[y * w + x]
}

/// Sobel derivatives `(gx, gy)` with replicated borders.
pub fn sobel_gradients(gray: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dy: isize, dx: isize| clamp_at(gray, h, w, y + dy, x + dx);
            let i = y as usize * w + x as usize;
            gx[i] = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            gy[i] = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
        }
    }
    (gx, gy)
}

pub fn sobel_magnitude(image: &Image) -> Vec<f64> {
    let (gx, gy) = sobel_gradients(&luminance(image), image.height(), image.width());
    gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect()
}

/// Pixels whose Sobel gradient magnitude is at least `threshold`.
pub fn sobel_baseline(image: &Image, threshold: f64) -> BinaryMask {
    let mag = sobel_magnitude(image);
    BinaryMask::from_fn(image.height(), image.width(), |y, x| mag[y * image.width() + x] >= threshold)
}

fn gaussian_blur(v: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return v.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * clamp_at(v, h, w, y as isize, x as isize + j as isize - radius))
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * clamp_at(&tmp, h, w, y as isize + j as isize - radius, x as isize))
                .sum();
        }
    }
    out
}

/// Neighbor offsets across the edge for a gradient direction, quantized to
/// 0°, 45°, 90° or 135° (image rows grow downward).
fn nms_offsets(gx: f64, gy: f64) -> ((isize, isize), (isize, isize)) {
    let angle = gy.atan2(gx).to_degrees().rem_euclid(180.0);
    if !(22.5..157.5).contains(&angle) {
        ((0, -1), (0, 1))
    } else if angle < 67.5 {
        ((-1, -1), (1, 1))
    } else if angle < 112.5 {
        ((-1, 0), (1, 0))
    } else {
        ((-1, 1), (1, -1))
    }
}

/// Gaussian smoothing, Sobel gradients, non-maximum suppression and
/// hysteresis. A pixel survives suppression when its magnitude is strictly
/// above the neighbor on the negative side and at least the other one, so
/// a plateau of equal maxima keeps its first pixel.
pub fn canny_baseline(image: &Image, low: f64, high: f64, sigma: f64) -> Result<BinaryMask> {
    if !(low >= 0.0 && low <= high) || !(sigma >= 0.0) {
        return config(format!("canny needs 0 ≤ low ≤ high and sigma ≥ 0, got {low}, {high}, {sigma}"));
    }
    let (h, w) = (image.height(), image.width());
    let smooth = gaussian_blur(&luminance(image), h, w, sigma);
    let (gx, gy) = sobel_gradients(&smooth, h, w);
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
    let at = |y: isize, x: isize| {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let mut thin = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (before, after) = nms_offsets(gx[i], gy[i]);
            let (yi, xi) = (y as isize, x as isize);
            if mag[i] > at(yi + before.0, xi + before.1) && mag[i] >= at(yi + after.0, xi + after.1) {
                thin[i] = mag[i];
            }
        }
    }
    let mut mask = BinaryMask::new(h, w);
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if thin[y * w + x] > 0.0 && thin[y * w + x] >= high && !mask.get(y, x) {
                mask.set(y, x, true);
                stack.push((y, x));
                while let Some((cy, cx)) = stack.pop() {
                    for ny in cy.saturating_sub(1)..=(cy + 1).min(h - 1) {
                        for nx in cx.saturating_sub(1)..=(cx + 1).min(w - 1) {
                            let v = thin[ny * w + nx];
                            if v > 0.0 && v >= low && !mask.get(ny, nx) {
                                mask.set(ny, nx, true);
                                stack.push((ny, nx));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(mask)
}
