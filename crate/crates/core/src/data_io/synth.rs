//! Synthetic pavement-like images with random-walk cracks.
//!
//! Each crack is a walk that advances one pixel per step along a major axis
//! while drifting laterally, stamped with a `t×t` square brush. The mask is
//! exactly the union of the stamps. Backgrounds carry a tilt, optional
//! stains, small aggregate stones and per-pixel noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::Image;
use crate::error::{config, Result};
use crate::mask::BinaryMask;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    /// Inclusive range of cracks per image.
    pub crack_count: [usize; 2],
    /// Inclusive range of walk steps per crack.
    pub length: [usize; 2],
    /// Inclusive range of brush widths in pixels.
    pub thickness: [usize; 2],
    /// Chance per step that the lateral drift is redrawn from {−1, 0, 1}.
    pub turn_prob: f64,
    /// Inclusive range of the mean background gray level.
    pub background_level: [u8; 2],
    /// Half-width of the uniform per-pixel noise, in gray levels.
    pub texture_amplitude: f64,
    /// Inclusive range of crack darkening, in gray levels.
    pub crack_depth: [u8; 2],
    /// Chance that an image receives one to three soft shadows or stains.
    pub blotch_prob: f64,
    /// Aggregate stones per 100 pixels.
    pub aggregate_density: f64,
    /// Inclusive range of stone radii in pixels.
    pub aggregate_radius: [f64; 2],
    /// Inclusive range of stone contrast magnitude, in gray levels; the
    /// sign is drawn per stone.
    pub aggregate_contrast: [f64; 2],
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            crack_count: [1, 2],
            length: [24, 56],
            thickness: [1, 3],
            turn_prob: 0.3,
            background_level: [100, 170],
            texture_amplitude: 24.0,
            crack_depth: [40, 70],
            blotch_prob: 0.5,
            aggregate_density: 3.0,
            aggregate_radius: [0.8, 2.5],
            aggregate_contrast: [15.0, 45.0],
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let ranges = [("crack_count", self.crack_count), ("length", self.length), ("thickness", self.thickness)];
        for (name, [lo, hi]) in ranges {
            if lo > hi {
                return config(format!("synth {name} range [{lo}, {hi}] is empty"));
            }
        }
        if self.background_level[0] > self.background_level[1] || self.crack_depth[0] > self.crack_depth[1] {
            return config("synth background_level and crack_depth ranges must be nonempty");
        }
        if self.thickness[0] == 0 || self.length[0] == 0 {
            return config("synth thickness and length must be at least 1");
        }
        let short = self.height.min(self.width);
        if self.length[1] + self.thickness[1] - 1 > short {
            return config(format!(
                "longest crack ({} steps, width {}) does not fit a {}×{} image",
                self.length[1], self.thickness[1], self.height, self.width
            ));
        }
        if !(0.0..=1.0).contains(&self.turn_prob) || !(0.0..=1.0).contains(&self.blotch_prob) {
            return config("synth probabilities must lie in [0, 1]");
        }
        if !(self.texture_amplitude >= 0.0) {
            return config("synth texture amplitude must be non-negative");
        }
        let [r0, r1] = self.aggregate_radius;
        let [c0, c1] = self.aggregate_contrast;
        if !(self.aggregate_density >= 0.0 && self.aggregate_density.is_finite()) {
            return config("synth aggregate density must be finite and non-negative");
        }
        if !(r0 > 0.0 && r0 <= r1 && r1.is_finite() && c0 >= 0.0 && c0 <= c1 && c1.is_finite()) {
            return config("synth aggregate radius and contrast ranges must be nonempty, finite and positive");
        }
        Ok(())
    }

    /// Inclusive bounds on the crack pixel count of any sample.
    pub fn mask_bounds(&self) -> (usize, usize) {
        let lo = if self.crack_count[0] >= 1 { self.length[0] * self.thickness[0] } else { 0 };
        let hi = self.crack_count[1] * self.length[1] * self.thickness[1] * self.thickness[1];
        (lo, hi.min(self.height * self.width))
    }
}

fn draw_crack(spec: &SynthSpec, rng: &mut ChaCha8Rng, mask: &mut BinaryMask) {
    let len = rng.gen_range(spec.length[0]..=spec.length[1]);
    let t = rng.gen_range(spec.thickness[0]..=spec.thickness[1]);
    let horizontal = rng.gen_bool(0.5);
    let (major, minor) = if horizontal { (spec.width, spec.height) } else { (spec.height, spec.width) };
    let start = rng.gen_range(0..=major - (len + t - 1));
    let lateral_max = (minor - t) as isize;
    let mut lateral = rng.gen_range(0..=lateral_max);
    let mut drift: isize = rng.gen_range(-1..=1);
    for step in 0..len {
        for a in 0..t {
            for b in 0..t {
                let (m, l) = (start + step + a, lateral as usize + b);
                if horizontal {
                    mask.set(l, m, true);
                } else {
                    mask.set(m, l, true);
                }
            }
        }
        if rng.gen_bool(spec.turn_prob) {
            drift = rng.gen_range(-1..=1);
        }
        if !(0..=lateral_max).contains(&(lateral + drift)) {
            drift = -drift;
        }
        lateral = (lateral + drift).clamp(0, lateral_max);
    }
}

/// Image and exact crack mask for sample `index`; a pure function of
/// `(spec, index)`.
pub fn synth_sample(spec: &SynthSpec, index: u64) -> Result<(Image, BinaryMask)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    let (h, w) = (spec.height, spec.width);

    let level = f64::from(rng.gen_range(spec.background_level[0]..=spec.background_level[1]));
    let tint: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-8.0..=8.0));
    let slope = (rng.gen_range(-15.0..=15.0), rng.gen_range(-15.0..=15.0));
    let mut blotches = Vec::new();
    if rng.gen_bool(spec.blotch_prob) {
        for _ in 0..rng.gen_range(1..=3) {
            let cy = rng.gen_range(0.0..h as f64);
            let cx = rng.gen_range(0.0..w as f64);
            let ry = rng.gen_range(4.0..=(h as f64 / 3.0).max(4.0));
            let rx = rng.gen_range(4.0..=(w as f64 / 3.0).max(4.0));
            let delta = rng.gen_range(20.0..=45.0) * if rng.gen_bool(0.7) { -1.0 } else { 1.0 };
            blotches.push((cy, cx, ry, rx, delta));
        }
    }

    let mut stones = vec![0.0f64; h * w];
    let count = (spec.aggregate_density * (h * w) as f64 / 100.0).round() as usize;
    for _ in 0..count {
        let cy = rng.gen_range(0.0..h as f64);
        let cx = rng.gen_range(0.0..w as f64);
        let r = rng.gen_range(spec.aggregate_radius[0]..=spec.aggregate_radius[1]);
        let delta = rng.gen_range(spec.aggregate_contrast[0]..=spec.aggregate_contrast[1]);
        let delta = if rng.gen_bool(0.5) { -delta } else { delta };
        let (y0, y1) = ((cy - r).floor().max(0.0) as usize, ((cy + r).ceil() as usize).min(h - 1));
        let (x0, x1) = ((cx - r).floor().max(0.0) as usize, ((cx + r).ceil() as usize).min(w - 1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                if (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2) <= r * r {
                    stones[y * w + x] = delta;
                }
            }
        }
    }

    let mut mask = BinaryMask::new(h, w);
    let mut depth = vec![0.0f64; h * w];
    for _ in 0..rng.gen_range(spec.crack_count[0]..=spec.crack_count[1]) {
        let mut stroke = BinaryMask::new(h, w);
        draw_crack(spec, &mut rng, &mut stroke);
        let d = f64::from(rng.gen_range(spec.crack_depth[0]..=spec.crack_depth[1]));
        for (i, &v) in stroke.data().iter().enumerate() {
            if v == 1 {
                mask.set(i / w, i % w, true);
                depth[i] = depth[i].max(d);
            }
        }
    }

    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let fy = y as f64 / h as f64 - 0.5;
            let fx = x as f64 / w as f64 - 0.5;
            let mut v = level + slope.0 * fy + slope.1 * fx;
            for &(cy, cx, ry, rx, delta) in &blotches {
                let r2 = ((y as f64 - cy) / ry).powi(2) + ((x as f64 - cx) / rx).powi(2);
                v += delta * (1.0 - r2).max(0.0);
            }
            v += stones[y * w + x];
            v -= depth[y * w + x];
            let noise = if spec.texture_amplitude > 0.0 {
                rng.gen_range(-spec.texture_amplitude..=spec.texture_amplitude)
            } else {
                0.0
            };
            for t in tint {
                data.push((v + noise + t).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok((Image::from_vec(h, w, 3, data)?, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_ranges_are_validated() {
        for bad in [
            SynthSpec { aggregate_density: -1.0, ..Default::default() },
            SynthSpec { aggregate_radius: [0.0, 1.0], ..Default::default() },
            SynthSpec { aggregate_contrast: [20.0, 10.0], ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn zero_cracks_give_empty_mask() {
        let spec = SynthSpec { crack_count: [0, 0], ..Default::default() };
        for i in 0..5 {
            assert!(synth_sample(&spec, i).unwrap().1.is_empty());
        }
    }

    #[test]
    fn samples_are_pure_functions_of_seed_and_index() {
        let spec = SynthSpec { seed: 5, ..Default::default() };
        assert_eq!(synth_sample(&spec, 3).unwrap(), synth_sample(&spec, 3).unwrap());
        assert_ne!(synth_sample(&spec, 3).unwrap().1, synth_sample(&spec, 4).unwrap().1);
    }

    #[test]
    fn invalid_specs_rejected() {
        let ok = SynthSpec::default();
        for bad in [
            SynthSpec { thickness: [0, 2], ..ok.clone() },
            SynthSpec { length: [5, 4], ..ok.clone() },
            SynthSpec { length: [10, 64], ..ok.clone() },
            SynthSpec { turn_prob: 1.5, ..ok.clone() },
        ] {
            assert!(synth_sample(&bad, 0).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn walks_fill_the_image_edge_to_edge() {
        let spec = SynthSpec {
            height: 8,
            width: 8,
            crack_count: [1, 1],
            length: [6, 6],
            thickness: [3, 3],
            ..Default::default()
        };
        let (_, mask) = synth_sample(&spec, 0).unwrap();
        assert!(mask.count() >= 18);
    }
}
