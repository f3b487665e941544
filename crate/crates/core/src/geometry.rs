//! Ground spatial resolution of a tilted camera.
//!
//! A pixel row at angle `α + Δθ` from the vertical covers the ground strip
//! between `d·tan(α+Δθ)` and `d·tan(α+Δθ+θ/m)`; its inverse length is the
//! resolution `ρ`. Angles are in degrees, heights in meters, and `ρ` is
//! reported in pixels per centimeter.

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MountConfig {
    pub camera_height_m: f64,
    /// Angle between the bottom edge of the field of view and the vertical.
    pub tilt_alpha_deg: f64,
    pub fov_theta_deg: f64,
    /// Pixel count along the vertical image direction.
    pub vertical_pixels: u32,
}

impl MountConfig {
    /// GoPro Hero 7 (69.5° FOV, 1080 rows) on the rear of a car, 1 m up, tilted 45°.
    pub fn rear_mount() -> Self {
        Self { camera_height_m: 1.0, tilt_alpha_deg: 45.0 - 69.5 / 2.0, fov_theta_deg: 69.5, vertical_pixels: 1080 }
    }

    /// Same camera behind the windshield, 1.5 m up, facing forward.
    pub fn front_mount() -> Self {
        Self { camera_height_m: 1.5, tilt_alpha_deg: 90.0 - 69.5 / 2.0, fov_theta_deg: 69.5, vertical_pixels: 1080 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.camera_height_m > 0.0 && self.camera_height_m.is_finite()) {
            return config(format!("camera height must be positive, got {}", self.camera_height_m));
        }
        if !(self.fov_theta_deg > 0.0 && self.fov_theta_deg < 180.0) {
            return config(format!("field of view must lie in (0, 180) degrees, got {}", self.fov_theta_deg));
        }
        if self.vertical_pixels == 0 {
            return config("vertical pixel count must be at least 1");
        }
        if !(self.tilt_alpha_deg >= 0.0 && self.tilt_alpha_deg < 90.0) {
            return config(format!("tilt must lie in [0, 90) degrees, got {}", self.tilt_alpha_deg));
        }
        Ok(())
    }

    fn ray_deg(&self, fov_fraction: f64) -> f64 {
        self.tilt_alpha_deg + fov_fraction * self.fov_theta_deg
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolutionRow {
    pub fov_fraction: f64,
    pub resolution_px_per_cm: f64,
    pub reachable: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResolutionProfile {
    pub rows: Vec<ResolutionRow>,
}

impl ResolutionProfile {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("fraction,resolution_px_per_cm,reachable\n");
        for r in &self.rows {
            s.push_str(&format!("{},{:.2},{}\n", r.fov_fraction, r.resolution_px_per_cm, r.reachable));
        }
        s
    }
}

fn check_fraction(f: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&f) {
        return config(format!("FOV fraction must lie in [0, 1], got {f}"));
    }
    Ok(())
}

/// Pixels per centimeter on the ground at `fov_fraction` of the FOV above
/// its bottom edge; exactly 0 once the pixel's upper ray reaches the horizon.
pub fn spatial_resolution(config: &MountConfig, fov_fraction: f64) -> Result<f64> {
    config.validate()?;
    check_fraction(fov_fraction)?;
    let lower = config.ray_deg(fov_fraction);
    let upper = lower + config.fov_theta_deg / f64::from(config.vertical_pixels);
    if upper >= 90.0 {
        return Ok(0.0);
    }
    let d = config.camera_height_m;
    let strip_m = d * upper.to_radians().tan() - d * lower.to_radians().tan();
    Ok(1.0 / strip_m / 100.0)
}

pub fn resolution_profile(config: &MountConfig, fractions: &[f64]) -> Result<ResolutionProfile> {
    config.validate()?;
    if fractions.windows(2).any(|w| w[0] > w[1]) {
        return crate::error::config("FOV fractions must be sorted ascending");
    }
    let rows = fractions
        .iter()
        .map(|&f| {
            Ok(ResolutionRow {
                fov_fraction: f,
                resolution_px_per_cm: spatial_resolution(config, f)?,
                reachable: config.ray_deg(f) < 90.0,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ResolutionProfile { rows })
}
