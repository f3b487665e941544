use conncrack::geometry::{resolution_profile, spatial_resolution, MountConfig};
use proptest::prelude::*;

const FRACTIONS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[test]
fn rear_mount_table() {
    let p = resolution_profile(&MountConfig::rear_mount(), &FRACTIONS).unwrap();
    for (row, want) in p.rows.iter().zip([8.62, 6.99, 4.45, 1.91, 0.28]) {
        assert!((row.resolution_px_per_cm - want).abs() <= 0.01, "{row:?} vs {want}");
        assert!(row.reachable);
    }
}

#[test]
fn front_mount_table() {
    let p = resolution_profile(&MountConfig::front_mount(), &FRACTIONS).unwrap();
    let got: Vec<f64> = p.rows.iter().map(|r| r.resolution_px_per_cm).collect();
    for (g, want) in got.iter().zip([1.93, 0.53, 0.0]) {
        assert!((g - want).abs() <= 0.01, "{got:?}");
    }
    assert_eq!(&got[2..], &[0.0, 0.0, 0.0]);
    let reach: Vec<bool> = p.rows.iter().map(|r| r.reachable).collect();
    assert_eq!(reach, vec![true, true, false, false, false]);
}

#[test]
fn csv_shape() {
    let p = resolution_profile(&MountConfig::rear_mount(), &FRACTIONS).unwrap();
    let csv = p.to_csv();
    assert_eq!(csv.lines().next().unwrap(), "fraction,resolution_px_per_cm,reachable");
    assert_eq!(csv.lines().nth(1).unwrap(), "0,8.62,true");
}

fn config() -> impl Strategy<Value = MountConfig> {
    (0.2f64..5.0, 0.0f64..60.0, 5.0f64..80.0, 10u32..4000).prop_map(|(d, a, t, m)| MountConfig {
        camera_height_m: d,
        tilt_alpha_deg: a,
        fov_theta_deg: t,
        vertical_pixels: m,
    })
}

proptest! {
    #[test]
    fn resolution_decreases_below_horizon(cfg in config(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(hi - lo > 1e-6);
        let horizon = cfg.tilt_alpha_deg + hi * cfg.fov_theta_deg + cfg.fov_theta_deg / f64::from(cfg.vertical_pixels);
        prop_assume!(horizon < 89.0);
        let r_lo = spatial_resolution(&cfg, lo).unwrap();
        let r_hi = spatial_resolution(&cfg, hi).unwrap();
        prop_assert!(r_lo > r_hi);
    }

    #[test]
    fn doubling_height_halves_resolution(cfg in config(), f in 0.0f64..1.0) {
        let r1 = spatial_resolution(&cfg, f).unwrap();
        let r2 = spatial_resolution(&MountConfig { camera_height_m: 2.0 * cfg.camera_height_m, ..cfg }, f).unwrap();
        prop_assert!((r1 - 2.0 * r2).abs() <= 1e-12 * r1.max(1.0));
    }
}
