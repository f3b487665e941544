use std::path::PathBuf;

use conncrack::connmap::encode;
use conncrack::data_io::{
    image_to_tensor, load_image, load_mask, patch_dataset, patch_origins, patches_from_pair, save_image,
    split_manifest, synth_sample, Image, KeepRule, Split, SynthSpec,
};
use conncrack::{BinaryMask, Error};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn pnm_files_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (name, channels) in [("a.pgm", 1), ("b.ppm", 3), ("c.png", 3), ("d.png", 1)] {
        let img = Image::from_vec(7, 5, channels, (0..35 * channels).map(|_| rng.gen()).collect()).unwrap();
        let path = dir.path().join(name);
        save_image(&path, &img).unwrap();
        assert_eq!(load_image(&path).unwrap(), img, "{name}");
        if name.ends_with("pgm") {
            let bytes = std::fs::read(&path).unwrap();
            let path2 = dir.path().join("again.pgm");
            save_image(&path2, &load_image(&path).unwrap()).unwrap();
            assert_eq!(std::fs::read(path2).unwrap(), bytes);
        }
    }
    let leftovers: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().contains(".tmp"))
        .collect();
    assert!(leftovers.is_empty());
}

#[test]
fn truncated_file_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.ppm");
    std::fs::write(&path, b"P6\n4 4\n255\n\x01\x02\x03").unwrap();
    match load_image(&path) {
        Err(Error::Format { context, offset, .. }) => {
            assert!(context.ends_with("t.ppm"));
            assert!(offset > 0);
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(load_image(&dir.path().join("missing.pgm")), Err(Error::Io { .. })));
    assert!(matches!(load_image(&dir.path().join("x.bmp")), Err(Error::Config(_))));
}

#[test]
fn masks_threshold_any_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.pgm");
    save_image(&path, &Image::from_vec(1, 4, 1, vec![0, 1, 128, 255]).unwrap()).unwrap();
    assert_eq!(load_mask(&path).unwrap().data(), &[0, 1, 1, 1]);
    let mask = BinaryMask::from_vec(2, 2, vec![1, 0, 0, 1]).unwrap();
    let path = dir.path().join("m.png");
    save_image(&path, &Image::from_mask(&mask)).unwrap();
    assert_eq!(load_mask(&path).unwrap(), mask);
}

#[test]
fn patch_maps_come_from_cropped_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mask = BinaryMask::from_fn(40, 56, |_, _| rng.gen_bool(0.3));
    let img = Image::from_vec(40, 56, 3, (0..40 * 56 * 3).map(|_| rng.gen()).collect()).unwrap();
    let full = encode(&mask);
    let (p, s) = (16, 12);
    let samples = patches_from_pair(&img, &mask, p, s, KeepRule::All).unwrap();
    let origins = patch_origins(40, 56, p, s);
    assert_eq!(samples.len(), origins.len());
    for (sample, &(oy, ox)) in samples.iter().zip(&origins) {
        assert_eq!(sample.image, image_to_tensor(&img.crop(oy, ox, p, p).unwrap()));
        for k in 0..8 {
            for y in 0..p {
                for x in 0..p {
                    let crop_first = sample.maps.get(k, y, x);
                    let encode_first = full.get(k, oy + y, ox + x);
                    let (dy, dx) = conncrack::connmap::DIRECTIONS[k];
                    let (ny, nx) = (y as isize + dy, x as isize + dx);
                    let inside = ny >= 0 && nx >= 0 && ny < p as isize && nx < p as isize;
                    if inside {
                        assert_eq!(crop_first, encode_first);
                    } else {
                        assert_eq!(crop_first, 0.0, "links leaving the patch are dropped");
                    }
                }
            }
        }
    }
}

#[test]
fn four_patches_from_256() {
    let img = Image::new(256, 256, 3).unwrap();
    let n = patches_from_pair(&img, &BinaryMask::new(256, 256), 128, 128, KeepRule::All).unwrap().len();
    assert_eq!(n, 4);
}

#[test]
fn dataset_from_manifest_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { seed: 11, ..Default::default() };
    let mut items = Vec::new();
    for i in 0..5 {
        let (img, mask) = synth_sample(&spec, i).unwrap();
        let (ip, mp) = (PathBuf::from(format!("img_{i}.ppm")), PathBuf::from(format!("mask_{i}.pgm")));
        save_image(&dir.path().join(&ip), &img).unwrap();
        save_image(&dir.path().join(&mp), &Image::from_mask(&mask)).unwrap();
        items.push((ip, mp));
    }
    let manifest = split_manifest(items, [0.6, 0.2, 0.2], 4).unwrap();
    let path = dir.path().join("manifest.jsonl");
    manifest.save(&path).unwrap();
    let loaded = conncrack::data_io::DatasetManifest::load(&path).unwrap();
    loaded.check_paths().unwrap();
    let run = || -> Vec<_> {
        patch_dataset(&loaded, Some(Split::Train), 32, 32, KeepRule::All).unwrap().map(Result::unwrap).collect()
    };
    let a = run();
    assert_eq!(a.len(), 3 * 4);
    assert_eq!(a, run());
    let cracked = patch_dataset(&loaded, None, 32, 32, KeepRule::CrackOnly).unwrap().count();
    assert!(cracked < 20 && cracked > 0);
}

fn spec_strategy() -> impl Strategy<Value = SynthSpec> {
    (0usize..3, 0usize..3, 1usize..20, 0usize..20, 1usize..4, 0usize..3, 0.0f64..1.0, any::<u64>()).prop_map(
        |(c0, dc, l0, dl, t0, dt, turn, seed)| SynthSpec {
            height: 48,
            width: 40,
            crack_count: [c0, c0 + dc],
            length: [l0, l0 + dl],
            thickness: [t0, t0 + dt],
            turn_prob: turn,
            seed,
            ..Default::default()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn synthetic_masks_respect_declared_bounds(spec in spec_strategy(), index in 0u64..1000) {
        let (img, mask) = synth_sample(&spec, index).unwrap();
        prop_assert_eq!((img.height(), img.width(), mask.height(), mask.width()), (48, 40, 48, 40));
        let (lo, hi) = spec.mask_bounds();
        prop_assert!(mask.count() >= lo && mask.count() <= hi, "{} not in [{lo}, {hi}]", mask.count());
        prop_assert_eq!(synth_sample(&spec, index).unwrap(), (img, mask));
    }
}
