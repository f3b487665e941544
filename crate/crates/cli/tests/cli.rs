use std::path::Path;
use std::process::{Command, Output};

use conncrack::connmap::{encode, DIRECTION_NAMES};
use conncrack::data_io::{load_image, load_mask, DatasetManifest, Split};

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conncrack")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = run(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let none = run(&[], dir.path());
    assert_eq!(none.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&none.stderr).contains("Usage"));
    assert_eq!(run(&["geometry", "--nope"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["detect", "--image", "x.png"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["geometry", "--vpix", "many"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn geometry_table_and_meta() {
    let dir = tempfile::tempdir().unwrap();
    let rear =
        ok(&["geometry", "--height-m", "1", "--alpha-deg", "10.25", "--fov-deg", "69.5", "--vpix", "1080"], dir.path());
    assert_eq!(
        rear,
        "fraction,resolution_px_per_cm,reachable\n0,8.62,true\n0.25,6.99,true\n0.5,4.45,true\n0.75,1.91,true\n1,0.28,true\n"
    );
    ok(&["geometry", "--fractions", "0,0.5", "--out", "g.csv"], dir.path());
    assert_eq!(std::fs::read_to_string(dir.path().join("g.csv")).unwrap().lines().count(), 3);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("g.csv.run_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["command"], "geometry");
    assert_eq!(meta["resolved"]["mount"]["vertical_pixels"], 1080);

    let bad = run(&["geometry", "--height-m", "-1", "--out", "bad.csv"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("geometry"));
    assert!(!dir.path().join("bad.csv").exists());
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let csv = ok(&["gradcheck", "--seed", "1", "--out-dir", "gc"], dir.path());
    let mut rows = 0;
    for line in csv.lines().skip(1) {
        let err: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(err < 1e-3, "{line}");
        rows += 1;
    }
    assert!(rows > 20);
    assert_eq!(std::fs::read_to_string(dir.path().join("gc/gradcheck.csv")).unwrap(), csv);
    assert!(dir.path().join("gc/run_meta.json").is_file());
}

#[test]
fn encode_maps_writes_images_and_dump() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--count", "1", "--out-dir", "d", "--split", "1,0,0"], dir.path());
    ok(&["encode-maps", "--mask", "d/mask_00000.png", "--out-dir", "m"], dir.path());
    let mask = load_mask(&dir.path().join("d/mask_00000.png")).unwrap();
    let maps = encode(&mask);
    let dump = std::fs::read(dir.path().join("m/maps.cmap")).unwrap();
    assert_eq!(&dump[..5], b"CMAP1");
    let dims: Vec<u32> = dump[5..17].chunks(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
    assert_eq!(dims, [8, 64, 64]);
    let values: Vec<f32> = dump[17..].chunks(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    assert_eq!(values, maps.data());
    for (k, name) in DIRECTION_NAMES.iter().enumerate() {
        let img = load_image(&dir.path().join(format!("m/map_{name}.pgm"))).unwrap();
        let want: Vec<u8> = maps.channel(k).iter().map(|&v| if v > 0.5 { 255 } else { 0 }).collect();
        assert_eq!(img.data(), want.as_slice(), "{name}");
    }
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--count", "6", "--out-dir", "a", "--seed", "3"], dir.path());
    ok(&["synth", "--count", "6", "--out-dir", "b", "--seed", "3"], dir.path());
    for name in ["manifest.jsonl", "img_00004.png", "mask_00004.png"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(name)).unwrap(),
            std::fs::read(dir.path().join("b").join(name)).unwrap()
        );
    }
    let m = DatasetManifest::load(&dir.path().join("a/manifest.jsonl")).unwrap();
    assert_eq!((m.count(Split::Train), m.count(Split::Val), m.count(Split::Test)), (4, 1, 1));
    m.check_paths().unwrap();
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/run_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["resolved"]["spec"]["seed"], 3);
}

#[test]
fn train_detect_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    std::fs::write(
        cwd.join("cfg.json"),
        r#"{"train": {"patch_size": 64, "lr_generator": 1e-3, "lr_critic": 1e-3, "checkpoint_every": 2},
            "model": {"critic": {"widths": [8, 8, 8, 8, 1]}}}"#,
    )
    .unwrap();
    ok(&["synth", "--count", "4", "--out-dir", "d", "--split", "0.5,0.25,0.25"], cwd);
    let stdout = ok(
        &["train", "--config", "cfg.json", "--data-manifest", "d/manifest.jsonl", "--iters", "3", "--out-dir", "r"],
        cwd,
    );
    assert!(stdout.contains("clip violations 0"), "{stdout}");
    for f in [
        "gen_000002.ckpt",
        "crit_000002.ckpt",
        "gen_000003.ckpt",
        "model_config.json",
        "train_log.csv",
        "run_meta.json",
    ] {
        assert!(cwd.join("r").join(f).is_file(), "{f}");
    }
    assert_eq!(std::fs::read_to_string(cwd.join("r/train_log.csv")).unwrap().lines().count(), 4);

    std::fs::create_dir(cwd.join("p")).unwrap();
    std::fs::create_dir(cwd.join("g")).unwrap();
    let detect = [
        "detect",
        "--image",
        "d/img_00000.png",
        "--ckpt",
        "r/gen_000003.ckpt",
        "--patch",
        "64",
        "--min-area",
        "0",
        "--tau",
        "0.3",
    ];
    ok(&[&detect[..], &["--out", "p/img_00000.png"]].concat(), cwd);
    ok(&[&detect[..], &["--out", "again.png"]].concat(), cwd);
    assert_eq!(std::fs::read(cwd.join("p/img_00000.png")).unwrap(), std::fs::read(cwd.join("again.png")).unwrap());
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(cwd.join("p/img_00000.json")).unwrap()).unwrap();
    assert_eq!(sidecar["tiles"], 1);
    assert_eq!(sidecar["params"]["tau"], 0.3);
    let areas: usize =
        sidecar["component_areas"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap() as usize).sum();
    assert_eq!(areas, sidecar["crack_pixels"].as_u64().unwrap() as usize);

    std::fs::copy(cwd.join("d/mask_00000.png"), cwd.join("g/img_00000.png")).unwrap();
    let summary =
        ok(&["eval", "--pred-dir", "p", "--gt-dir", "g", "--tol", "5", "--grid", "4x2", "--out", "rep.csv"], cwd);
    assert!(summary.starts_with("precision"));
    let report = std::fs::read_to_string(cwd.join("rep.csv")).unwrap();
    assert_eq!(report.lines().count(), 3);
    assert!(report.lines().nth(2).unwrap().starts_with("all,"));
    assert_eq!(std::fs::read_to_string(cwd.join("rep.grid.csv")).unwrap().lines().count(), 9);

    // Ground truth missing for a prediction.
    std::fs::copy(cwd.join("again.png"), cwd.join("p/extra.png")).unwrap();
    let missing = run(&["eval", "--pred-dir", "p", "--gt-dir", "g", "--out", "rep2.csv"], cwd);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("extra"));
    assert!(!cwd.join("rep2.csv").exists());
}

#[test]
fn detect_failures_leave_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    ok(&["synth", "--count", "1", "--out-dir", "d", "--split", "1,0,0"], cwd);
    std::fs::write(cwd.join("model_config.json"), "{}").unwrap();
    std::fs::write(cwd.join("gen.ckpt"), b"not a checkpoint").unwrap();
    let out =
        run(&["detect", "--image", "d/img_00000.png", "--ckpt", "gen.ckpt", "--patch", "64", "--out", "m.png"], cwd);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("detect: loading checkpoint"));
    let leftovers: Vec<_> = std::fs::read_dir(cwd).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(leftovers.len(), 3, "{leftovers:?}");
}

#[test]
fn split_needs_three_values() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        run(&["synth", "--count", "2", "--out-dir", "d", "--split", "0.5,0.5"], dir.path()).status.code(),
        Some(2)
    );
    assert!(!dir.path().join("d").exists());
}
