use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use conncrack::connmap::{encode, DIRECTION_NAMES};
use conncrack::data_io::{
    load_image, load_mask, patch_dataset, save_image, split_manifest, synth_sample, DatasetManifest, Image, KeepRule,
    Split, SynthSpec,
};
use conncrack::evaluation::{region_grid, report_table, tolerance_metrics, MetricsReport, RegionGrid, ReportRow};
use conncrack::geometry::{resolution_profile, MountConfig};
use conncrack::gradsuite::{gradient_suite, LINEAR_TOLERANCE, TOLERANCE};
use conncrack::inference::{detect_parallel, threads_from_env, DetectParams};
use conncrack::models::{Generator, ModelConfig};
use conncrack::trainer::TrainConfig;
use conncrack::write_atomic;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::{DetectArgs, EncodeMapsArgs, EvalArgs, Failure, GeometryArgs, GradcheckArgs, SynthArgs, TrainArgs};

type CmdResult = std::result::Result<(), Failure>;

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "pgm", "ppm", "pnm"];

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

/// `run_meta.json` inside `dir`.
fn write_run_meta(dir: &Path, command: &str, args: &impl Serialize, resolved: serde_json::Value) -> Result<()> {
    write_json(&dir.join("run_meta.json"), &meta(command, args, resolved))
}

/// `<file>.run_meta.json` beside a single-file output.
fn write_file_meta(out: &Path, command: &str, args: &impl Serialize, resolved: serde_json::Value) -> Result<()> {
    write_json(&sibling(out, "run_meta.json"), &meta(command, args, resolved))
}

fn meta(command: &str, args: &impl Serialize, resolved: serde_json::Value) -> serde_json::Value {
    json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "args": args,
        "resolved": resolved,
        "threads": threads_from_env(),
    })
}

/// `dir/name.ext` → `dir/name.ext.suffix`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(suffix);
    path.with_file_name(name)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn geometry(a: &GeometryArgs) -> CmdResult {
    let mount = MountConfig {
        camera_height_m: a.height_m,
        tilt_alpha_deg: a.alpha_deg,
        fov_theta_deg: a.fov_deg,
        vertical_pixels: a.vpix,
    };
    let profile = resolution_profile(&mount, &a.fractions).context("geometry")?;
    let csv = profile.to_csv();
    match &a.out {
        Some(out) => {
            write_atomic(out, csv.as_bytes()).with_context(|| format!("geometry: writing {}", out.display()))?;
            write_file_meta(out, "geometry", a, json!({ "mount": mount }))?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

/// `CMAP1`, then dims `8, H, W` as u32 little-endian, then the maps as f32
/// little-endian in channel-major order.
fn cmap_dump(maps: &conncrack::connmap::ConnectivityMaps) -> Vec<u8> {
    let mut out = b"CMAP1".to_vec();
    for d in [8, maps.height(), maps.width()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in maps.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_maps(a: &EncodeMapsArgs) -> CmdResult {
    let mask = load_mask(&a.mask).context("encode-maps")?;
    let maps = encode(&mask);
    create_dir(&a.out_dir)?;
    for (k, name) in DIRECTION_NAMES.iter().enumerate() {
        let data = maps.channel(k).iter().map(|&v| (v * 255.0) as u8).collect();
        let img = Image::from_vec(maps.height(), maps.width(), 1, data).context("encode-maps")?;
        save_image(&a.out_dir.join(format!("map_{name}.pgm")), &img).context("encode-maps")?;
    }
    let dump = a.out_dir.join("maps.cmap");
    write_atomic(&dump, &cmap_dump(&maps)).context("encode-maps")?;
    write_run_meta(&a.out_dir, "encode-maps", a, json!({ "height": maps.height(), "width": maps.width() }))?;
    Ok(())
}

pub fn synth(a: &SynthArgs) -> CmdResult {
    let mut spec: SynthSpec = match &a.spec {
        Some(p) => {
            serde_json::from_str(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("synth: parsing {}", p.display()))?
        }
        None => SynthSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    spec.validate().context("synth")?;
    if a.count == 0 {
        return Err(anyhow::anyhow!("synth: --count must be at least 1").into());
    }
    create_dir(&a.out_dir)?;
    let mut items = Vec::with_capacity(a.count);
    for i in 0..a.count {
        let (img, mask) = synth_sample(&spec, i as u64).context("synth")?;
        let (ip, mp) = (PathBuf::from(format!("img_{i:05}.png")), PathBuf::from(format!("mask_{i:05}.png")));
        save_image(&a.out_dir.join(&ip), &img).context("synth")?;
        save_image(&a.out_dir.join(&mp), &Image::from_mask(&mask)).context("synth")?;
        items.push((ip, mp));
    }
    let ratios = a.split;
    let manifest = split_manifest(items, ratios, spec.seed).context("synth")?;
    manifest.save(&a.out_dir.join("manifest.jsonl")).context("synth")?;
    write_run_meta(&a.out_dir, "synth", a, json!({ "spec": spec, "split": ratios }))?;
    println!(
        "wrote {} samples ({} train, {} val, {} test)",
        a.count,
        manifest.count(Split::Train),
        manifest.count(Split::Val),
        manifest.count(Split::Test)
    );
    Ok(())
}

/// Contents of the `train --config` file.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Patch stride; defaults to the patch size.
    pub patch_stride: Option<usize>,
    pub keep: KeepRule,
}

pub fn train(a: &TrainArgs) -> CmdResult {
    let mut file: TrainFile = match &a.config {
        Some(p) => {
            serde_json::from_str(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("train: parsing {}", p.display()))?
        }
        None => TrainFile::default(),
    };
    if let Some(n) = a.iters {
        file.train.iterations = n;
    }
    if let Some(s) = a.seed {
        file.train.seed = s;
    }
    let stride = file.patch_stride.unwrap_or(file.train.patch_size);
    file.patch_stride = Some(stride);

    let manifest = DatasetManifest::load(&a.data_manifest).context("train: loading manifest")?;
    manifest.check_paths().context("train")?;
    let samples = patch_dataset(&manifest, Some(Split::Train), file.train.patch_size, stride, file.keep)
        .context("train")?
        .collect::<conncrack::Result<Vec<_>>>()
        .context("train: extracting patches")?;
    create_dir(&a.out_dir)?;
    write_run_meta(&a.out_dir, "train", a, serde_json::to_value(&file).context("train")?)?;
    let outcome = conncrack::trainer::train(&samples, &file.model, &file.train, Some(&a.out_dir)).context("train")?;
    let last = outcome.log.rows.last();
    println!(
        "trained {} iterations on {} patches; final content loss {}; clip violations {}",
        outcome.log.rows.len(),
        samples.len(),
        last.map_or("n/a".into(), |r| format!("{:.5}", r.content_loss)),
        outcome.clip_violations
    );
    Ok(())
}

pub fn detect(a: &DetectArgs) -> CmdResult {
    let params =
        DetectParams { patch: a.patch, overlap: a.overlap, tau: a.tau, min_area: a.min_area, reciprocal: a.reciprocal };
    let config_path = match &a.model_config {
        Some(p) => p.clone(),
        None => a.ckpt.with_file_name("model_config.json"),
    };
    let model =
        ModelConfig::load(&config_path).with_context(|| format!("detect: loading {}", config_path.display()))?;
    let mut g = Generator::<f32>::build(&model.generator, 0).context("detect")?;
    conncrack_nn::load_checkpoint(g.params_mut(), &a.ckpt)
        .with_context(|| format!("detect: loading checkpoint {}", a.ckpt.display()))?;
    let image = load_image(&a.image).context("detect")?;
    let det = detect_parallel(&image, &g, &params, threads_from_env()).context("detect")?;

    save_image(&a.out, &Image::from_mask(&det.mask)).context("detect")?;
    let sidecar = json!({
        "image": a.image,
        "ckpt": a.ckpt,
        "model_config": config_path,
        "params": params,
        "height": image.height(),
        "width": image.width(),
        "tiles": det.tiles,
        "crack_pixels": det.mask.count(),
        "components": det.component_areas.len(),
        "kept_components": det.kept_components,
        "component_areas": det.component_areas,
    });
    write_json(&a.out.with_extension("json"), &sidecar)?;
    write_file_meta(&a.out, "detect", a, json!({ "params": params, "model": model }))?;
    Ok(())
}

/// Image files in `dir` keyed by file stem, sorted.
fn images_by_stem(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            out.push((stem, path));
        }
    }
    out.sort();
    for pair in out.windows(2) {
        if pair[0].0 == pair[1].0 {
            bail!("{} holds two images with stem `{}`", dir.display(), pair[0].0);
        }
    }
    Ok(out)
}

fn parse_grid(spec: &str) -> Result<(usize, usize)> {
    let parsed = spec.split_once(['x', 'X']).and_then(|(c, r)| Some((c.trim().parse().ok()?, r.trim().parse().ok()?)));
    match parsed {
        Some((c, r)) if c > 0 && r > 0 => Ok((c, r)),
        _ => bail!("grid must look like COLSxROWS with positive counts, got `{spec}`"),
    }
}

pub fn eval(a: &EvalArgs) -> CmdResult {
    let grid = a.grid.as_deref().map(parse_grid).transpose().context("eval")?;
    let preds = images_by_stem(&a.pred_dir).context("eval")?;
    let gts: std::collections::BTreeMap<_, _> = images_by_stem(&a.gt_dir).context("eval")?.into_iter().collect();
    if preds.is_empty() {
        return Err(anyhow::anyhow!("eval: no images in {}", a.pred_dir.display()).into());
    }
    let mut rows = Vec::with_capacity(preds.len() + 1);
    let mut pooled = MetricsReport::empty(a.tol);
    let mut pooled_grid: Option<RegionGrid> = None;
    for (stem, path) in &preds {
        let gt_path =
            gts.get(stem).with_context(|| format!("eval: no ground truth for `{stem}` in {}", a.gt_dir.display()))?;
        let pred = load_mask(path).context("eval")?;
        let gt = load_mask(gt_path).context("eval")?;
        let m = tolerance_metrics(&pred, &gt, a.tol).with_context(|| format!("eval: scoring `{stem}`"))?;
        pooled = pooled.merge(&m);
        rows.push(ReportRow { name: stem.clone(), metrics: m, sec_per_image: None });
        if let Some((cols, grid_rows)) = grid {
            let g = region_grid(&pred, &gt, grid_rows, cols, a.tol).context("eval")?;
            match &mut pooled_grid {
                Some(acc) => acc.accumulate(&g).context("eval")?,
                None => pooled_grid = Some(g),
            }
        }
    }
    rows.push(ReportRow { name: "all".into(), metrics: pooled, sec_per_image: None });
    let table = report_table(&rows).context("eval")?;
    write_atomic(&a.out, table.as_bytes()).with_context(|| format!("eval: writing {}", a.out.display()))?;
    if let Some(g) = &pooled_grid {
        write_atomic(&a.out.with_extension("grid.csv"), g.to_csv().as_bytes()).context("eval")?;
    }
    write_file_meta(&a.out, "eval", a, json!({ "images": preds.len() }))?;
    println!("precision {:.4} recall {:.4} f1 {:.4}", pooled.precision, pooled.recall, pooled.f1);
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> CmdResult {
    let report = gradient_suite(a.seed).context("gradcheck")?;
    let csv = report.to_csv();
    print!("{csv}");
    if let Some(dir) = &a.out_dir {
        create_dir(dir)?;
        write_atomic(&dir.join("gradcheck.csv"), csv.as_bytes()).context("gradcheck")?;
        write_run_meta(dir, "gradcheck", a, json!({ "tolerance": TOLERANCE, "linear_tolerance": LINEAR_TOLERANCE }))?;
    }
    if !report.passes(TOLERANCE, LINEAR_TOLERANCE) {
        return Err(Failure::Check(format!(
            "max relative error {:.3e} exceeds tolerance {TOLERANCE:e} (linear {LINEAR_TOLERANCE:e})",
            report.max_rel_err()
        )));
    }
    Ok(())
}
