//! Whole-image detection: reflect-padded tiling, per-tile map prediction,
//! averaging stitch, decoding, and connected-component area filtering.

use conncrack_nn::Tensor;
use serde::{Deserialize, Serialize};

use crate::connmap::{decode_with, ConnectivityMaps, DecodeOptions};
use crate::data_io::{image_to_tensor, Image};
use crate::error::{config, dimension, Result};
use crate::mask::BinaryMask;
use crate::models::Generator;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    pub height: usize,
    pub width: usize,
    pub patch_size: usize,
    pub overlap: usize,
    pub padded_height: usize,
    pub padded_width: usize,
    /// Row-major `(row, col)` tile corners in padded coordinates.
    pub origins: Vec<(usize, usize)>,
}

impl TilePlan {
    pub fn stride(&self) -> usize {
        self.patch_size - self.overlap
    }
}

fn tile_count(extent: usize, patch: usize, stride: usize) -> usize {
    if extent <= patch {
        1
    } else {
        (extent - patch).div_ceil(stride) + 1
    }
}

pub fn plan_tiles(height: usize, width: usize, patch_size: usize, overlap: usize) -> Result<TilePlan> {
    if patch_size < 8 {
        return config(format!("patch size must be at least 8, got {patch_size}"));
    }
    if overlap >= patch_size {
        return config(format!("overlap {overlap} must be smaller than the patch size {patch_size}"));
    }
    if height == 0 || width == 0 {
        return dimension("cannot tile an empty image");
    }
    let stride = patch_size - overlap;
    let (rows, cols) = (tile_count(height, patch_size, stride), tile_count(width, patch_size, stride));
    let origins = (0..rows).flat_map(|r| (0..cols).map(move |c| (r * stride, c * stride))).collect();
    Ok(TilePlan {
        height,
        width,
        patch_size,
        overlap,
        padded_height: (rows - 1) * stride + patch_size,
        padded_width: (cols - 1) * stride + patch_size,
        origins,
    })
}

/// Index into `[0, n)` after mirror reflection without repeating the edge
/// sample; periodic so any padding width is valid.
pub fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// The `C×p×p` window at `origin` of a `C×H×W` tensor, reflect-padded past
/// the right and bottom edges.
pub fn extract_tile(full: &Tensor<f32>, plan: &TilePlan, origin: (usize, usize)) -> Result<Tensor<f32>> {
    let (c, h, w) = full.dims3()?;
    if (h, w) != (plan.height, plan.width) {
        return dimension(format!("tensor {h}×{w} does not match plan {}×{}", plan.height, plan.width));
    }
    let p = plan.patch_size;
    let src = full.data();
    let mut out = vec![0.0f32; c * p * p];
    for ch in 0..c {
        for y in 0..p {
            let sy = reflect_index(origin.0 + y, h);
            for x in 0..p {
                let sx = reflect_index(origin.1 + x, w);
                out[(ch * p + y) * p + x] = src[(ch * h + sy) * w + sx];
            }
        }
    }
    Ok(Tensor::from_vec(&[c, p, p], out)?)
}

/// Every tile of `full` in plan order.
pub fn split_tiles(full: &Tensor<f32>, plan: &TilePlan) -> Result<Vec<Tensor<f32>>> {
    plan.origins.iter().map(|&o| extract_tile(full, plan, o)).collect()
}

/// Average overlapping tiles and crop the padding.
pub fn stitch(tiles: &[Tensor<f32>], plan: &TilePlan) -> Result<ConnectivityMaps> {
    if tiles.len() != plan.origins.len() {
        return dimension(format!("plan has {} tiles, got {}", plan.origins.len(), tiles.len()));
    }
    let (h, w, p) = (plan.height, plan.width, plan.patch_size);
    let mut acc = vec![0.0f64; 8 * h * w];
    let mut hits = vec![0u32; h * w];
    for (tile, &(oy, ox)) in tiles.iter().zip(&plan.origins) {
        if tile.shape() != [8, p, p] {
            return dimension(format!("tiles must be 8×{p}×{p}, got {:?}", tile.shape()));
        }
        let ys = oy..(oy + p).min(h);
        let xs = ox..(ox + p).min(w);
        for y in ys.clone() {
            for x in xs.clone() {
                hits[y * w + x] += 1;
            }
        }
        for k in 0..8 {
            for y in ys.clone() {
                for x in xs.clone() {
                    acc[(k * h + y) * w + x] += f64::from(tile.data()[(k * p + y - oy) * p + x - ox]);
                }
            }
        }
    }
    let data = acc.iter().enumerate().map(|(i, &v)| (v / f64::from(hits[i % (h * w)])) as f32).collect();
    ConnectivityMaps::from_vec(h, w, data)
}

/// 8-connected components as row-major pixel lists.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ComponentSet {
    pub height: usize,
    pub width: usize,
    /// Components ordered by their first pixel in row-major order; pixels
    /// are listed in discovery order.
    pub components: Vec<Vec<(usize, usize)>>,
}

impl ComponentSet {
    pub fn areas(&self) -> Vec<usize> {
        self.components.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// Depth-first search with an explicit stack.
pub fn dfs_components(mask: &BinaryMask) -> ComponentSet {
    let (h, w) = (mask.height(), mask.width());
    let mut seen = vec![false; h * w];
    let mut components = Vec::new();
    let mut stack = Vec::new();
    for y0 in 0..h {
        for x0 in 0..w {
            if !mask.get(y0, x0) || seen[y0 * w + x0] {
                continue;
            }
            let mut pixels = Vec::new();
            seen[y0 * w + x0] = true;
            stack.push((y0, x0));
            while let Some((y, x)) = stack.pop() {
                pixels.push((y, x));
                for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        if mask.get(ny, nx) && !seen[ny * w + nx] {
                            seen[ny * w + nx] = true;
                            stack.push((ny, nx));
                        }
                    }
                }
            }
            components.push(pixels);
        }
    }
    ComponentSet { height: h, width: w, components }
}

/// Render the components with at least `min_area` pixels.
pub fn area_filter(components: &ComponentSet, min_area: usize) -> BinaryMask {
    let mut mask = BinaryMask::new(components.height, components.width);
    for c in components.components.iter().filter(|c| c.len() >= min_area) {
        for &(y, x) in c {
            mask.set(y, x, true);
        }
    }
    mask
}

/// Anything that maps a `3×p×p` patch to `8×p×p` map probabilities.
pub trait MapPredictor {
    fn predict(&mut self, patch: &Tensor<f32>) -> Result<Tensor<f32>>;
}

impl MapPredictor for Generator<f32> {
    fn predict(&mut self, patch: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.forward(patch)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectParams {
    pub patch: usize,
    pub overlap: usize,
    pub tau: f64,
    pub min_area: usize,
    pub reciprocal: bool,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self { patch: 256, overlap: 0, tau: 0.5, min_area: 200, reciprocal: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub mask: BinaryMask,
    pub maps: ConnectivityMaps,
    pub tiles: usize,
    /// Areas of all components before filtering, in label order.
    pub component_areas: Vec<usize>,
    pub kept_components: usize,
}

fn finish(maps: ConnectivityMaps, tiles: usize, params: &DetectParams) -> Result<Detection> {
    let decoded = decode_with(&maps, &DecodeOptions { tau: params.tau, reciprocal: params.reciprocal })?;
    let components = dfs_components(&decoded);
    let mask = area_filter(&components, params.min_area);
    let areas = components.areas();
    let kept_components = areas.iter().filter(|&&a| a >= params.min_area).count();
    Ok(Detection { mask, maps, tiles, component_areas: areas, kept_components })
}

pub fn detect<P: MapPredictor>(image: &Image, predictor: &mut P, params: &DetectParams) -> Result<Detection> {
    let plan = plan_tiles(image.height(), image.width(), params.patch, params.overlap)?;
    let full = image_to_tensor(image);
    let tiles =
        plan.origins.iter().map(|&o| predictor.predict(&extract_tile(&full, &plan, o)?)).collect::<Result<Vec<_>>>()?;
    finish(stitch(&tiles, &plan)?, plan.origins.len(), params)
}

/// [`detect`] with tiles spread over `threads` predictor clones. The
/// result does not depend on `threads`.
pub fn detect_parallel<P>(image: &Image, predictor: &P, params: &DetectParams, threads: usize) -> Result<Detection>
where
    P: MapPredictor + Clone + Send,
{
    let threads = threads.max(1);
    if threads == 1 {
        return detect(image, &mut predictor.clone(), params);
    }
    let plan = plan_tiles(image.height(), image.width(), params.patch, params.overlap)?;
    let full = image_to_tensor(image);
    let n = plan.origins.len();
    let mut slots: Vec<Option<Result<Tensor<f32>>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads.min(n))
            .map(|t| {
                let mut local = predictor.clone();
                let (plan, full) = (&plan, &full);
                scope.spawn(move || {
                    (t..n)
                        .step_by(threads)
                        .map(|i| (i, extract_tile(full, plan, plan.origins[i]).and_then(|x| local.predict(&x))))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("tile worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    let tiles = slots.into_iter().map(|s| s.expect("every tile assigned")).collect::<Result<Vec<_>>>()?;
    finish(stitch(&tiles, &plan)?, n, params)
}

/// Worker count from `CONNCRACK_THREADS`, defaulting to 1.
pub fn threads_from_env() -> usize {
    std::env::var("CONNCRACK_THREADS").ok().and_then(|v| v.trim().parse().ok()).filter(|&n: &usize| n >= 1).unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tile_counts() {
        assert_eq!(plan_tiles(1080, 1920, 256, 0).unwrap().origins.len(), 40);
        assert_eq!(plan_tiles(512, 512, 256, 128).unwrap().origins.len(), 9);
        let small = plan_tiles(20, 30, 64, 0).unwrap();
        assert_eq!(small.origins, vec![(0, 0)]);
        assert_eq!((small.padded_height, small.padded_width), (64, 64));
        assert!(plan_tiles(10, 10, 4, 0).is_err());
        assert!(plan_tiles(10, 10, 8, 8).is_err());
    }

    #[test]
    fn reflection() {
        let got: Vec<usize> = (0..9).map(|i| reflect_index(i, 3)).collect();
        assert_eq!(got, vec![0, 1, 2, 1, 0, 1, 2, 1, 0]);
        assert_eq!(reflect_index(7, 1), 0);
    }

    #[test]
    fn diagonal_touch_is_one_component() {
        let m = BinaryMask::from_vec(2, 2, vec![1, 0, 0, 1]).unwrap();
        assert_eq!(dfs_components(&m).len(), 1);
        assert!(dfs_components(&BinaryMask::new(3, 3)).is_empty());
    }

    #[test]
    fn filter_by_area() {
        let m = BinaryMask::from_vec(3, 4, vec![1, 1, 0, 1, 0, 0, 0, 1, 1, 1, 0, 1]).unwrap();
        let set = dfs_components(&m);
        let mut areas = set.areas();
        areas.sort_unstable();
        assert_eq!(areas, vec![2, 2, 3]);
        assert_eq!(area_filter(&set, 0), m);
        assert_eq!(area_filter(&set, 3).count(), 3);
        assert!(area_filter(&set, 13).is_empty());
    }

    struct Zero;
    impl MapPredictor for Zero {
        fn predict(&mut self, patch: &Tensor<f32>) -> Result<Tensor<f32>> {
            let (_, h, w) = patch.dims3()?;
            Ok(Tensor::zeros(&[8, h, w]))
        }
    }

    #[test]
    fn zero_maps_detect_nothing() {
        let img = Image::new(20, 37, 3).unwrap();
        let d = detect(&img, &mut Zero, &DetectParams { patch: 16, ..Default::default() }).unwrap();
        assert!(d.mask.is_empty());
        assert_eq!(d.tiles, 6);
    }
}
