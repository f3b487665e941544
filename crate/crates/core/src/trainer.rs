//! Alternating conditional-Wasserstein training with weight clipping.
//!
//! The critic minimizes `E[D(x, G(x))] − E[D(x, y)]` and is clipped to
//! `[−C, C]` after every update. The generator minimizes
//! `λ·(−E[D(x, G(x))]) + L_content`. A critic score is the mean of its grid.

use std::path::{Path, PathBuf};
use std::time::Instant;

use conncrack_nn::{encode_checkpoint, RmsProp, Scalar, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::connmap::{content_loss, Reduction};
use crate::data_io::Sample;
use crate::error::{config, dimension, Error, Result};
use crate::models::{Critic, Generator, ModelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_generator: f64,
    pub lr_critic: f64,
    pub lambda: f64,
    pub clip_c: f64,
    pub n_critic: usize,
    pub iterations: usize,
    pub seed: u64,
    pub patch_size: usize,
    pub batch_size: usize,
    pub reduction: Reduction,
    /// Write checkpoints every this many iterations; 0 writes only the final pair.
    pub checkpoint_every: usize,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_generator: 1e-5,
            lr_critic: 1e-5,
            lambda: Self::default_lambda(Reduction::Mean),
            clip_c: 0.01,
            n_critic: 1,
            iterations: 1000,
            seed: 0,
            patch_size: 256,
            batch_size: 1,
            reduction: Reduction::Mean,
            checkpoint_every: 0,
            rmsprop_decay: 0.9,
            rmsprop_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    /// λ matched to the content-loss scale of each reduction.
    pub fn default_lambda(reduction: Reduction) -> f64 {
        match reduction {
            Reduction::Mean => 1.0,
            Reduction::Sum => 5e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_generator > 0.0 && self.lr_critic > 0.0) {
            return config("learning rates must be positive");
        }
        if !(self.clip_c > 0.0) {
            return config(format!("clip bound must be positive, got {}", self.clip_c));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return config(format!("lambda must be finite and non-negative, got {}", self.lambda));
        }
        if self.n_critic == 0 || self.batch_size == 0 || self.patch_size == 0 {
            return config("n_critic, batch_size and patch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) || !(self.rmsprop_eps > 0.0) {
            return config("RMSProp decay must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }

    fn rmsprop(&self, lr: f64) -> RmsProp {
        RmsProp { lr, decay: self.rmsprop_decay, eps: self.rmsprop_eps }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iter: usize,
    pub content_loss: f64,
    pub g_wgan_loss: f64,
    pub d_wgan_loss: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub const HEADER: &'static str = "iter,content_loss,g_wgan_loss,d_wgan_loss,wall_ms";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{:.3}\n",
                r.iter, r.content_loss, r.g_wgan_loss, r.d_wgan_loss, r.wall_ms
            ));
        }
        s
    }

    /// The log without the timing column, which is the only part that
    /// varies between identical runs.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("iter,content_loss,g_wgan_loss,d_wgan_loss\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.iter, r.content_loss, r.g_wgan_loss, r.d_wgan_loss));
        }
        s
    }

    /// Parse the output of [`TrainLog::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        Ok(Self { rows: r.deserialize().collect::<std::result::Result<_, _>>()? })
    }

    pub fn content_losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.content_loss).collect()
    }
}

/// Trailing moving average; entry `i` averages `values[i+1−window ..= i]`
/// (fewer at the start).
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        acc += v;
        if i >= window {
            acc -= values[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}

fn finite_or_diverged(iteration: usize, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { iteration, message: format!("{what} is {v}") })
    }
}

fn mean_score<T: Scalar>(scores: &Tensor<T>) -> f64 {
    scores.data().iter().map(|v| v.as_f64()).sum::<f64>() / scores.len().max(1) as f64
}

/// Mean critic score of real pairs `(x, y)` over a batch.
pub fn real_score<T: Scalar>(batch: &[&Sample], d: &mut Critic<T>) -> Result<f64> {
    let mut total = 0.0;
    for s in batch {
        total += mean_score(&d.score(&s.image.cast(), &s.maps.to_tensor())?);
    }
    Ok(total / batch.len().max(1) as f64)
}

/// One critic update; returns `E[D(x, G(x))] − E[D(x, y)]`. The generator
/// only runs forward.
pub fn critic_step<T: Scalar>(
    batch: &[&Sample],
    g: &mut Generator<T>,
    d: &mut Critic<T>,
    cfg: &TrainConfig,
    iteration: usize,
) -> Result<f64> {
    if batch.is_empty() {
        return config("empty batch");
    }
    let n = batch.len() as f64;
    d.params_mut().zero_grad();
    let mut loss = 0.0;
    for s in batch {
        let x: Tensor<T> = s.image.cast();
        let fake = g.forward(&x)?;
        let real = s.maps.to_tensor::<T>();

        let scores = d.score(&x, &real)?;
        loss -= mean_score(&scores) / n;
        d.backward(&Tensor::full(scores.shape(), T::of_f64(-1.0 / (n * scores.len() as f64))))?;

        let scores = d.score(&x, &fake)?;
        loss += mean_score(&scores) / n;
        d.backward(&Tensor::full(scores.shape(), T::of_f64(1.0 / (n * scores.len() as f64))))?;
    }
    finite_or_diverged(iteration, "critic loss", loss)?;
    d.params_mut().rmsprop_step(&cfg.rmsprop(cfg.lr_critic));
    d.params_mut().clip(cfg.clip_c)?;
    Ok(loss)
}

/// `(−E[D(x, G(x))], L_content)` for a batch, forward passes only.
pub fn generator_objective<T: Scalar>(
    batch: &[&Sample],
    g: &mut Generator<T>,
    d: &mut Critic<T>,
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    let n = batch.len().max(1) as f64;
    let (mut wgan, mut content) = (0.0, 0.0);
    for s in batch {
        let x: Tensor<T> = s.image.cast();
        let probs = g.forward(&x)?;
        content += content_loss(g.logits()?, &s.maps, cfg.reduction)?.value / n;
        wgan -= mean_score(&d.score(&x, &probs)?) / n;
    }
    Ok((wgan, content))
}

/// Accumulate into the generator's gradients the gradient of
/// `λ·(−E[D(x, G(x))]) + L_content`; returns both terms. Critic gradients
/// are left zeroed.
pub fn generator_gradients<T: Scalar>(
    batch: &[&Sample],
    g: &mut Generator<T>,
    d: &mut Critic<T>,
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    if batch.is_empty() {
        return config("empty batch");
    }
    let n = batch.len() as f64;
    let (mut wgan, mut content) = (0.0, 0.0);
    for s in batch {
        let x: Tensor<T> = s.image.cast();
        let probs = g.forward(&x)?;
        let loss = content_loss(g.logits()?, &s.maps, cfg.reduction)?;
        content += loss.value / n;
        let scores = d.score(&x, &probs)?;
        wgan -= mean_score(&scores) / n;
        let seed = T::of_f64(-cfg.lambda / (n * scores.len() as f64));
        let grad_maps = d.backward(&Tensor::full(scores.shape(), seed))?;
        g.backward(Some(&loss.gradient.scale(T::of_f64(1.0 / n))), Some(&grad_maps))?;
    }
    d.params_mut().zero_grad();
    Ok((wgan, content))
}

/// One generator update; returns `(g_wgan_loss, content_loss)`.
pub fn generator_step<T: Scalar>(
    batch: &[&Sample],
    g: &mut Generator<T>,
    d: &mut Critic<T>,
    cfg: &TrainConfig,
    iteration: usize,
) -> Result<(f64, f64)> {
    g.params_mut().zero_grad();
    let (wgan, content) = generator_gradients(batch, g, d, cfg)?;
    finite_or_diverged(iteration, "generator adversarial loss", wgan)?;
    finite_or_diverged(iteration, "content loss", content)?;
    g.params_mut().rmsprop_step(&cfg.rmsprop(cfg.lr_generator));
    Ok((wgan, content))
}

pub struct TrainOutcome {
    pub generator: Generator<f32>,
    pub critic: Critic<f32>,
    pub log: TrainLog,
    pub critic_steps: usize,
    /// Critic updates after which some parameter lay outside `[−C, C]`.
    pub clip_violations: usize,
    pub checkpoints: Vec<PathBuf>,
}

/// Seeds of the generator, critic and data order for a run seed.
pub fn derived_seeds(seed: u64) -> (u64, u64, u64) {
    (seed, seed.wrapping_add(1), seed.wrapping_add(2))
}

/// Cycles through shuffled epochs of sample indices.
struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = Self { order: (0..n).collect(), pos: 0, rng: ChaCha8Rng::seed_from_u64(seed) };
        s.order.shuffle(&mut s.rng);
        s
    }

    fn next<'a>(&mut self, samples: &'a [Sample], size: usize) -> Vec<&'a Sample> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                &samples[self.order[self.pos - 1]]
            })
            .collect()
    }
}

fn write_checkpoints(dir: &Path, iteration: usize, g: &Generator<f32>, d: &Critic<f32>) -> Result<Vec<PathBuf>> {
    let gen = dir.join(format!("gen_{iteration:06}.ckpt"));
    let crit = dir.join(format!("crit_{iteration:06}.ckpt"));
    crate::write_atomic(&gen, &encode_checkpoint(g.params()))?;
    crate::write_atomic(&crit, &encode_checkpoint(d.params()))?;
    Ok(vec![gen, crit])
}

/// Train from freshly built models. With `out_dir`, writes checkpoints,
/// `train_log.csv` and `model_config.json`; on divergence the log so far
/// and earlier checkpoints are kept.
pub fn train(
    samples: &[Sample],
    model: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return config("training set is empty");
    }
    let p = cfg.patch_size;
    for s in samples {
        if s.image.shape()[1..] != [p, p] || (s.maps.height(), s.maps.width()) != (p, p) {
            return dimension(format!("training samples must be {p}×{p} patches, got {:?}", s.image.shape()));
        }
    }
    let (g_seed, d_seed, data_seed) = derived_seeds(cfg.seed);
    let mut g = Generator::<f32>::build(&model.generator, g_seed)?;
    let mut d = Critic::<f32>::build(&model.critic, d_seed)?;
    let mut sampler = BatchSampler::new(samples.len(), data_seed);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        crate::write_atomic(&dir.join("model_config.json"), serde_json::to_string_pretty(model)?.as_bytes())?;
    }

    let mut outcome_log = TrainLog::default();
    let mut checkpoints = Vec::new();
    let mut clip_violations = 0;
    let mut critic_steps = 0;
    let result = (|| -> Result<()> {
        for iter in 1..=cfg.iterations {
            let start = Instant::now();
            let mut d_wgan_loss = 0.0;
            for _ in 0..cfg.n_critic {
                let batch = sampler.next(samples, cfg.batch_size);
                d_wgan_loss = critic_step(&batch, &mut g, &mut d, cfg, iter)?;
                critic_steps += 1;
                if d.params().max_abs_value() > cfg.clip_c {
                    clip_violations += 1;
                }
            }
            let batch = sampler.next(samples, cfg.batch_size);
            let (g_wgan_loss, content_loss) = generator_step(&batch, &mut g, &mut d, cfg, iter)?;
            outcome_log.rows.push(LogRow {
                iter,
                content_loss,
                g_wgan_loss,
                d_wgan_loss,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
            if let Some(dir) = out_dir {
                let periodic = cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0;
                if periodic && iter != cfg.iterations {
                    checkpoints.extend(write_checkpoints(dir, iter, &g, &d)?);
                }
            }
        }
        Ok(())
    })();
    if let Some(dir) = out_dir {
        crate::write_atomic(&dir.join("train_log.csv"), outcome_log.to_csv().as_bytes())?;
        if result.is_ok() {
            checkpoints.extend(write_checkpoints(dir, cfg.iterations, &g, &d)?);
        }
    }
    result?;
    Ok(TrainOutcome { generator: g, critic: d, log: outcome_log, critic_steps, clip_violations, checkpoints })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average_window() {
        assert_eq!(moving_average(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
        assert!(moving_average(&[], 5).is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { lr_critic: 0.0, ..Default::default() },
            TrainConfig { clip_c: 0.0, ..Default::default() },
            TrainConfig { n_critic: 0, ..Default::default() },
            TrainConfig { lambda: f64::NAN, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
        assert_eq!(TrainConfig::default_lambda(Reduction::Sum), 5e-6);
    }

    #[test]
    fn empty_dataset_is_a_config_error() {
        let r = train(&[], &ModelConfig::desk(), &TrainConfig::default(), None);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn log_csv_has_a_row_per_iteration() {
        let log = TrainLog {
            rows: (1..=3)
                .map(|i| LogRow { iter: i, content_loss: 0.5, g_wgan_loss: 0.0, d_wgan_loss: -0.1, wall_ms: 1.0 })
                .collect(),
        };
        assert_eq!(log.to_csv().lines().count(), 4);
        assert!(!log.loss_csv().contains("wall_ms"));
        assert_eq!(TrainLog::from_csv(&log.to_csv()).unwrap(), log);
    }
}
