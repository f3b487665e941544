//! Double-precision finite-difference checks of every layer kind, both
//! networks on micro configurations, and the training losses.

use conncrack_nn::gradcheck::relative_error;
use conncrack_nn::{gradcheck, GradcheckOptions, GradcheckReport, GradcheckRow, Graph, GraphBuilder, ParamId, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::connmap::{content_loss, encode, Reduction};
use crate::data_io::{patches_from_pair, synth_sample, KeepRule, SynthSpec};
use crate::error::Result;
use crate::models::{Critic, CriticConfig, Generator, GeneratorConfig, ModelConfig};
use crate::trainer::{generator_gradients, generator_objective, TrainConfig};
use crate::BinaryMask;

/// Tolerance for layers with nonlinear reverse passes and for the losses.
pub const TOLERANCE: f64 = 1e-3;
/// Tolerance for layers whose reverse pass is linear in the input.
pub const LINEAR_TOLERANCE: f64 = 1e-4;

const STEP: f64 = 1e-6;

/// Smallest generator and critic the architecture admits at a 32×32 input.
pub fn micro_model() -> ModelConfig {
    ModelConfig {
        generator: GeneratorConfig {
            block_components: [1, 1, 1, 1],
            growth_rate: 2,
            bottleneck_factor: 1,
            stem_channels: 2,
            head_channels: 2,
            ..GeneratorConfig::desk()
        },
        critic: CriticConfig { widths: vec![2, 2, 2, 2, 1], ..CriticConfig::default() },
    }
}

fn every_kind_graph(seed: u64) -> Result<Graph<f64>> {
    let mut b = GraphBuilder::<f64>::new(2, seed);
    let x = b.input();
    let c = b.conv2d("conv", x, 4, 3, 1, 1)?;
    let a = b.leaky_relu("lrelu", c, 0.2)?;
    let d = b.dense_block("dense", a, 2, 2, 4)?;
    let t = b.transition_block("trans", d, 4)?;
    let m = b.max_pool2("maxpool", t)?;
    let u = b.deconv2d("deconv", m, 4, 4, 2, 1)?;
    let tap = b.avg_pool2("tap", a)?;
    let s = b.add("add", &[u, tap])?;
    let cat = b.concat("concat", &[s, tap])?;
    let out = b.sigmoid("sigmoid", cat)?;
    Ok(b.finish(out))
}

fn prefixed(report: GradcheckReport, prefix: &str) -> Vec<GradcheckRow> {
    report.rows.into_iter().map(|r| GradcheckRow { layer: format!("{prefix}/{}", r.layer), ..r }).collect()
}

fn content_loss_row(reduction: Reduction, rng: &mut ChaCha8Rng) -> Result<GradcheckRow> {
    let mask = BinaryMask::from_fn(12, 12, |_, _| rng.gen_bool(0.4));
    let maps = encode(&mask);
    let logits: Tensor<f64> = Tensor::from_vec(&[8, 12, 12], (0..8 * 144).map(|_| rng.gen_range(-4.0..4.0)).collect())?;
    let analytic = content_loss(&logits, &maps, reduction)?.gradient;
    let idx: Vec<usize> = (0..64).map(|_| rng.gen_range(0..logits.len())).collect();
    let mut numeric = Vec::with_capacity(idx.len());
    for &i in &idx {
        let mut probe = logits.clone();
        probe.data_mut()[i] += STEP;
        let plus = content_loss(&probe, &maps, reduction)?.value;
        probe.data_mut()[i] -= 2.0 * STEP;
        let minus = content_loss(&probe, &maps, reduction)?.value;
        numeric.push((plus - minus) / (2.0 * STEP));
    }
    let a: Vec<f64> = idx.iter().map(|&i| analytic.data()[i]).collect();
    let name = match reduction {
        Reduction::Mean => "content_loss/mean",
        Reduction::Sum => "content_loss/sum",
    };
    Ok(GradcheckRow {
        layer: name.into(),
        kind: "loss".into(),
        linear: false,
        max_rel_err: relative_error(&a, &numeric),
        entries: idx.len(),
    })
}

fn generator_objective_row(seed: u64, rng: &mut ChaCha8Rng) -> Result<GradcheckRow> {
    let model = micro_model();
    let spec = SynthSpec { height: 32, width: 32, length: [8, 24], seed, ..Default::default() };
    let mut samples = Vec::new();
    for i in 0..2 {
        let (img, mask) = synth_sample(&spec, i)?;
        samples.extend(patches_from_pair(&img, &mask, 32, 32, KeepRule::All)?);
    }
    let batch: Vec<_> = samples.iter().collect();
    let cfg = TrainConfig { lambda: 0.7, patch_size: 32, ..Default::default() };
    let mut g = Generator::<f64>::build(&model.generator, seed)?;
    let mut d = Critic::<f64>::build(&model.critic, seed.wrapping_add(1))?;
    g.params_mut().zero_grad();
    generator_gradients(&batch, &mut g, &mut d, &cfg)?;

    let objective = |g: &mut Generator<f64>, d: &mut Critic<f64>| -> Result<f64> {
        let (wgan, content) = generator_objective(&batch, g, d, &cfg)?;
        Ok(cfg.lambda * wgan + content)
    };
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for pid in (0..g.params().len()).map(ParamId) {
        let len = g.params().get(pid).value.len();
        for _ in 0..2 {
            let i = rng.gen_range(0..len);
            analytic.push(g.params().get(pid).grad.data()[i]);
            let orig = g.params().get(pid).value.data()[i];
            g.params_mut().get_mut(pid).value.data_mut()[i] = orig + STEP;
            let plus = objective(&mut g, &mut d)?;
            g.params_mut().get_mut(pid).value.data_mut()[i] = orig - STEP;
            let minus = objective(&mut g, &mut d)?;
            g.params_mut().get_mut(pid).value.data_mut()[i] = orig;
            numeric.push((plus - minus) / (2.0 * STEP));
        }
    }
    Ok(GradcheckRow {
        layer: "generator_objective".into(),
        kind: "loss".into(),
        linear: false,
        max_rel_err: relative_error(&analytic, &numeric),
        entries: analytic.len(),
    })
}

/// Run every check for `seed`.
pub fn gradient_suite(seed: u64) -> Result<GradcheckReport> {
    let opts = GradcheckOptions { seed, ..Default::default() };
    let mut rows = prefixed(gradcheck(&mut every_kind_graph(seed)?, [2, 8, 8], &opts)?, "kinds");
    // Deep stacks of leaky ReLUs and max pools: a larger step crosses kinks
    // often enough to swamp the end-to-end comparison.
    let opts = GradcheckOptions { step: STEP, ..opts };
    let model = micro_model();
    let mut g = Generator::<f64>::build(&model.generator, seed)?.into_graph();
    rows.extend(prefixed(gradcheck(&mut g, [3, 32, 32], &opts)?, "generator"));
    let mut d = Critic::<f64>::build(&model.critic, seed)?.into_graph();
    rows.extend(prefixed(gradcheck(&mut d, [11, 32, 32], &opts)?, "critic"));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rows.push(content_loss_row(Reduction::Mean, &mut rng)?);
    rows.push(content_loss_row(Reduction::Sum, &mut rng)?);
    rows.push(generator_objective_row(seed, &mut rng)?);
    Ok(GradcheckReport { rows })
}
