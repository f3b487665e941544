use conncrack::connmap::{content_loss, Reduction};
use conncrack::data_io::{patches_from_pair, synth_sample, KeepRule, Sample, SynthSpec};
use conncrack::models::{Critic, CriticConfig, Generator, GeneratorConfig, ModelConfig};
use conncrack::trainer::{
    critic_step, derived_seeds, generator_gradients, generator_objective, generator_step, real_score, train,
    TrainConfig,
};
use conncrack_nn::ParamId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn micro_model() -> ModelConfig {
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

fn samples(n: usize, size: usize) -> Vec<Sample> {
    let spec = SynthSpec { height: size, width: size, length: [8, 24], seed: 5, ..Default::default() };
    (0..n as u64)
        .flat_map(|i| {
            let (img, mask) = synth_sample(&spec, i).unwrap();
            patches_from_pair(&img, &mask, size, size, KeepRule::All).unwrap()
        })
        .collect()
}

fn micro_cfg() -> TrainConfig {
    TrainConfig { patch_size: 32, lr_generator: 1e-3, lr_critic: 1e-3, iterations: 3, ..Default::default() }
}

#[test]
fn critic_is_clipped_after_every_step() {
    let m = micro_model();
    let data = samples(2, 32);
    let mut g = Generator::<f32>::build(&m.generator, 0).unwrap();
    let mut d = Critic::<f32>::build(&m.critic, 1).unwrap();
    assert!(d.params().max_abs_value() > 0.01);
    let cfg = micro_cfg();
    for i in 0..3 {
        critic_step(&[&data[i % 2]], &mut g, &mut d, &cfg, i).unwrap();
        assert!(d.params().max_abs_value() <= cfg.clip_c);
    }
}

#[test]
fn constant_critic_has_zero_loss() {
    let m = micro_model();
    let data = samples(1, 32);
    let mut g = Generator::<f32>::build(&m.generator, 0).unwrap();
    let mut d = Critic::<f32>::build(&m.critic, 1).unwrap();
    for p in d.params_mut().iter_mut() {
        p.value.fill(0.0);
    }
    let loss = critic_step(&[&data[0]], &mut g, &mut d, &micro_cfg(), 1).unwrap();
    assert_eq!(loss, 0.0);
}

#[test]
fn steps_alternate_between_parameter_sets() {
    let m = micro_model();
    let data = samples(1, 32);
    let batch = [&data[0]];
    let cfg = micro_cfg();
    let mut g = Generator::<f32>::build(&m.generator, 0).unwrap();
    let mut d = Critic::<f32>::build(&m.critic, 1).unwrap();
    let (g0, d0) = (g.params().checksum(), d.params().checksum());
    critic_step(&batch, &mut g, &mut d, &cfg, 1).unwrap();
    assert_eq!(g.params().checksum(), g0);
    let d1 = d.params().checksum();
    assert_ne!(d1, d0);
    let real_before = real_score(&batch, &mut d).unwrap();
    generator_step(&batch, &mut g, &mut d, &cfg, 1).unwrap();
    assert_eq!(d.params().checksum(), d1);
    assert_ne!(g.params().checksum(), g0);
    assert_eq!(real_score(&batch, &mut d).unwrap(), real_before);
}

#[test]
fn zero_lambda_is_a_pure_content_step() {
    let m = micro_model();
    let data = samples(1, 32);
    let cfg = TrainConfig { lambda: 0.0, ..micro_cfg() };
    let mut g = Generator::<f64>::build(&m.generator, 0).unwrap();
    let mut d = Critic::<f64>::build(&m.critic, 1).unwrap();
    let mut reference = g.clone();

    generator_step(&[&data[0]], &mut g, &mut d, &cfg, 1).unwrap();

    reference.params_mut().zero_grad();
    reference.forward(&data[0].image.cast()).unwrap();
    let loss = content_loss(reference.logits().unwrap(), &data[0].maps, Reduction::Mean).unwrap();
    reference.backward(Some(&loss.gradient), None).unwrap();
    reference.params_mut().rmsprop_step(&conncrack_nn::RmsProp {
        lr: cfg.lr_generator,
        decay: cfg.rmsprop_decay,
        eps: cfg.rmsprop_eps,
    });
    for (a, b) in g.params().iter().zip(reference.params().iter()) {
        for (x, y) in a.value.data().iter().zip(b.value.data()) {
            assert!((x - y).abs() <= 1e-12, "{}", a.name);
        }
    }
}

#[test]
fn combined_objective_gradient_matches_finite_differences() {
    let m = micro_model();
    let data = samples(2, 32);
    let batch = [&data[0], &data[1]];
    let cfg = TrainConfig { lambda: 0.7, ..micro_cfg() };
    let mut g = Generator::<f64>::build(&m.generator, 3).unwrap();
    let mut d = Critic::<f64>::build(&m.critic, 4).unwrap();
    g.params_mut().zero_grad();
    generator_gradients(&batch, &mut g, &mut d, &cfg).unwrap();
    assert_eq!(d.params().iter().map(|p| p.grad.max_abs()).fold(0.0, f64::max), 0.0);

    let objective = |g: &mut Generator<f64>, d: &mut Critic<f64>| {
        let (w, c) = generator_objective(&batch, g, d, &cfg).unwrap();
        cfg.lambda * w + c
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let step = 1e-6;
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for pid in 0..g.params().len() {
        let pid = ParamId(pid);
        let len = g.params().get(pid).value.len();
        for _ in 0..3 {
            let i = rng.gen_range(0..len);
            analytic.push(g.params().get(pid).grad.data()[i]);
            let orig = g.params().get(pid).value.data()[i];
            g.params_mut().get_mut(pid).value.data_mut()[i] = orig + step;
            let plus = objective(&mut g, &mut d);
            g.params_mut().get_mut(pid).value.data_mut()[i] = orig - step;
            let minus = objective(&mut g, &mut d);
            g.params_mut().get_mut(pid).value.data_mut()[i] = orig;
            numeric.push((plus - minus) / (2.0 * step));
        }
    }
    let err = conncrack_nn::gradcheck::relative_error(&analytic, &numeric);
    assert!(err < 1e-3, "relative error {err}");
}

#[test]
fn logged_adversarial_loss_matches_recomputation() {
    let m = micro_model();
    let data = samples(1, 32);
    let batch = [&data[0]];
    let cfg = micro_cfg();
    let mut g = Generator::<f32>::build(&m.generator, 0).unwrap();
    let mut d = Critic::<f32>::build(&m.critic, 1).unwrap();
    let mut g_copy = g.clone();
    let mut d_copy = d.clone();
    let (wgan, content) = generator_step(&batch, &mut g, &mut d, &cfg, 1).unwrap();
    let (w2, c2) = generator_objective(&batch, &mut g_copy, &mut d_copy, &cfg).unwrap();
    assert!((wgan - w2).abs() < 1e-6 && (content - c2).abs() < 1e-6);
}

#[test]
fn training_is_deterministic_and_logged() {
    let m = micro_model();
    let data = samples(3, 32);
    let cfg = micro_cfg();
    let a = train(&data, &m, &cfg, None).unwrap();
    let b = train(&data, &m, &cfg, None).unwrap();
    assert_eq!(a.generator.params().checksum(), b.generator.params().checksum());
    assert_eq!(a.critic.params().checksum(), b.critic.params().checksum());
    assert_eq!(a.log.loss_csv(), b.log.loss_csv());
    assert_eq!(a.log.rows.len(), cfg.iterations);
    assert_eq!(a.critic_steps, cfg.iterations * cfg.n_critic);
    assert_eq!(a.clip_violations, 0);

    let c = train(&data, &m, &TrainConfig { seed: 1, ..cfg.clone() }, None).unwrap();
    assert_ne!(a.generator.params().checksum(), c.generator.params().checksum());
}

#[test]
fn zero_iterations_returns_initial_models() {
    let m = micro_model();
    let data = samples(1, 32);
    let out = train(&data, &m, &TrainConfig { iterations: 0, ..micro_cfg() }, None).unwrap();
    let (gs, ds, _) = derived_seeds(0);
    assert!(out.log.rows.is_empty());
    assert_eq!(
        out.generator.params().checksum(),
        Generator::<f32>::build(&m.generator, gs).unwrap().params().checksum()
    );
    assert_eq!(out.critic.params().checksum(), Critic::<f32>::build(&m.critic, ds).unwrap().params().checksum());
}

#[test]
fn output_directory_contents() {
    let dir = tempfile::tempdir().unwrap();
    let m = micro_model();
    let data = samples(2, 32);
    let cfg = TrainConfig { iterations: 4, checkpoint_every: 2, ..micro_cfg() };
    let out = train(&data, &m, &cfg, Some(dir.path())).unwrap();
    let names: Vec<String> = out.checkpoints.iter().map(|p| p.file_name().unwrap().to_string_lossy().into()).collect();
    assert_eq!(names, ["gen_000002.ckpt", "crit_000002.ckpt", "gen_000004.ckpt", "crit_000004.ckpt"]);
    let log = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 5);
    assert_eq!(ModelConfig::load(&dir.path().join("model_config.json")).unwrap(), m);

    let mut restored = Generator::<f32>::build(&m.generator, 99).unwrap();
    conncrack_nn::load_checkpoint(restored.params_mut(), &dir.path().join("gen_000004.ckpt")).unwrap();
    assert_eq!(restored.params().checksum(), out.generator.params().checksum());
}

#[test]
fn wrong_patch_size_is_rejected() {
    let data = samples(1, 64);
    assert!(train(&data, &micro_model(), &micro_cfg(), None).is_err());
}
