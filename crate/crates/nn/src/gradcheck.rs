//! Finite-difference verification of the analytic reverse pass.
//!
//! Each node is checked locally (its own forward map, fed the activations
//! cached by a full forward pass, contracted with a random upstream gradient),
//! and the whole graph is checked end to end. Errors are norm-wise:
//! `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂, 1e-6)` over the checked entries of a tensor.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::params::ParamId;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Central-difference step.
    pub step: f64,
    /// Entries checked per tensor; larger tensors are subsampled.
    pub max_entries: usize,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { seed: 0, step: 1e-5, max_entries: 48 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckRow {
    pub layer: String,
    pub kind: String,
    pub linear: bool,
    pub max_rel_err: f64,
    pub entries: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradcheckReport {
    pub rows: Vec<GradcheckRow>,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }

    /// Every row within `tol`, and linear rows within `linear_tol`.
    pub fn passes(&self, tol: f64, linear_tol: f64) -> bool {
        self.rows.iter().all(|r| r.max_rel_err < if r.linear { linear_tol } else { tol })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,kind,entries,max_rel_err\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{:.3e}\n", r.layer, r.kind, r.entries, r.max_rel_err));
        }
        s
    }
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-6)
}

fn pick(len: usize, max: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        let mut idx = sample(rng, len, max).into_vec();
        idx.sort_unstable();
        idx
    }
}

fn random_like(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let len: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
}

/// Central differences of `f` at the sampled entries of `x`.
fn numeric_grad(x: &mut [f64], idx: &[usize], step: f64, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(idx.len());
    for &i in idx {
        let orig = x[i];
        x[i] = orig + step;
        let plus = f(x)?;
        x[i] = orig - step;
        let minus = f(x)?;
        x[i] = orig;
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// Check the gradient of every node, then of the whole graph, for a seeded
/// random input of `input_shape`. A graph holding only its input yields an
/// empty report.
pub fn gradcheck(graph: &mut Graph<f64>, input_shape: [usize; 3], opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradcheckReport::default();
    if graph.output_id() == 0 {
        return Ok(report);
    }
    let input = random_like(&input_shape, &mut rng);
    graph.forward(&input)?;
    for id in 1..=graph.output_id() {
        report.rows.push(check_node(graph, id, opts, &mut rng)?);
    }
    report.rows.push(check_end_to_end(graph, &input, opts, &mut rng)?);
    Ok(report)
}

fn check_node(
    graph: &mut Graph<f64>,
    id: NodeId,
    opts: &GradcheckOptions,
    rng: &mut ChaCha8Rng,
) -> Result<GradcheckRow> {
    let node = graph.nodes()[id].clone();
    let inputs: Vec<Tensor<f64>> =
        node.inputs.iter().map(|&j| graph.activation(j).expect("forward ran").clone()).collect();
    let upstream = random_like(graph.activation(id).expect("forward ran").shape(), rng);
    let analytic = graph.node_backward(id, &upstream)?;

    let mut worst: f64 = 0.0;
    let mut entries = 0;
    for (j, grad) in analytic.inputs.iter().enumerate() {
        let idx = pick(grad.len(), opts.max_entries, rng);
        let mut perturbed = inputs.clone();
        let mut xj = perturbed[j].data().to_vec();
        let numeric = numeric_grad(&mut xj, &idx, opts.step, |x| {
            perturbed[j].data_mut().copy_from_slice(x);
            let refs: Vec<&Tensor<f64>> = perturbed.iter().collect();
            node.op.forward(&refs, graph.params())?.dot(&upstream)
        })?;
        let a: Vec<f64> = idx.iter().map(|&i| grad.data()[i]).collect();
        worst = worst.max(relative_error(&a, &numeric));
        entries += idx.len();
    }
    let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
    for (pid, grad) in &analytic.params {
        let idx = pick(grad.len(), opts.max_entries, rng);
        let numeric =
            perturb_param(graph, *pid, &idx, opts.step, |g| node.op.forward(&refs, g.params())?.dot(&upstream))?;
        let a: Vec<f64> = idx.iter().map(|&i| grad.data()[i]).collect();
        worst = worst.max(relative_error(&a, &numeric));
        entries += idx.len();
    }
    Ok(GradcheckRow {
        layer: node.name.clone(),
        kind: node.op.kind().to_string(),
        linear: node.op.is_linear(),
        max_rel_err: worst,
        entries,
    })
}

fn perturb_param(
    graph: &mut Graph<f64>,
    pid: ParamId,
    idx: &[usize],
    step: f64,
    mut f: impl FnMut(&mut Graph<f64>) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(idx.len());
    for &i in idx {
        let orig = graph.params().get(pid).value.data()[i];
        graph.params_mut().get_mut(pid).value.data_mut()[i] = orig + step;
        let plus = f(graph)?;
        graph.params_mut().get_mut(pid).value.data_mut()[i] = orig - step;
        let minus = f(graph)?;
        graph.params_mut().get_mut(pid).value.data_mut()[i] = orig;
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

fn check_end_to_end(
    graph: &mut Graph<f64>,
    input: &Tensor<f64>,
    opts: &GradcheckOptions,
    rng: &mut ChaCha8Rng,
) -> Result<GradcheckRow> {
    let out = graph.forward(input)?;
    let upstream = random_like(out.shape(), rng);
    graph.params_mut().zero_grad();
    let grad_in = graph.backward(&upstream)?;

    let idx = pick(grad_in.len(), opts.max_entries, rng);
    let mut x = input.data().to_vec();
    let mut probe = input.clone();
    let numeric = numeric_grad(&mut x, &idx, opts.step, |x| {
        probe.data_mut().copy_from_slice(x);
        graph.forward(&probe)?.dot(&upstream)
    })?;
    let a: Vec<f64> = idx.iter().map(|&i| grad_in.data()[i]).collect();
    let mut worst = relative_error(&a, &numeric);
    let mut entries = idx.len();

    let param_grads: Vec<(ParamId, Tensor<f64>)> =
        (0..graph.params().len()).map(|i| (ParamId(i), graph.params().get(ParamId(i)).grad.clone())).collect();
    for (pid, grad) in &param_grads {
        let idx = pick(grad.len(), opts.max_entries, rng);
        let numeric = perturb_param(graph, *pid, &idx, opts.step, |g| g.forward(input)?.dot(&upstream))?;
        let a: Vec<f64> = idx.iter().map(|&i| grad.data()[i]).collect();
        worst = worst.max(relative_error(&a, &numeric));
        entries += idx.len();
    }
    graph.params_mut().zero_grad();
    graph.forward(input)?;
    let linear = graph.nodes()[1..=graph.output_id()].iter().all(|n| n.op.is_linear());
    Ok(GradcheckRow { layer: "graph".into(), kind: "end_to_end".into(), linear, max_rel_err: worst, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::LayerSpec;

    #[test]
    fn empty_graph_gives_empty_report() {
        let mut g = Graph::<f64>::sequential(2, &[], 0).unwrap();
        let r = gradcheck(&mut g, [2, 3, 3], &GradcheckOptions::default()).unwrap();
        assert!(r.rows.is_empty());
    }

    #[test]
    fn relative_error_is_scale_free() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        let e = relative_error(&[2.0, 4.0], &[1.0, 2.0]);
        assert!((e - 0.5).abs() < 1e-12);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
    }

    #[test]
    fn csv_has_row_per_layer() {
        let mut g = Graph::<f64>::sequential(1, &[LayerSpec::Sigmoid, LayerSpec::Avgpool2], 0).unwrap();
        let r = gradcheck(&mut g, [1, 4, 4], &GradcheckOptions::default()).unwrap();
        assert_eq!(r.rows.len(), 3);
        assert_eq!(r.to_csv().lines().count(), 4);
    }
}
