//! Static computation graphs over the fixed op set, with cached activations
//! for the reverse pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, NnError, Result};
use crate::ops::{self, conv_out_extent, deconv_out_extent, pool_out_extent};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub type NodeId = usize;

/// Default negative slope of the leaky ReLUs inside blocks.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Input,
    Conv2d { weight: ParamId, bias: ParamId, stride: usize, padding: usize },
    Deconv2d { weight: ParamId, bias: ParamId, stride: usize, padding: usize },
    MaxPool2,
    AvgPool2,
    LeakyRelu { slope: f64 },
    Sigmoid,
    Concat,
    Add,
}

/// Gradients produced by one op: one tensor per op input, plus parameter grads.
#[derive(Clone, Debug)]
pub struct OpGrads<T> {
    pub inputs: Vec<Tensor<T>>,
    pub params: Vec<(ParamId, Tensor<T>)>,
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Conv2d { .. } => "conv2d",
            Op::Deconv2d { .. } => "deconv2d",
            Op::MaxPool2 => "maxpool2",
            Op::AvgPool2 => "avgpool2",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Sigmoid => "sigmoid",
            Op::Concat => "concat",
            Op::Add => "add",
        }
    }

    /// Ops whose output is linear in each input (and in each parameter).
    pub fn is_linear(&self) -> bool {
        matches!(self, Op::Conv2d { .. } | Op::Deconv2d { .. } | Op::AvgPool2 | Op::Concat | Op::Add)
    }

    pub fn params(&self) -> Vec<ParamId> {
        match *self {
            Op::Conv2d { weight, bias, .. } | Op::Deconv2d { weight, bias, .. } => vec![weight, bias],
            _ => Vec::new(),
        }
    }

    pub fn forward<T: Scalar>(&self, inputs: &[&Tensor<T>], params: &ParamStore<T>) -> Result<Tensor<T>> {
        let first = || inputs.first().copied().ok_or_else(|| NnError::Dimension("op has no input".into()));
        match *self {
            Op::Input => Ok(first()?.clone()),
            Op::Conv2d { weight, bias, stride, padding } => {
                ops::conv2d_forward(first()?, &params.get(weight).value, &params.get(bias).value, stride, padding)
            }
            Op::Deconv2d { weight, bias, stride, padding } => {
                ops::deconv2d_forward(first()?, &params.get(weight).value, &params.get(bias).value, stride, padding)
            }
            Op::MaxPool2 => ops::maxpool2_forward(first()?),
            Op::AvgPool2 => ops::avgpool2_forward(first()?),
            Op::LeakyRelu { slope } => Ok(ops::leaky_relu_forward(first()?, slope)),
            Op::Sigmoid => Ok(ops::sigmoid_forward(first()?)),
            Op::Concat => Tensor::concat_channels(inputs),
            Op::Add => {
                let mut out = first()?.clone();
                for x in &inputs[1..] {
                    out.add_assign(x)?;
                }
                Ok(out)
            }
        }
    }

    pub fn backward<T: Scalar>(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_out: &Tensor<T>,
        params: &ParamStore<T>,
    ) -> Result<OpGrads<T>> {
        output.check_same_shape(grad_out)?;
        let only = |g: Tensor<T>| OpGrads { inputs: vec![g], params: Vec::new() };
        let x = inputs.first().copied().ok_or_else(|| NnError::Dimension("op has no input".into()));
        Ok(match *self {
            Op::Input => only(grad_out.clone()),
            Op::Conv2d { weight, bias, stride, padding } => {
                let g = ops::conv2d_backward(x?, &params.get(weight).value, stride, padding, grad_out)?;
                OpGrads { inputs: vec![g.input], params: vec![(weight, g.weight), (bias, g.bias)] }
            }
            Op::Deconv2d { weight, bias, stride, padding } => {
                let g = ops::deconv2d_backward(x?, &params.get(weight).value, stride, padding, grad_out)?;
                OpGrads { inputs: vec![g.input], params: vec![(weight, g.weight), (bias, g.bias)] }
            }
            Op::MaxPool2 => only(ops::maxpool2_backward(x?, grad_out)?),
            Op::AvgPool2 => only(ops::avgpool2_backward(x?, grad_out)?),
            Op::LeakyRelu { slope } => only(ops::leaky_relu_backward(x?, grad_out, slope)?),
            Op::Sigmoid => only(ops::sigmoid_backward(output, grad_out)?),
            Op::Concat => {
                let mut start = 0;
                let mut grads = Vec::with_capacity(inputs.len());
                for t in inputs {
                    let c = t.dims3()?.0;
                    grads.push(grad_out.channel_slice(start, c)?);
                    start += c;
                }
                OpGrads { inputs: grads, params: Vec::new() }
            }
            Op::Add => OpGrads { inputs: vec![grad_out.clone(); inputs.len()], params: Vec::new() },
        })
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<NodeId>,
}

/// Serializable description of one layer (or composite block).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Deconv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Maxpool2,
    Avgpool2,
    LeakyRelu {
        slope: f64,
    },
    Sigmoid,
    Concat,
    Add,
    /// `components` × (1×1 conv to `bottleneck` channels → 3×3 conv to
    /// `growth_rate` channels), densely connected.
    DenseBlock {
        growth_rate: usize,
        components: usize,
        bottleneck: usize,
    },
    /// 1×1 conv to `out_channels` then 2×2 stride-2 average pooling.
    TransitionBlock {
        out_channels: usize,
    },
}

/// An ordered list of nodes (node 0 is the input) with parameters and the
/// activations cached by the last forward pass.
#[derive(Clone, Debug)]
pub struct Graph<T> {
    nodes: Vec<Node>,
    channels: Vec<usize>,
    params: ParamStore<T>,
    output: NodeId,
    activations: Vec<Option<Tensor<T>>>,
    faulty: Option<NodeId>,
}

impl<T: Scalar> Graph<T> {
    /// Chain `specs` one after another.
    pub fn sequential(input_channels: usize, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut b = GraphBuilder::new(input_channels, seed);
        let mut x = b.input();
        for (i, spec) in specs.iter().enumerate() {
            x = b.layer(&format!("layer{i}"), spec, &[x])?;
        }
        Ok(b.finish(x))
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn input_channels(&self) -> usize {
        self.channels[0]
    }

    pub fn channels(&self, id: NodeId) -> usize {
        self.channels[id]
    }

    pub fn output_id(&self) -> NodeId {
        self.output
    }

    /// Activation of `id` from the most recent forward pass.
    pub fn activation(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.activations.get(id).and_then(Option::as_ref)
    }

    pub fn clear_activations(&mut self) {
        self.activations.iter_mut().for_each(|a| *a = None);
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, _, _) = input.dims3()?;
        if c != self.channels[0] {
            return dim_err(format!("graph expects {} input channels, got {c}", self.channels[0]));
        }
        self.activations = vec![None; self.nodes.len()];
        self.activations[0] = Some(input.clone());
        for i in 1..=self.output {
            let node = &self.nodes[i];
            let inputs: Vec<&Tensor<T>> = node
                .inputs
                .iter()
                .map(|&j| self.activations[j].as_ref().expect("inputs precede their consumers"))
                .collect();
            let out = node.op.forward(&inputs, &self.params).map_err(|e| annotate(e, &node.name))?;
            self.activations[i] = Some(out);
        }
        Ok(self.activations[self.output].clone().expect("output computed"))
    }

    /// Local reverse pass of one node using cached activations.
    pub fn node_backward(&self, id: NodeId, grad_out: &Tensor<T>) -> Result<OpGrads<T>> {
        let node = &self.nodes[id];
        let inputs: Vec<&Tensor<T>> = node
            .inputs
            .iter()
            .map(|&j| self.activation(j).ok_or_else(|| NnError::Config("backward before forward".into())))
            .collect::<Result<_>>()?;
        let output = self.activation(id).ok_or_else(|| NnError::Config("backward before forward".into()))?;
        let mut grads =
            node.op.backward(&inputs, output, grad_out, &self.params).map_err(|e| annotate(e, &node.name))?;
        if self.faulty == Some(id) {
            for g in grads.inputs.iter_mut().chain(grads.params.iter_mut().map(|(_, g)| g)) {
                *g = g.scale(-T::one());
            }
        }
        Ok(grads)
    }

    /// Reverse pass from the output; accumulates parameter gradients and
    /// returns the gradient with respect to the graph input.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.output;
        self.backward_seeded(&[(out, grad_out)])
    }

    /// Reverse pass with gradients injected at arbitrary nodes.
    pub fn backward_seeded(&mut self, seeds: &[(NodeId, &Tensor<T>)]) -> Result<Tensor<T>> {
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        for &(id, g) in seeds {
            let act = self.activation(id).ok_or_else(|| NnError::Config("backward before forward".into()))?;
            act.check_same_shape(g)?;
            accumulate(&mut grads[id], g)?;
        }
        for id in (1..self.nodes.len()).rev() {
            let Some(g) = grads[id].take() else { continue };
            let local = self.node_backward(id, &g)?;
            for (&src, gi) in self.nodes[id].inputs.iter().zip(&local.inputs) {
                accumulate(&mut grads[src], gi)?;
            }
            for (pid, gp) in &local.params {
                self.params.accumulate_grad(*pid, gp)?;
            }
        }
        match grads[0].take() {
            Some(g) => Ok(g),
            None => {
                let input = self.activation(0).ok_or_else(|| NnError::Config("backward before forward".into()))?;
                Ok(Tensor::zeros(input.shape()))
            }
        }
    }

    /// Predicted `[C, H, W]` of every node for an input of the given shape,
    /// from the extent formulas alone.
    pub fn predict_shapes(&self, input: [usize; 3]) -> Result<Vec<[usize; 3]>> {
        let mut shapes: Vec<[usize; 3]> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let src = node.inputs.first().map(|&j| shapes[j]);
            let shape = match (&node.op, src) {
                (Op::Input, _) => input,
                (Op::Conv2d { weight, stride, padding, .. }, Some([_, h, w])) => {
                    let k = self.params.get(*weight).value.shape()[2];
                    [
                        self.channels[i],
                        conv_out_extent(h, k, *stride, *padding)?,
                        conv_out_extent(w, k, *stride, *padding)?,
                    ]
                }
                (Op::Deconv2d { weight, stride, padding, .. }, Some([_, h, w])) => {
                    let k = self.params.get(*weight).value.shape()[2];
                    [
                        self.channels[i],
                        deconv_out_extent(h, k, *stride, *padding)?,
                        deconv_out_extent(w, k, *stride, *padding)?,
                    ]
                }
                (Op::MaxPool2 | Op::AvgPool2, Some([c, h, w])) => [c, pool_out_extent(h), pool_out_extent(w)],
                (_, Some([_, h, w])) => [self.channels[i], h, w],
                (_, None) => return dim_err(format!("node `{}` has no input", node.name)),
            };
            shapes.push(shape);
        }
        Ok(shapes)
    }

    /// The same graph in another precision, with activations cleared.
    pub fn cast<U: Scalar>(&self) -> Graph<U> {
        Graph {
            nodes: self.nodes.clone(),
            channels: self.channels.clone(),
            params: self.params.cast(),
            output: self.output,
            activations: vec![None; self.nodes.len()],
            faulty: self.faulty,
        }
    }

    /// Negate the local gradients of `id` to exercise gradient checkers.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, id: NodeId) {
        self.faulty = Some(id);
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: &Tensor<T>) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(g),
        None => {
            *slot = Some(g.clone());
            Ok(())
        }
    }
}

fn annotate(e: NnError, node: &str) -> NnError {
    match e {
        NnError::Dimension(m) => NnError::Dimension(format!("{node}: {m}")),
        NnError::Config(m) => NnError::Config(format!("{node}: {m}")),
        other => other,
    }
}

/// Incremental graph construction with channel bookkeeping and seeded
/// He-uniform initialization (biases start at zero).
pub struct GraphBuilder<T> {
    nodes: Vec<Node>,
    channels: Vec<usize>,
    params: ParamStore<T>,
    rng: ChaCha8Rng,
    slope: f64,
}

impl<T: Scalar> GraphBuilder<T> {
    pub fn new(input_channels: usize, seed: u64) -> Self {
        Self {
            nodes: vec![Node { name: "input".into(), op: Op::Input, inputs: Vec::new() }],
            channels: vec![input_channels],
            params: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    /// Negative slope used by the leaky ReLUs that blocks insert.
    pub fn with_leaky_slope(mut self, slope: f64) -> Self {
        self.slope = slope;
        self
    }

    pub fn input(&self) -> NodeId {
        0
    }

    pub fn channels(&self, id: NodeId) -> usize {
        self.channels[id]
    }

    fn push(&mut self, name: &str, op: Op, inputs: Vec<NodeId>, channels: usize) -> NodeId {
        self.nodes.push(Node { name: name.to_string(), op, inputs });
        self.channels.push(channels);
        self.nodes.len() - 1
    }

    fn check_node(&self, id: NodeId) -> Result<()> {
        if id >= self.nodes.len() {
            return Err(NnError::Config(format!("unknown node {id}")));
        }
        Ok(())
    }

    fn he_uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        Tensor::uniform(shape, bound, &mut self.rng)
    }

    pub fn conv2d(
        &mut self,
        name: &str,
        x: NodeId,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        self.check_node(x)?;
        if out_channels == 0 || kernel == 0 || stride == 0 {
            return Err(NnError::Config(format!("{name}: channels, kernel and stride must be positive")));
        }
        let in_c = self.channels[x];
        let w = self.he_uniform(&[out_channels, in_c, kernel, kernel], in_c * kernel * kernel);
        let weight = self.params.push(format!("{name}.weight"), w)?;
        let bias = self.params.push(format!("{name}.bias"), Tensor::zeros(&[out_channels]))?;
        Ok(self.push(name, Op::Conv2d { weight, bias, stride, padding }, vec![x], out_channels))
    }

    pub fn deconv2d(
        &mut self,
        name: &str,
        x: NodeId,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        self.check_node(x)?;
        if out_channels == 0 || kernel == 0 || stride == 0 {
            return Err(NnError::Config(format!("{name}: channels, kernel and stride must be positive")));
        }
        let in_c = self.channels[x];
        // Each output pixel sees roughly (k/s)² taps per input channel.
        let fan_in = in_c * (kernel * kernel) / (stride * stride).max(1);
        let w = self.he_uniform(&[in_c, out_channels, kernel, kernel], fan_in);
        let weight = self.params.push(format!("{name}.weight"), w)?;
        let bias = self.params.push(format!("{name}.bias"), Tensor::zeros(&[out_channels]))?;
        Ok(self.push(name, Op::Deconv2d { weight, bias, stride, padding }, vec![x], out_channels))
    }

    pub fn max_pool2(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        self.check_node(x)?;
        Ok(self.push(name, Op::MaxPool2, vec![x], self.channels[x]))
    }

    pub fn avg_pool2(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        self.check_node(x)?;
        Ok(self.push(name, Op::AvgPool2, vec![x], self.channels[x]))
    }

    pub fn leaky_relu(&mut self, name: &str, x: NodeId, slope: f64) -> Result<NodeId> {
        self.check_node(x)?;
        Ok(self.push(name, Op::LeakyRelu { slope }, vec![x], self.channels[x]))
    }

    pub fn sigmoid(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        self.check_node(x)?;
        Ok(self.push(name, Op::Sigmoid, vec![x], self.channels[x]))
    }

    pub fn concat(&mut self, name: &str, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(NnError::Config(format!("{name}: concat needs at least one input")));
        }
        for &x in xs {
            self.check_node(x)?;
        }
        let c = xs.iter().map(|&x| self.channels[x]).sum();
        Ok(self.push(name, Op::Concat, xs.to_vec(), c))
    }

    pub fn add(&mut self, name: &str, xs: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = xs.first() else {
            return Err(NnError::Config(format!("{name}: add needs at least one input")));
        };
        for &x in xs {
            self.check_node(x)?;
            if self.channels[x] != self.channels[first] {
                return Err(NnError::Config(format!(
                    "{name}: cannot add {} and {} channels",
                    self.channels[first], self.channels[x]
                )));
            }
        }
        Ok(self.push(name, Op::Add, xs.to_vec(), self.channels[first]))
    }

    /// Densely connected block; output channels are `C + components·growth`.
    pub fn dense_block(
        &mut self,
        name: &str,
        x: NodeId,
        growth_rate: usize,
        components: usize,
        bottleneck: usize,
    ) -> Result<NodeId> {
        self.check_node(x)?;
        let slope = self.slope;
        let mut features = vec![x];
        for i in 0..components {
            let input =
                if features.len() == 1 { x } else { self.concat(&format!("{name}.c{i}.cat"), &features.clone())? };
            let a = self.conv2d(&format!("{name}.c{i}.conv1"), input, bottleneck, 1, 1, 0)?;
            let a = self.leaky_relu(&format!("{name}.c{i}.act1"), a, slope)?;
            let b = self.conv2d(&format!("{name}.c{i}.conv3"), a, growth_rate, 3, 1, 1)?;
            let b = self.leaky_relu(&format!("{name}.c{i}.act3"), b, slope)?;
            features.push(b);
        }
        if features.len() == 1 {
            return Ok(x);
        }
        self.concat(&format!("{name}.out"), &features)
    }

    pub fn transition_block(&mut self, name: &str, x: NodeId, out_channels: usize) -> Result<NodeId> {
        let c = self.conv2d(&format!("{name}.conv"), x, out_channels, 1, 1, 0)?;
        self.avg_pool2(&format!("{name}.pool"), c)
    }

    pub fn layer(&mut self, name: &str, spec: &LayerSpec, inputs: &[NodeId]) -> Result<NodeId> {
        let x = *inputs.first().ok_or_else(|| NnError::Config(format!("{name}: no input")))?;
        match *spec {
            LayerSpec::Conv2d { out_channels, kernel, stride, padding } => {
                self.conv2d(name, x, out_channels, kernel, stride, padding)
            }
            LayerSpec::Deconv2d { out_channels, kernel, stride, padding } => {
                self.deconv2d(name, x, out_channels, kernel, stride, padding)
            }
            LayerSpec::Maxpool2 => self.max_pool2(name, x),
            LayerSpec::Avgpool2 => self.avg_pool2(name, x),
            LayerSpec::LeakyRelu { slope } => self.leaky_relu(name, x, slope),
            LayerSpec::Sigmoid => self.sigmoid(name, x),
            LayerSpec::Concat => self.concat(name, inputs),
            LayerSpec::Add => self.add(name, inputs),
            LayerSpec::DenseBlock { growth_rate, components, bottleneck } => {
                self.dense_block(name, x, growth_rate, components, bottleneck)
            }
            LayerSpec::TransitionBlock { out_channels } => self.transition_block(name, x, out_channels),
        }
    }

    pub fn finish(self, output: NodeId) -> Graph<T> {
        let n = self.nodes.len();
        Graph {
            nodes: self.nodes,
            channels: self.channels,
            params: self.params,
            output: output.min(n - 1),
            activations: vec![None; n],
            faulty: None,
        }
    }
}
