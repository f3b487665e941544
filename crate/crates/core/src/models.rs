//! Generator (dense encoder with a deconvolution fusion head) and
//! Markovian critic, assembled from `conncrack_nn` graphs.

use std::path::Path;

use conncrack_nn::ops::conv_out_extent;
use conncrack_nn::{Graph, GraphBuilder, NodeId, ParamStore, Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{config, dimension, Error, Result};

/// Encoder levels (as downsampling factors) whose block outputs may feed the head.
pub const TAP_LEVELS: [usize; 3] = [16, 8, 4];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub block_components: [usize; 4],
    pub growth_rate: usize,
    /// Bottleneck width of each dense component, in multiples of the growth rate.
    pub bottleneck_factor: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    /// Channel fraction kept by each transition.
    pub compression: f64,
    /// Encoder levels added into the head, from {16, 8, 4}.
    pub fusion_taps: Vec<usize>,
    pub head_channels: usize,
    pub leaky_slope: f64,
    pub image_channels: usize,
}

impl GeneratorConfig {
    /// Small enough to train on one CPU core.
    pub fn desk() -> Self {
        Self {
            block_components: [2, 2, 2, 2],
            growth_rate: 8,
            bottleneck_factor: 4,
            stem_channels: 16,
            stem_kernel: 7,
            compression: 0.5,
            fusion_taps: vec![16, 8],
            head_channels: 16,
            leaky_slope: 0.2,
            image_channels: 3,
        }
    }

    /// DenseNet-121 layout.
    pub fn densenet121() -> Self {
        Self {
            block_components: [6, 12, 24, 16],
            growth_rate: 32,
            stem_channels: 64,
            head_channels: 64,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.growth_rate == 0 || self.bottleneck_factor == 0 || self.stem_channels == 0 || self.head_channels == 0 {
            return config("generator growth rate, bottleneck factor, stem and head channels must be positive");
        }
        if self.stem_kernel.is_multiple_of(2) {
            return config(format!("generator stem kernel must be odd, got {}", self.stem_kernel));
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return config(format!("generator compression must lie in (0, 1], got {}", self.compression));
        }
        if let Some(t) = self.fusion_taps.iter().find(|t| !TAP_LEVELS.contains(t)) {
            return config(format!("fusion tap {t} is not one of {TAP_LEVELS:?}"));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope.is_finite()) {
            return config("leaky slope must be finite and non-negative");
        }
        if self.image_channels == 0 {
            return config("image channels must be positive");
        }
        Ok(())
    }
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticConfig {
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub strides: Vec<usize>,
    pub padding: usize,
    pub image_channels: usize,
    pub map_channels: usize,
    pub leaky_slope: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            widths: vec![64, 128, 256, 512, 1],
            kernel: 4,
            strides: vec![2, 2, 2, 1, 1],
            padding: 1,
            image_channels: 3,
            map_channels: 8,
            leaky_slope: 0.2,
        }
    }
}

impl CriticConfig {
    /// Half the default widths.
    pub fn desk() -> Self {
        Self { widths: vec![32, 64, 128, 256, 1], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() != 5 || self.strides.len() != 5 {
            return config(format!(
                "critic needs exactly 5 widths and 5 strides, got {} and {}",
                self.widths.len(),
                self.strides.len()
            ));
        }
        if self.widths.contains(&0) || self.strides.contains(&0) || self.kernel == 0 {
            return config("critic widths, strides and kernel must be positive");
        }
        if self.image_channels == 0 || self.map_channels == 0 {
            return config("critic input channels must be positive");
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope.is_finite()) {
            return config("leaky slope must be finite and non-negative");
        }
        Ok(())
    }

    /// Spatial extent of the score grid for an input extent `n`.
    pub fn output_extent(&self, n: usize) -> Result<usize> {
        self.strides.iter().try_fold(n, |n, &s| conv_out_extent(n, self.kernel, s, self.padding)).map_err(Error::from)
    }
}

/// Input extent seen by one critic score: `r ← r + (k−1)·j`, `j ← j·s`.
pub fn receptive_field(cfg: &CriticConfig) -> usize {
    let (mut r, mut j) = (1, 1);
    for &s in &cfg.strides {
        r += (cfg.kernel - 1) * j;
        j *= s;
    }
    r
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub generator: GeneratorConfig,
    pub critic: CriticConfig,
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self { generator: GeneratorConfig::desk(), critic: CriticConfig::desk() }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.generator.validate()?;
        cfg.critic.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

const LOGIT_INIT_SCALE: f64 = 0.1;

/// Maps an image to 8 connectivity-map probabilities at its own resolution.
#[derive(Clone, Debug)]
pub struct Generator<T> {
    graph: Graph<T>,
    logits: NodeId,
    config: GeneratorConfig,
}

impl<T: Scalar> Generator<T> {
    pub fn build(cfg: &GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let slope = cfg.leaky_slope;
        let mut b = GraphBuilder::<T>::new(cfg.image_channels, seed).with_leaky_slope(slope);
        let x = b.input();
        let stem = b.conv2d("stem", x, cfg.stem_channels, cfg.stem_kernel, 2, cfg.stem_kernel / 2)?;
        let stem = b.leaky_relu("stem.act", stem, slope)?;
        let mut h = b.max_pool2("stem.pool", stem)?;

        let bottleneck = cfg.bottleneck_factor * cfg.growth_rate;
        let mut blocks = Vec::with_capacity(4);
        for (i, &n) in cfg.block_components.iter().enumerate() {
            let block = b.dense_block(&format!("block{}", i + 1), h, cfg.growth_rate, n, bottleneck)?;
            blocks.push(block);
            h = block;
            if i < 3 {
                let out = ((b.channels(block) as f64 * cfg.compression).floor() as usize).max(1);
                h = b.transition_block(&format!("trans{}", i + 1), block, out)?;
            }
        }

        // blocks[3] sits at 1/32; each stride-2 deconvolution doubles the extent.
        for (stage, level) in TAP_LEVELS.iter().enumerate() {
            let name = format!("head{}", stage + 1);
            h = b.deconv2d(&name, h, cfg.head_channels, 4, 2, 1)?;
            if cfg.fusion_taps.contains(level) {
                let tap = blocks[2 - stage];
                let proj = b.conv2d(&format!("{name}.tap"), tap, cfg.head_channels, 1, 1, 0)?;
                h = b.add(&format!("{name}.fuse"), &[h, proj])?;
            }
            h = b.leaky_relu(&format!("{name}.act"), h, slope)?;
        }
        h = b.deconv2d("head4", h, cfg.head_channels, 4, 4, 0)?;
        h = b.leaky_relu("head4.act", h, slope)?;
        let logits = b.conv2d("logits", h, 8, 1, 1, 0)?;
        let probs = b.sigmoid("probs", logits)?;
        let mut graph = b.finish(probs);
        // Activations grow through the unnormalized stack; start the logits
        // small so the sigmoid is not saturated at step 0.
        let w = graph.params().id_of("logits.weight").expect("logits layer was just added");
        let value = &mut graph.params_mut().get_mut(w).value;
        *value = value.scale(T::of_f64(LOGIT_INIT_SCALE));
        Ok(Self { graph, logits, config: cfg.clone() })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn into_graph(self) -> Graph<T> {
        self.graph
    }

    pub fn params(&self) -> &ParamStore<T> {
        self.graph.params()
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        self.graph.params_mut()
    }

    /// Map probabilities `8×H×W` for a `C×H×W` input with H and W multiples of 32.
    pub fn forward(&mut self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, h, w) = image.dims3()?;
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return dimension(format!("generator input extents must be positive multiples of 32, got {h}×{w}"));
        }
        Ok(self.graph.forward(image)?)
    }

    /// Logits of the last forward pass.
    pub fn logits(&self) -> Result<&Tensor<T>> {
        self.graph
            .activation(self.logits)
            .ok_or_else(|| Error::Config("generator logits requested before a forward pass".into()))
    }

    /// Accumulate parameter gradients for upstream gradients at the logits
    /// and/or at the probabilities of the last forward pass.
    pub fn backward(&mut self, grad_logits: Option<&Tensor<T>>, grad_probs: Option<&Tensor<T>>) -> Result<()> {
        let mut seeds = Vec::new();
        if let Some(g) = grad_logits {
            seeds.push((self.logits, g));
        }
        if let Some(g) = grad_probs {
            seeds.push((self.graph.output_id(), g));
        }
        if !seeds.is_empty() {
            self.graph.backward_seeded(&seeds)?;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Generator<U> {
        Generator { graph: self.graph.cast(), logits: self.logits, config: self.config.clone() }
    }
}

/// Scores `(image, maps)` pairs with a grid of unbounded local scores.
#[derive(Clone, Debug)]
pub struct Critic<T> {
    graph: Graph<T>,
    config: CriticConfig,
}

impl<T: Scalar> Critic<T> {
    pub fn build(cfg: &CriticConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut b =
            GraphBuilder::<T>::new(cfg.image_channels + cfg.map_channels, seed).with_leaky_slope(cfg.leaky_slope);
        let mut h = b.input();
        for (i, (&width, &stride)) in cfg.widths.iter().zip(&cfg.strides).enumerate() {
            h = b.conv2d(&format!("conv{}", i + 1), h, width, cfg.kernel, stride, cfg.padding)?;
            if i + 1 < cfg.widths.len() {
                h = b.leaky_relu(&format!("act{}", i + 1), h, cfg.leaky_slope)?;
            }
        }
        Ok(Self { graph: b.finish(h), config: cfg.clone() })
    }

    pub fn config(&self) -> &CriticConfig {
        &self.config
    }

    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn into_graph(self) -> Graph<T> {
        self.graph
    }

    pub fn params(&self) -> &ParamStore<T> {
        self.graph.params()
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        self.graph.params_mut()
    }

    /// Score grid for the channel concatenation of `image` and `maps`.
    pub fn score(&mut self, image: &Tensor<T>, maps: &Tensor<T>) -> Result<Tensor<T>> {
        let (mc, _, _) = maps.dims3()?;
        if mc != self.config.map_channels {
            return dimension(format!("critic expects {} map channels, got {mc}", self.config.map_channels));
        }
        let input = Tensor::concat_channels(&[image, maps])?;
        Ok(self.graph.forward(&input)?)
    }

    /// Accumulate parameter gradients for `grad_scores` and return the
    /// gradient with respect to the map channels of the last input.
    pub fn backward(&mut self, grad_scores: &Tensor<T>) -> Result<Tensor<T>> {
        let grad_in = self.graph.backward(grad_scores)?;
        Ok(grad_in.channel_slice(self.config.image_channels, self.config.map_channels)?)
    }

    pub fn cast<U: Scalar>(&self) -> Critic<U> {
        Critic { graph: self.graph.cast(), config: self.config.clone() }
    }
}
