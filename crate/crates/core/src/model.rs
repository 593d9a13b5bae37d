//! Encoder–decoder autoencoder with stacked dilated convolutions in the bottleneck.
//!
//! At the default configuration (side 512, base width 32) the layer sequence is:
//!
//! | block   | layers                                                       | output          |
//! |---------|--------------------------------------------------------------|-----------------|
//! | enc 1   | conv3×3·32, conv3×3·32, maxpool                              | 256×256×32      |
//! | enc 2   | conv3×3·64, conv3×3·64, maxpool                              | 128×128×64      |
//! | enc 3   | conv3×3·128, conv3×3·128, maxpool                            | 64×64×128       |
//! | middle  | 4 × dilated stack (5 × conv5×5·64 at rates 1,2,4,8,16), conv3×3·256 | 64×64×256 |
//! | dec 1   | tconv3×3/2·256, conv3×3·256, conv3×3·128                     | 128×128×128     |
//! | dec 2   | tconv3×3/2·128, conv3×3·128, conv3×3·64                      | 256×256×64      |
//! | dec 3   | tconv3×3/2·64, conv3×3·64, conv3×3·32                        | 512×512×32      |
//! | head    | conv1×1·3, sigmoid                                           | 512×512×3       |
//!
//! Every convolution except the head is followed by batch normalization and ReLU.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::nn::layers::{ConvBnRelu, DilatedStack, MaxPool2, SigmoidHead, UpBnRelu};
use crate::nn::{Param, Tensor};

pub const IMAGE_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Side length of the square input the network is built for.
    pub input_side: usize,
    /// Filters in the first encoder block; all other widths scale with it.
    /// 32 reproduces the full-size network, smaller values give the reduced desk-scale variant.
    pub base_width: usize,
    pub dilations: Vec<usize>,
    pub sdc_stacks: usize,
    /// Seed for parameter initialization.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { input_side: 512, base_width: 32, dilations: vec![1, 2, 4, 8, 16], sdc_stacks: 4, init_seed: 0 }
    }
}

impl ModelConfig {
    /// Reduced network for CPU-scale experiments.
    pub fn desk(input_side: usize) -> Self {
        Self { input_side, base_width: 8, sdc_stacks: 2, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_side == 0 || !self.input_side.is_multiple_of(8) {
            return Err(Error::Config(format!(
                "input side {} must be a positive multiple of 8",
                self.input_side
            )));
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err(Error::Config("dilation rates must be a nonempty list of positive integers".into()));
        }
        if self.base_width == 0 || self.sdc_stacks == 0 {
            return Err(Error::Config("base width and dilated stack count must be positive".into()));
        }
        if self.init_seed > crate::seed::MAX {
            return Err(Error::Config(format!("init seed must not exceed {}", crate::seed::MAX)));
        }
        Ok(())
    }

    /// Filters per dilated branch (64 at base width 32).
    pub fn sdc_filters(&self) -> usize {
        2 * self.base_width
    }

    pub fn sdc_out_channels(&self) -> usize {
        self.sdc_filters() * self.dilations.len()
    }
}

#[derive(Debug, Clone)]
enum Layer {
    Conv(ConvBnRelu),
    Pool(MaxPool2),
    Dilated(DilatedStack),
    Up(UpBnRelu),
    Head(SigmoidHead),
}

impl Layer {
    fn infer(&self, x: &Tensor) -> Tensor {
        match self {
            Layer::Conv(l) => l.infer(x),
            Layer::Pool(l) => l.infer(x),
            Layer::Dilated(l) => l.infer(x),
            Layer::Up(l) => l.infer(x),
            Layer::Head(l) => l.infer(x),
        }
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        match self {
            Layer::Conv(l) => l.forward_train(x),
            Layer::Pool(l) => l.forward_train(x),
            Layer::Dilated(l) => l.forward_train(x),
            Layer::Up(l) => l.forward_train(x),
            Layer::Head(l) => l.forward_train(x),
        }
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        match self {
            Layer::Conv(l) => l.backward(dy),
            Layer::Pool(l) => l.backward(dy),
            Layer::Dilated(l) => l.backward(dy),
            Layer::Up(l) => l.backward(dy),
            Layer::Head(l) => l.backward(dy),
        }
    }
}

/// Activation function applied at the end of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Activation {
    None,
    Relu,
    Sigmoid,
}

/// Static description of one layer, used for shape ledgers and introspection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerInfo {
    pub kind: &'static str,
    pub filters: Option<usize>,
    pub kernel: Option<usize>,
    pub stride: usize,
    pub dilations: Vec<usize>,
    pub batch_norm: bool,
    pub activation: Activation,
    /// `(height, width, channels)` of the layer output for a square input of the given side.
    pub output: (usize, usize, usize),
}

/// The autoencoder `F: [0,1]^{n×m×3} → [0,1]^{n×m×3}`.
#[derive(Debug)]
pub struct Network {
    config: ModelConfig,
    layers: Vec<Layer>,
    forward_images: AtomicU64,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            layers: self.layers.clone(),
            forward_images: AtomicU64::new(self.forward_images.load(Ordering::Relaxed)),
        }
    }
}

impl Network {
    pub fn build(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let w = config.base_width;
        let mut layers = Vec::new();
        let mut ch = IMAGE_CHANNELS;
        for width in [w, 2 * w, 4 * w] {
            layers.push(Layer::Conv(ConvBnRelu::new(ch, width, 3, 1, &mut rng)));
            layers.push(Layer::Conv(ConvBnRelu::new(width, width, 3, 1, &mut rng)));
            layers.push(Layer::Pool(MaxPool2::default()));
            ch = width;
        }
        for _ in 0..config.sdc_stacks {
            let stack = DilatedStack::new(ch, config.sdc_filters(), 5, &config.dilations, &mut rng);
            ch = stack.out_channels();
            layers.push(Layer::Dilated(stack));
        }
        layers.push(Layer::Conv(ConvBnRelu::new(ch, 8 * w, 3, 1, &mut rng)));
        ch = 8 * w;
        for (up, out) in [(8 * w, 4 * w), (4 * w, 2 * w), (2 * w, w)] {
            layers.push(Layer::Up(UpBnRelu::new(ch, up, &mut rng)));
            layers.push(Layer::Conv(ConvBnRelu::new(up, up, 3, 1, &mut rng)));
            layers.push(Layer::Conv(ConvBnRelu::new(up, out, 3, 1, &mut rng)));
            ch = out;
        }
        layers.push(Layer::Head(SigmoidHead::new(ch, IMAGE_CHANNELS, &mut rng)));
        Ok(Self { config: config.clone(), layers, forward_images: AtomicU64::new(0) })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Layer-by-layer description with output sizes for a square input of `side`.
    pub fn describe(&self, side: usize) -> Vec<LayerInfo> {
        let (mut h, mut w) = (side, side);
        self.layers
            .iter()
            .map(|layer| match layer {
                Layer::Conv(l) => LayerInfo {
                    kind: "conv",
                    filters: Some(l.conv.out_ch),
                    kernel: Some(l.conv.kernel),
                    stride: 1,
                    dilations: vec![l.conv.dilation],
                    batch_norm: true,
                    activation: Activation::Relu,
                    output: (h, w, l.conv.out_ch),
                },
                Layer::Pool(_) => {
                    h /= 2;
                    w /= 2;
                    let c = self.channels_before(layer);
                    LayerInfo {
                        kind: "maxpool",
                        filters: None,
                        kernel: Some(2),
                        stride: 2,
                        dilations: vec![],
                        batch_norm: false,
                        activation: Activation::None,
                        output: (h, w, c),
                    }
                }
                Layer::Dilated(l) => LayerInfo {
                    kind: "dilated_stack",
                    filters: Some(l.out_channels()),
                    kernel: Some(l.branches[0].conv.kernel),
                    stride: 1,
                    dilations: l.branches.iter().map(|b| b.conv.dilation).collect(),
                    batch_norm: true,
                    activation: Activation::Relu,
                    output: (h, w, l.out_channels()),
                },
                Layer::Up(l) => {
                    h *= 2;
                    w *= 2;
                    LayerInfo {
                        kind: "transposed_conv",
                        filters: Some(l.tconv.out_ch),
                        kernel: Some(3),
                        stride: 2,
                        dilations: vec![1],
                        batch_norm: true,
                        activation: Activation::Relu,
                        output: (h, w, l.tconv.out_ch),
                    }
                }
                Layer::Head(l) => LayerInfo {
                    kind: "conv",
                    filters: Some(l.conv.out_ch),
                    kernel: Some(1),
                    stride: 1,
                    dilations: vec![1],
                    batch_norm: false,
                    activation: Activation::Sigmoid,
                    output: (h, w, l.conv.out_ch),
                },
            })
            .collect()
    }

    fn channels_before(&self, target: &Layer) -> usize {
        let mut ch = IMAGE_CHANNELS;
        for layer in &self.layers {
            if std::ptr::eq(layer, target) {
                return ch;
            }
            ch = match layer {
                Layer::Conv(l) => l.conv.out_ch,
                Layer::Pool(_) => ch,
                Layer::Dilated(l) => l.out_channels(),
                Layer::Up(l) => l.tconv.out_ch,
                Layer::Head(l) => l.conv.out_ch,
            };
        }
        ch
    }

    fn check_input(&self, x: &Tensor, exact_side: bool) -> Result<()> {
        if x.c != IMAGE_CHANNELS {
            return Err(Error::Shape(format!("expected {IMAGE_CHANNELS} input channels, got {}", x.c)));
        }
        if exact_side && (x.h != self.config.input_side || x.w != self.config.input_side) {
            return Err(Error::Shape(format!(
                "input is {}x{}, network expects {}x{}",
                x.h, x.w, self.config.input_side, self.config.input_side
            )));
        }
        if x.h == 0 || x.w == 0 || !x.h.is_multiple_of(8) || !x.w.is_multiple_of(8) {
            return Err(Error::Shape(format!("input {}x{} is not divisible by 8", x.h, x.w)));
        }
        Ok(())
    }

    /// Single eval-mode pass over a batch whose side equals the configured input side.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_input(batch, true)?;
        Ok(self.run_eval(batch, None))
    }

    /// Eval-mode pass accepting any side divisible by 8 (progressive training stages).
    pub fn forward_any_side(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_input(batch, false)?;
        Ok(self.run_eval(batch, None))
    }

    /// Eval-mode pass that also records the shape of every intermediate activation.
    pub fn forward_traced(&self, batch: &Tensor) -> Result<(Tensor, Vec<[usize; 4]>)> {
        self.check_input(batch, false)?;
        let mut trace = Vec::with_capacity(self.layers.len());
        let out = self.run_eval(batch, Some(&mut trace));
        Ok((out, trace))
    }

    fn run_eval(&self, batch: &Tensor, mut trace: Option<&mut Vec<[usize; 4]>>) -> Tensor {
        self.forward_images.fetch_add(batch.n as u64, Ordering::Relaxed);
        let mut x = self.layers[0].infer(batch);
        if let Some(t) = trace.as_deref_mut() {
            t.push(x.shape());
        }
        for layer in &self.layers[1..] {
            x = layer.infer(&x);
            if let Some(t) = trace.as_deref_mut() {
                t.push(x.shape());
            }
        }
        x
    }

    /// Reconstruct a single image (eval mode).
    pub fn reconstruct(&self, image: &ImageTensor) -> Result<ImageTensor> {
        let batch = Tensor::from_images(&[image])?;
        Ok(self.forward(&batch)?.to_image(0))
    }

    /// Training-mode pass: batch statistics, caches kept for [`Network::backward`].
    pub fn forward_train(&mut self, batch: &Tensor) -> Result<Tensor> {
        self.check_input(batch, false)?;
        self.forward_images.fetch_add(batch.n as u64, Ordering::Relaxed);
        let mut x = self.layers[0].forward_train(batch);
        for layer in &mut self.layers[1..] {
            x = layer.forward_train(&x);
        }
        Ok(x)
    }

    /// Backpropagate the gradient of the loss with respect to the output.
    pub fn backward(&mut self, grad_output: &Tensor) {
        let mut g = grad_output.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g);
        }
    }

    /// Number of images pushed through the network since construction.
    pub fn forward_pass_count(&self) -> u64 {
        self.forward_images.load(Ordering::Relaxed)
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Trainable parameters in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(l) => push_cbr(&mut out, l),
                Layer::Pool(_) => {}
                Layer::Dilated(l) => l.branches.iter_mut().for_each(|b| push_cbr(&mut out, b)),
                Layer::Up(l) => {
                    out.push(&mut l.tconv.weight);
                    out.push(&mut l.bn.gamma);
                    out.push(&mut l.bn.beta);
                }
                Layer::Head(l) => {
                    out.push(&mut l.conv.weight);
                    out.push(l.conv.bias.as_mut().expect("head has bias"));
                }
            }
        }
        out
    }

    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.value.len()).sum()
    }

    /// Every persistent tensor (parameters and batch-norm statistics) with a stable name.
    fn state_mut(&mut self) -> Vec<(String, &mut Vec<f32>)> {
        let mut out: Vec<(String, &mut Vec<f32>)> = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Conv(l) => cbr_state(&mut out, format!("layers.{i}"), l),
                Layer::Pool(_) => {}
                Layer::Dilated(l) => {
                    for (j, b) in l.branches.iter_mut().enumerate() {
                        cbr_state(&mut out, format!("layers.{i}.branch.{j}"), b);
                    }
                }
                Layer::Up(l) => {
                    out.push((format!("layers.{i}.tconv.weight"), &mut l.tconv.weight.value));
                    bn_state(&mut out, format!("layers.{i}.bn"), &mut l.bn);
                }
                Layer::Head(l) => {
                    out.push((format!("layers.{i}.conv.weight"), &mut l.conv.weight.value));
                    let b = l.conv.bias.as_mut().expect("head has bias");
                    out.push((format!("layers.{i}.conv.bias"), &mut b.value));
                }
            }
        }
        out
    }

    pub fn state_dict(&self) -> Vec<(String, Vec<f32>)> {
        // state_mut needs &mut; clone once instead of duplicating the traversal
        let mut copy = self.clone();
        copy.state_mut().into_iter().map(|(k, v)| (k, v.clone())).collect()
    }

    pub fn load_state_dict(&mut self, tensors: &[(String, Vec<f32>)]) -> Result<()> {
        let mut state = self.state_mut();
        if state.len() != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, network expects {}",
                tensors.len(),
                state.len()
            )));
        }
        for ((name, dst), (src_name, src)) in state.iter_mut().zip(tensors) {
            if name != src_name || dst.len() != src.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor mismatch: expected {name} [{}], found {src_name} [{}]",
                    dst.len(),
                    src.len()
                )));
            }
            dst.copy_from_slice(src);
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: "weights".into(),
            model: self.config.clone(),
            extra: serde_json::Value::Null,
            tensors: self.state_dict(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut net = Network::build(&ckpt.model)
            .map_err(|e| Error::Checkpoint(format!("stored model config invalid: {e}")))?;
        let own: Vec<(String, Vec<f32>)> =
            ckpt.tensors.iter().filter(|(k, _)| k.starts_with("layers.")).cloned().collect();
        net.load_state_dict(&own)?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }

    /// Load and require the stored configuration to equal `expected`.
    pub fn load_expecting(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let ckpt = Checkpoint::read(path)?;
        if &ckpt.model != expected {
            return Err(Error::Checkpoint(format!(
                "stored model config {:?} does not match expected {:?}",
                ckpt.model, expected
            )));
        }
        Self::from_checkpoint(&ckpt)
    }
}

fn push_cbr<'a>(out: &mut Vec<&'a mut Param>, l: &'a mut ConvBnRelu) {
    out.push(&mut l.conv.weight);
    out.push(&mut l.bn.gamma);
    out.push(&mut l.bn.beta);
}

fn cbr_state<'a>(out: &mut Vec<(String, &'a mut Vec<f32>)>, prefix: String, l: &'a mut ConvBnRelu) {
    out.push((format!("{prefix}.conv.weight"), &mut l.conv.weight.value));
    bn_state(out, format!("{prefix}.bn"), &mut l.bn);
}

fn bn_state<'a>(
    out: &mut Vec<(String, &'a mut Vec<f32>)>,
    prefix: String,
    bn: &'a mut crate::nn::layers::BatchNorm2d,
) {
    out.push((format!("{prefix}.gamma"), &mut bn.gamma.value));
    out.push((format!("{prefix}.beta"), &mut bn.beta.value));
    out.push((format!("{prefix}.running_mean"), &mut bn.running_mean));
    out.push((format!("{prefix}.running_var"), &mut bn.running_var));
}
