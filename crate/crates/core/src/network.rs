//! The conv → BN → act → conv → BN → act → max-pool → flatten → FC → act → FC(1)
//! network in its 2D, 3D-time and 3D-vertical variants.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    conv_output_len, relu_backward, relu_forward, Activation, BatchNorm, BatchNormCache, Conv2d,
    Conv3d, ConvCache, Linear, LinearCache, MaxPool, Mode, PoolCache,
};
use crate::tensor::Tensor;

/// Which axes the convolutions scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Channels are (variable, level, time); convolution is horizontal only.
    #[serde(rename = "2d")]
    Cnn2d,
    /// Channels are (variable, level); time is the convolved depth axis.
    #[serde(rename = "3d-time")]
    Cnn3dTime,
    /// Channels are (variable, time); pressure level is the convolved depth axis.
    #[serde(rename = "3d-vert")]
    Cnn3dVert,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Cnn2d, Variant::Cnn3dTime, Variant::Cnn3dVert];

    pub fn spatial_rank(self) -> usize {
        match self {
            Variant::Cnn2d => 2,
            Variant::Cnn3dTime | Variant::Cnn3dVert => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Cnn2d => "2d",
            Variant::Cnn3dTime => "3d-time",
            Variant::Cnn3dVert => "3d-vert",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "2d" => Ok(Variant::Cnn2d),
            "3d-time" => Ok(Variant::Cnn3dTime),
            "3d-vert" => Ok(Variant::Cnn3dVert),
            other => Err(Error::invalid(format!(
                "unknown variant `{other}` (expected 2d, 3d-time or 3d-vert)"
            ))),
        }
    }
}

/// How the pooling window treats a depth axis shorter than the kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DepthPooling {
    /// Shrink the depth window to `min(pool_kernel, depth)`.
    #[default]
    Clamp,
    /// Use the full kernel and fail if it does not fit.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub variant: Variant,
    pub conv_channels: [usize; 2],
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub fc_hidden: usize,
    pub activation: Activation,
    #[serde(default)]
    pub depth_pooling: DepthPooling,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            variant: Variant::Cnn2d,
            conv_channels: [32, 64],
            kernel_size: 3,
            stride: 1,
            padding: 1,
            pool_kernel: 3,
            pool_stride: 1,
            fc_hidden: 64,
            activation: Activation::Relu,
            depth_pooling: DepthPooling::Clamp,
        }
    }
}

impl NetworkConfig {
    pub fn with_variant(variant: Variant) -> Self {
        NetworkConfig {
            variant,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.conv_channels.contains(&0) || self.fc_hidden == 0 {
            return Err(Error::invalid("kernel counts and fc_hidden must be at least 1"));
        }
        if self.kernel_size == 0 || self.stride == 0 || self.pool_kernel == 0 || self.pool_stride == 0
        {
            return Err(Error::invalid("kernel sizes and strides must be at least 1"));
        }
        Ok(())
    }
}

/// Per-sample output shape of one named layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapePlan {
    pub input: Vec<usize>,
    pub layers: Vec<LayerShape>,
    /// Effective pooling window per spatial axis.
    pub pool_window: Vec<usize>,
    /// True when the depth window was shrunk below `pool_kernel`.
    pub pool_depth_clamped: bool,
}

impl ShapePlan {
    pub fn output_of(&self, name: &str) -> Option<&[usize]> {
        self.layers
            .iter()
            .find(|l| l.name == name)
            .map(|l| l.dims.as_slice())
    }

    pub fn flatten_len(&self) -> usize {
        self.output_of("flatten").map_or(0, |d| d[0])
    }
}

/// Propagates a per-sample input shape (`[C, H, W]` or `[C, D, H, W]`) through
/// the architecture.
pub fn infer_shapes(config: &NetworkConfig, input_shape: &[usize]) -> Result<ShapePlan> {
    config.validate()?;
    let rank = config.variant.spatial_rank();
    if input_shape.len() != rank + 1 || input_shape.contains(&0) {
        return Err(Error::InvalidShape(format!(
            "{} network expects a per-sample input of rank {}, got {input_shape:?}",
            config.variant,
            rank + 1
        )));
    }
    let mut layers = Vec::new();
    let mut push = |name: &str, dims: Vec<usize>| {
        layers.push(LayerShape {
            name: name.to_string(),
            dims,
        })
    };
    let conv = |spatial: &[usize], name: &str| -> Result<Vec<usize>> {
        spatial
            .iter()
            .map(|&len| {
                conv_output_len(len, config.kernel_size, config.stride, config.padding).ok_or_else(
                    || {
                        Error::InvalidShape(format!(
                            "{name}: kernel {} with padding {} does not fit axis of length {len}",
                            config.kernel_size, config.padding
                        ))
                    },
                )
            })
            .collect()
    };
    let act = config.activation == Activation::Relu;

    let mut spatial = input_shape[1..].to_vec();
    for (i, &channels) in config.conv_channels.iter().enumerate() {
        spatial = conv(&spatial, &format!("conv{}", i + 1))?;
        let mut dims = vec![channels];
        dims.extend(&spatial);
        push(&format!("conv{}", i + 1), dims.clone());
        push(&format!("bn{}", i + 1), dims.clone());
        if act {
            push(&format!("act{}", i + 1), dims);
        }
    }

    let mut pool_window = vec![config.pool_kernel; rank];
    let mut clamped = false;
    if rank == 3 && config.depth_pooling == DepthPooling::Clamp && spatial[0] < config.pool_kernel {
        pool_window[0] = spatial[0];
        clamped = true;
    }
    let mut pooled = vec![config.conv_channels[1]];
    for (&len, &k) in spatial.iter().zip(&pool_window) {
        if len < k {
            return Err(Error::InvalidShape(format!(
                "pool: window {k} on axis of length {len} leaves a non-positive dimension"
            )));
        }
        pooled.push((len - k) / config.pool_stride + 1);
    }
    let flat: usize = pooled.iter().product();
    push("pool", pooled);
    push("flatten", vec![flat]);
    push("fc1", vec![config.fc_hidden]);
    if act {
        push("act3", vec![config.fc_hidden]);
    }
    push("fc2", vec![1]);
    Ok(ShapePlan {
        input: input_shape.to_vec(),
        layers,
        pool_window,
        pool_depth_clamped: clamped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Conv2d(Conv2d),
    Conv3d(Conv3d),
    BatchNorm(BatchNorm),
    Relu,
    MaxPool(MaxPool),
    Flatten,
    Linear(Linear),
}

#[derive(Debug, Clone)]
enum LayerCache {
    Conv(ConvCache),
    BatchNorm(BatchNormCache),
    Relu(Tensor),
    Pool(PoolCache),
    Flatten(Vec<usize>),
    Linear(LinearCache),
}

/// Everything one training-mode forward pass hands to its backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    batch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    config: NetworkConfig,
    plan: ShapePlan,
    layers: Vec<(String, Layer)>,
}

impl Network {
    /// Builds a network with weights drawn uniformly from ±√(6 / fan_in),
    /// zero biases, γ = 1, β = 0 and running statistics (0, 1).
    pub fn build<R: Rng + ?Sized>(
        config: &NetworkConfig,
        input_shape: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        Self::build_with(config, input_shape, |fan_in, t| {
            let bound = (6.0 / fan_in as f64).sqrt();
            for v in t.data_mut() {
                *v = rng.random_range(-bound..=bound);
            }
        })
    }

    /// Builds a network whose weights and biases are all zero.
    pub fn zeroed(config: &NetworkConfig, input_shape: &[usize]) -> Result<Self> {
        Self::build_with(config, input_shape, |_, _| {})
    }

    fn build_with(
        config: &NetworkConfig,
        input_shape: &[usize],
        mut init: impl FnMut(usize, &mut Tensor),
    ) -> Result<Self> {
        let plan = infer_shapes(config, input_shape)?;
        let rank = config.variant.spatial_rank();
        let k = config.kernel_size;
        let mut layers = Vec::new();
        let mut in_channels = input_shape[0];
        for (i, &p) in config.conv_channels.iter().enumerate() {
            let mut kdims = vec![p, in_channels];
            kdims.extend(std::iter::repeat(k).take(rank));
            let mut kernels = Tensor::zeros(&kdims)?;
            init(in_channels * k.pow(rank as u32), &mut kernels);
            let bias = Tensor::zeros(&[p])?;
            let conv = if rank == 2 {
                Layer::Conv2d(Conv2d::new(kernels, bias, config.stride, config.padding)?)
            } else {
                Layer::Conv3d(Conv3d::new(kernels, bias, config.stride, config.padding)?)
            };
            layers.push((format!("conv{}", i + 1), conv));
            layers.push((format!("bn{}", i + 1), Layer::BatchNorm(BatchNorm::new(p)?)));
            if config.activation == Activation::Relu {
                layers.push((format!("act{}", i + 1), Layer::Relu));
            }
            in_channels = p;
        }
        layers.push((
            "pool".into(),
            Layer::MaxPool(MaxPool::new(plan.pool_window.clone(), config.pool_stride)?),
        ));
        layers.push(("flatten".into(), Layer::Flatten));
        let flat = plan.flatten_len();
        for (name, in_f, out_f) in [("fc1", flat, config.fc_hidden), ("fc2", config.fc_hidden, 1)] {
            let mut weight = Tensor::zeros(&[out_f, in_f])?;
            init(in_f, &mut weight);
            layers.push((
                name.into(),
                Layer::Linear(Linear::new(weight, Tensor::zeros(&[out_f])?)?),
            ));
            if name == "fc1" && config.activation == Activation::Relu {
                layers.push(("act3".into(), Layer::Relu));
            }
        }
        Ok(Network {
            config: config.clone(),
            plan,
            layers,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn plan(&self) -> &ShapePlan {
        &self.plan
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.plan.input
    }

    pub fn layers(&self) -> impl Iterator<Item = (&str, &Layer)> {
        self.layers.iter().map(|(n, l)| (n.as_str(), l))
    }

    /// Learnable tensors in a fixed order; gradients use the same order.
    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (name, layer) in &self.layers {
            match layer {
                Layer::Conv2d(c) => {
                    out.push((format!("{name}.kernels"), &c.kernels));
                    out.push((format!("{name}.bias"), &c.bias));
                }
                Layer::Conv3d(c) => {
                    out.push((format!("{name}.kernels"), &c.kernels));
                    out.push((format!("{name}.bias"), &c.bias));
                }
                Layer::BatchNorm(b) => {
                    out.push((format!("{name}.gamma"), &b.gamma));
                    out.push((format!("{name}.beta"), &b.beta));
                }
                Layer::Linear(l) => {
                    out.push((format!("{name}.weight"), &l.weight));
                    out.push((format!("{name}.bias"), &l.bias));
                }
                Layer::Relu | Layer::MaxPool(_) | Layer::Flatten => {}
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (name, layer) in &mut self.layers {
            match layer {
                Layer::Conv2d(c) => {
                    out.push((format!("{name}.kernels"), &mut c.kernels));
                    out.push((format!("{name}.bias"), &mut c.bias));
                }
                Layer::Conv3d(c) => {
                    out.push((format!("{name}.kernels"), &mut c.kernels));
                    out.push((format!("{name}.bias"), &mut c.bias));
                }
                Layer::BatchNorm(b) => {
                    out.push((format!("{name}.gamma"), &mut b.gamma));
                    out.push((format!("{name}.beta"), &mut b.beta));
                }
                Layer::Linear(l) => {
                    out.push((format!("{name}.weight"), &mut l.weight));
                    out.push((format!("{name}.bias"), &mut l.bias));
                }
                Layer::Relu | Layer::MaxPool(_) | Layer::Flatten => {}
            }
        }
        out
    }

    /// Parameters followed by batch-norm running statistics.
    pub fn state(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.parameters();
        for (name, layer) in &self.layers {
            if let Layer::BatchNorm(b) = layer {
                out.push((format!("{name}.running_mean"), &b.running_mean));
                out.push((format!("{name}.running_var"), &b.running_var));
            }
        }
        out
    }

    /// Overwrites one state tensor by name, checking its shape.
    pub fn set_state(&mut self, name: &str, value: Tensor) -> Result<()> {
        let (layer_name, field) = name
            .split_once('.')
            .ok_or_else(|| Error::invalid(format!("malformed state name `{name}`")))?;
        let layer = self
            .layers
            .iter_mut()
            .find(|(n, _)| n == layer_name)
            .map(|(_, l)| l)
            .ok_or_else(|| Error::invalid(format!("no layer named `{layer_name}`")))?;
        let slot = match (layer, field) {
            (Layer::Conv2d(c), "kernels") => &mut c.kernels,
            (Layer::Conv2d(c), "bias") => &mut c.bias,
            (Layer::Conv3d(c), "kernels") => &mut c.kernels,
            (Layer::Conv3d(c), "bias") => &mut c.bias,
            (Layer::BatchNorm(b), "gamma") => &mut b.gamma,
            (Layer::BatchNorm(b), "beta") => &mut b.beta,
            (Layer::BatchNorm(b), "running_mean") => &mut b.running_mean,
            (Layer::BatchNorm(b), "running_var") => &mut b.running_var,
            (Layer::Linear(l), "weight") => &mut l.weight,
            (Layer::Linear(l), "bias") => &mut l.bias,
            _ => return Err(Error::invalid(format!("no state tensor named `{name}`"))),
        };
        if slot.dims() != value.dims() {
            return Err(Error::ShapeMismatch {
                expected: slot.dims().to_vec(),
                actual: value.dims().to_vec(),
            });
        }
        *slot = value;
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.numel()).sum()
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let dims = batch.dims();
        if dims.len() != self.plan.input.len() + 1 || dims[1..] != self.plan.input[..] {
            let mut expected = vec![dims.first().copied().unwrap_or(1)];
            expected.extend(&self.plan.input);
            return Err(Error::ShapeMismatch {
                expected,
                actual: dims.to_vec(),
            });
        }
        Ok(dims[0])
    }

    /// Inference-mode forward pass: one prediction per sample, shape `[N]`.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        let n = self.check_batch(batch)?;
        let mut x = batch.clone();
        for (_, layer) in &self.layers {
            x = match layer {
                Layer::Conv2d(c) => c.forward(&x)?.0,
                Layer::Conv3d(c) => c.forward(&x)?.0,
                Layer::BatchNorm(b) => b.forward_inference(&x)?,
                Layer::Relu => relu_forward(&x),
                Layer::MaxPool(p) => p.forward(&x)?.0,
                Layer::Flatten => {
                    let len = x.numel() / n;
                    x.reshape(&[n, len])?
                }
                Layer::Linear(l) => l.forward(&x)?.0,
            };
        }
        x.reshape(&[n])
    }

    /// Training-mode forward pass (batch statistics in batch norm). Running
    /// statistics are untouched until [`Network::update_running_stats`].
    pub fn forward_train(&self, batch: &Tensor) -> Result<(Tensor, ForwardCache)> {
        let n = self.check_batch(batch)?;
        let mut x = batch.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for (_, layer) in &self.layers {
            let (y, cache) = match layer {
                Layer::Conv2d(c) => {
                    let (y, cache) = c.forward(&x)?;
                    (y, LayerCache::Conv(cache))
                }
                Layer::Conv3d(c) => {
                    let (y, cache) = c.forward(&x)?;
                    (y, LayerCache::Conv(cache))
                }
                Layer::BatchNorm(b) => {
                    let (y, cache) = b.forward_training(&x)?;
                    (y, LayerCache::BatchNorm(cache))
                }
                Layer::Relu => (relu_forward(&x), LayerCache::Relu(x)),
                Layer::MaxPool(p) => {
                    let (y, cache) = p.forward(&x)?;
                    (y, LayerCache::Pool(cache))
                }
                Layer::Flatten => {
                    let dims = x.dims().to_vec();
                    let len = x.numel() / n;
                    x.reshape_in_place(&[n, len])?;
                    (x, LayerCache::Flatten(dims))
                }
                Layer::Linear(l) => {
                    let (y, cache) = l.forward(&x)?;
                    (y, LayerCache::Linear(cache))
                }
            };
            caches.push(cache);
            x = y;
        }
        Ok((
            x.reshape(&[n])?,
            ForwardCache {
                layers: caches,
                batch: n,
            },
        ))
    }

    pub fn forward(&self, batch: &Tensor, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::Inference => self.predict(batch),
            Mode::Training => Ok(self.forward_train(batch)?.0),
        }
    }

    /// Gradients of a scalar loss given `d loss / d prediction` (shape `[N]`),
    /// aligned with [`Network::parameters`].
    pub fn backward(&self, cache: &ForwardCache, grad_pred: &Tensor) -> Result<Vec<Tensor>> {
        if cache.layers.len() != self.layers.len() || grad_pred.dims() != [cache.batch] {
            return Err(Error::ShapeMismatch {
                expected: vec![cache.batch],
                actual: grad_pred.dims().to_vec(),
            });
        }
        let mut grad = grad_pred.reshape(&[cache.batch, 1])?;
        let mut per_layer: Vec<Vec<Tensor>> = Vec::with_capacity(self.layers.len());
        for ((_, layer), lc) in self.layers.iter().zip(&cache.layers).rev() {
            let (next, params) = match (layer, lc) {
                (Layer::Conv2d(c), LayerCache::Conv(cc)) => {
                    let g = c.backward(cc, &grad)?;
                    (g.input, vec![g.kernels, g.bias])
                }
                (Layer::Conv3d(c), LayerCache::Conv(cc)) => {
                    let g = c.backward(cc, &grad)?;
                    (g.input, vec![g.kernels, g.bias])
                }
                (Layer::BatchNorm(b), LayerCache::BatchNorm(bc)) => {
                    let g = b.backward(bc, &grad)?;
                    (g.input, vec![g.gamma, g.beta])
                }
                (Layer::Relu, LayerCache::Relu(input)) => (relu_backward(input, &grad)?, vec![]),
                (Layer::MaxPool(p), LayerCache::Pool(pc)) => (p.backward(pc, &grad)?, vec![]),
                (Layer::Flatten, LayerCache::Flatten(dims)) => (grad.reshape(dims)?, vec![]),
                (Layer::Linear(l), LayerCache::Linear(lc)) => {
                    let g = l.backward(lc, &grad)?;
                    (g.input, vec![g.weight, g.bias])
                }
                _ => return Err(Error::invalid("forward cache does not match network layers")),
            };
            grad = next;
            per_layer.push(params);
        }
        Ok(per_layer.into_iter().rev().flatten().collect())
    }

    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        for ((_, layer), lc) in self.layers.iter_mut().zip(&cache.layers) {
            if let (Layer::BatchNorm(b), LayerCache::BatchNorm(bc)) = (layer, lc) {
                b.update_running_stats(bc);
            }
        }
    }
}
