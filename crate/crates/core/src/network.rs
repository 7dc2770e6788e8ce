//! Feed-forward network with layer-wise reverse-mode differentiation.
//!
//! A model is an ordered list of layers. `forward` caches each layer's input;
//! `backward` walks the layers in reverse, producing parameter gradients in the
//! same order as [`NetworkModel::params`] plus the gradient with respect to the
//! network input.
//!
//! The dimension augmentation block maps a `d`-wide feature onto `C-1`
//! coordinates through `dense(d, C-1) -> ReLU -> dense(C-1, C-1)`. Without the
//! ReLU the block is affine and cannot raise the rank of its input.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, DscError, Result};
use crate::matrix::{axpy, check_width, Matrix};
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Serializable layer descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        input: usize,
        output: usize,
    },
    Relu,
    Dam {
        input: usize,
        classes: usize,
        #[serde(default = "default_true")]
        activation: bool,
    },
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    weight: Matrix<T>,
    bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(output, input),
            bias: vec![T::zero(); output],
        }
    }

    /// `weight` is `(output, input)`.
    pub fn from_parts(weight: Matrix<T>, bias: Vec<T>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(shape_err("dense bias", weight.rows(), bias.len()));
        }
        Ok(Self { weight, bias })
    }

    pub fn input(&self) -> usize {
        self.weight.cols()
    }

    pub fn output(&self) -> usize {
        self.weight.rows()
    }

    pub fn weight(&self) -> &Matrix<T> {
        &self.weight
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    fn init(&mut self, rng: &mut ChaCha8Rng) {
        let scale = 1.0 / (self.input().max(1) as f64).sqrt();
        for w in self.weight.as_mut_slice() {
            let z: f64 = StandardNormal.sample(rng);
            *w = T::of(z * scale);
        }
        self.bias.fill(T::zero());
    }

    fn forward(&self, x: &Matrix<T>) -> Matrix<T> {
        let mut y = x
            .matmul_transposed(&self.weight)
            .expect("dense input width checked by caller");
        for i in 0..y.rows() {
            for (v, &b) in y.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        y
    }

    /// Accumulates `dW = G^T X`, `db = sum_rows G`; returns `G W`.
    fn backward(&self, x: &Matrix<T>, gy: &Matrix<T>, gw: &mut [T], gb: &mut [T]) -> Matrix<T> {
        let (out, inp) = (self.output(), self.input());
        let mut gx = Matrix::zeros(x.rows(), inp);
        for i in 0..x.rows() {
            let xi = x.row(i);
            let gyi = gy.row(i);
            for o in 0..out {
                let g = gyi[o];
                if g == T::zero() {
                    continue;
                }
                gb[o] += g;
                axpy(g, xi, &mut gw[o * inp..(o + 1) * inp]);
                axpy(g, self.weight.row(o), gx.row_mut(i));
            }
        }
        gx
    }
}

fn relu<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes gradient where the input was strictly positive.
fn relu_backward<T: Scalar>(x: &Matrix<T>, gy: &Matrix<T>) -> Matrix<T> {
    let mut gx = gy.clone();
    for (g, &v) in gx.as_mut_slice().iter_mut().zip(x.as_slice()) {
        if !(v > T::zero()) {
            *g = T::zero();
        }
    }
    gx
}

#[derive(Debug, Clone, PartialEq)]
pub struct DamBlock<T> {
    fc1: Dense<T>,
    fc2: Dense<T>,
    activation: bool,
}

impl<T: Scalar> DamBlock<T> {
    pub fn new(input: usize, num_classes: usize, activation: bool) -> Self {
        let width = num_classes.saturating_sub(1);
        Self {
            fc1: Dense::zeros(input, width),
            fc2: Dense::zeros(width, width),
            activation,
        }
    }

    pub fn fc1(&self) -> &Dense<T> {
        &self.fc1
    }

    pub fn fc2(&self) -> &Dense<T> {
        &self.fc2
    }

    pub fn has_activation(&self) -> bool {
        self.activation
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Dense(Dense<T>),
    Relu,
    Dam(DamBlock<T>),
}

impl<T: Scalar> Layer<T> {
    fn from_spec(spec: &LayerSpec) -> Self {
        match *spec {
            LayerSpec::Dense { input, output } => Layer::Dense(Dense::zeros(input, output)),
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Dam {
                input,
                classes,
                activation,
            } => Layer::Dam(DamBlock::new(input, classes, activation)),
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense(d) => LayerSpec::Dense {
                input: d.input(),
                output: d.output(),
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::Dam(b) => LayerSpec::Dam {
                input: b.fc1.input(),
                classes: b.fc1.output() + 1,
                activation: b.activation,
            },
        }
    }

    fn dense_parts(&self) -> Vec<&Dense<T>> {
        match self {
            Layer::Dense(d) => vec![d],
            Layer::Relu => vec![],
            Layer::Dam(b) => vec![&b.fc1, &b.fc2],
        }
    }

    fn dense_parts_mut(&mut self) -> Vec<&mut Dense<T>> {
        match self {
            Layer::Dense(d) => vec![d],
            Layer::Relu => vec![],
            Layer::Dam(b) => vec![&mut b.fc1, &mut b.fc2],
        }
    }

    fn init(&mut self, seed: u64, index: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        for d in self.dense_parts_mut() {
            d.init(&mut rng);
        }
    }
}

/// Per-layer forward state needed by `backward`.
#[derive(Debug, Clone)]
enum LayerCache<T> {
    Dense { input: Matrix<T> },
    Relu { input: Matrix<T> },
    Dam { input: Matrix<T>, hidden: Matrix<T> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    /// One buffer per parameter tensor, ordered as [`NetworkModel::params`].
    pub params: Vec<Vec<T>>,
    pub input: Matrix<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn is_finite(&self) -> bool {
        self.input.is_finite() && self.params.iter().flatten().all(|g| g.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct NetworkModel<T> {
    layers: Vec<Layer<T>>,
    seed: u64,
    cache: Option<Vec<LayerCache<T>>>,
}

impl<T: Scalar> PartialEq for NetworkModel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.seed == other.seed
    }
}

impl<T: Scalar> NetworkModel<T> {
    /// Builds the layer graph and initializes parameters from `seed`.
    pub fn new(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        check_chain(specs)?;
        let layers = specs.iter().map(Layer::from_spec).collect();
        let mut model = Self {
            layers,
            seed,
            cache: None,
        };
        model.reinit(seed);
        Ok(model)
    }

    /// Dense layers of the given widths with a ReLU after every hidden layer.
    pub fn mlp(widths: &[usize], seed: u64) -> Result<Self> {
        Self::new(&mlp_specs(widths)?, seed)
    }

    /// Builds a model from explicit layers without touching their parameters.
    pub fn from_layers(layers: Vec<Layer<T>>, seed: u64) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(Layer::spec).collect();
        check_chain(&specs)?;
        Ok(Self {
            layers,
            seed,
            cache: None,
        })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        chain_widths(&self.layer_specs()).0
    }

    pub fn output_dim(&self) -> usize {
        chain_widths(&self.layer_specs()).1
    }

    /// Re-draws all parameters: weights `N(0, 1/fan_in)`, biases zero.
    pub fn init_parameters(mut self, seed: u64) -> Self {
        self.reinit(seed);
        self
    }

    fn reinit(&mut self, seed: u64) {
        self.seed = seed;
        self.cache = None;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.init(seed, i);
        }
    }

    /// Appends a dimension augmentation block mapping to `num_classes - 1` outputs.
    pub fn attach_dam(self, num_classes: usize) -> Self {
        self.attach_dam_with(num_classes, true)
    }

    /// `activation = false` removes the ReLU between the two dense layers.
    pub fn attach_dam_with(mut self, num_classes: usize, activation: bool) -> Self {
        let width = self.output_dim();
        if num_classes.saturating_sub(1) <= width {
            log::warn!(
                "attaching a dimension augmentation block to a {width}-wide output for {num_classes} classes; the block does not raise the dimension"
            );
        }
        let mut layer = Layer::Dam(DamBlock::new(width, num_classes, activation));
        layer.init(self.seed, self.layers.len());
        self.layers.push(layer);
        self.cache = None;
        self
    }

    /// Runs the network and caches what `backward` needs.
    pub fn forward(&mut self, inputs: &Matrix<T>) -> Result<Matrix<T>> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let out = self.run(inputs, Some(&mut caches))?;
        self.cache = Some(caches);
        Ok(out)
    }

    /// Forward pass without caching; safe on a shared model.
    pub fn predict(&self, inputs: &Matrix<T>) -> Result<Matrix<T>> {
        self.run(inputs, None)
    }

    /// Inputs of every ReLU in evaluation order, including the one inside a
    /// dimension augmentation block.
    pub fn relu_inputs(&self, inputs: &Matrix<T>) -> Result<Vec<Matrix<T>>> {
        let mut caches = Vec::with_capacity(self.layers.len());
        self.run(inputs, Some(&mut caches))?;
        Ok(self
            .layers
            .iter()
            .zip(caches)
            .filter_map(|(layer, cache)| match (layer, cache) {
                (Layer::Relu, LayerCache::Relu { input }) => Some(input),
                (Layer::Dam(b), LayerCache::Dam { hidden, .. }) if b.activation => Some(hidden),
                _ => None,
            })
            .collect())
    }

    fn run(&self, inputs: &Matrix<T>,mut caches: Option<&mut Vec<LayerCache<T>>>) -> Result<Matrix<T>> {
        let mut x = inputs.clone();
        let mut width = self.input_dim();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Layer::Dense(_) | Layer::Dam(_) = layer {
                check_width(&x, width, &format!("layer {i} ({})", layer_name(layer)))?;
            }
            let y = match layer {
                Layer::Dense(d) => d.forward(&x),
                Layer::Relu => relu(&x),
                Layer::Dam(b) => {
                    let h = b.fc1.forward(&x);
                    let a = if b.activation { relu(&h) } else { h.clone() };
                    let y = b.fc2.forward(&a);
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(LayerCache::Dam {
                            input: std::mem::replace(&mut x, Matrix::zeros(0, 0)),
                            hidden: h,
                        });
                    }
                    y
                }
            };
            if let Some(c) = caches.as_deref_mut() {
                match layer {
                    Layer::Dense(_) => c.push(LayerCache::Dense { input: x }),
                    Layer::Relu => c.push(LayerCache::Relu { input: x }),
                    Layer::Dam(_) => {}
                }
            }
            width = y.cols();
            x = y;
        }
        Ok(x)
    }

    /// Reverse pass for the most recent `forward`. Consumes the cache.
    pub fn backward(&mut self, output_grad: &Matrix<T>) -> Result<Gradients<T>> {
        let caches = self
            .cache
            .take()
            .ok_or_else(|| DscError::State("backward called without a preceding forward".into()))?;
        let n = match caches.first() {
            Some(LayerCache::Dense { input } | LayerCache::Relu { input } | LayerCache::Dam { input, .. }) => input.rows(),
            None => output_grad.rows(),
        };
        if output_grad.rows() != n {
            return Err(shape_err("output gradient rows", n, output_grad.rows()));
        }
        check_width(output_grad, self.output_dim(), "output gradient")?;

        let mut param_grads: Vec<Vec<T>> = Vec::new();
        let mut g = output_grad.clone();
        for (layer, cache) in self.layers.iter().zip(caches.iter()).rev() {
            g = match (layer, cache) {
                (Layer::Dense(d), LayerCache::Dense { input }) => {
                    let mut gw = vec![T::zero(); d.weight.as_slice().len()];
                    let mut gb = vec![T::zero(); d.bias.len()];
                    let gx = d.backward(input, &g, &mut gw, &mut gb);
                    param_grads.push(gb);
                    param_grads.push(gw);
                    gx
                }
                (Layer::Relu, LayerCache::Relu { input }) => relu_backward(input, &g),
                (Layer::Dam(b), LayerCache::Dam { input, hidden }) => {
                    let a = if b.activation { relu(hidden) } else { hidden.clone() };
                    let mut gw2 = vec![T::zero(); b.fc2.weight.as_slice().len()];
                    let mut gb2 = vec![T::zero(); b.fc2.bias.len()];
                    let ga = b.fc2.backward(&a, &g, &mut gw2, &mut gb2);
                    let gh = if b.activation { relu_backward(hidden, &ga) } else { ga };
                    let mut gw1 = vec![T::zero(); b.fc1.weight.as_slice().len()];
                    let mut gb1 = vec![T::zero(); b.fc1.bias.len()];
                    let gx = b.fc1.backward(input, &gh, &mut gw1, &mut gb1);
                    param_grads.push(gb2);
                    param_grads.push(gw2);
                    param_grads.push(gb1);
                    param_grads.push(gw1);
                    gx
                }
                _ => return Err(DscError::State("forward cache does not match layers".into())),
            };
        }
        param_grads.reverse();
        Ok(Gradients {
            params: param_grads,
            input: g,
        })
    }

    /// Parameter tensors in order: for each dense part, weight then bias.
    pub fn params(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(Layer::dense_parts)
            .flat_map(|d| [d.weight.as_slice(), d.bias.as_slice()])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(Layer::dense_parts_mut)
            .flat_map(|d| [d.weight.as_mut_slice(), d.bias.as_mut_slice()])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let params = self
            .layers
            .iter()
            .map(|l| {
                l.dense_parts()
                    .into_iter()
                    .flat_map(|d| d.weight.as_slice().iter().chain(d.bias.iter()))
                    .map(|x| x.as_f64())
                    .collect()
            })
            .collect();
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            layers: self.layer_specs(),
            seed: self.seed,
            params,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(DscError::Checkpoint(format!(
                "unsupported format_version {}",
                ckpt.format_version
            )));
        }
        check_chain(&ckpt.layers).map_err(|e| DscError::Checkpoint(e.to_string()))?;
        if ckpt.params.len() != ckpt.layers.len() {
            return Err(DscError::Checkpoint(format!(
                "{} parameter arrays for {} layers",
                ckpt.params.len(),
                ckpt.layers.len()
            )));
        }
        let mut layers: Vec<Layer<T>> = ckpt.layers.iter().map(Layer::from_spec).collect();
        for (i, (layer, flat)) in layers.iter_mut().zip(&ckpt.params).enumerate() {
            let mut rest = flat.as_slice();
            for d in layer.dense_parts_mut() {
                for dst in [d.weight.as_mut_slice(), d.bias.as_mut_slice()] {
                    if rest.len() < dst.len() {
                        return Err(DscError::Checkpoint(format!("layer {i}: parameter array too short")));
                    }
                    let (head, tail) = rest.split_at(dst.len());
                    for (p, &v) in dst.iter_mut().zip(head) {
                        *p = T::of(v);
                    }
                    rest = tail;
                }
            }
            if !rest.is_empty() {
                return Err(DscError::Checkpoint(format!("layer {i}: parameter array too long")));
            }
        }
        Ok(Self {
            layers,
            seed: ckpt.seed,
            cache: None,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint())?;
        crate::io::write_atomic(path.as_ref(), json.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| DscError::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(&ckpt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
    /// One flat row-major array per layer; dense parts contribute weight then bias.
    pub params: Vec<Vec<f64>>,
}

fn layer_name<T>(layer: &Layer<T>) -> &'static str {
    match layer {
        Layer::Dense(_) => "dense",
        Layer::Relu => "relu",
        Layer::Dam(_) => "dam",
    }
}

/// Layer descriptors for `widths[0] -> ... -> widths[last]`.
pub fn mlp_specs(widths: &[usize]) -> Result<Vec<LayerSpec>> {
    if widths.len() < 2 {
        return Err(DscError::InvalidArgument(
            "an MLP needs at least an input and an output width".into(),
        ));
    }
    let mut specs = Vec::new();
    for (i, pair) in widths.windows(2).enumerate() {
        specs.push(LayerSpec::Dense {
            input: pair[0],
            output: pair[1],
        });
        if i + 2 < widths.len() {
            specs.push(LayerSpec::Relu);
        }
    }
    Ok(specs)
}

/// (input width, output width) assuming the chain is valid.
fn chain_widths(specs: &[LayerSpec]) -> (usize, usize) {
    let mut input = None;
    let mut width = 0;
    for s in specs {
        match *s {
            LayerSpec::Dense { input: i, output } => {
                input.get_or_insert(i);
                width = output;
            }
            LayerSpec::Dam { input: i, classes, .. } => {
                input.get_or_insert(i);
                width = classes.saturating_sub(1);
            }
            LayerSpec::Relu => {}
        }
    }
    (input.unwrap_or(0), width)
}

fn check_chain(specs: &[LayerSpec]) -> Result<()> {
    let mut width: Option<usize> = None;
    for (i, s) in specs.iter().enumerate() {
        let (input, output) = match *s {
            LayerSpec::Dense { input, output } => (input, output),
            LayerSpec::Dam { input, classes, .. } => {
                if classes < 2 {
                    return Err(DscError::InvalidArgument(format!(
                        "layer {i}: dimension augmentation needs at least 2 classes"
                    )));
                }
                (input, classes - 1)
            }
            LayerSpec::Relu => {
                if width.is_none() {
                    return Err(DscError::InvalidArgument(format!(
                        "layer {i}: relu before any dense layer"
                    )));
                }
                continue;
            }
        };
        if input == 0 || output == 0 {
            return Err(DscError::InvalidArgument(format!("layer {i}: zero width")));
        }
        if let Some(w) = width {
            if w != input {
                return Err(shape_err(format!("layer {i} input"), w, input));
            }
        }
        width = Some(output);
    }
    if width.is_none() {
        return Err(DscError::InvalidArgument("model has no dense layer".into()));
    }
    Ok(())
}
