//! Small convolutional Q-network with hand-written backpropagation.
//!
//! Layout conventions: activations are `batch x (channels * height * width)`
//! row-major; conv weights are `filters x (in_channels * k * k)`; dense
//! weights are `out x in`. Every hidden layer is followed by a ReLU; the
//! output head is linear.

mod optim;
mod scalar;
mod weights;

pub mod gradcheck;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::NUM_ACTIONS;
use crate::error::{Error, Result};

pub use optim::{Optimizer, OptimizerKind};
pub use scalar::Scalar;
pub use weights::{load_params, load_weights, load_weights_expecting, save_params, save_weights, spec_hash, WEIGHT_MAGIC, WEIGHT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub const fn new(filters: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self { filters, kernel, stride, padding }
    }

    /// Output side length for an input side `n`, if positive.
    pub fn output_side(&self, n: usize) -> Option<usize> {
        let padded = n + 2 * self.padding;
        if self.stride == 0 || self.kernel == 0 || padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }
}

/// Architecture: conv stack, then dense layers `fc[0] -> fc[1] -> ... ->
/// output`, where `fc[0]` is the flattened conv output width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `[channels, height, width]`
    pub input: [usize; 3],
    pub convs: Vec<ConvSpec>,
    pub fc: Vec<usize>,
    pub output: usize,
}

/// Six-channel 132x132 input; convs with 8, 16 and 32 filters; dense widths
/// 7200, 512, 512 and a four-way output.
pub fn paper_spec() -> NetworkSpec {
    NetworkSpec {
        input: [6, 132, 132],
        convs: vec![ConvSpec::new(8, 8, 4, 0), ConvSpec::new(16, 4, 2, 0), ConvSpec::new(32, 3, 1, 1)],
        fc: vec![7200, 512, 512],
        output: NUM_ACTIONS,
    }
}

/// Same shape family at 68x68 input, sized for CPU training.
pub fn desk_spec() -> NetworkSpec {
    NetworkSpec {
        input: [6, 68, 68],
        convs: vec![ConvSpec::new(8, 8, 4, 0), ConvSpec::new(16, 4, 2, 0), ConvSpec::new(32, 3, 1, 1)],
        fc: vec![1568, 256, 256],
        output: NUM_ACTIONS,
    }
}

impl NetworkSpec {
    /// `[c, h, w]` after each conv layer.
    pub fn conv_shapes(&self) -> Result<Vec<[usize; 3]>> {
        let mut shape = self.input;
        let mut out = Vec::with_capacity(self.convs.len());
        for (i, c) in self.convs.iter().enumerate() {
            let h = c.output_side(shape[1]);
            let w = c.output_side(shape[2]);
            match (h, w) {
                (Some(h), Some(w)) if c.filters > 0 => shape = [c.filters, h, w],
                _ => return Err(Error::Shape(format!("conv{} produces an empty output", i + 1))),
            }
            out.push(shape);
        }
        Ok(out)
    }

    pub fn flatten_width(&self) -> Result<usize> {
        let last = self.conv_shapes()?.last().copied().unwrap_or(self.input);
        Ok(last.iter().product())
    }

    pub fn input_len(&self) -> usize {
        self.input.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input.contains(&0) {
            return Err(Error::Shape("input dimensions must be positive".into()));
        }
        let flat = self.flatten_width()?;
        match self.fc.first() {
            Some(&w) if w == flat => {}
            Some(&w) => {
                return Err(Error::Shape(format!("flatten width {flat} does not match first dense width {w}")))
            }
            None => return Err(Error::Shape("at least one dense width is required".into())),
        }
        if self.fc.contains(&0) {
            return Err(Error::Shape("dense widths must be positive".into()));
        }
        if self.output != NUM_ACTIONS {
            return Err(Error::Shape(format!("output width must be {NUM_ACTIONS}, got {}", self.output)));
        }
        Ok(())
    }

    /// Resolved layer list with names `conv1.., fc1..`.
    pub fn layers(&self) -> Result<Vec<LayerGeom>> {
        self.validate()?;
        let mut layers = Vec::new();
        let mut shape = self.input;
        for (i, (c, out)) in self.convs.iter().zip(self.conv_shapes()?).enumerate() {
            layers.push(LayerGeom {
                name: format!("conv{}", i + 1),
                kind: LayerKind::Conv { conv: *c, input: shape, output: out },
                relu: true,
            });
            shape = out;
        }
        let mut widths = self.fc.clone();
        widths.push(self.output);
        for (i, pair) in widths.windows(2).enumerate() {
            layers.push(LayerGeom {
                name: format!("fc{}", i + 1),
                kind: LayerKind::Dense { inputs: pair[0], outputs: pair[1] },
                relu: i + 2 < widths.len(),
            });
        }
        Ok(layers)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv { conv: ConvSpec, input: [usize; 3], output: [usize; 3] },
    Dense { inputs: usize, outputs: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGeom {
    pub name: String,
    pub kind: LayerKind,
    pub relu: bool,
}

impl LayerGeom {
    pub fn weight_shape(&self) -> Vec<usize> {
        match &self.kind {
            LayerKind::Conv { conv, input, .. } => vec![conv.filters, input[0], conv.kernel, conv.kernel],
            LayerKind::Dense { inputs, outputs } => vec![*outputs, *inputs],
        }
    }

    pub fn bias_len(&self) -> usize {
        match &self.kind {
            LayerKind::Conv { conv, .. } => conv.filters,
            LayerKind::Dense { outputs, .. } => *outputs,
        }
    }

    fn fan_in(&self) -> usize {
        self.weight_shape()[1..].iter().product()
    }

    fn input_len(&self) -> usize {
        match &self.kind {
            LayerKind::Conv { input, .. } => input.iter().product(),
            LayerKind::Dense { inputs, .. } => *inputs,
        }
    }

    fn output_len(&self) -> usize {
        match &self.kind {
            LayerKind::Conv { output, .. } => output.iter().product(),
            LayerKind::Dense { outputs, .. } => *outputs,
        }
    }
}

/// Weights and biases of one layer. Gradients and optimizer moments reuse
/// this type.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub type Gradients<T> = Vec<LayerParams<T>>;

/// Shape-annotated dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} does not hold {} values", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![T::zero(); n] }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let w = self.data.len() / self.shape[0];
        &self.data[i * w..(i + 1) * w]
    }
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    spec: NetworkSpec,
    layers: Vec<LayerGeom>,
    params: Vec<LayerParams<T>>,
}

/// Activations saved by a forward pass for the matching backward pass.
#[derive(Debug)]
pub struct ForwardCache<T> {
    batch: usize,
    /// `acts[l]` is the input of layer `l`; the last entry is the network
    /// output.
    acts: Vec<Vec<T>>,
}

impl<T> ForwardCache<T> {
    pub fn output(&self) -> &[T] {
        self.acts.last().expect("cache has an output")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

fn im2col<T: Scalar>(x: &[T], input: [usize; 3], conv: &ConvSpec, output: [usize; 3], cols: &mut [T]) {
    let [c_in, h, w] = input;
    let [_, oh, ow] = output;
    let k = conv.kernel;
    let p = oh * ow;
    for c in 0..c_in {
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * p;
                for oy in 0..oh {
                    let iy = (oy * conv.stride + ki) as isize - conv.padding as isize;
                    let dst = &mut cols[row + oy * ow..row + (oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &x[(c * h + iy as usize) * w..(c * h + iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * conv.stride + kj) as isize - conv.padding as isize;
                        *d = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], input: [usize; 3], conv: &ConvSpec, output: [usize; 3], dx: &mut [T]) {
    let [c_in, h, w] = input;
    let [_, oh, ow] = output;
    let k = conv.kernel;
    let p = oh * ow;
    dx.fill(T::zero());
    for c in 0..c_in {
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * p;
                for oy in 0..oh {
                    let iy = (oy * conv.stride + ki) as isize - conv.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (c * h + iy as usize) * w;
                    for ox in 0..ow {
                        let ix = (ox * conv.stride + kj) as isize - conv.padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dx[base + ix as usize] += cols[row + oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Network<T> {
    /// Fan-in scaled uniform initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// for weights and biases.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let layers = spec.layers()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layers
            .iter()
            .map(|l| {
                let bound = 1.0 / (l.fan_in() as f64).sqrt();
                let mut draw = |n: usize| -> Vec<T> {
                    (0..n).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect()
                };
                let weight = draw(l.weight_shape().iter().product());
                let bias = draw(l.bias_len());
                LayerParams { weight, bias }
            })
            .collect();
        Ok(Self { spec, layers, params })
    }

    /// Network with the given parameters; shapes must match the spec.
    pub fn from_params(spec: NetworkSpec, params: Vec<LayerParams<T>>) -> Result<Self> {
        let layers = spec.layers()?;
        check_param_shapes(&layers, &params)?;
        Ok(Self { spec, layers, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerGeom] {
        &self.layers
    }

    pub fn params(&self) -> &[LayerParams<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.weight.len() + p.bias.len()).sum()
    }

    /// Flat view of every parameter in layer order (weights then bias).
    pub fn param_iter(&self) -> impl Iterator<Item = &T> {
        self.params.iter().flat_map(|p| p.weight.iter().chain(p.bias.iter()))
    }

    pub fn param_mut(&mut self, mut index: usize) -> &mut T {
        for p in &mut self.params {
            if index < p.weight.len() {
                return &mut p.weight[index];
            }
            index -= p.weight.len();
            if index < p.bias.len() {
                return &mut p.bias[index];
            }
            index -= p.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Copies parameters from a network with the same spec.
    pub fn copy_from(&mut self, other: &Network<T>) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::Shape("cannot copy parameters between different architectures".into()));
        }
        self.params.clone_from(&other.params);
        Ok(())
    }

    pub fn zero_grads(&self) -> Gradients<T> {
        self.params
            .iter()
            .map(|p| LayerParams { weight: vec![T::zero(); p.weight.len()], bias: vec![T::zero(); p.bias.len()] })
            .collect()
    }

    fn check_input(&self, input: &[T], batch: usize) -> Result<()> {
        let n = self.spec.input_len();
        if batch == 0 || input.len() != batch * n {
            return Err(Error::Shape(format!(
                "input holds {} values, expected batch {batch} x {n}",
                input.len()
            )));
        }
        Ok(())
    }

    /// Q-values for a `[B, C, H, W]` batch, shape `[B, 4]`.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let [c, h, w] = self.spec.input;
        if batch.shape.len() != 4 || batch.shape[1..] != [c, h, w] {
            return Err(Error::Shape(format!("expected input [B, {c}, {h}, {w}], got {:?}", batch.shape)));
        }
        let b = batch.shape[0];
        let out = self.forward_slice(&batch.data, b)?;
        Tensor::new(vec![b, self.spec.output], out)
    }

    /// Forward pass over a flat batch of `batch` inputs.
    pub fn forward_slice(&self, input: &[T], batch: usize) -> Result<Vec<T>> {
        let cache = self.forward_cached(input, batch)?;
        Ok(cache.acts.into_iter().last().expect("output"))
    }

    pub fn forward_cached(&self, input: &[T], batch: usize) -> Result<ForwardCache<T>> {
        self.check_input(input, batch)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        let mut cols = Vec::new();
        for (layer, params) in self.layers.iter().zip(&self.params) {
            let x = acts.last().expect("input");
            let mut y = vec![T::zero(); batch * layer.output_len()];
            match &layer.kind {
                LayerKind::Conv { conv, input, output } => {
                    let kk = input[0] * conv.kernel * conv.kernel;
                    let p = output[1] * output[2];
                    let in_len = layer.input_len();
                    let out_len = layer.output_len();
                    cols.resize(kk * p, T::zero());
                    for s in 0..batch {
                        im2col(&x[s * in_len..(s + 1) * in_len], *input, conv, *output, &mut cols);
                        let ys = &mut y[s * out_len..(s + 1) * out_len];
                        for (f, chunk) in ys.chunks_mut(p).enumerate() {
                            chunk.fill(params.bias[f]);
                        }
                        T::gemm(conv.filters, kk, p, &params.weight, kk, 1, &cols, p, 1, T::one(), ys);
                    }
                }
                LayerKind::Dense { inputs, outputs } => {
                    for row in y.chunks_mut(*outputs) {
                        row.copy_from_slice(&params.bias);
                    }
                    // y[B, out] += x[B, in] * W^T
                    T::gemm(batch, *inputs, *outputs, x, *inputs, 1, &params.weight, 1, *inputs, T::one(), &mut y);
                }
            }
            if layer.relu {
                y.iter_mut().for_each(|v| {
                    if *v < T::zero() {
                        *v = T::zero()
                    }
                });
            }
            acts.push(y);
        }
        Ok(ForwardCache { batch, acts })
    }

    /// Exact gradients of `sum(output * output_grad)` with respect to every
    /// parameter.
    pub fn backward(&self, cache: &ForwardCache<T>, output_grad: &[T]) -> Result<Gradients<T>> {
        let batch = cache.batch;
        if cache.acts.len() != self.layers.len() + 1 {
            return Err(Error::Shape("forward cache does not belong to this network".into()));
        }
        if output_grad.len() != batch * self.spec.output {
            return Err(Error::Shape(format!(
                "output gradient holds {} values, expected {batch} x {}",
                output_grad.len(),
                self.spec.output
            )));
        }
        let mut grads = self.zero_grads();
        let mut g = output_grad.to_vec();
        let mut cols = Vec::new();
        let mut dcols = Vec::new();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let params = &self.params[l];
            let x = &cache.acts[l];
            let y = &cache.acts[l + 1];
            if layer.relu {
                for (gi, &yi) in g.iter_mut().zip(y) {
                    if yi <= T::zero() {
                        *gi = T::zero();
                    }
                }
            }
            let need_dx = l > 0;
            let mut dx = if need_dx { vec![T::zero(); batch * layer.input_len()] } else { Vec::new() };
            let grad = &mut grads[l];
            match &layer.kind {
                LayerKind::Conv { conv, input, output } => {
                    let kk = input[0] * conv.kernel * conv.kernel;
                    let p = output[1] * output[2];
                    let in_len = layer.input_len();
                    let out_len = layer.output_len();
                    cols.resize(kk * p, T::zero());
                    if need_dx {
                        dcols.resize(kk * p, T::zero());
                    }
                    for s in 0..batch {
                        let gs = &g[s * out_len..(s + 1) * out_len];
                        for (f, chunk) in gs.chunks(p).enumerate() {
                            grad.bias[f] += chunk.iter().copied().sum::<T>();
                        }
                        im2col(&x[s * in_len..(s + 1) * in_len], *input, conv, *output, &mut cols);
                        // dW[F, K] += g[F, P] * cols^T
                        T::gemm(conv.filters, p, kk, gs, p, 1, &cols, 1, p, T::one(), &mut grad.weight);
                        if need_dx {
                            // dcols[K, P] = W^T * g
                            T::gemm(kk, conv.filters, p, &params.weight, 1, kk, gs, p, 1, T::zero(), &mut dcols);
                            col2im(&dcols, *input, conv, *output, &mut dx[s * in_len..(s + 1) * in_len]);
                        }
                    }
                }
                LayerKind::Dense { inputs, outputs } => {
                    for row in g.chunks(*outputs) {
                        for (b, &v) in grad.bias.iter_mut().zip(row) {
                            *b += v;
                        }
                    }
                    // dW[out, in] += g^T[out, B] * x[B, in]
                    T::gemm(*outputs, batch, *inputs, &g, 1, *outputs, x, *inputs, 1, T::one(), &mut grad.weight);
                    if need_dx {
                        // dx[B, in] = g[B, out] * W[out, in]
                        T::gemm(batch, *outputs, *inputs, &g, *outputs, 1, &params.weight, *inputs, 1, T::zero(), &mut dx);
                    }
                }
            }
            g = dx;
        }
        Ok(grads)
    }
}

fn check_param_shapes<T>(layers: &[LayerGeom], params: &[LayerParams<T>]) -> Result<()> {
    if layers.len() != params.len() {
        return Err(Error::Shape(format!("expected {} layers, got {}", layers.len(), params.len())));
    }
    for (l, p) in layers.iter().zip(params) {
        let wn: usize = l.weight_shape().iter().product();
        if p.weight.len() != wn || p.bias.len() != l.bias_len() {
            return Err(Error::Shape(format!(
                "layer `{}`: expected {} weights and {} biases, got {} and {}",
                l.name,
                wn,
                l.bias_len(),
                p.weight.len(),
                p.bias.len()
            )));
        }
    }
    Ok(())
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
