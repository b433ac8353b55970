//! Dense feedforward networks with manual backpropagation.
//!
//! Every layer is `z = W x + b`. Hidden layers apply ReLU, the last layer applies
//! either identity (critic) or tanh (actor). Weights are row-major `(out, in)`.
//!
//! Batched inputs are flat row-major buffers of shape `(batch, dim)`. The batched
//! kernels go through `matrixmultiply`; the single-sample entry points are the
//! batch path with `batch = 1`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Identity,
    Tanh,
}

/// One affine layer. `weights` has shape `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.biases.iter())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.biases.iter_mut())
    }
}

/// Parameters of a multilayer perceptron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    layers: Vec<Dense>,
    output: OutputActivation,
}

/// Parameter-shaped buffer holding derivatives (or optimizer moments).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(params: &Mlp) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| Dense::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(Dense::values)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(Dense::values_mut)
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    fn congruent_with(&self, params: &Mlp) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(g, p)| g.in_dim == p.in_dim && g.out_dim == p.out_dim)
    }
}

/// Activations recorded by a forward pass: `activations[0]` is the input batch,
/// `activations[l + 1]` is the post-activation output of layer `l`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    layer_sizes: Vec<usize>,
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn into_output(mut self) -> Vec<f64> {
        self.activations.pop().unwrap_or_default()
    }
}

/// Which derivatives a backward pass should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackwardMode {
    pub params: bool,
    pub input: bool,
}

impl BackwardMode {
    pub const FULL: Self = Self {
        params: true,
        input: true,
    };
    pub const PARAMS: Self = Self {
        params: true,
        input: false,
    };
    pub const INPUT: Self = Self {
        params: false,
        input: true,
    };
}

impl Mlp {
    /// Builds a network with weights and biases drawn uniformly from `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        output: OutputActivation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut mlp = Self::zeros(layer_sizes, output)?;
        for layer in &mut mlp.layers {
            let bound = 1.0 / (layer.in_dim as f64).sqrt();
            for v in layer.values_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(mlp)
    }

    pub fn zeros(layer_sizes: &[usize], output: OutputActivation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidArgument(
                "a network needs at least an input and an output size".into(),
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::InvalidArgument("layer sizes must be positive".into()));
        }
        let layers = layer_sizes
            .windows(2)
            .map(|w| Dense::zeros(w[0], w[1]))
            .collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            layers,
            output,
        })
    }

    /// Assembles a network from explicit layers, validating the shape invariants.
    pub fn from_layers(layers: Vec<Dense>, output: OutputActivation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("no layers".into()));
        }
        let mut layer_sizes = vec![layers[0].in_dim];
        for layer in &layers {
            check_len("layer input", *layer_sizes.last().unwrap(), layer.in_dim)?;
            check_len("layer weights", layer.in_dim * layer.out_dim, layer.weights.len())?;
            check_len("layer biases", layer.out_dim, layer.biases.len())?;
            if layer.in_dim == 0 || layer.out_dim == 0 {
                return Err(Error::InvalidArgument("layer sizes must be positive".into()));
            }
            layer_sizes.push(layer.out_dim);
        }
        let mlp = Self {
            layer_sizes,
            layers,
            output,
        };
        if !mlp.is_finite() {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(mlp)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(Dense::values)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(Dense::values_mut)
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.layer_sizes == other.layer_sizes && self.output == other.output
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let cache = self.forward_batch(input, 1)?;
        Ok((cache.output().to_vec(), cache))
    }

    /// Output only; skips nothing but hands back the last activation buffer.
    pub fn predict_batch(&self, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
        Ok(self.forward_batch(inputs, batch)?.into_output())
    }

    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<ForwardCache> {
        check_len("network input", batch * self.input_dim(), inputs.len())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(inputs.to_vec());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let x = activations.last().unwrap();
            let mut z = Vec::with_capacity(batch * layer.out_dim);
            for _ in 0..batch {
                z.extend_from_slice(&layer.biases);
            }
            // Z (batch x out) += X (batch x in) * W^T (in x out)
            gemm(
                batch,
                layer.in_dim,
                layer.out_dim,
                (x, layer.in_dim as isize, 1),
                (&layer.weights, 1, layer.in_dim as isize),
                (&mut z, layer.out_dim as isize, 1),
                1.0,
            );
            if l < last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            } else if self.output == OutputActivation::Tanh {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(z);
        }
        Ok(ForwardCache {
            batch,
            layer_sizes: self.layer_sizes.clone(),
            activations,
        })
    }

    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_gradient: &[f64],
    ) -> Result<(Gradients, Vec<f64>)> {
        let (grads, input_grad) = self.backward_batch(cache, output_gradient, BackwardMode::FULL)?;
        Ok((grads.expect("params requested"), input_grad.expect("input requested")))
    }

    /// Reverse-mode derivatives of `sum_b output[b] . output_gradient[b]`.
    ///
    /// Parameter gradients are summed over the batch. The input gradient has the
    /// same `(batch, input_dim)` layout as the forward input.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        output_gradient: &[f64],
        mode: BackwardMode,
    ) -> Result<(Option<Gradients>, Option<Vec<f64>>)> {
        if cache.layer_sizes != self.layer_sizes
            || cache.activations.len() != self.layers.len() + 1
        {
            return Err(Error::InvalidArgument(
                "forward cache was produced by a network of a different shape".into(),
            ));
        }
        let batch = cache.batch;
        check_len("output gradient", batch * self.output_dim(), output_gradient.len())?;

        let last = self.layers.len() - 1;
        let mut grads = mode.params.then(|| Gradients::zeros_like(self));
        let mut delta = output_gradient.to_vec();
        if self.output == OutputActivation::Tanh {
            for (d, y) in delta.iter_mut().zip(cache.output()) {
                *d *= 1.0 - y * y;
            }
        }

        for l in (0..=last).rev() {
            let layer = &self.layers[l];
            let x = &cache.activations[l];
            if let Some(grads) = grads.as_mut() {
                let g = &mut grads.layers[l];
                // dW (out x in) = dZ^T (out x batch) * X (batch x in)
                gemm(
                    layer.out_dim,
                    batch,
                    layer.in_dim,
                    (&delta, 1, layer.out_dim as isize),
                    (x, layer.in_dim as isize, 1),
                    (&mut g.weights, layer.in_dim as isize, 1),
                    0.0,
                );
                for row in delta.chunks_exact(layer.out_dim) {
                    for (gb, d) in g.biases.iter_mut().zip(row) {
                        *gb += d;
                    }
                }
            }
            if l == 0 && !mode.input {
                break;
            }
            // dX (batch x in) = dZ (batch x out) * W (out x in)
            let mut dx = vec![0.0; batch * layer.in_dim];
            gemm(
                batch,
                layer.out_dim,
                layer.in_dim,
                (&delta, layer.out_dim as isize, 1),
                (&layer.weights, layer.in_dim as isize, 1),
                (&mut dx, layer.in_dim as isize, 1),
                0.0,
            );
            if l > 0 {
                for (d, a) in dx.iter_mut().zip(x) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            delta = dx;
        }
        let input_grad = mode.input.then_some(delta);
        Ok((grads, input_grad))
    }
}

/// `C = A * B + beta * C` for row/column-strided f64 matrices (`m x k` times `k x n`).
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: (&[f64], isize, isize),
    b: (&[f64], isize, isize),
    c: (&mut [f64], isize, isize),
    beta: f64,
) {
    let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
        }
    };
    assert!(a.0.len() >= span(m, k, a.1, a.2));
    assert!(b.0.len() >= span(k, n, b.1, b.2));
    assert!(c.0.len() >= span(m, n, c.1, c.2));
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            beta,
            c.0.as_mut_ptr(),
            c.1,
            c.2,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Gradients,
    pub second_moment: Gradients,
    pub step_count: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(params: &Mlp, hyper: AdamHyper) -> Self {
        Self {
            first_moment: Gradients::zeros_like(params),
            second_moment: Gradients::zeros_like(params),
            step_count: 0,
            hyper,
        }
    }

    /// One bias-corrected Adam step. A gradient containing any non-finite value
    /// is rejected before anything is touched.
    pub fn step(&mut self, params: &mut Mlp, grads: &Gradients, learning_rate: f64) -> Result<()> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if !grads.congruent_with(params)
            || !self.first_moment.congruent_with(params)
            || !self.second_moment.congruent_with(params)
        {
            return Err(Error::InvalidArgument(
                "gradient / optimizer state shape does not match the parameters".into(),
            ));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        let AdamHyper { beta1, beta2, eps } = self.hyper;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let moments = self
            .first_moment
            .values_mut()
            .zip(self.second_moment.values_mut());
        for ((p, g), (m, v)) in params.values_mut().zip(grads.values()).zip(moments) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// `target <- c * target + (1 - c) * main`, elementwise.
pub fn polyak_update(target: &mut Mlp, main: &Mlp, averaging_coefficient: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&averaging_coefficient) {
        return Err(Error::InvalidArgument(format!(
            "averaging coefficient {averaging_coefficient} outside [0, 1]"
        )));
    }
    if !target.same_shape(main) {
        return Err(Error::InvalidArgument(
            "target and main networks differ in shape".into(),
        ));
    }
    let c = averaging_coefficient;
    for (t, m) in target.values_mut().zip(main.values()) {
        *t = c * *t + (1.0 - c) * m;
    }
    Ok(())
}
