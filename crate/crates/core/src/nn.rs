//! Small feed-forward network engine.
//!
//! Parameters of a network live in one flat [`ParameterSet`]. For each layer
//! the weights come first, stored row-major as `fan_in x fan_out`, followed by
//! `fan_out` biases. Hidden layers always use ReLU; the output layer uses the
//! activation named in its [`NetSpec`].
//!
//! Every pass is batched: a batch of `b` inputs is a row-major `b x input_dim`
//! buffer. Single-sample [`forward`] is a batch of one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Softmax,
    Sigmoid,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
            Activation::Softmax => "softmax",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "linear" => Activation::Linear,
            "relu" => Activation::Relu,
            "softmax" => Activation::Softmax,
            "sigmoid" => Activation::Sigmoid,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub output_activation: Activation,
}

/// Position of one dense layer inside a flat parameter buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub offset: usize,
}

impl LayerShape {
    pub fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    pub fn bias(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.fan_in * self.fan_out;
        start..start + self.fan_out
    }

    pub fn len(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl NetSpec {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        output_dim: usize,
        output_activation: Activation,
    ) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_dims,
            output_dim,
            output_activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidSpec(format!(
                "input and output dims must be >= 1 (got {} -> {})",
                self.input_dim, self.output_dim
            )));
        }
        if let Some(i) = self.hidden_dims.iter().position(|&h| h == 0) {
            return Err(Error::InvalidSpec(format!("hidden layer {i} has width 0")));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim);
        let mut offset = 0;
        dims.windows(2)
            .map(|w| {
                let shape = LayerShape {
                    fan_in: w[0],
                    fan_out: w[1],
                    offset,
                };
                offset += shape.len();
                shape
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(LayerShape::len).sum()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            self.output_activation
        } else {
            Activation::Relu
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet<T> {
    values: Vec<T>,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn zeros(spec: &NetSpec) -> Self {
        Self {
            values: vec![T::zero(); spec.param_count()],
        }
    }

    pub fn from_vec(spec: &NetSpec, values: Vec<T>) -> Result<Self> {
        if values.len() != spec.param_count() {
            return Err(Error::dims("parameter set", spec.param_count(), values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter set"));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Borrow `(weights, bias)` of one layer.
    pub fn layer(&self, spec: &NetSpec, index: usize) -> (&[T], &[T]) {
        let shape = spec.layers()[index];
        (&self.values[shape.weights()], &self.values[shape.bias()])
    }

    /// Split into owned per-layer `(weights, bias)` pairs.
    pub fn to_layers(&self, spec: &NetSpec) -> Vec<(Vec<T>, Vec<T>)> {
        spec.layers()
            .iter()
            .map(|s| (self.values[s.weights()].to_vec(), self.values[s.bias()].to_vec()))
            .collect()
    }

    pub fn from_layers(spec: &NetSpec, layers: &[(Vec<T>, Vec<T>)]) -> Result<Self> {
        let shapes = spec.layers();
        if layers.len() != shapes.len() {
            return Err(Error::dims("layer count", shapes.len(), layers.len()));
        }
        let mut values = Vec::with_capacity(spec.param_count());
        for (shape, (w, b)) in shapes.iter().zip(layers) {
            if w.len() != shape.fan_in * shape.fan_out {
                return Err(Error::dims("layer weights", shape.fan_in * shape.fan_out, w.len()));
            }
            if b.len() != shape.fan_out {
                return Err(Error::dims("layer bias", shape.fan_out, b.len()));
            }
            values.extend_from_slice(w);
            values.extend_from_slice(b);
        }
        Self::from_vec(spec, values)
    }
}

/// Glorot-uniform weights, zero biases. Deterministic in `seed`.
pub fn init_params<T: Scalar>(spec: &NetSpec, seed: u64) -> Result<ParameterSet<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParameterSet::zeros(spec);
    for shape in spec.layers() {
        let limit = (6.0 / (shape.fan_in + shape.fan_out) as f64).sqrt();
        for w in &mut params.values[shape.weights()] {
            *w = T::lit(rng.random_range(-limit..limit));
        }
    }
    Ok(params)
}

/// Activations retained by a forward pass, consumed by [`backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    batch: usize,
    layer_dims: Vec<(usize, usize)>,
    input: Vec<T>,
    /// Per layer: pre-activation `z` and activation `a`, each `batch x fan_out`.
    pre: Vec<Vec<T>>,
    post: Vec<Vec<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Network output, `batch x output_dim`, row-major.
    pub fn output(&self) -> &[T] {
        self.post.last().expect("network has at least one layer")
    }

    pub fn input(&self) -> &[T] {
        &self.input
    }

    /// Pre-activations of layer `index`.
    pub fn pre_activation(&self, index: usize) -> &[T] {
        &self.pre[index]
    }
}

fn apply_activation<T: Scalar>(act: Activation, z: &[T], out: &mut [T], width: usize) {
    match act {
        Activation::Linear => out.copy_from_slice(z),
        Activation::Relu => {
            for (o, &x) in out.iter_mut().zip(z) {
                *o = if x > T::zero() { x } else { T::zero() };
            }
        }
        Activation::Sigmoid => {
            for (o, &x) in out.iter_mut().zip(z) {
                *o = sigmoid(x);
            }
        }
        Activation::Softmax => {
            for (orow, zrow) in out.chunks_exact_mut(width).zip(z.chunks_exact(width)) {
                softmax_into(zrow, orow);
            }
        }
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Max-shifted softmax of `logits` into `out`.
pub fn softmax_into<T: Scalar>(logits: &[T], out: &mut [T]) {
    let max = logits
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    let mut sum = T::zero();
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); logits.len()];
    softmax_into(logits, &mut out);
    out
}

pub fn forward_batch<T: Scalar>(
    params: &ParameterSet<T>,
    spec: &NetSpec,
    inputs: &[T],
    batch: usize,
) -> Result<ForwardCache<T>> {
    if params.len() != spec.param_count() {
        return Err(Error::dims("parameter set", spec.param_count(), params.len()));
    }
    if inputs.len() != batch * spec.input_dim {
        return Err(Error::dims("network input", batch * spec.input_dim, inputs.len()));
    }
    let shapes = spec.layers();
    let mut pre = Vec::with_capacity(shapes.len());
    let mut post: Vec<Vec<T>> = Vec::with_capacity(shapes.len());
    for (l, shape) in shapes.iter().enumerate() {
        let x = if l == 0 { inputs } else { &post[l - 1][..] };
        let bias = &params.values[shape.bias()];
        let mut z = Vec::with_capacity(batch * shape.fan_out);
        for _ in 0..batch {
            z.extend_from_slice(bias);
        }
        gemm(
            batch,
            shape.fan_in,
            shape.fan_out,
            MatRef::plain(x),
            MatRef::plain(&params.values[shape.weights()]),
            &mut z,
            true,
        );
        let mut a = vec![T::zero(); z.len()];
        apply_activation(spec.activation(l), &z, &mut a, shape.fan_out);
        pre.push(z);
        post.push(a);
    }
    Ok(ForwardCache {
        batch,
        layer_dims: shapes.iter().map(|s| (s.fan_in, s.fan_out)).collect(),
        input: inputs.to_vec(),
        pre,
        post,
    })
}

pub fn forward<T: Scalar>(
    params: &ParameterSet<T>,
    spec: &NetSpec,
    input: &[T],
) -> Result<(Vec<T>, ForwardCache<T>)> {
    let cache = forward_batch(params, spec, input, 1)?;
    Ok((cache.output().to_vec(), cache))
}

/// Parameter gradient (summed over the batch) and per-row input gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub params: Vec<T>,
    pub input: Vec<T>,
}

/// Reverse pass for `output_grad = dL/d(output)`, one row per cached sample.
pub fn backward<T: Scalar>(
    params: &ParameterSet<T>,
    spec: &NetSpec,
    cache: ForwardCache<T>,
    output_grad: &[T],
) -> Result<Gradients<T>> {
    let mut grads = vec![T::zero(); params.len()];
    let input = backward_into(params, spec, cache, output_grad, &mut grads)?;
    Ok(Gradients {
        params: grads,
        input,
    })
}

/// Like [`backward`] but accumulates parameter gradients into `param_grads`.
pub fn backward_into<T: Scalar>(
    params: &ParameterSet<T>,
    spec: &NetSpec,
    cache: ForwardCache<T>,
    output_grad: &[T],
    param_grads: &mut [T],
) -> Result<Vec<T>> {
    let shapes = spec.layers();
    let dims: Vec<(usize, usize)> = shapes.iter().map(|s| (s.fan_in, s.fan_out)).collect();
    if dims != cache.layer_dims {
        return Err(Error::InvalidArgument(
            "forward cache was produced by a different network shape".into(),
        ));
    }
    if params.len() != spec.param_count() {
        return Err(Error::dims("parameter set", spec.param_count(), params.len()));
    }
    if param_grads.len() != params.len() {
        return Err(Error::dims("gradient buffer", params.len(), param_grads.len()));
    }
    let batch = cache.batch;
    if output_grad.len() != batch * spec.output_dim {
        return Err(Error::dims("output gradient", batch * spec.output_dim, output_grad.len()));
    }

    let last = shapes.len() - 1;
    // dL/dz for the output layer.
    let mut dz = output_grad.to_vec();
    {
        let a = &cache.post[last];
        let z = &cache.pre[last];
        match spec.output_activation {
            Activation::Linear => {}
            Activation::Relu => {
                for (d, &x) in dz.iter_mut().zip(z) {
                    if x <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            Activation::Sigmoid => {
                for (d, &s) in dz.iter_mut().zip(a) {
                    *d *= s * (T::one() - s);
                }
            }
            Activation::Softmax => {
                let w = spec.output_dim;
                for (drow, prow) in dz.chunks_exact_mut(w).zip(a.chunks_exact(w)) {
                    let dot = drow.iter().zip(prow).fold(T::zero(), |acc, (&g, &p)| acc + g * p);
                    for (g, &p) in drow.iter_mut().zip(prow) {
                        *g = p * (*g - dot);
                    }
                }
            }
        }
    }

    for l in (0..=last).rev() {
        let shape = shapes[l];
        let x = if l == 0 { &cache.input[..] } else { &cache.post[l - 1][..] };
        // dW += x^T dz
        gemm(
            shape.fan_in,
            batch,
            shape.fan_out,
            MatRef::t(x),
            MatRef::plain(&dz),
            &mut param_grads[shape.weights()],
            true,
        );
        let db = &mut param_grads[shape.bias()];
        for row in dz.chunks_exact(shape.fan_out) {
            for (g, &d) in db.iter_mut().zip(row) {
                *g += d;
            }
        }
        // dx = dz W^T
        let mut dx = vec![T::zero(); batch * shape.fan_in];
        gemm(
            batch,
            shape.fan_out,
            shape.fan_in,
            MatRef::plain(&dz),
            MatRef::t(&params.values[shape.weights()]),
            &mut dx,
            false,
        );
        if l > 0 {
            for (d, &z) in dx.iter_mut().zip(&cache.pre[l - 1]) {
                if z <= T::zero() {
                    *d = T::zero();
                }
            }
        }
        dz = dx;
    }
    Ok(dz)
}

/// A network spec bundled with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    pub spec: NetSpec,
    pub params: ParameterSet<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(spec: NetSpec, seed: u64) -> Result<Self> {
        let params = init_params(&spec, seed)?;
        Ok(Self { spec, params })
    }

    pub fn zeros(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        let params = ParameterSet::zeros(&spec);
        Ok(Self { spec, params })
    }

    pub fn forward_batch(&self, inputs: &[T], batch: usize) -> Result<ForwardCache<T>> {
        forward_batch(&self.params, &self.spec, inputs, batch)
    }

    /// Output for a single input without keeping a cache around.
    pub fn infer(&self, input: &[T]) -> Result<Vec<T>> {
        Ok(forward(&self.params, &self.spec, input)?.0)
    }

    pub fn backward(&self, cache: ForwardCache<T>, output_grad: &[T]) -> Result<Gradients<T>> {
        backward(&self.params, &self.spec, cache, output_grad)
    }

    pub fn backward_into(
        &self,
        cache: ForwardCache<T>,
        output_grad: &[T],
        param_grads: &mut [T],
    ) -> Result<Vec<T>> {
        backward_into(&self.params, &self.spec, cache, output_grad, param_grads)
    }

    pub fn zero_grad(&self) -> Vec<T> {
        vec![T::zero(); self.params.len()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self::with_betas(len, T::lit(0.9), T::lit(0.999), T::lit(1e-8))
    }

    pub fn with_betas(len: usize, beta1: T, beta2: T, eps: T) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }
}

/// One bias-corrected Adam descent step on `params` along `grads`.
pub fn adam_step<T: Scalar>(
    params: &mut ParameterSet<T>,
    grads: &[T],
    state: &mut AdamState<T>,
    lr: T,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::dims("adam gradient", params.len(), grads.len()));
    }
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::dims("adam state", params.len(), state.m.len()));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("adam gradient"));
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    for i in 0..grads.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (T::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (T::one() - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params.values[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// `target <- tau * online + (1 - tau) * target`.
pub fn soft_update<T: Scalar>(
    target: &mut ParameterSet<T>,
    online: &ParameterSet<T>,
    tau: T,
) -> Result<()> {
    if !(tau >= T::zero() && tau <= T::one()) {
        return Err(Error::InvalidArgument(format!(
            "soft update rate must lie in [0, 1], got {tau:?}"
        )));
    }
    if target.len() != online.len() {
        return Err(Error::dims("soft update", target.len(), online.len()));
    }
    if tau == T::one() {
        target.values.copy_from_slice(&online.values);
        return Ok(());
    }
    let keep = T::one() - tau;
    for (t, &o) in target.values.iter_mut().zip(&online.values) {
        *t = tau * o + keep * *t;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(i: usize, h: &[usize], o: usize, act: Activation) -> NetSpec {
        NetSpec::new(i, h.to_vec(), o, act).unwrap()
    }

    #[test]
    fn parameter_count_follows_layout() {
        assert_eq!(spec(2, &[3], 1, Activation::Linear).param_count(), 13);
        assert_eq!(spec(5, &[32, 32, 32], 2, Activation::Linear).param_count(), 192 + 1056 * 2 + 66);
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(NetSpec::new(0, vec![3], 1, Activation::Linear).is_err());
        assert!(NetSpec::new(2, vec![3, 0], 1, Activation::Linear).is_err());
        assert!(NetSpec::new(2, vec![], 0, Activation::Linear).is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let s = spec(4, &[8, 8], 3, Activation::Softmax);
        let a: ParameterSet<f64> = init_params(&s, 7).unwrap();
        let b: ParameterSet<f64> = init_params(&s, 7).unwrap();
        let c: ParameterSet<f64> = init_params(&s, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for shape in s.layers() {
            assert!(a.as_slice()[shape.bias()].iter().all(|&b| b == 0.0));
            let limit = (6.0 / (shape.fan_in + shape.fan_out) as f64).sqrt();
            assert!(a.as_slice()[shape.weights()].iter().all(|w| w.abs() <= limit));
        }
    }

    #[test]
    fn zero_params_give_zero_output_and_uniform_softmax() {
        let lin = spec(3, &[4], 2, Activation::Linear);
        let p = ParameterSet::<f64>::zeros(&lin);
        let (out, _) = forward(&p, &lin, &[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);

        let sm = spec(3, &[4], 3, Activation::Softmax);
        let p = ParameterSet::<f64>::zeros(&sm);
        let (out, _) = forward(&p, &sm, &[1.0, -2.0, 3.0]).unwrap();
        for o in out {
            assert!((o - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn input_dimension_checked() {
        let s = spec(3, &[4], 2, Activation::Linear);
        let p = ParameterSet::<f64>::zeros(&s);
        assert!(matches!(
            forward(&p, &s, &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let s = spec(3, &[4], 2, Activation::Sigmoid);
        let p: ParameterSet<f64> = init_params(&s, 1).unwrap();
        let (_, cache) = forward(&p, &s, &[0.3, -0.2, 0.9]).unwrap();
        let g = backward(&p, &s, cache, &[0.0, 0.0]).unwrap();
        assert!(g.params.iter().all(|&x| x == 0.0));
        assert!(g.input.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_linear_layer_input_gradient_is_weight_times_grad() {
        let s = spec(3, &[], 2, Activation::Linear);
        let p: ParameterSet<f64> = init_params(&s, 3).unwrap();
        let (_, cache) = forward(&p, &s, &[1.0, 2.0, 3.0]).unwrap();
        let g_out = [0.5, -1.5];
        let g = backward(&p, &s, cache, &g_out).unwrap();
        let (w, _) = p.layer(&s, 0);
        for i in 0..3 {
            let want = w[i * 2] * g_out[0] + w[i * 2 + 1] * g_out[1];
            assert!((g.input[i] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn cache_from_other_shape_rejected() {
        let a = spec(3, &[4], 2, Activation::Linear);
        let b = spec(3, &[5], 2, Activation::Linear);
        let pa = ParameterSet::<f64>::zeros(&a);
        let pb = ParameterSet::<f64>::zeros(&b);
        let (_, cache) = forward(&pa, &a, &[0.0; 3]).unwrap();
        assert!(backward(&pb, &b, cache, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn batched_pass_matches_rows() {
        let s = spec(3, &[6, 5], 4, Activation::Softmax);
        let p: ParameterSet<f64> = init_params(&s, 11).unwrap();
        let rows = [[0.1, 0.2, -0.3], [1.0, -1.0, 0.5]];
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let gflat = [0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8];
        let cache = forward_batch(&p, &s, &flat, 2).unwrap();
        let out = cache.output().to_vec();
        let g = backward(&p, &s, cache, &gflat).unwrap();

        let mut summed = vec![0.0; p.len()];
        for (r, row) in rows.iter().enumerate() {
            let (o, c) = forward(&p, &s, row).unwrap();
            for j in 0..4 {
                assert!((o[j] - out[r * 4 + j]).abs() < 1e-14);
            }
            let gr = backward(&p, &s, c, &gflat[r * 4..r * 4 + 4]).unwrap();
            for (a, b) in summed.iter_mut().zip(&gr.params) {
                *a += b;
            }
            for j in 0..3 {
                assert!((gr.input[j] - g.input[r * 3 + j]).abs() < 1e-14);
            }
        }
        for (a, b) in summed.iter().zip(&g.params) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let s = spec(2, &[3], 1, Activation::Linear);
        let mut p: ParameterSet<f64> = init_params(&s, 5).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(p.len());
        adam_step(&mut p, &vec![0.0; 13], &mut st, 0.1).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // m_hat = g, v_hat = g^2 on step one, so the update is lr * g / (|g| + eps).
        let s = spec(1, &[], 1, Activation::Linear);
        let mut p = ParameterSet::from_vec(&s, vec![1.0f64, 0.0]).unwrap();
        let mut st = AdamState::new(2);
        adam_step(&mut p, &[1.0, 0.0], &mut st, 0.1).unwrap();
        let expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p.as_slice()[0] - expected).abs() < 1e-15);
        assert!((p.as_slice()[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let s = spec(1, &[], 1, Activation::Linear);
        let mut p = ParameterSet::<f64>::zeros(&s);
        let mut st = AdamState::new(2);
        assert!(matches!(
            adam_step(&mut p, &[f64::NAN, 0.0], &mut st, 0.1),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn soft_update_endpoints_and_rate() {
        let s = spec(2, &[3], 1, Activation::Linear);
        let online = ParameterSet::from_vec(&s, vec![1.0; 13]).unwrap();
        let mut target = ParameterSet::<f64>::zeros(&s);
        soft_update(&mut target, &online, 0.0).unwrap();
        assert!(target.as_slice().iter().all(|&x| x == 0.0));
        soft_update(&mut target, &online, 0.05).unwrap();
        assert!(target.as_slice().iter().all(|&x| (x - 0.05).abs() < 1e-15));
        soft_update(&mut target, &online, 1.0).unwrap();
        assert_eq!(target, online);
        assert!(soft_update(&mut target, &online, 1.5).is_err());
        assert!(soft_update(&mut target, &online, -0.1).is_err());
    }

    #[test]
    fn layer_round_trip() {
        let s = spec(3, &[4, 2], 5, Activation::Linear);
        let p: ParameterSet<f64> = init_params(&s, 9).unwrap();
        let back = ParameterSet::from_layers(&s, &p.to_layers(&s)).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn works_in_single_precision() {
        let s = spec(3, &[4], 3, Activation::Softmax);
        let p: ParameterSet<f32> = init_params(&s, 2).unwrap();
        let (out, _) = forward(&p, &s, &[0.1f32, 0.2, 0.3]).unwrap();
        let sum: f32 = out.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }
}
