//! Multilayer perceptron with manual backpropagation.
//!
//! Parameters live in one flat vector so optimizers, Polyak averaging and
//! checkpoints treat a network as a single slice. Per layer the layout is
//! `w_t` (`in x out`, transposed weights), `bias` (`out`), then for hidden
//! layers of a normalized network `gain` and `shift` (`out` each).

use crate::learner::kernels::{affine_forward, affine_input_grad, affine_weight_grad};
use crate::rng::RngStream;
use crate::scalar::Scalar;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct LayerSlots {
    w: usize,
    b: usize,
    gain: Option<usize>,
    shift: Option<usize>,
    input: usize,
    output: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpShape {
    sizes: Vec<usize>,
    layer_norm: bool,
    slots: Vec<LayerSlots>,
    len: usize,
}

impl MlpShape {
    /// `sizes = [in, hidden..., out]`.
    pub fn new(sizes: &[usize], layer_norm: bool) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut slots = Vec::new();
        let mut at = 0;
        let layers = sizes.len() - 1;
        for l in 0..layers {
            let (i, o) = (sizes[l], sizes[l + 1]);
            let w = at;
            at += i * o;
            let b = at;
            at += o;
            let (gain, shift) = if layer_norm && l + 1 < layers {
                let g = at;
                at += 2 * o;
                (Some(g), Some(g + o))
            } else {
                (None, None)
            };
            slots.push(LayerSlots {
                w,
                b,
                gain,
                shift,
                input: i,
                output: o,
            });
        }
        Self {
            sizes: sizes.to_vec(),
            layer_norm,
            slots,
            len: at,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layer_norm(&self) -> bool {
        self.layer_norm
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.len
    }
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct ForwardCache<T> {
    batch: usize,
    /// Input to each layer.
    inputs: Vec<Vec<T>>,
    /// Value fed to the ReLU of each hidden layer.
    pre_relu: Vec<Vec<T>>,
    xhat: Vec<Vec<T>>,
    rstd: Vec<Vec<T>>,
    pub output: Vec<T>,
}

impl<T> ForwardCache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    shape: MlpShape,
    pub params: Vec<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn zeros(shape: MlpShape) -> Self {
        let params = vec![T::zero(); shape.len];
        let mut net = Self { shape, params };
        net.reset_norms();
        net
    }

    /// Orthogonal weights with gain `sqrt(2)` on hidden layers and
    /// `final_gain` on the output layer; zero biases, unit norm gains.
    pub fn init(shape: MlpShape, final_gain: f64, rng: &mut RngStream) -> Self {
        let mut net = Self::zeros(shape);
        let layers = net.shape.slots.len();
        for l in 0..layers {
            let s = net.shape.slots[l];
            let gain = if l + 1 == layers { final_gain } else { 2f64.sqrt() };
            let w = orthogonal(s.output, s.input, gain, rng);
            // w is out x in row-major; store transposed.
            for o in 0..s.output {
                for i in 0..s.input {
                    net.params[s.w + i * s.output + o] = T::of(w[o * s.input + i]);
                }
            }
        }
        net
    }

    fn reset_norms(&mut self) {
        for s in self.shape.slots.clone() {
            if let Some(g) = s.gain {
                self.params[g..g + s.output].iter_mut().for_each(|v| *v = T::one());
            }
        }
    }

    pub fn shape(&self) -> &MlpShape {
        &self.shape
    }

    /// Zero the output layer's weights and bias.
    pub fn zero_output_layer(&mut self) {
        let s = *self.shape.slots.last().unwrap();
        self.params[s.w..s.b + s.output].iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn forward(&self, x: &[T], batch: usize) -> ForwardCache<T> {
        let layers = self.shape.slots.len();
        let eps = T::of(LAYER_NORM_EPS);
        let mut cache = ForwardCache {
            batch,
            inputs: Vec::with_capacity(layers),
            pre_relu: Vec::with_capacity(layers),
            xhat: Vec::with_capacity(layers),
            rstd: Vec::with_capacity(layers),
            output: Vec::new(),
        };
        let mut h = x.to_vec();
        debug_assert_eq!(h.len(), batch * self.shape.input_dim());
        for (l, s) in self.shape.slots.iter().enumerate() {
            let mut z = vec![T::zero(); batch * s.output];
            affine_forward(
                &h,
                &self.params[s.w..s.b],
                &self.params[s.b..s.b + s.output],
                s.input,
                s.output,
                &mut z,
            );
            cache.inputs.push(h);
            if l + 1 == layers {
                cache.output = z;
                break;
            }
            if let (Some(g), Some(sh)) = (s.gain, s.shift) {
                let gain = &self.params[g..g + s.output];
                let shift = &self.params[sh..sh + s.output];
                let n = T::of(s.output as f64);
                let mut xhat = vec![T::zero(); batch * s.output];
                let mut rstd = vec![T::zero(); batch];
                for b in 0..batch {
                    let row = &mut z[b * s.output..(b + 1) * s.output];
                    let mean = row.iter().copied().sum::<T>() / n;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
                    let r = T::one() / (var + eps).sqrt();
                    rstd[b] = r;
                    let xr = &mut xhat[b * s.output..(b + 1) * s.output];
                    for j in 0..s.output {
                        xr[j] = (row[j] - mean) * r;
                        row[j] = gain[j] * xr[j] + shift[j];
                    }
                }
                cache.xhat.push(xhat);
                cache.rstd.push(rstd);
            } else {
                cache.xhat.push(Vec::new());
                cache.rstd.push(Vec::new());
            }
            let post: Vec<T> = z.iter().map(|&v| v.max(T::zero())).collect();
            cache.pre_relu.push(z);
            h = post;
        }
        cache
    }

    /// Output only.
    pub fn predict(&self, x: &[T], batch: usize) -> Vec<T> {
        self.forward(x, batch).output
    }

    /// Backpropagate `d_out`. Parameter gradients are accumulated into
    /// `grads` when given; the input gradient is returned when requested.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        d_out: &[T],
        mut grads: Option<&mut [T]>,
        want_input_grad: bool,
    ) -> Option<Vec<T>> {
        let batch = cache.batch;
        let layers = self.shape.slots.len();
        let mut d = d_out.to_vec();
        for l in (0..layers).rev() {
            let s = self.shape.slots[l];
            if let Some(g) = grads.as_deref_mut() {
                let (gw, gb) = g[s.w..s.b + s.output].split_at_mut(s.b - s.w);
                affine_weight_grad(&cache.inputs[l], &d, s.input, s.output, gw, gb);
            }
            if l == 0 && !want_input_grad {
                return None;
            }
            let mut dh = vec![T::zero(); batch * s.input];
            affine_input_grad(&d, &self.params[s.w..s.b], s.input, s.output, &mut dh);
            if l == 0 {
                return Some(dh);
            }
            // Back through the previous hidden layer's ReLU and norm.
            let p = self.shape.slots[l - 1];
            let pre = &cache.pre_relu[l - 1];
            for (v, &z) in dh.iter_mut().zip(pre) {
                if z <= T::zero() {
                    *v = T::zero();
                }
            }
            if let (Some(gi), Some(si)) = (p.gain, p.shift) {
                let gain = &self.params[gi..gi + p.output];
                let xhat = &cache.xhat[l - 1];
                let rstd = &cache.rstd[l - 1];
                if let Some(g) = grads.as_deref_mut() {
                    for b in 0..batch {
                        let dr = &dh[b * p.output..(b + 1) * p.output];
                        let xr = &xhat[b * p.output..(b + 1) * p.output];
                        for j in 0..p.output {
                            g[gi + j] += dr[j] * xr[j];
                            g[si + j] += dr[j];
                        }
                    }
                }
                let n = T::of(p.output as f64);
                for b in 0..batch {
                    let dr = &mut dh[b * p.output..(b + 1) * p.output];
                    let xr = &xhat[b * p.output..(b + 1) * p.output];
                    let mut mean_d = T::zero();
                    let mut mean_dx = T::zero();
                    for j in 0..p.output {
                        let dx = dr[j] * gain[j];
                        mean_d += dx;
                        mean_dx += dx * xr[j];
                    }
                    mean_d /= n;
                    mean_dx /= n;
                    for j in 0..p.output {
                        let dx = dr[j] * gain[j];
                        dr[j] = rstd[b] * (dx - mean_d - xr[j] * mean_dx);
                    }
                }
            }
            d = dh;
        }
        None
    }
}

/// `rows x cols` row-major matrix with orthonormal rows or columns
/// (whichever set is smaller), scaled by `gain`.
pub fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut RngStream) -> Vec<f64> {
    let transpose = rows < cols;
    let (n_vec, dim) = if transpose { (rows, cols) } else { (cols, rows) };
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(n_vec);
    for _ in 0..n_vec {
        loop {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            for u in &vecs {
                let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-8 {
                v.iter_mut().for_each(|a| *a /= norm);
                vecs.push(v);
                break;
            }
        }
    }
    let mut out = vec![0.0; rows * cols];
    for (k, v) in vecs.iter().enumerate() {
        for (t, &x) in v.iter().enumerate() {
            let (r, c) = if transpose { (k, t) } else { (t, k) };
            out[r * cols + c] = gain * x;
        }
    }
    out
}
