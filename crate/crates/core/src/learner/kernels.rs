//! Dense kernels over row-major slices, shaped so the inner loops vectorize.

use crate::scalar::Scalar;

#[inline(always)]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dot product with eight independent accumulators.
#[inline(always)]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let chunks = n / 8;
    let mut acc = [T::zero(); 8];
    for c in 0..chunks {
        let pa = &a[c * 8..c * 8 + 8];
        let pb = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] += pa[l] * pb[l];
        }
    }
    let mut s = (acc[0] + acc[4]) + (acc[1] + acc[5]) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for i in chunks * 8..n {
        s += a[i] * b[i];
    }
    s
}

/// `out[b, :] = bias + sum_i x[b, i] * w_t[i, :]` with `w_t` stored `in x out`.
pub fn affine_forward<T: Scalar>(
    x: &[T],
    w_t: &[T],
    bias: &[T],
    in_dim: usize,
    out_dim: usize,
    out: &mut [T],
) {
    let batch = x.len() / in_dim;
    for b in 0..batch {
        let row = &mut out[b * out_dim..(b + 1) * out_dim];
        row.copy_from_slice(bias);
        let xr = &x[b * in_dim..(b + 1) * in_dim];
        for (i, &xi) in xr.iter().enumerate() {
            if xi != T::zero() {
                axpy(xi, &w_t[i * out_dim..(i + 1) * out_dim], row);
            }
        }
    }
}

/// Accumulate `d_w_t[i, :] += x[b, i] * d_out[b, :]` and `d_bias += d_out[b, :]`.
pub fn affine_weight_grad<T: Scalar>(
    x: &[T],
    d_out: &[T],
    in_dim: usize,
    out_dim: usize,
    d_w_t: &mut [T],
    d_bias: &mut [T],
) {
    let batch = x.len() / in_dim;
    for b in 0..batch {
        let dr = &d_out[b * out_dim..(b + 1) * out_dim];
        axpy(T::one(), dr, d_bias);
        let xr = &x[b * in_dim..(b + 1) * in_dim];
        for (i, &xi) in xr.iter().enumerate() {
            if xi != T::zero() {
                axpy(xi, dr, &mut d_w_t[i * out_dim..(i + 1) * out_dim]);
            }
        }
    }
}

/// `d_x[b, i] = sum_j d_out[b, j] * w_t[i, j]`.
pub fn affine_input_grad<T: Scalar>(d_out: &[T], w_t: &[T], in_dim: usize, out_dim: usize, d_x: &mut [T]) {
    let batch = d_out.len() / out_dim;
    for b in 0..batch {
        let dr = &d_out[b * out_dim..(b + 1) * out_dim];
        for i in 0..in_dim {
            d_x[b * in_dim + i] = dot(dr, &w_t[i * out_dim..(i + 1) * out_dim]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..21).map(|i| i as f64 * 0.5 - 3.0).collect();
        let b: Vec<f64> = (0..21).map(|i| (i as f64).sin()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn affine_round_trip_shapes() {
        // 2x3 input, 3->2 layer.
        let x = [1.0, 2.0, 3.0, -1.0, 0.0, 1.0];
        let w_t = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let bias = [0.5, -0.5];
        let mut out = [0.0; 4];
        affine_forward(&x, &w_t, &bias, 3, 2, &mut out);
        assert_eq!(out, [4.5, 4.5, 0.5, 0.5]);
        let mut dx = [0.0; 6];
        affine_input_grad(&[1.0, 0.0, 0.0, 1.0], &w_t, 3, 2, &mut dx);
        assert_eq!(dx, [1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
    }
}
