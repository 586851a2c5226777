//! Dense layer primitives with explicit forward and backward passes.
//!
//! Matrix products accumulate left-to-right over the inner dimension, so
//! results are bit-reproducible for identical inputs. Backwards are the
//! exact adjoints of these forwards; `tests/layer_gradients.rs` checks each
//! one against central finite differences in `f64`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `a (m×k) · b (k×n) -> m×n`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows() {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![T::ZERO; m * n];
    for i in 0..m {
        let arow = a.row(i);
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate().take(k) {
            let brow = b.row(p);
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `a (m×k) · bᵀ (k×n) -> m×n` where `b` is stored as `n×k`.
pub fn matmul_nt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols() {
        return Err(Error::ShapeMismatch {
            op: "matmul_nt",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (m, n) = (a.rows(), b.rows());
    let mut out = vec![T::ZERO; m * n];
    for i in 0..m {
        let arow = a.row(i);
        for j in 0..n {
            let brow = b.row(j);
            let mut acc = T::ZERO;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `aᵀ (k×m) · b (k×n) -> m×n` where `a` is stored as `k×m`.
pub fn matmul_tn<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows() {
        return Err(Error::ShapeMismatch {
            op: "matmul_tn",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (k, m, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![T::ZERO; m * n];
    for p in 0..k {
        let arow = a.row(p);
        let brow = b.row(p);
        for (i, &api) in arow.iter().enumerate().take(m) {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += api * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Adjoint of [`matmul`]: `da = dy · bᵀ`, `db = aᵀ · dy`.
pub fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    Ok((matmul_nt(dy, b)?, matmul_tn(a, dy)?))
}

pub fn transpose<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let (m, n) = (a.rows(), a.cols());
    let mut out = vec![T::ZERO; m * n];
    for i in 0..m {
        for (j, &v) in a.row(i).iter().enumerate() {
            out[j * m + i] = v;
        }
    }
    Tensor::new(vec![n, m], out).expect("transpose preserves element count")
}

/// `x (n×in) · w (in×out) + b`, bias broadcast over rows.
pub fn linear_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Tensor<T>> {
    if b.rank() != 1 || b.shape()[0] != w.cols() {
        return Err(Error::ShapeMismatch {
            op: "linear_forward",
            lhs: w.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut y = matmul(x, w)?;
    let bias = b.data();
    for i in 0..y.rows() {
        for (v, &bv) in y.row_mut(i).iter_mut().zip(bias) {
            *v += bv;
        }
    }
    Ok(y)
}

/// Adjoint of [`linear_forward`]: returns `(dx, dw, db)`.
pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let dx = matmul_nt(dy, w)?;
    let dw = matmul_tn(x, dy)?;
    let db = col_sum(dy);
    Ok((dx, dw, db))
}

/// Sums a 2-D tensor over rows, producing one value per column.
pub fn col_sum<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = vec![T::ZERO; x.cols()];
    for i in 0..x.rows() {
        for (o, &v) in out.iter_mut().zip(x.row(i)) {
            *o += v;
        }
    }
    Tensor::new(vec![x.cols()], out).expect("col_sum shape")
}

/// Saved activations needed by [`layer_norm_backward`].
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    /// Normalized rows before the affine transform.
    pub xhat: Tensor<T>,
    /// Reciprocal standard deviation per row.
    pub rstd: Vec<T>,
}

/// Per-row normalization: `gamma ⊙ (x − mean) / sqrt(var + eps) + beta`.
/// Variance is the population variance of the row.
pub fn layer_norm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let d = x.cols();
    if gamma.numel() != d || beta.numel() != d {
        return Err(Error::ShapeMismatch {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: gamma.shape().to_vec(),
        });
    }
    let n = x.rows();
    let inv_d = T::ONE / T::from_f64(d as f64);
    let mut y = Tensor::zeros(&[n, d]);
    let mut xhat = Tensor::zeros(&[n, d]);
    let mut rstd = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let mut mean = T::ZERO;
        for &v in row {
            mean += v;
        }
        mean *= inv_d;
        let mut var = T::ZERO;
        for &v in row {
            let c = v - mean;
            var += c * c;
        }
        var *= inv_d;
        let r = T::ONE / (var + eps).sqrt();
        rstd.push(r);
        let xh = xhat.row_mut(i);
        for (o, &v) in xh.iter_mut().zip(row) {
            *o = (v - mean) * r;
        }
        let yr = y.row_mut(i);
        for ((o, &h), (&g, &b)) in yr
            .iter_mut()
            .zip(xhat.row(i))
            .zip(gamma.data().iter().zip(beta.data()))
        {
            *o = g * h + b;
        }
    }
    y.debug_assert_finite("layer_norm");
    Ok((y, LayerNormCache { xhat, rstd }))
}

/// Adjoint of [`layer_norm_forward`]: returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    gamma: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, d) = (dy.rows(), dy.cols());
    let inv_d = T::ONE / T::from_f64(d as f64);
    let mut dx = Tensor::zeros(&[n, d]);
    let mut dgamma = vec![T::ZERO; d];
    let mut dbeta = vec![T::ZERO; d];
    for i in 0..n {
        let dyr = dy.row(i);
        let xh = cache.xhat.row(i);
        for j in 0..d {
            dgamma[j] += dyr[j] * xh[j];
            dbeta[j] += dyr[j];
        }
        // dxhat = dy * gamma; dx = rstd * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
        let mut sum_dxh = T::ZERO;
        let mut sum_dxh_xh = T::ZERO;
        for j in 0..d {
            let dxh = dyr[j] * gamma.data()[j];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[j];
        }
        let r = cache.rstd[i];
        let dxr = dx.row_mut(i);
        for j in 0..d {
            let dxh = dyr[j] * gamma.data()[j];
            dxr[j] = r * (dxh - inv_d * sum_dxh - xh[j] * inv_d * sum_dxh_xh);
        }
    }
    (
        dx,
        Tensor::new(vec![d], dgamma).expect("dgamma shape"),
        Tensor::new(vec![d], dbeta).expect("dbeta shape"),
    )
}

/// Row-wise softmax with max subtraction. Entries equal to `-inf` (used
/// for attention masking) come out as exact zeros.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (n, d) = (x.rows(), x.cols());
    let mut y = Tensor::zeros(&[n, d]);
    for i in 0..n {
        let row = x.row(i);
        let mut m = row[0];
        for &v in row {
            m = m.max(v);
        }
        let yr = y.row_mut(i);
        let mut sum = T::ZERO;
        for (o, &v) in yr.iter_mut().zip(row) {
            let e = (v - m).exp();
            *o = e;
            sum += e;
        }
        let inv = T::ONE / sum;
        for o in yr.iter_mut() {
            *o *= inv;
        }
    }
    y
}

/// Adjoint of [`softmax_rows`] expressed through its output:
/// `dx_i = y_i (dy_i − Σ_j dy_j y_j)` per row.
pub fn softmax_rows_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let (n, d) = (y.rows(), y.cols());
    let mut dx = Tensor::zeros(&[n, d]);
    for i in 0..n {
        let yr = y.row(i);
        let dyr = dy.row(i);
        let mut dot = T::ZERO;
        for j in 0..d {
            dot += yr[j] * dyr[j];
        }
        let dxr = dx.row_mut(i);
        for j in 0..d {
            dxr[j] = yr[j] * (dyr[j] - dot);
        }
    }
    dx
}

// tanh-approximation GELU constants: sqrt(2/pi) and the cubic coefficient.
const GELU_SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// Elementwise GELU, tanh approximation:
/// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let a = T::from_f64(GELU_SQRT_2_OVER_PI);
    let c = T::from_f64(GELU_CUBIC);
    let half = T::from_f64(0.5);
    x.map(|v| {
        let inner = a * (v + c * v * v * v);
        half * v * (T::ONE + inner.tanh())
    })
}

/// Adjoint of [`gelu`], evaluated from the saved input.
pub fn gelu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let a = T::from_f64(GELU_SQRT_2_OVER_PI);
    let c = T::from_f64(GELU_CUBIC);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let mut dx = x.zeros_like();
    for ((o, &v), &g) in dx.data_mut().iter_mut().zip(x.data()).zip(dy.data()) {
        let inner = a * (v + c * v * v * v);
        let t = inner.tanh();
        let sech2 = T::ONE - t * t;
        let d = half * (T::ONE + t) + half * v * sech2 * a * (T::ONE + three * c * v * v);
        *o = g * d;
    }
    dx
}

/// Numerically stable logistic function.
pub fn sigmoid_scalar<T: Scalar>(z: T) -> T {
    if z >= T::ZERO {
        T::ONE / (T::ONE + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::ONE + e)
    }
}

/// Appends the rows of `b` below the rows of `a`.
pub fn concat_rows<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.cols() != b.cols() {
        return Err(Error::ShapeMismatch {
            op: "concat_rows",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::new(vec![a.rows() + b.rows(), a.cols()], data)
}

/// Splits rows at `at`, the inverse of [`concat_rows`].
pub fn split_rows<T: Scalar>(x: &Tensor<T>, at: usize) -> (Tensor<T>, Tensor<T>) {
    let (n, d) = (x.rows(), x.cols());
    assert!(at <= n, "split point {at} beyond {n} rows");
    let top = Tensor::new(vec![at.max(1), d], x.data()[..at * d].to_vec());
    let bot = Tensor::new(vec![n - at, d], x.data()[at * d..].to_vec());
    (top.expect("split top"), bot.expect("split bottom"))
}
