//! Dense operations with exact backward passes.
//!
//! The slice-level `gemm` helpers are what the model uses on its hot path;
//! the `Tensor`-level wrappers validate shapes and are the public surface.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `c = beta * c + op(a) * op(b)` where `op(a)` is `m×k` and `op(b)` is `k×n`.
///
/// With `ta` set, `a` is stored as `k×m` row-major and used transposed; same
/// for `tb` with `b` stored as `n×k`. Only `beta` of 0.0 or 1.0 is used in
/// this crate.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths checked above; strides describe in-bounds row-major
    // layouts of exactly those lengths.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = two_d(a, "matmul")?;
    let (k2, n) = two_d(b, "matmul")?;
    if k != k2 {
        return Err(Error::Dimension {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), false, b.data(), false, &mut out, 0.0);
    Tensor::new(&[m, n], out)
}

/// Gradients of `c = a·b`: returns `(dc·bᵀ, aᵀ·dc)`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, dc: &Tensor) -> Result<(Tensor, Tensor)> {
    let (m, k) = two_d(a, "matmul_backward")?;
    let (_, n) = two_d(b, "matmul_backward")?;
    if dc.shape() != [m, n] {
        return Err(Error::Dimension {
            op: "matmul_backward",
            left: vec![m, n],
            right: dc.shape().to_vec(),
        });
    }
    let mut da = vec![0.0; m * k];
    gemm(m, n, k, dc.data(), false, b.data(), true, &mut da, 0.0);
    let mut db = vec![0.0; k * n];
    gemm(k, m, n, a.data(), true, dc.data(), false, &mut db, 0.0);
    Ok((Tensor::new(&[m, k], da)?, Tensor::new(&[k, n], db)?))
}

fn two_d(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(Error::Dimension {
            op,
            left: other.to_vec(),
            right: vec![0, 0],
        }),
    }
}

/// Row-wise softmax of `scale * x`, stabilized by subtracting the row max.
pub fn softmax_rows_slice(x: &mut [f64], cols: usize, scale: f64) {
    for row in x.chunks_mut(cols) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = ((*v - max) * scale).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
}

/// Vector-Jacobian product of the scaled row softmax, given its output `y`.
/// Overwrites `dy` with the gradient with respect to the pre-softmax input.
pub fn softmax_rows_backward_slice(y: &[f64], dy: &mut [f64], cols: usize, scale: f64) {
    for (yr, gr) in y.chunks(cols).zip(dy.chunks_mut(cols)) {
        let dot: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
        for (g, &yv) in gr.iter_mut().zip(yr) {
            *g = scale * yv * (*g - dot);
        }
    }
}

pub fn softmax_rows(x: &Tensor, scale: f64) -> Result<Tensor> {
    let (_, cols) = two_d(x, "softmax_rows")?;
    if !(scale > 0.0) {
        return Err(Error::Usage(format!("softmax scale must be positive, got {scale}")));
    }
    if !x.all_finite() {
        return Err(Error::Numeric("softmax_rows input"));
    }
    let mut out = x.clone();
    softmax_rows_slice(out.data_mut(), cols, scale);
    Ok(out)
}

pub fn softmax_rows_backward(y: &Tensor, dy: &Tensor, scale: f64) -> Result<Tensor> {
    y.check_same_shape(dy, "softmax_rows_backward")?;
    let (_, cols) = two_d(y, "softmax_rows_backward")?;
    let mut dx = dy.clone();
    softmax_rows_backward_slice(y.data(), dx.data_mut(), cols, scale);
    Ok(dx)
}

/// Per-row statistics kept by [`layer_norm_slice`] for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct LayerNormCache {
    /// Normalized input before the affine transform.
    pub xhat: Vec<f64>,
    /// `1 / sqrt(var + eps)` per row.
    pub inv_std: Vec<f64>,
}

pub fn layer_norm_slice(
    x: &[f64],
    cols: usize,
    gain: &[f64],
    bias: &[f64],
    eps: f64,
    out: &mut [f64],
) -> LayerNormCache {
    let rows = x.len() / cols;
    let mut cache = LayerNormCache {
        xhat: vec![0.0; x.len()],
        inv_std: vec![0.0; rows],
    };
    for r in 0..rows {
        let xr = &x[r * cols..(r + 1) * cols];
        let mean = xr.iter().sum::<f64>() / cols as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let inv = 1.0 / (var + eps).sqrt();
        cache.inv_std[r] = inv;
        for c in 0..cols {
            let xh = (xr[c] - mean) * inv;
            cache.xhat[r * cols + c] = xh;
            out[r * cols + c] = xh * gain[c] + bias[c];
        }
    }
    cache
}

/// Returns `dx` and accumulates into `dgain`/`dbias` when given.
pub fn layer_norm_backward_slice(
    cache: &LayerNormCache,
    cols: usize,
    gain: &[f64],
    dy: &[f64],
    dx: &mut [f64],
    mut dgain: Option<&mut [f64]>,
    mut dbias: Option<&mut [f64]>,
) {
    let n = cols as f64;
    for (r, &inv) in cache.inv_std.iter().enumerate() {
        let xh = &cache.xhat[r * cols..(r + 1) * cols];
        let g = &dy[r * cols..(r + 1) * cols];
        let mut sum_dxh = 0.0;
        let mut sum_dxh_xh = 0.0;
        for c in 0..cols {
            let dxh = g[c] * gain[c];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[c];
        }
        for c in 0..cols {
            let dxh = g[c] * gain[c];
            dx[r * cols + c] = inv * (dxh - sum_dxh / n - xh[c] * sum_dxh_xh / n);
        }
        if let Some(dg) = dgain.as_deref_mut() {
            for c in 0..cols {
                dg[c] += g[c] * xh[c];
            }
        }
        if let Some(db) = dbias.as_deref_mut() {
            for c in 0..cols {
                db[c] += g[c];
            }
        }
    }
}

pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<(Tensor, LayerNormCache)> {
    let (_, cols) = two_d(x, "layer_norm")?;
    if gain.len() != cols || bias.len() != cols {
        return Err(Error::Dimension {
            op: "layer_norm",
            left: x.shape().to_vec(),
            right: gain.shape().to_vec(),
        });
    }
    if !(eps > 0.0) {
        return Err(Error::Usage(format!("layer_norm eps must be positive, got {eps}")));
    }
    let mut out = Tensor::zeros(x.shape());
    let cache = layer_norm_slice(x.data(), cols, gain.data(), bias.data(), eps, out.data_mut());
    Ok((out, cache))
}

/// Returns `(dx, dgain, dbias)`.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gain: &Tensor,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (_, cols) = two_d(dy, "layer_norm_backward")?;
    let mut dx = Tensor::zeros(dy.shape());
    let mut dg = Tensor::zeros(gain.shape());
    let mut db = Tensor::zeros(gain.shape());
    layer_norm_backward_slice(
        cache,
        cols,
        gain.data(),
        dy.data(),
        dx.data_mut(),
        Some(dg.data_mut()),
        Some(db.data_mut()),
    );
    Ok((dx, dg, db))
}

/// `sqrt(2/pi)` in the tanh approximation of gelu.
const GELU_C: f64 = 0.797_884_560_802_865_4;
/// Cubic coefficient of the tanh approximation.
const GELU_A: f64 = 0.044_715;

#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad_scalar(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let th = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

pub fn pointwise_gelu(x: &Tensor) -> Tensor {
    x.map(gelu_scalar)
}

pub fn pointwise_gelu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    x.check_same_shape(dy, "gelu_backward")?;
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&xv, &g)| g * gelu_grad_scalar(xv))
        .collect();
    Tensor::new(x.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_cases() {
        let eye = t(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let b = t(&[&[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(matmul(&eye, &b).unwrap(), b);
        let r = matmul(&t(&[&[1.0, 2.0]]), &t(&[&[3.0], &[4.0]])).unwrap();
        assert_eq!(r.data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn transposed_gemm_matches_plain() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0]; // 3x2
        let b = [1.0, 0.5, -1.0, 2.0, 0.0, 1.0]; // 3x2
        let mut c1 = vec![0.0; 4];
        let mut c2 = vec![0.0; 4];
        gemm(2, 3, 2, &a, false, &b, false, &mut c1, 0.0);
        gemm(2, 3, 2, &at, true, &b, false, &mut c2, 0.0);
        assert_eq!(c1, c2);
    }

    #[test]
    fn softmax_trivial_rows() {
        let y = softmax_rows(&t(&[&[123.4]]), 1.0).unwrap();
        assert_eq!(y.data(), &[1.0]);
        let y = softmax_rows(&t(&[&[0.0, 0.0]]), 0.5).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        assert!(softmax_rows(&t(&[&[0.0, 0.0]]), 0.0).is_err());
        assert!(matches!(
            softmax_rows(&t(&[&[f64::NAN, 0.0]]), 1.0),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn layer_norm_edge_rows() {
        let g = Tensor::full(&[3], 1.0);
        let b = Tensor::zeros(&[3]);
        let (y, _) = layer_norm(&t(&[&[2.5, 2.5, 2.5]]), &g, &b, 1e-5).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
        let g = Tensor::full(&[2], 1.0);
        let b = Tensor::zeros(&[2]);
        let (y, _) = layer_norm(&t(&[&[1.0, -1.0]]), &g, &b, 1e-12).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-9 && (y.data()[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn gelu_fixed_points() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        for x in [6.0, 7.5, 10.0, 40.0] {
            assert!((gelu_scalar(x) - x).abs() < 1e-6, "x={x}");
        }
    }
}
