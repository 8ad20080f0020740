//! Dense row-major kernels shared by the forward and backward passes.

use super::Real;

/// `out[r, :] = b + x[r, :] * w` for `rows` rows; `w` is `in_dim x out_dim`.
pub(crate) fn linear<T: Real>(x: &[T], rows: usize, in_dim: usize, w: &[T], b: &[T], out: &mut [T]) {
    let out_dim = b.len();
    debug_assert_eq!(w.len(), in_dim * out_dim);
    for r in 0..rows {
        let o = &mut out[r * out_dim..(r + 1) * out_dim];
        o.copy_from_slice(b);
        let xr = &x[r * in_dim..(r + 1) * in_dim];
        for (k, &xv) in xr.iter().enumerate() {
            let wk = &w[k * out_dim..(k + 1) * out_dim];
            for (ov, &wv) in o.iter_mut().zip(wk) {
                *ov += xv * wv;
            }
        }
    }
}

/// Backward of [`linear`]. Accumulates into `dx`, `dw` and `db`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward<T: Real>(
    x: &[T],
    rows: usize,
    in_dim: usize,
    w: &[T],
    dy: &[T],
    dx: &mut [T],
    dw: &mut [T],
    db: &mut [T],
) {
    let out_dim = db.len();
    for r in 0..rows {
        let dyr = &dy[r * out_dim..(r + 1) * out_dim];
        for (dbv, &g) in db.iter_mut().zip(dyr) {
            *dbv += g;
        }
        let xr = &x[r * in_dim..(r + 1) * in_dim];
        let dxr = &mut dx[r * in_dim..(r + 1) * in_dim];
        for k in 0..in_dim {
            let wk = &w[k * out_dim..(k + 1) * out_dim];
            let dwk = &mut dw[k * out_dim..(k + 1) * out_dim];
            let xv = xr[k];
            let mut acc = T::zero();
            for j in 0..out_dim {
                dwk[j] += xv * dyr[j];
                acc += dyr[j] * wk[j];
            }
            dxr[k] += acc;
        }
    }
}

pub(crate) const LN_EPS: f64 = 1e-5;

/// Per-row normalization statistics kept for the backward pass.
#[derive(Clone, Debug, Default)]
pub(crate) struct LnCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

pub(crate) fn layer_norm<T: Real>(x: &[T], rows: usize, dim: usize, gain: &[T], bias: &[T], out: &mut [T]) -> LnCache<T> {
    let mut xhat = vec![T::zero(); rows * dim];
    let mut rstd = vec![T::zero(); rows];
    let inv_d = T::lit(1.0 / dim as f64);
    let eps = T::lit(LN_EPS);
    for r in 0..rows {
        let xr = &x[r * dim..(r + 1) * dim];
        let mean = xr.iter().copied().sum::<T>() * inv_d;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = (var + eps).sqrt().recip();
        rstd[r] = rs;
        let hr = &mut xhat[r * dim..(r + 1) * dim];
        let or = &mut out[r * dim..(r + 1) * dim];
        for j in 0..dim {
            hr[j] = (xr[j] - mean) * rs;
            or[j] = hr[j] * gain[j] + bias[j];
        }
    }
    LnCache { xhat, rstd }
}

/// Accumulates `dx`, `dgain`, `dbias` for the rows present in `dy`.
pub(crate) fn layer_norm_backward<T: Real>(
    cache: &LnCache<T>,
    rows: usize,
    dim: usize,
    gain: &[T],
    dy: &[T],
    dx: &mut [T],
    dgain: &mut [T],
    dbias: &mut [T],
) {
    let inv_d = T::lit(1.0 / dim as f64);
    let mut dxhat = vec![T::zero(); dim];
    for r in 0..rows {
        let hr = &cache.xhat[r * dim..(r + 1) * dim];
        let dyr = &dy[r * dim..(r + 1) * dim];
        let mut sum_d = T::zero();
        let mut sum_dh = T::zero();
        for j in 0..dim {
            dgain[j] += dyr[j] * hr[j];
            dbias[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
            sum_d += dxhat[j];
            sum_dh += dxhat[j] * hr[j];
        }
        let mean_d = sum_d * inv_d;
        let mean_dh = sum_dh * inv_d;
        let rs = cache.rstd[r];
        let dxr = &mut dx[r * dim..(r + 1) * dim];
        for j in 0..dim {
            dxr[j] += rs * (dxhat[j] - mean_d - hr[j] * mean_dh);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu<T: Real>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub(crate) fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x)
}

pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub(crate) fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5f64] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = [1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 0.0, 1.0f64];
        let mut out = [0.0; 8];
        layer_norm(&x, 2, 4, &[1.0; 4], &[0.0; 4], &mut out);
        for r in 0..2 {
            let row = &out[r * 4..(r + 1) * 4];
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }
}
