//! Central finite-difference fallbacks used when analytic derivatives are absent.

use nalgebra::{DMatrix, DVector};

/// First-derivative step for coordinate value `v`.
#[inline]
pub fn step(v: f64) -> f64 {
    1e-5 * v.abs().max(1.0)
}

/// Second-derivative (nested) step for coordinate value `v`.
#[inline]
pub fn step2(v: f64) -> f64 {
    1e-4 * v.abs().max(1.0)
}

pub fn gradient<F>(f: F, x: &DVector<f64>, t: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>, f64) -> f64,
{
    let mut out = DVector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let h = step(x[i]);
        xp[i] = x[i] + h;
        let fp = f(&xp, t);
        xp[i] = x[i] - h;
        let fm = f(&xp, t);
        xp[i] = x[i];
        out[i] = (fp - fm) / (2.0 * h);
    }
    out
}

/// Jacobian `J[(i, j)] = d f_i / d x_j` of a vector field, with step `h(x_j)`.
pub fn jacobian_with<F>(f: F, x: &DVector<f64>, t: f64, h_of: fn(f64) -> f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>, f64) -> DVector<f64>,
{
    let n = x.len();
    let mut xp = x.clone();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let h = h_of(x[j]);
        xp[j] = x[j] + h;
        let fp = f(&xp, t);
        xp[j] = x[j] - h;
        let fm = f(&xp, t);
        xp[j] = x[j];
        cols.push((fp - fm) / (2.0 * h));
    }
    let m = cols.first().map_or(0, |c| c.len());
    DMatrix::from_fn(m, n, |i, j| cols[j][i])
}

pub fn jacobian<F>(f: F, x: &DVector<f64>, t: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>, f64) -> DVector<f64>,
{
    jacobian_with(f, x, t, step)
}

/// Hessian of a scalar by nested central differences of function values.
pub fn hessian<F>(f: F, x: &DVector<f64>, t: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>, f64) -> f64,
{
    let n = x.len();
    let mut out = DMatrix::zeros(n, n);
    let mut xp = x.clone();
    for i in 0..n {
        let hi = step2(x[i]);
        for j in i..n {
            let hj = step2(x[j]);
            let mut eval = |si: f64, sj: f64| {
                xp.copy_from(x);
                xp[i] += si * hi;
                xp[j] += sj * hj;
                f(&xp, t)
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                / (4.0 * hi * hj);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

pub fn time_derivative<F, T>(f: F, t: f64) -> T
where
    F: Fn(f64) -> T,
    T: std::ops::Sub<Output = T> + std::ops::Div<f64, Output = T>,
{
    let h = step(t);
    (f(t + h) - f(t - h)) / (2.0 * h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_and_hessian_of_quadratic() {
        let f = |x: &DVector<f64>, _t: f64| x[0] * x[0] * 3.0 + x[0] * x[1] - x[1];
        let x = DVector::from_vec(vec![0.7, -2.0]);
        let g = gradient(f, &x, 0.0);
        assert!((g[0] - (6.0 * 0.7 - 2.0)).abs() < 1e-9);
        assert!((g[1] - (0.7 - 1.0)).abs() < 1e-9);
        let h = hessian(f, &x, 0.0);
        assert!((h[(0, 0)] - 6.0).abs() < 1e-6);
        assert!((h[(0, 1)] - 1.0).abs() < 1e-6);
        assert!(h[(1, 1)].abs() < 1e-6);
    }

    #[test]
    fn time_derivative_of_sine() {
        let d: f64 = time_derivative(|t: f64| t.sin(), 0.3);
        assert!((d - 0.3f64.cos()).abs() < 1e-9);
    }
}
