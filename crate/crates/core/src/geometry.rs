//! Metric fields, Christoffel symbols and covariant derivatives.
//!
//! Index conventions used throughout the crate:
//!
//! * metric derivatives are stored as `dm[(i, j, l)] = dM_ij / dx_l`;
//! * Christoffel symbols are stored as `gamma[(i, j, k)] = gamma_ij^k`, with
//!   `k` the contracted (upper) index:
//!
//! ```text
//! gamma_ij^k = 1/2 sum_l (dM_il/dx_j + dM_jl/dx_i - dM_ij/dx_l) (M^-1)_kl
//! ```
//!
//! `(M^-1)_kl` is the `(k, l)` entry of the inverse matrix.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::constraints::ConstraintFunction;
use crate::error::{Error, Result};
use crate::fd;
use crate::linalg;

pub type ScalarFn = Arc<dyn Fn(&DVector<f64>, f64) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(&DVector<f64>, f64) -> DMatrix<f64> + Send + Sync>;
pub type TensorFn = Arc<dyn Fn(&DVector<f64>, f64) -> Tensor3 + Send + Sync>;

/// System state: coordinates `x` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub x: DVector<f64>,
    pub t: f64,
}

impl StateVector {
    pub fn new(x: DVector<f64>, t: f64) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidInput("state dimension must be >= 1".into()));
        }
        if !linalg::all_finite(&x) || !t.is_finite() {
            return Err(Error::InvalidInput("state has non-finite entries".into()));
        }
        Ok(Self { x, t })
    }

    pub fn from_slice(x: &[f64], t: f64) -> Result<Self> {
        Self::new(DVector::from_column_slice(x), t)
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// Dense `n x n x n` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    n: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    t[(i, j, k)] = f(i, j, k);
                }
            }
        }
        t
    }

    /// Builds `T[(i, j, l)] = slices[l][(i, j)]`.
    pub fn from_slices(slices: &[DMatrix<f64>]) -> Self {
        let n = slices.len();
        Self::from_fn(n, |i, j, l| slices[l][(i, j)])
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// The matrix `T[(., ., l)]`.
    pub fn slice(&self, l: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self[(i, j, l)])
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

impl std::ops::Index<(usize, usize, usize)> for Tensor3 {
    type Output = f64;
    fn index(&self, (i, j, k): (usize, usize, usize)) -> &f64 {
        &self.data[(i * self.n + j) * self.n + k]
    }
}

impl std::ops::IndexMut<(usize, usize, usize)> for Tensor3 {
    fn index_mut(&mut self, (i, j, k): (usize, usize, usize)) -> &mut f64 {
        &mut self.data[(i * self.n + j) * self.n + k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeMode {
    Analytic,
    FiniteDifference,
}

/// Riemannian metric `M(x, t)` with its spatial and temporal derivatives.
#[derive(Clone)]
pub struct MetricField {
    dim: usize,
    eval: MatrixFn,
    d_dx: Option<TensorFn>,
    d_dt: Option<MatrixFn>,
    mode: DerivativeMode,
    constant: bool,
}

impl fmt::Debug for MetricField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricField")
            .field("dim", &self.dim)
            .field("mode", &self.mode)
            .field("constant", &self.constant)
            .finish()
    }
}

impl MetricField {
    /// Metric whose derivatives are taken by central differences.
    pub fn new(
        dim: usize,
        eval: impl Fn(&DVector<f64>, f64) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            eval: Arc::new(eval),
            d_dx: None,
            d_dt: None,
            mode: DerivativeMode::FiniteDifference,
            constant: false,
        }
    }

    /// Metric with analytic derivatives. Both must be attached with
    /// [`with_d_dx`](Self::with_d_dx) / [`with_d_dt`](Self::with_d_dt) (or
    /// [`time_invariant`](Self::time_invariant)) before they are queried.
    pub fn analytic(
        dim: usize,
        eval: impl Fn(&DVector<f64>, f64) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            mode: DerivativeMode::Analytic,
            ..Self::new(dim, eval)
        }
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        let zero = DMatrix::zeros(n, n);
        Self {
            dim: n,
            eval: Arc::new(move |_, _| m.clone()),
            d_dx: Some(Arc::new(move |_, _| Tensor3::zeros(n))),
            d_dt: Some(Arc::new(move |_, _| zero.clone())),
            mode: DerivativeMode::Analytic,
            constant: true,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(DMatrix::identity(n, n))
    }

    pub fn with_d_dx(
        mut self,
        d_dx: impl Fn(&DVector<f64>, f64) -> Tensor3 + Send + Sync + 'static,
    ) -> Self {
        self.d_dx = Some(Arc::new(d_dx));
        self.mode = DerivativeMode::Analytic;
        self
    }

    pub fn with_d_dt(
        mut self,
        d_dt: impl Fn(&DVector<f64>, f64) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.d_dt = Some(Arc::new(d_dt));
        self
    }

    pub fn time_invariant(self) -> Self {
        let n = self.dim;
        self.with_d_dt(move |_, _| DMatrix::zeros(n, n))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> DerivativeMode {
        self.mode
    }

    /// True when the metric was built with [`constant`](Self::constant).
    pub fn is_constant(&self) -> bool {
        self.constant
    }

    /// Raw evaluation without the SPD check.
    pub fn eval_raw(&self, x: &DVector<f64>, t: f64) -> DMatrix<f64> {
        (self.eval)(x, t)
    }

    /// `M(x, t)`, symmetrized and checked positive definite.
    pub fn at(&self, state: &StateVector) -> Result<DMatrix<f64>> {
        self.check_dim(state)?;
        linalg::check_spd(&(self.eval)(&state.x, state.t), state.t)
    }

    /// `dM/dx` with index order `(i, j, l)`.
    pub fn d_dx(&self, state: &StateVector) -> Result<Tensor3> {
        self.check_dim(state)?;
        let raw = match (&self.d_dx, self.mode) {
            (Some(f), _) => f(&state.x, state.t),
            (None, DerivativeMode::FiniteDifference) => {
                let n = self.dim;
                let mut xp = state.x.clone();
                let slices: Vec<DMatrix<f64>> = (0..n)
                    .map(|l| {
                        let h = fd::step(state.x[l]);
                        xp[l] = state.x[l] + h;
                        let mp = (self.eval)(&xp, state.t);
                        xp[l] = state.x[l] - h;
                        let mm = (self.eval)(&xp, state.t);
                        xp[l] = state.x[l];
                        (mp - mm) / (2.0 * h)
                    })
                    .collect();
                Tensor3::from_slices(&slices)
            }
            (None, DerivativeMode::Analytic) => {
                return Err(Error::DerivativeUnavailable { what: "dM/dx" })
            }
        };
        let n = self.dim;
        let mut out = raw;
        for l in 0..n {
            for i in 0..n {
                for j in (i + 1)..n {
                    let avg = 0.5 * (out[(i, j, l)] + out[(j, i, l)]);
                    out[(i, j, l)] = avg;
                    out[(j, i, l)] = avg;
                }
            }
        }
        Ok(out)
    }

    pub fn d_dt(&self, state: &StateVector) -> Result<DMatrix<f64>> {
        self.check_dim(state)?;
        match (&self.d_dt, self.mode) {
            (Some(f), _) => Ok(linalg::sym_part(&f(&state.x, state.t))),
            (None, DerivativeMode::FiniteDifference) => {
                let x = &state.x;
                let d = fd::time_derivative(|t| (self.eval)(x, t), state.t);
                Ok(linalg::sym_part(&d))
            }
            (None, DerivativeMode::Analytic) => Err(Error::DerivativeUnavailable { what: "dM/dt" }),
        }
    }

    fn check_dim(&self, state: &StateVector) -> Result<()> {
        if state.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: state.dim(),
            });
        }
        Ok(())
    }
}

/// Covector field `f(x, t)` in covariant components, with its Jacobian.
#[derive(Clone)]
pub struct CovectorField {
    dim: usize,
    eval: VectorFn,
    jacobian: Option<MatrixFn>,
}

impl fmt::Debug for CovectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CovectorField")
            .field("dim", &self.dim)
            .field("mode", &self.mode())
            .finish()
    }
}

impl CovectorField {
    pub fn new(
        dim: usize,
        eval: impl Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            eval: Arc::new(eval),
            jacobian: None,
        }
    }

    pub fn with_jacobian(
        mut self,
        jac: impl Fn(&DVector<f64>, f64) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    /// `f(x) = a x + b`.
    pub fn affine(a: DMatrix<f64>, b: DVector<f64>) -> Self {
        let n = a.nrows();
        let jac = a.clone();
        Self::new(n, move |x, _| &a * x + &b).with_jacobian(move |_, _| jac.clone())
    }

    pub fn linear(a: DMatrix<f64>) -> Self {
        let n = a.nrows();
        Self::affine(a, DVector::zeros(n))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> DerivativeMode {
        if self.jacobian.is_some() {
            DerivativeMode::Analytic
        } else {
            DerivativeMode::FiniteDifference
        }
    }

    pub fn eval(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        (self.eval)(x, t)
    }

    pub fn at(&self, state: &StateVector) -> DVector<f64> {
        (self.eval)(&state.x, state.t)
    }

    /// `J[(i, j)] = df_i / dx_j`.
    pub fn jacobian(&self, state: &StateVector) -> DMatrix<f64> {
        match &self.jacobian {
            Some(j) => j(&state.x, state.t),
            None => fd::jacobian(|x, t| (self.eval)(x, t), &state.x, state.t),
        }
    }
}

/// Christoffel symbols of the second kind, `gamma[(i, j, k)] = gamma_ij^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChristoffelTensor {
    pub gamma: Tensor3,
}

impl ChristoffelTensor {
    /// Contracts the upper index with a covector: `out[(i, j)] = sum_k gamma_ij^k a_k`.
    pub fn contract(&self, a: &DVector<f64>) -> DMatrix<f64> {
        let n = self.gamma.dim();
        DMatrix::from_fn(n, n, |i, j| (0..n).map(|k| self.gamma[(i, j, k)] * a[k]).sum())
    }
}

pub fn christoffel(metric: &MetricField, state: &StateVector) -> Result<ChristoffelTensor> {
    let m = metric.at(state)?;
    let n = m.nrows();
    let dm = metric.d_dx(state)?;
    if metric.is_constant() || dm.max_abs() == 0.0 {
        return Ok(ChristoffelTensor {
            gamma: Tensor3::zeros(n),
        });
    }
    let minv = m
        .cholesky()
        .expect("metric checked SPD")
        .inverse();
    // first kind: c[(i, j, l)] = 1/2 (dM_il/dx_j + dM_jl/dx_i - dM_ij/dx_l)
    let first = Tensor3::from_fn(n, |i, j, l| {
        0.5 * (dm[(i, l, j)] + dm[(j, l, i)] - dm[(i, j, l)])
    });
    let mut gamma = Tensor3::zeros(n);
    for i in 0..n {
        for j in i..n {
            for k in 0..n {
                let v: f64 = (0..n).map(|l| first[(i, j, l)] * minv[(k, l)]).sum();
                gamma[(i, j, k)] = v;
                gamma[(j, i, k)] = v;
            }
        }
    }
    Ok(ChristoffelTensor { gamma })
}

/// `(nabla_M f)_ij = df_i/dx_j - sum_k gamma_ij^k f_k`.
pub fn covariant_derivative_vector(
    field: &CovectorField,
    metric: &MetricField,
    state: &StateVector,
) -> Result<DMatrix<f64>> {
    let jac = field.jacobian(state);
    let gamma = christoffel(metric, state)?;
    Ok(jac - gamma.contract(&field.at(state)))
}

/// Second covariant derivative of a scalar: the covariant derivative of its gradient covector.
pub fn covariant_hessian_scalar(
    g: &ConstraintFunction,
    metric: &MetricField,
    state: &StateVector,
) -> Result<DMatrix<f64>> {
    let hess = g.hessian(&state.x, state.t);
    let grad = g.gradient(&state.x, state.t);
    let gamma = christoffel(metric, state)?;
    Ok(linalg::sym_part(&(hess - gamma.contract(&grad))))
}
