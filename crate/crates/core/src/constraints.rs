//! Inequality constraints `g_j(x, t) <= 0`, active-set detection, Lagrange
//! multipliers and the tangent basis of the active constraint surface.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fd;
use crate::geometry::{CovectorField, MatrixFn, MetricField, ScalarFn, StateVector, VectorFn};
use crate::linalg;

/// Default activation band `|g| <= eps_act`, in units of `g`.
pub const DEFAULT_ACTIVATION_TOL: f64 = 1e-9;
/// Default tolerance on `gdot` when deciding that a released constraint stays released.
pub const DEFAULT_RELEASE_TOL: f64 = 1e-10;
/// Off-diagonal Gram entries below this are reported as acute corners.
pub const ACUTE_CORNER_TOL: f64 = 1e-10;

/// A scalar constraint `g(x, t) <= 0` with optional analytic derivatives.
#[derive(Clone)]
pub struct ConstraintFunction {
    label: String,
    g: ScalarFn,
    grad: Option<VectorFn>,
    hess: Option<MatrixFn>,
    d_dt: Option<ScalarFn>,
}

impl fmt::Debug for ConstraintFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintFunction")
            .field("label", &self.label)
            .field("analytic_grad", &self.grad.is_some())
            .field("analytic_hess", &self.hess.is_some())
            .field("analytic_d_dt", &self.d_dt.is_some())
            .finish()
    }
}

impl ConstraintFunction {
    pub fn new(
        label: impl Into<String>,
        g: impl Fn(&DVector<f64>, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            g: Arc::new(g),
            grad: None,
            hess: None,
            d_dt: None,
        }
    }

    pub fn with_gradient(
        mut self,
        grad: impl Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.grad = Some(Arc::new(grad));
        self
    }

    pub fn with_hessian(
        mut self,
        hess: impl Fn(&DVector<f64>, f64) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.hess = Some(Arc::new(hess));
        self
    }

    pub fn with_time_derivative(
        mut self,
        d_dt: impl Fn(&DVector<f64>, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.d_dt = Some(Arc::new(d_dt));
        self
    }

    /// `g(x) = a . x + b`.
    pub fn linear(label: impl Into<String>, a: DVector<f64>, b: f64) -> Self {
        let n = a.len();
        let grad = a.clone();
        Self::new(label, move |x, _| a.dot(x) + b)
            .with_gradient(move |_, _| grad.clone())
            .with_hessian(move |_, _| DMatrix::zeros(n, n))
            .with_time_derivative(|_, _| 0.0)
    }

    /// `g(x) = x^T Q x + a . x + c`.
    pub fn quadratic(label: impl Into<String>, q: DMatrix<f64>, a: DVector<f64>, c: f64) -> Self {
        let qs = &q + q.transpose();
        let qs2 = qs.clone();
        let a2 = a.clone();
        Self::new(label, move |x, _| (x.transpose() * &q * x)[0] + a.dot(x) + c)
            .with_gradient(move |x, _| &qs * x + &a2)
            .with_hessian(move |_, _| qs2.clone())
            .with_time_derivative(|_, _| 0.0)
    }

    /// Circular obstacle in the first two coordinates:
    /// `g = -(x1 - a(t))^2 - (x2 - b(t))^2 + r^2`.
    ///
    /// `center` returns `(a, b)` and `center_rate` returns `(da/dt, db/dt)`.
    pub fn circle(
        label: impl Into<String>,
        radius: f64,
        center: impl Fn(f64) -> (f64, f64) + Send + Sync + 'static,
        center_rate: impl Fn(f64) -> (f64, f64) + Send + Sync + 'static,
    ) -> Self {
        let center = Arc::new(center);
        let (c1, c2) = (center.clone(), center.clone());
        let r2 = radius * radius;
        Self::new(label, move |x, t| {
            let (a, b) = center(t);
            -(x[0] - a).powi(2) - (x[1] - b).powi(2) + r2
        })
        .with_gradient(move |x, t| {
            let (a, b) = c1(t);
            let mut g = DVector::zeros(x.len());
            g[0] = -2.0 * (x[0] - a);
            g[1] = -2.0 * (x[1] - b);
            g
        })
        .with_hessian(|x, _| {
            let mut h = DMatrix::zeros(x.len(), x.len());
            h[(0, 0)] = -2.0;
            h[(1, 1)] = -2.0;
            h
        })
        .with_time_derivative(move |x, t| {
            let (a, b) = c2(t);
            let (da, db) = center_rate(t);
            2.0 * (x[0] - a) * da + 2.0 * (x[1] - b) * db
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn value(&self, x: &DVector<f64>, t: f64) -> f64 {
        (self.g)(x, t)
    }

    pub fn gradient(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        match &self.grad {
            Some(f) => f(x, t),
            None => fd::gradient(|x, t| (self.g)(x, t), x, t),
        }
    }

    /// Second derivative. Falls back to differencing the analytic gradient when
    /// available, otherwise to nested differences of `g`.
    pub fn hessian(&self, x: &DVector<f64>, t: f64) -> DMatrix<f64> {
        match (&self.hess, &self.grad) {
            (Some(h), _) => h(x, t),
            (None, Some(grad)) => {
                linalg::sym_part(&fd::jacobian_with(|x, t| grad(x, t), x, t, fd::step2))
            }
            (None, None) => fd::hessian(|x, t| (self.g)(x, t), x, t),
        }
    }

    pub fn time_derivative(&self, x: &DVector<f64>, t: f64) -> f64 {
        match &self.d_dt {
            Some(f) => f(x, t),
            None => fd::time_derivative(|t| (self.g)(x, t), t),
        }
    }
}

/// Ordered list of constraints with activation and release tolerances.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    constraints: Vec<ConstraintFunction>,
    pub activation_tol: f64,
    pub release_tol: f64,
}

impl Default for ConstraintSet {
    fn default() -> Self {
        Self {
            constraints: Vec::new(),
            activation_tol: DEFAULT_ACTIVATION_TOL,
            release_tol: DEFAULT_RELEASE_TOL,
        }
    }
}

impl ConstraintSet {
    pub fn new(constraints: Vec<ConstraintFunction>) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &constraints {
            if !seen.insert(c.label.clone()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate constraint label `{}`",
                    c.label
                )));
            }
        }
        Ok(Self {
            constraints,
            ..Self::default()
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_tolerances(mut self, activation_tol: f64, release_tol: f64) -> Result<Self> {
        if !(activation_tol > 0.0 && release_tol > 0.0) {
            return Err(Error::InvalidInput("tolerances must be positive".into()));
        }
        self.activation_tol = activation_tol;
        self.release_tol = release_tol;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn get(&self, j: usize) -> &ConstraintFunction {
        &self.constraints[j]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ConstraintFunction> {
        self.constraints.iter()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.constraints.iter().position(|c| c.label == label)
    }

    /// `max_j g_j(x, t)`, or `-inf` when there are no constraints.
    pub fn max_violation(&self, x: &DVector<f64>, t: f64) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.value(x, t))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Sorted indices of the constraints on their boundary.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActiveSet {
    pub indices: Vec<usize>,
}

impl ActiveSet {
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self { indices }
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }
}

/// Multipliers for the retained active constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierSolution {
    /// Constraints that stay active after releases.
    pub active: ActiveSet,
    /// `lambdas[i]` belongs to `active.indices[i]`.
    pub lambdas: Vec<f64>,
    /// Constraints dropped because their multiplier turned positive.
    pub released: Vec<usize>,
    /// Gram matrix of the retained set.
    pub gram: DMatrix<f64>,
    pub gram_rank: usize,
    pub used_pseudoinverse: bool,
}

impl MultiplierSolution {
    pub fn empty() -> Self {
        Self {
            active: ActiveSet::default(),
            lambdas: Vec::new(),
            released: Vec::new(),
            gram: DMatrix::zeros(0, 0),
            gram_rank: 0,
            used_pseudoinverse: false,
        }
    }

    pub fn lambda(&self, j: usize) -> Option<f64> {
        self.active
            .indices
            .iter()
            .position(|&k| k == j)
            .map(|i| self.lambdas[i])
    }

    /// `sum_j lambda_j dg_j/dx` over the retained set.
    pub fn net_force(&self, set: &ConstraintSet, state: &StateVector) -> DVector<f64> {
        let mut out = DVector::zeros(state.dim());
        for (&j, &l) in self.active.indices.iter().zip(&self.lambdas) {
            out += set.get(j).gradient(&state.x, state.t) * l;
        }
        out
    }
}

/// Orthonormal basis of the directions tangent to every active constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentBasis {
    pub g_par: DMatrix<f64>,
}

impl TangentBasis {
    pub fn dim(&self) -> usize {
        self.g_par.ncols()
    }

    pub fn projector(&self) -> DMatrix<f64> {
        &self.g_par * self.g_par.transpose()
    }
}

pub fn detect_active(set: &ConstraintSet, state: &StateVector) -> Result<ActiveSet> {
    let mut idx = Vec::new();
    for (j, c) in set.iter().enumerate() {
        let v = c.value(&state.x, state.t);
        if v > set.activation_tol || v.is_nan() {
            return Err(Error::InfeasibleState {
                label: c.label.clone(),
                value: v,
            });
        }
        if v.abs() <= set.activation_tol {
            idx.push(j);
        }
    }
    Ok(ActiveSet::new(idx))
}

/// Active gradients and their `M^-1`-raised counterparts at a state.
pub(crate) struct ActiveGeometry {
    pub grads: Vec<DVector<f64>>,
    pub raised: Vec<DVector<f64>>,
}

impl ActiveGeometry {
    pub fn new(
        set: &ConstraintSet,
        indices: &[usize],
        chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
        x: &DVector<f64>,
        t: f64,
    ) -> Self {
        let grads: Vec<DVector<f64>> = indices.iter().map(|&j| set.get(j).gradient(x, t)).collect();
        let raised = grads.iter().map(|g| chol.solve(g)).collect();
        Self { grads, raised }
    }

    pub fn gram(&self) -> DMatrix<f64> {
        let a = self.grads.len();
        let mut g = DMatrix::zeros(a, a);
        for i in 0..a {
            for k in i..a {
                let v = self.grads[i].dot(&self.raised[k]);
                g[(i, k)] = v;
                g[(k, i)] = v;
            }
        }
        g
    }
}

pub(crate) fn check_obtuse(set: &ConstraintSet, indices: &[usize], gram: &DMatrix<f64>) -> Result<()> {
    for i in 0..indices.len() {
        for k in (i + 1)..indices.len() {
            if gram[(i, k)] < -ACUTE_CORNER_TOL {
                return Err(Error::AcuteCorner {
                    first: set.get(indices[i]).label.clone(),
                    second: set.get(indices[k]).label.clone(),
                    value: gram[(i, k)],
                });
            }
        }
    }
    Ok(())
}

pub fn gram_matrix(
    set: &ConstraintSet,
    active: &ActiveSet,
    metric: &MetricField,
    state: &StateVector,
) -> Result<DMatrix<f64>> {
    let m = metric.at(state)?;
    let chol = m.cholesky().expect("metric checked SPD");
    let geo = ActiveGeometry::new(set, &active.indices, &chol, &state.x, state.t);
    let gram = geo.gram();
    check_obtuse(set, &active.indices, &gram)?;
    Ok(gram)
}

/// Result of the active-set pivot on precomputed quantities; positions refer
/// to the slice of candidate constraints passed in.
pub(crate) struct Resolved {
    pub retained: Vec<usize>,
    pub released: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub gram: DMatrix<f64>,
    pub rank: usize,
}

/// Solve `lambda = -G+ b` on a working set, releasing constraints whose
/// multiplier turns positive and re-admitting released ones that would be
/// violated (`gdot > release_tol`). `full_gram` and `b` cover all candidates.
pub(crate) fn resolve(full_gram: &DMatrix<f64>, b: &DVector<f64>, release_tol: f64) -> Result<Resolved> {
    let a = b.len();
    let mut working: Vec<usize> = (0..a).collect();
    let mut released: Vec<usize> = Vec::new();
    let max_passes = 2 * a + 2;
    for _ in 0..max_passes {
        let w = working.len();
        let gw = DMatrix::from_fn(w, w, |i, k| full_gram[(working[i], working[k])]);
        let bw = DVector::from_fn(w, |i, _| b[working[i]]);
        let (pinv, rank) = linalg::pinv_psd(&gw);
        let lambdas: Vec<f64> = (-(&pinv * &bw)).iter().copied().collect();

        // most positive multiplier leaves; ties go to the lowest index
        let mut drop: Option<(usize, f64)> = None;
        for (pos, &l) in lambdas.iter().enumerate() {
            if l > 0.0 && drop.is_none_or(|(_, best)| l > best) {
                drop = Some((pos, l));
            }
        }
        if let Some((pos, _)) = drop {
            released.push(working.remove(pos));
            released.sort_unstable();
            continue;
        }

        // released constraints must not be violated by the retained forces
        let mut readmit: Option<(usize, f64)> = None;
        for (pos, &k) in released.iter().enumerate() {
            let gdot = b[k]
                + working
                    .iter()
                    .zip(&lambdas)
                    .map(|(&j, &l)| full_gram[(k, j)] * l)
                    .sum::<f64>();
            if gdot > release_tol && readmit.is_none_or(|(_, best)| gdot > best) {
                readmit = Some((pos, gdot));
            }
        }
        if let Some((pos, _)) = readmit {
            let k = released.remove(pos);
            working.push(k);
            working.sort_unstable();
            continue;
        }

        return Ok(Resolved {
            retained: working,
            released,
            lambdas,
            gram: gw,
            rank,
        });
    }
    Err(Error::NoConvergence { passes: max_passes })
}

/// Lagrange multipliers of the active constraints.
///
/// For persistent contact `lambda = -G+ b` with `b_k = dg_k/dx^T M^-1 f + dg_k/dt`;
/// positive multipliers release their constraint and the system is re-solved.
/// The retained multipliers are scaled by `1 + restitution` (collision case).
pub fn solve_multipliers(
    set: &ConstraintSet,
    active: &ActiveSet,
    metric: &MetricField,
    f: &CovectorField,
    state: &StateVector,
    restitution: f64,
) -> Result<MultiplierSolution> {
    if !(0.0..=1.0).contains(&restitution) {
        return Err(Error::InvalidInput(format!(
            "restitution {restitution} outside [0, 1]"
        )));
    }
    if active.is_empty() {
        return Ok(MultiplierSolution::empty());
    }
    let m = metric.at(state)?;
    let chol = m.cholesky().expect("metric checked SPD");
    let fv = f.at(state);
    let geo = ActiveGeometry::new(set, &active.indices, &chol, &state.x, state.t);
    let gram = geo.gram();
    check_obtuse(set, &active.indices, &gram)?;
    let b = DVector::from_fn(active.len(), |i, _| {
        geo.raised[i].dot(&fv) + set.get(active.indices[i]).time_derivative(&state.x, state.t)
    });
    let r = resolve(&gram, &b, set.release_tol)?;
    let retained: Vec<usize> = r.retained.iter().map(|&p| active.indices[p]).collect();
    Ok(MultiplierSolution {
        used_pseudoinverse: r.rank < retained.len(),
        active: ActiveSet { indices: retained },
        lambdas: r.lambdas.iter().map(|l| l * (1.0 + restitution)).collect(),
        released: r.released.iter().map(|&p| active.indices[p]).collect(),
        gram: r.gram,
        gram_rank: r.rank,
    })
}

pub fn tangent_basis(set: &ConstraintSet, active: &ActiveSet, state: &StateVector) -> TangentBasis {
    let n = state.dim();
    let rows = DMatrix::from_fn(active.len(), n, |i, k| {
        set.get(active.indices[i]).gradient(&state.x, state.t)[k]
    });
    TangentBasis {
        g_par: linalg::null_space(&rows, n),
    }
}
