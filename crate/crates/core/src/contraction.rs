//! Contraction bounds on the constraint tangent space and their empirical
//! counterparts (virtual-displacement propagation, neighboring trajectories).

use nalgebra::{DMatrix, DVector};

use crate::constraints::{self, ConstraintSet, MultiplierSolution, TangentBasis};
use crate::error::{Error, Result};
use crate::flow::{self, ConstrainedFlow, EventKind, SimConfig, Trajectory};
use crate::geometry::{self, CovectorField, MetricField, StateVector};
use crate::linalg;

/// Separation above which a neighboring pair is no longer a linearization.
pub const MAX_PAIR_SEPARATION: f64 = 1e-1;

/// A virtual displacement and its coordinates in the tangent basis.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualDisplacement {
    pub delta_x: DVector<f64>,
    pub reduced: DVector<f64>,
}

impl VirtualDisplacement {
    pub fn from_reduced(basis: &TangentBasis, reduced: DVector<f64>) -> Self {
        Self {
            delta_x: &basis.g_par * &reduced,
            reduced,
        }
    }

    /// Orthogonal projection of `dx` onto the span of the basis.
    pub fn project(basis: &TangentBasis, dx: &DVector<f64>) -> Self {
        Self::from_reduced(basis, basis.g_par.transpose() * dx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionBounds {
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `G^T (.)_H G`, m x m.
    pub generalized_jacobian: DMatrix<f64>,
    /// `G^T M G`, m x m.
    pub projected_metric: DMatrix<f64>,
    pub tangent: TangentBasis,
    pub multipliers: MultiplierSolution,
}

/// Symmetric part of `nabla_M f + 1/2 dM/dt + sum_j lambda_j nabla_M^2 g_j`.
pub fn generalized_jacobian(
    metric: &MetricField,
    f: &CovectorField,
    constraints: &ConstraintSet,
    multipliers: &MultiplierSolution,
    state: &StateVector,
) -> Result<DMatrix<f64>> {
    let mut a = geometry::covariant_derivative_vector(f, metric, state)?;
    if !metric.is_constant() {
        a += metric.d_dt(state)? * 0.5;
    }
    for (&j, &l) in multipliers.active.indices.iter().zip(&multipliers.lambdas) {
        if l != 0.0 {
            a += geometry::covariant_hessian_scalar(constraints.get(j), metric, state)? * l;
        }
    }
    Ok(linalg::sym_part(&a))
}

/// Extreme rates of the pencil `G^T A G v = lambda G^T M G v` at a feasible state.
pub fn contraction_bounds(
    metric: &MetricField,
    f: &CovectorField,
    constraints: &ConstraintSet,
    state: &StateVector,
) -> Result<ContractionBounds> {
    let multipliers = ConstrainedFlow::new(metric, f, constraints).multipliers(state)?;
    let tangent = constraints::tangent_basis(constraints, &multipliers.active, state);
    if tangent.dim() == 0 {
        return Err(Error::DegenerateTangentSpace);
    }
    let a = generalized_jacobian(metric, f, constraints, &multipliers, state)?;
    let m = metric.at(state)?;
    let g = &tangent.g_par;
    let ga = linalg::sym_part(&(g.transpose() * a * g));
    let gm = linalg::sym_part(&(g.transpose() * m * g));
    let (lambda_min, lambda_max) = linalg::generalized_extremes(&ga, &gm, state.t)?;
    Ok(ContractionBounds {
        lambda_min,
        lambda_max,
        generalized_jacobian: ga,
        projected_metric: gm,
        tangent,
        multipliers,
    })
}

/// `P = I - M^-1 N (N^T M^-1 N)^+ N^T` for the normals `N = [n_1 .. n_k]`.
pub fn activation_projection(m: &DMatrix<f64>, normals: &[DVector<f64>]) -> DMatrix<f64> {
    let n = m.nrows();
    if normals.is_empty() {
        return DMatrix::identity(n, n);
    }
    let nm = DMatrix::from_columns(normals);
    let chol = m.clone().cholesky().expect("metric checked SPD");
    let raised = chol.solve(&nm);
    let (pinv, _) = linalg::pinv_psd(&linalg::sym_part(&(nm.transpose() * &raised)));
    DMatrix::identity(n, n) - raised * pinv * nm.transpose()
}

/// Jump of a virtual displacement when the constraints with `normals` activate.
pub fn activation_jump(
    m: &DMatrix<f64>,
    normals: &[DVector<f64>],
    delta: &DVector<f64>,
) -> DVector<f64> {
    activation_projection(m, normals) * delta
}

fn active_normals(set: &ConstraintSet, active: &[usize], state: &StateVector) -> Vec<DVector<f64>> {
    active
        .iter()
        .map(|&j| set.get(j).gradient(&state.x, state.t))
        .collect()
}

/// Propagates a virtual displacement along a simulated trajectory.
///
/// Between samples the pair `(x, dx)` is integrated with RK4, the variation
/// being a central directional difference of the constrained velocity.
/// Constraints active at the start, and constraints activated by events,
/// project `dx` M-orthogonally onto their tangent space.
pub fn propagate_delta(
    metric: &MetricField,
    f: &CovectorField,
    constraints: &ConstraintSet,
    trajectory: &Trajectory,
    delta0: &DVector<f64>,
) -> Result<Vec<(f64, DVector<f64>)>> {
    let flow = ConstrainedFlow::new(metric, f, constraints);
    let samples = &trajectory.samples;
    let Some(first) = samples.first() else {
        return Ok(Vec::new());
    };
    if delta0.len() != first.x.len() {
        return Err(Error::DimensionMismatch {
            expected: first.x.len(),
            got: delta0.len(),
        });
    }
    let n = delta0.len();
    let mut delta = delta0.clone();
    let mut out = Vec::with_capacity(samples.len());
    for (k, s) in samples.iter().enumerate() {
        let activated = k == 0
            || trajectory
                .events
                .iter()
                .any(|e| e.kind == EventKind::Activation && e.time == s.t);
        if activated && !s.active.is_empty() {
            let state = s.state();
            let m = metric.at(&state)?;
            delta = activation_jump(&m, &active_normals(constraints, &s.active, &state), &delta);
        }
        out.push((s.t, delta.clone()));
        let Some(next) = samples.get(k + 1) else {
            break;
        };
        let h = next.t - s.t;
        if h <= 0.0 {
            continue;
        }
        let active = &s.active;
        let rhs = |z: &DVector<f64>, t: f64| -> Result<DVector<f64>> {
            let x = z.rows(0, n).clone_owned();
            let d = z.rows(n, n).clone_owned();
            let v = flow.velocity(active, &x, t)?.0;
            let dn = d.norm();
            let dv = if dn == 0.0 {
                DVector::zeros(n)
            } else {
                let eps = 1e-6 * x.norm().max(1.0) / dn;
                let vp = flow.velocity(active, &(&x + &d * eps), t)?.0;
                let vm = flow.velocity(active, &(&x - &d * eps), t)?.0;
                (vp - vm) / (2.0 * eps)
            };
            let mut dz = DVector::zeros(2 * n);
            dz.rows_mut(0, n).copy_from(&v);
            dz.rows_mut(n, n).copy_from(&dv);
            Ok(dz)
        };
        let mut z = DVector::zeros(2 * n);
        z.rows_mut(0, n).copy_from(&s.x);
        z.rows_mut(n, n).copy_from(&delta);
        let z = flow::rk4_step(rhs, &z, s.t, h)?;
        delta = z.rows(n, n).clone_owned();
    }
    Ok(out)
}

/// One measured point of the log-distance rate of a neighboring pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSample {
    pub t: f64,
    pub rate: f64,
    /// State of the reference trajectory at `t`.
    pub x: DVector<f64>,
    pub distance: f64,
}

/// Simulates `x0` and `x0 + epsilon u` and measures `d/dt log d_M` by
/// centered differences at common sample times, skipping windows that
/// contain events of either trajectory.
pub fn empirical_rate(
    metric: &MetricField,
    f: &CovectorField,
    constraints: &ConstraintSet,
    x0: &StateVector,
    epsilon: f64,
    direction: &DVector<f64>,
    config: &SimConfig,
) -> Result<Vec<RateSample>> {
    let un = direction.norm();
    if un == 0.0 || epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::InvalidInput(
            "neighbor direction and epsilon must be nonzero".into(),
        ));
    }
    let x1 = StateVector::new(&x0.x + direction * (epsilon / un), x0.t)?;
    let a = flow::simulate(metric, f, constraints, x0, config)?;
    let b = flow::simulate(metric, f, constraints, &x1, config)?;
    pair_rate(metric, &a, &b)
}

/// Rate series of two precomputed trajectories.
pub fn pair_rate(metric: &MetricField, a: &Trajectory, b: &Trajectory) -> Result<Vec<RateSample>> {
    let mut common: Vec<(f64, DVector<f64>, f64)> = Vec::new();
    for sa in &a.samples {
        let Some(sb) = b.sample_at(sa.t) else {
            continue;
        };
        let mid = StateVector {
            x: (&sa.x + &sb.x) * 0.5,
            t: sa.t,
        };
        let m = metric.at(&mid)?;
        let d = &sa.x - &sb.x;
        let dist = d.dot(&(m * &d)).max(0.0).sqrt();
        if dist > MAX_PAIR_SEPARATION {
            return Err(Error::DivergedPair {
                t: sa.t,
                separation: dist,
            });
        }
        common.push((sa.t, sa.x.clone(), dist));
    }
    let mut out = Vec::new();
    for w in common.windows(3) {
        let (t0, _, d0) = &w[0];
        let (t1, x1, d1) = &w[1];
        let (t2, _, d2) = &w[2];
        if a.has_event_in(*t0, *t2) || b.has_event_in(*t0, *t2) {
            continue;
        }
        if *d0 <= 0.0 || *d2 <= 0.0 {
            continue;
        }
        out.push(RateSample {
            t: *t1,
            rate: (d2.ln() - d0.ln()) / (t2 - t0),
            x: x1.clone(),
            distance: *d1,
        });
    }
    Ok(out)
}
