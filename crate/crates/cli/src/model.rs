//! Turns validated scenario specs into solver objects.

use std::sync::Arc;

use contraq_core::collisions::{Hamiltonian, PhaseState};
use contraq_core::constraints::{ConstraintFunction, ConstraintSet};
use contraq_core::flow::SimConfig;
use contraq_core::geodesics::{Obstacle, Point, PolygonalWorld};
use contraq_core::geometry::{CovectorField, MetricField, StateVector, Tensor3};
use nalgebra::{DMatrix, DVector};

use crate::scenario::{
    ConstraintSpec, FieldSpec, ForceSpec, GeodesicSpec, HamiltonianSpec, Knot, Matrix, MetricSpec,
    PotentialSpec, Scenario, SimSpec, Term,
};

pub fn matrix(m: &Matrix) -> DMatrix<f64> {
    let n = m.len();
    let c = m.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, c, |i, j| m[i][j])
}

/// Sum of monomials with an exact gradient.
#[derive(Debug, Clone)]
pub struct Poly {
    terms: Vec<Term>,
}

impl Poly {
    pub fn new(terms: &[Term]) -> Self {
        Self {
            terms: terms.to_vec(),
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                t.coef
                    * t.powers
                        .iter()
                        .enumerate()
                        .map(|(i, &p)| x[i].powi(p as i32))
                        .product::<f64>()
            })
            .sum()
    }

    pub fn d(&self, k: usize, x: &DVector<f64>) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.powers[k] > 0)
            .map(|t| {
                let mut v = t.coef * f64::from(t.powers[k]);
                for (i, &p) in t.powers.iter().enumerate() {
                    let e = if i == k { p - 1 } else { p };
                    v *= x[i].powi(e as i32);
                }
                v
            })
            .sum()
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |k, _| self.d(k, x))
    }
}

pub fn field(spec: &FieldSpec) -> CovectorField {
    match spec {
        FieldSpec::Affine { a, b } => {
            let a = matrix(a);
            let b = b
                .as_ref()
                .map_or_else(|| DVector::zeros(a.nrows()), |b| DVector::from_column_slice(b));
            CovectorField::affine(a, b)
        }
        FieldSpec::LinearDecay { dim, rate } => {
            CovectorField::linear(DMatrix::identity(*dim, *dim) * -*rate)
        }
        FieldSpec::Polynomial { components } => {
            let polys: Arc<Vec<Poly>> = Arc::new(components.iter().map(|c| Poly::new(c)).collect());
            let p2 = polys.clone();
            let n = polys.len();
            CovectorField::new(n, move |x, _| DVector::from_fn(n, |i, _| polys[i].eval(x)))
                .with_jacobian(move |x, _| DMatrix::from_fn(n, n, |i, k| p2[i].d(k, x)))
        }
    }
}

pub fn metric(spec: Option<&MetricSpec>, n: usize) -> MetricField {
    match spec {
        None => MetricField::identity(n),
        Some(MetricSpec::Identity { dim }) => MetricField::identity(*dim),
        Some(MetricSpec::Constant { m }) => MetricField::constant(matrix(m)),
        Some(MetricSpec::Polynomial { entries }) => {
            let n = entries.len();
            let polys: Arc<Vec<Vec<Poly>>> = Arc::new(
                (0..n)
                    .map(|i| {
                        (0..n)
                            .map(|j| Poly::new(&entries[i.min(j)][i.max(j)]))
                            .collect()
                    })
                    .collect(),
            );
            let p2 = polys.clone();
            MetricField::analytic(n, move |x, _| DMatrix::from_fn(n, n, |i, j| polys[i][j].eval(x)))
                .with_d_dx(move |x, _| Tensor3::from_fn(n, |i, j, k| p2[i][j].d(k, x)))
                .time_invariant()
        }
    }
}

/// Natural cubic spline through `(t_i, y_i)`, extended linearly outside the knots.
#[derive(Debug, Clone)]
pub struct Spline {
    t: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl Spline {
    pub fn new(t: Vec<f64>, y: Vec<f64>) -> Self {
        let n = t.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // tridiagonal solve for the interior second derivatives
            let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
            let mut diag = vec![0.0; n];
            let mut rhs = vec![0.0; n];
            for i in 1..n - 1 {
                diag[i] = 2.0 * (h[i - 1] + h[i]);
                rhs[i] = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]);
            }
            for i in 2..n - 1 {
                let w = h[i - 1] / diag[i - 1];
                diag[i] -= w * h[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            for i in (1..n - 1).rev() {
                let next = if i + 1 < n - 1 { h[i] * m[i + 1] } else { 0.0 };
                m[i] = (rhs[i] - next) / diag[i];
            }
        }
        Self { t, y, m }
    }

    fn segment(&self, s: f64) -> usize {
        let n = self.t.len();
        match self.t.partition_point(|&k| k <= s) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        }
    }

    /// Value and first derivative at `s`.
    pub fn eval(&self, s: f64) -> (f64, f64) {
        let n = self.t.len();
        if n == 1 {
            return (self.y[0], 0.0);
        }
        let (t, y, m) = (&self.t, &self.y, &self.m);
        let slope_at = |i: usize, at_left: bool| {
            let h = t[i + 1] - t[i];
            let base = (y[i + 1] - y[i]) / h;
            if at_left {
                base - h * (2.0 * m[i] + m[i + 1]) / 6.0
            } else {
                base + h * (m[i] + 2.0 * m[i + 1]) / 6.0
            }
        };
        if s < t[0] {
            let d = slope_at(0, true);
            return (y[0] + d * (s - t[0]), d);
        }
        if s > t[n - 1] {
            let d = slope_at(n - 2, false);
            return (y[n - 1] + d * (s - t[n - 1]), d);
        }
        let i = self.segment(s);
        let h = t[i + 1] - t[i];
        let a = (t[i + 1] - s) / h;
        let b = (s - t[i]) / h;
        let v = a * y[i]
            + b * y[i + 1]
            + ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) * h * h / 6.0;
        let d = (y[i + 1] - y[i]) / h
            + (-(3.0 * a * a - 1.0) * m[i] + (3.0 * b * b - 1.0) * m[i + 1]) * h / 6.0;
        (v, d)
    }
}

fn center_path(knots: &[Knot]) -> (Spline, Spline) {
    let t: Vec<f64> = knots.iter().map(|k| k.t).collect();
    (
        Spline::new(t.clone(), knots.iter().map(|k| k.center[0]).collect()),
        Spline::new(t, knots.iter().map(|k| k.center[1]).collect()),
    )
}

pub fn constraint(spec: &ConstraintSpec) -> ConstraintFunction {
    match spec {
        ConstraintSpec::Linear { label, a, b } => {
            ConstraintFunction::linear(label.clone(), DVector::from_column_slice(a), *b)
        }
        ConstraintSpec::Quadratic { label, q, a, c } => ConstraintFunction::quadratic(
            label.clone(),
            matrix(q),
            DVector::from_column_slice(a),
            *c,
        ),
        ConstraintSpec::Circle {
            label,
            radius,
            knots,
        } => {
            let path = Arc::new(center_path(knots));
            let p2 = path.clone();
            ConstraintFunction::circle(
                label.clone(),
                *radius,
                move |t| (path.0.eval(t).0, path.1.eval(t).0),
                move |t| (p2.0.eval(t).1, p2.1.eval(t).1),
            )
        }
    }
}

pub fn constraints(specs: &[ConstraintSpec], sim: Option<&SimSpec>) -> contraq_core::Result<ConstraintSet> {
    let set = ConstraintSet::new(specs.iter().map(constraint).collect())?;
    let (act, rel) = (set.activation_tol, set.release_tol);
    match sim {
        Some(s) if s.activation_tol.is_some() || s.release_tol.is_some() => {
            set.with_tolerances(s.activation_tol.unwrap_or(act), s.release_tol.unwrap_or(rel))
        }
        _ => Ok(set),
    }
}

pub fn sim_config(sim: &SimSpec, dt_override: Option<f64>) -> SimConfig {
    let cfg = SimConfig::new(dt_override.unwrap_or(sim.dt), sim.t_end);
    match sim.event_tol {
        Some(tol) => cfg.with_event_tol(tol),
        None => cfg,
    }
}

pub fn initial_state(s: &Scenario) -> contraq_core::Result<StateVector> {
    let init = s.initial.as_ref().expect("validated");
    StateVector::from_slice(init.x.as_ref().expect("validated"), init.t)
}

pub fn initial_phase(s: &Scenario) -> contraq_core::Result<PhaseState> {
    let init = s.initial.as_ref().expect("validated");
    PhaseState::from_slices(
        init.q.as_ref().expect("validated"),
        init.p.as_ref().expect("validated"),
        init.t,
    )
}

pub fn hamiltonian(spec: &HamiltonianSpec) -> Hamiltonian {
    let h = matrix(&spec.inverse_mass);
    let n = h.nrows();
    let mut ham = match &spec.potential {
        PotentialSpec::Zero => Hamiltonian::quadratic(h, DMatrix::zeros(n, n)),
        PotentialSpec::Quadratic { k } => Hamiltonian::quadratic(h, matrix(k)),
        PotentialSpec::Polynomial { terms } => {
            let v = Arc::new(Poly::new(terms));
            let v2 = v.clone();
            Hamiltonian::new(n, move |q, _| v.eval(q), move |_| h.clone())
                .with_grad_potential(move |q, _| v2.gradient(q))
                .with_constant_inverse_mass()
        }
    };
    if let Some(d) = &spec.damping {
        ham = ham.with_damping(matrix(d));
    }
    if let Some(ForceSpec::PiecewiseConstant { breaks, values }) = &spec.force {
        let breaks = breaks.clone();
        let values: Vec<DVector<f64>> = values.iter().map(|v| DVector::from_column_slice(v)).collect();
        ham = ham.with_force(move |t| values[breaks.partition_point(|&b| b <= t)].clone());
    }
    ham
}

pub fn world(spec: &GeodesicSpec) -> contraq_core::Result<PolygonalWorld> {
    let pt = |p: &[f64; 2]| Point::new(p[0], p[1]);
    let obstacles = spec
        .obstacles
        .iter()
        .map(|o| {
            if o.vertices.len() == 2 {
                Obstacle::wall(pt(&o.vertices[0]), pt(&o.vertices[1]))
            } else {
                Obstacle::polygon(o.vertices.iter().map(pt).collect())
            }
        })
        .collect::<contraq_core::Result<Vec<_>>>()?;
    PolygonalWorld::new(obstacles, pt(&spec.source), pt(&spec.target))
}
