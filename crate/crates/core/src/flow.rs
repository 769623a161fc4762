//! Event-driven integration of the constrained first-order flow
//! `M xdot = f + sum_j lambda_j dg_j/dx`.
//!
//! Between events the flow is advanced with classical RK4 on a fixed time
//! grid `t0 + k dt_max`. A constraint that becomes violated during a step is
//! localized in time by bisection, the state is projected onto its boundary
//! and an activation event is recorded. Active constraints whose multiplier
//! turns positive are released.

use nalgebra::{Cholesky, DVector, Dyn};

use crate::constraints::{self, ActiveGeometry, ActiveSet, ConstraintSet, MultiplierSolution};
use crate::error::{Error, Result};
use crate::geometry::{CovectorField, MetricField, StateVector};

/// Smallest bisection bracket before giving up.
pub const MIN_BRACKET: f64 = 1e-14;
const MAX_PROJECTION_ROUNDS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub dt_max: f64,
    pub event_tol: f64,
    pub t_end: f64,
    /// Only 4 (classical Runge-Kutta) is supported.
    pub integrator_order: u8,
}

impl SimConfig {
    pub fn new(dt_max: f64, t_end: f64) -> Self {
        Self {
            dt_max,
            event_tol: 1e-12,
            t_end,
            integrator_order: 4,
        }
    }

    pub fn with_event_tol(mut self, event_tol: f64) -> Self {
        self.event_tol = event_tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_max > 0.0 && self.dt_max.is_finite()) {
            return Err(Error::InvalidInput("dt_max must be positive".into()));
        }
        if self.event_tol.is_nan() || self.event_tol <= 0.0 {
            return Err(Error::InvalidInput("event_tol must be positive".into()));
        }
        if !self.t_end.is_finite() {
            return Err(Error::InvalidInput("t_end must be finite".into()));
        }
        if self.integrator_order != 4 {
            return Err(Error::InvalidInput(format!(
                "integrator order {} not supported",
                self.integrator_order
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Activation,
    Release,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub kind: EventKind,
    pub time: f64,
    pub constraint: String,
    pub index: usize,
    pub pre_state: StateVector,
    pub post_state: StateVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: DVector<f64>,
    /// Retained active constraints at this sample.
    pub active: Vec<usize>,
    /// Multipliers aligned with `active`.
    pub lambdas: Vec<f64>,
}

impl Sample {
    pub fn state(&self) -> StateVector {
        StateVector {
            x: self.x.clone(),
            t: self.t,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
}

impl Trajectory {
    pub fn final_state(&self) -> Option<StateVector> {
        self.samples.last().map(Sample::state)
    }

    /// Sample with exactly this time stamp.
    pub fn sample_at(&self, t: f64) -> Option<&Sample> {
        self.samples
            .binary_search_by(|s| s.t.partial_cmp(&t).expect("finite times"))
            .ok()
            .map(|i| &self.samples[i])
    }

    pub fn has_event_in(&self, lo: f64, hi: f64) -> bool {
        self.events.iter().any(|e| e.time >= lo && e.time <= hi)
    }
}

/// One classical fourth-order Runge-Kutta step of `xdot = v(x, t)`.
pub fn rk4_step<F>(mut v: F, x: &DVector<f64>, t: f64, h: f64) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>, f64) -> Result<DVector<f64>>,
{
    let k1 = v(x, t)?;
    let k2 = v(&(x + &k1 * (h / 2.0)), t + h / 2.0)?;
    let k3 = v(&(x + &k2 * (h / 2.0)), t + h / 2.0)?;
    let k4 = v(&(x + &k3 * h), t + h)?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// `M^-1 f` with no constraint contribution.
pub fn unconstrained_velocity(
    metric: &MetricField,
    f: &CovectorField,
    state: &StateVector,
) -> Result<DVector<f64>> {
    let chol = metric
        .at(state)?
        .cholesky()
        .expect("metric checked SPD");
    Ok(chol.solve(&f.at(state)))
}

/// Constrained velocity `M^-1 (f + sum_j lambda_j dg_j/dx)` at a feasible state.
pub fn solve_velocity(
    metric: &MetricField,
    f: &CovectorField,
    constraints: &ConstraintSet,
    state: &StateVector,
) -> Result<DVector<f64>> {
    let active = constraints::detect_active(constraints, state)?;
    let flow = ConstrainedFlow::new(metric, f, constraints);
    Ok(flow.velocity(&active.indices, &state.x, state.t)?.0)
}

/// Borrowed bundle of the three ingredients of a constrained flow.
#[derive(Clone, Copy)]
pub struct ConstrainedFlow<'a> {
    pub metric: &'a MetricField,
    pub field: &'a CovectorField,
    pub constraints: &'a ConstraintSet,
}

impl<'a> ConstrainedFlow<'a> {
    pub fn new(
        metric: &'a MetricField,
        field: &'a CovectorField,
        constraints: &'a ConstraintSet,
    ) -> Self {
        Self {
            metric,
            field,
            constraints,
        }
    }

    /// Velocity with `candidates` treated as active, without a feasibility
    /// check. Candidates may be released by the multiplier pivot; the
    /// resulting multiplier solution is returned alongside.
    pub fn velocity(
        &self,
        candidates: &[usize],
        x: &DVector<f64>,
        t: f64,
    ) -> Result<(DVector<f64>, MultiplierSolution)> {
        let state = StateVector { x: x.clone(), t };
        let chol: Cholesky<f64, Dyn> = self
            .metric
            .at(&state)?
            .cholesky()
            .expect("metric checked SPD");
        let fv = self.field.at(&state);
        if candidates.is_empty() {
            return Ok((chol.solve(&fv), MultiplierSolution::empty()));
        }
        let set = self.constraints;
        let geo = ActiveGeometry::new(set, candidates, &chol, x, t);
        let gram = geo.gram();
        constraints::check_obtuse(set, candidates, &gram)?;
        let b = DVector::from_fn(candidates.len(), |i, _| {
            geo.raised[i].dot(&fv) + set.get(candidates[i]).time_derivative(x, t)
        });
        let r = constraints::resolve(&gram, &b, set.release_tol)?;
        let mut force = fv;
        for (&pos, &l) in r.retained.iter().zip(&r.lambdas) {
            force += &geo.grads[pos] * l;
        }
        let sol = MultiplierSolution {
            used_pseudoinverse: r.rank < r.retained.len(),
            active: ActiveSet {
                indices: r.retained.iter().map(|&p| candidates[p]).collect(),
            },
            lambdas: r.lambdas,
            released: r.released.iter().map(|&p| candidates[p]).collect(),
            gram: r.gram,
            gram_rank: r.rank,
        };
        Ok((chol.solve(&force), sol))
    }

    /// Multiplier solution at a feasible state (active set detected).
    pub fn multipliers(&self, state: &StateVector) -> Result<MultiplierSolution> {
        let active = constraints::detect_active(self.constraints, state)?;
        Ok(self.velocity(&active.indices, &state.x, state.t)?.1)
    }

    fn rk4(&self, retained: &[usize], x: &DVector<f64>, t: f64, h: f64) -> Result<DVector<f64>> {
        rk4_step(|x, t| Ok(self.velocity(retained, x, t)?.0), x, t, h)
    }

    /// Newton projection of `x` onto `g_j = 0` for each listed constraint.
    pub fn project(&self, x: &DVector<f64>, t: f64, indices: &[usize]) -> Result<DVector<f64>> {
        project_onto(self.constraints, x, t, indices)
    }
}

/// Repeated Newton steps `x -= g grad / |grad|^2` until every listed
/// constraint satisfies `|g| <= activation_tol` (at least one sweep is made).
pub fn project_onto(
    set: &ConstraintSet,
    x: &DVector<f64>,
    t: f64,
    indices: &[usize],
) -> Result<DVector<f64>> {
    let mut x = x.clone();
    if indices.is_empty() {
        return Ok(x);
    }
    for _ in 0..MAX_PROJECTION_ROUNDS {
        for &j in indices {
            let c = set.get(j);
            let g = c.value(&x, t);
            if g != 0.0 {
                let grad = c.gradient(&x, t);
                let nn = grad.norm_squared();
                if nn <= 1e-20 {
                    return Err(Error::InvalidInput(format!(
                        "degenerate gradient for constraint `{}`",
                        c.label()
                    )));
                }
                x -= grad * (g / nn);
            }
        }
        if indices
            .iter()
            .all(|&j| set.get(j).value(&x, t).abs() <= set.activation_tol)
        {
            return Ok(x);
        }
    }
    let worst = indices
        .iter()
        .copied()
        .max_by(|&a, &b| {
            let ga = set.get(a).value(&x, t).abs();
            let gb = set.get(b).value(&x, t).abs();
            ga.total_cmp(&gb)
        })
        .expect("nonempty");
    Err(Error::InfeasibleState {
        label: set.get(worst).label().to_string(),
        value: set.get(worst).value(&x, t),
    })
}

fn sample_from(state: &StateVector, sol: &MultiplierSolution) -> Sample {
    Sample {
        t: state.t,
        x: state.x.clone(),
        active: sol.active.indices.clone(),
        lambdas: sol.lambdas.clone(),
    }
}

fn push_sample(samples: &mut Vec<Sample>, s: Sample) {
    match samples.last_mut() {
        Some(last) if last.t == s.t => *last = s,
        _ => samples.push(s),
    }
}

/// Integrates the constrained flow from `x0` to `config.t_end`.
pub fn simulate(
    metric: &MetricField,
    f: &CovectorField,
    constraints: &ConstraintSet,
    x0: &StateVector,
    config: &SimConfig,
) -> Result<Trajectory> {
    config.validate()?;
    let flow = ConstrainedFlow::new(metric, f, constraints);
    let set = constraints;
    let t0 = x0.t;
    let mut state = x0.clone();
    let mut traj = Trajectory::default();
    let mut contact: Vec<usize> = Vec::new();
    let mut first = true;
    let mut grid_k: u64 = 0;
    let mut stalled = 0usize;

    loop {
        let detected = constraints::detect_active(set, &state)?;
        let (_, sol) = flow.velocity(&detected.indices, &state.x, state.t)?;
        let retained = sol.active.indices.clone();
        if !first {
            for &j in contact.iter().filter(|j| !retained.contains(j)) {
                traj.events.push(Event {
                    kind: EventKind::Release,
                    time: state.t,
                    constraint: set.get(j).label().to_string(),
                    index: j,
                    pre_state: state.clone(),
                    post_state: state.clone(),
                });
            }
            for &j in retained.iter().filter(|j| !contact.contains(j)) {
                traj.events.push(Event {
                    kind: EventKind::Activation,
                    time: state.t,
                    constraint: set.get(j).label().to_string(),
                    index: j,
                    pre_state: state.clone(),
                    post_state: state.clone(),
                });
            }
        }
        first = false;
        contact = retained.clone();
        push_sample(&mut traj.samples, sample_from(&state, &sol));

        if state.t >= config.t_end {
            break;
        }
        let grid_next = t0 + (grid_k + 1) as f64 * config.dt_max;
        let (target, on_grid) = if grid_next >= config.t_end {
            (config.t_end, false)
        } else {
            (grid_next, true)
        };
        let t = state.t;
        let advance = |tau: f64| -> Result<DVector<f64>> {
            let x = flow.rk4(&retained, &state.x, t, tau - t)?;
            settle(&flow, &x, tau, &retained)
        };
        let x_new = advance(target)?;

        let crossing: Vec<usize> = (0..set.len())
            .filter(|j| !retained.contains(j))
            .filter(|&j| set.get(j).value(&x_new, target) > set.activation_tol)
            .collect();

        if crossing.is_empty() {
            state = StateVector { x: x_new, t: target };
            if on_grid {
                grid_k += 1;
            }
            stalled = 0;
            continue;
        }

        // localize the earliest crossing; lowest index wins ties
        let mut best: Option<(f64, usize)> = None;
        for &j in &crossing {
            let c = set.get(j);
            let (mut lo, mut hi) = (t, target);
            while hi - lo > config.event_tol {
                if hi - lo < MIN_BRACKET {
                    return Err(Error::StepTooSmall { t: lo, dt: hi - lo });
                }
                let mid = 0.5 * (lo + hi);
                if c.value(&advance(mid)?, mid) > set.activation_tol {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            match best {
                Some((b, _)) if lo >= b - config.event_tol => {}
                _ => best = Some((lo, j)),
            }
        }
        let (t_event, j) = best.expect("at least one crossing");
        let pre_x = if t_event == t {
            state.x.clone()
        } else {
            advance(t_event)?
        };
        let mut post_idx = retained.clone();
        post_idx.push(j);
        let post_x = flow.project(&pre_x, t_event, &post_idx)?;
        let pre_state = StateVector { x: pre_x, t: t_event };
        let post_state = StateVector {
            x: post_x,
            t: t_event,
        };
        traj.events.push(Event {
            kind: EventKind::Activation,
            time: t_event,
            constraint: set.get(j).label().to_string(),
            index: j,
            pre_state,
            post_state: post_state.clone(),
        });
        contact.push(j);
        contact.sort_unstable();
        if t_event == t {
            stalled += 1;
            if stalled > set.len() + 2 {
                return Err(Error::StepTooSmall { t, dt: 0.0 });
            }
        } else {
            stalled = 0;
        }
        state = post_state;
    }
    Ok(traj)
}

/// Re-projects retained constraints that drifted off their boundary during a
/// step; constraints released mid-step (now strictly inside) are left alone.
fn settle(
    flow: &ConstrainedFlow<'_>,
    x: &DVector<f64>,
    t: f64,
    retained: &[usize],
) -> Result<DVector<f64>> {
    let set = flow.constraints;
    let idx: Vec<usize> = retained
        .iter()
        .copied()
        .filter(|&j| set.get(j).value(x, t) >= -set.activation_tol)
        .collect();
    flow.project(x, t, &idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::ConstraintFunction;
    use nalgebra::DMatrix;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn example2_velocity_vanishes_at_far_point() {
        let set = ConstraintSet::new(vec![ConstraintFunction::circle(
            "circle",
            1.0,
            |_| (2.0, 0.0),
            |_| (0.0, 0.0),
        )])
        .unwrap();
        let f = CovectorField::linear(-DMatrix::identity(2, 2));
        let s = StateVector::from_slice(&[3.0, 0.0], 0.0).unwrap();
        let vel = solve_velocity(&MetricField::identity(2), &f, &set, &s).unwrap();
        assert!(vel.amax() < 1e-15);
        // explicit Euler step stays feasible to first order
        let next = &s.x + &vel * 1e-3;
        assert!(set.get(0).value(&next, 0.0) <= 1e-12);
    }

    #[test]
    fn example1_velocity_is_tangent() {
        let set = ConstraintSet::new(vec![ConstraintFunction::quadratic(
            "parabola",
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            v(&[0.0, 1.0]),
            0.0,
        )])
        .unwrap();
        let f = CovectorField::affine(DMatrix::identity(2, 2), v(&[0.0, 1.0]));
        let s = StateVector::from_slice(&[1.0, -1.0], 0.0).unwrap();
        let vel = solve_velocity(&MetricField::identity(2), &f, &set, &s).unwrap();
        assert!((vel - v(&[0.2, -0.4])).amax() < 1e-15);
    }

    #[test]
    fn interior_velocity_is_raised_field() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let f = CovectorField::new(2, |_, _| DVector::from_vec(vec![1.0, 0.0]));
        let s = StateVector::from_slice(&[0.0, 0.0], 0.0).unwrap();
        let vel =
            solve_velocity(&MetricField::constant(m), &f, &ConstraintSet::empty(), &s).unwrap();
        assert!((vel - v(&[2.0 / 3.0, -1.0 / 3.0])).amax() < 1e-15);
    }

    #[test]
    fn decay_matches_exponential() {
        let f = CovectorField::linear(-DMatrix::identity(2, 2));
        let x0 = StateVector::from_slice(&[1.0, 1.0], 0.0).unwrap();
        let traj = simulate(
            &MetricField::identity(2),
            &f,
            &ConstraintSet::empty(),
            &x0,
            &SimConfig::new(1e-2, 1.0),
        )
        .unwrap();
        let end = traj.final_state().unwrap();
        assert_eq!(end.t, 1.0);
        let e = (-1.0f64).exp();
        assert!((end.x - v(&[e, e])).amax() < 1e-8);
        assert!(traj.events.is_empty());
    }

    #[test]
    fn first_order_envelope_holds_at_wall() {
        // xdot = x from x = 1 reaches the wall x1 = 2 and stays there
        let set = ConstraintSet::new(vec![ConstraintFunction::linear("wall", v(&[1.0, 0.0]), -2.0)])
            .unwrap();
        let f = CovectorField::linear(DMatrix::identity(2, 2));
        let x0 = StateVector::from_slice(&[1.0, 0.1], 0.0).unwrap();
        let traj = simulate(
            &MetricField::identity(2),
            &f,
            &set,
            &x0,
            &SimConfig::new(1e-2, 2.0),
        )
        .unwrap();
        let act: Vec<_> = traj
            .events
            .iter()
            .filter(|e| e.kind == EventKind::Activation)
            .collect();
        assert_eq!(act.len(), 1);
        assert!((act[0].time - 2f64.ln()).abs() < 1e-9);
        for s in traj.samples.iter().filter(|s| s.t > act[0].time) {
            assert!((s.x[0] - 2.0).abs() <= 1e-9);
        }
        let end = traj.final_state().unwrap();
        assert!((end.x[1] - 0.1 * 2f64.exp()).abs() < 1e-8);
    }

    #[test]
    fn rejects_infeasible_start() {
        let set = ConstraintSet::new(vec![ConstraintFunction::linear("wall", v(&[1.0]), -2.0)])
            .unwrap();
        let f = CovectorField::linear(DMatrix::identity(1, 1));
        let x0 = StateVector::from_slice(&[3.0], 0.0).unwrap();
        let err = simulate(&MetricField::identity(1), &f, &set, &x0, &SimConfig::new(0.1, 1.0))
            .unwrap_err();
        assert!(matches!(err, Error::InfeasibleState { .. }));
    }

    #[test]
    fn bad_config_is_rejected() {
        let f = CovectorField::linear(DMatrix::identity(1, 1));
        let x0 = StateVector::from_slice(&[0.0], 0.0).unwrap();
        let cfg = SimConfig::new(0.0, 1.0);
        assert!(simulate(&MetricField::identity(1), &f, &ConstraintSet::empty(), &x0, &cfg).is_err());
    }
}
