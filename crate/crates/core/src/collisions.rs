//! Constrained Hamiltonian dynamics with collisions.
//!
//! Two formulations are integrated side by side. In the step form the
//! momentum `pbar` never jumps; collisions add a velocity increment
//! `lambda H dg/dq` to an accumulated term `w`, and `qdot = H pbar + w`.
//! In the Dirac form the momentum itself jumps by `lambda dg/dq`.
//! Persistent (plastic) contact is enforced at the acceleration level so
//! that the constraint velocity stays at zero until the contact force
//! would pull.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::constraints::{self, ConstraintFunction, ConstraintSet};
use crate::error::{Error, Result};
use crate::flow::{self, SimConfig, MIN_BRACKET};
use crate::geometry::{ScalarFn, StateVector, Tensor3, VectorFn};
use crate::linalg;

/// Incoming constraint speeds at or below this are treated as plastic
/// touch-downs regardless of restitution (prevents Zeno bouncing).
pub const CONTACT_SPEED: f64 = 1e-7;

type InverseMassFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
type InverseMassDerivFn = Arc<dyn Fn(&DVector<f64>) -> Tensor3 + Send + Sync>;
type ForceFn = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// `h = V(q, t) + 1/2 p^T H(q) p`, optionally with linear damping `-D qdot`
/// and an external force `F(t)`.
#[derive(Clone)]
pub struct Hamiltonian {
    dim: usize,
    potential: ScalarFn,
    grad_potential: Option<VectorFn>,
    inverse_mass: InverseMassFn,
    d_inverse_mass: Option<InverseMassDerivFn>,
    constant_mass: bool,
    damping: Option<DMatrix<f64>>,
    force: Option<ForceFn>,
}

impl std::fmt::Debug for Hamiltonian {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Hamiltonian")
            .field("dim", &self.dim)
            .field("constant_mass", &self.constant_mass)
            .field("damping", &self.damping)
            .finish_non_exhaustive()
    }
}

impl Hamiltonian {
    pub fn new(
        dim: usize,
        potential: impl Fn(&DVector<f64>, f64) -> f64 + Send + Sync + 'static,
        inverse_mass: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            potential: Arc::new(potential),
            grad_potential: None,
            inverse_mass: Arc::new(inverse_mass),
            d_inverse_mass: None,
            constant_mass: false,
            damping: None,
            force: None,
        }
    }

    /// `V = 1/2 q^T K q` with constant inverse mass `H`.
    pub fn quadratic(h: DMatrix<f64>, k: DMatrix<f64>) -> Self {
        let dim = h.nrows();
        let k2 = k.clone();
        let mut out = Self::new(dim, move |q, _| 0.5 * q.dot(&(&k * q)), move |_| h.clone())
            .with_grad_potential(move |q, _| &k2 * q);
        out.constant_mass = true;
        out
    }

    pub fn with_grad_potential(
        mut self,
        f: impl Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.grad_potential = Some(Arc::new(f));
        self
    }

    /// `dH/dq` with index order `[i][j][l] = dH_ij/dq_l`.
    pub fn with_d_inverse_mass(
        mut self,
        f: impl Fn(&DVector<f64>) -> Tensor3 + Send + Sync + 'static,
    ) -> Self {
        self.d_inverse_mass = Some(Arc::new(f));
        self
    }

    pub fn with_constant_inverse_mass(mut self) -> Self {
        self.constant_mass = true;
        self
    }

    pub fn with_damping(mut self, d: DMatrix<f64>) -> Self {
        self.damping = Some(d);
        self
    }

    pub fn with_force(mut self, f: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.force = Some(Arc::new(f));
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn potential(&self, q: &DVector<f64>, t: f64) -> f64 {
        (self.potential)(q, t)
    }

    pub fn grad_potential(&self, q: &DVector<f64>, t: f64) -> DVector<f64> {
        match &self.grad_potential {
            Some(g) => g(q, t),
            None => crate::fd::gradient(|q, t| (self.potential)(q, t), q, t),
        }
    }

    pub fn inverse_mass(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        linalg::check_spd(&(self.inverse_mass)(q), f64::NAN)
    }

    pub fn d_inverse_mass(&self, q: &DVector<f64>) -> Tensor3 {
        if self.constant_mass {
            return Tensor3::zeros(self.dim);
        }
        if let Some(d) = &self.d_inverse_mass {
            return d(q);
        }
        let n = self.dim;
        let mut slices = Vec::with_capacity(n);
        let mut qp = q.clone();
        for l in 0..n {
            let h = crate::fd::step(q[l]);
            qp[l] = q[l] + h;
            let hp = (self.inverse_mass)(&qp);
            qp[l] = q[l] - h;
            let hm = (self.inverse_mass)(&qp);
            qp[l] = q[l];
            slices.push(linalg::sym_part(&((hp - hm) / (2.0 * h))));
        }
        Tensor3::from_slices(&slices)
    }

    /// `dh/dq = dV/dq + 1/2 p^T (dH/dq_l) p`.
    pub fn dh_dq(&self, q: &DVector<f64>, p: &DVector<f64>, t: f64) -> DVector<f64> {
        let mut out = self.grad_potential(q, t);
        if !self.constant_mass {
            let dh = self.d_inverse_mass(q);
            for l in 0..self.dim {
                out[l] += 0.5 * p.dot(&(dh.slice(l) * p));
            }
        }
        out
    }

    /// Damping and external force at velocity `qdot`.
    pub fn generalized_force(&self, qdot: &DVector<f64>, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        if let Some(d) = &self.damping {
            out -= d * qdot;
        }
        if let Some(f) = &self.force {
            out += f(t);
        }
        out
    }

    /// `1/2 qdot^T H^-1 qdot`, which equals `1/2 p^T H p` for `qdot = H p`.
    pub fn kinetic_energy(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<f64> {
        let h = self.inverse_mass(q)?;
        let chol = h.cholesky().expect("checked SPD");
        Ok(0.5 * qdot.dot(&chol.solve(qdot)))
    }

    pub fn energy(&self, q: &DVector<f64>, p: &DVector<f64>, t: f64) -> Result<f64> {
        let h = self.inverse_mass(q)?;
        Ok(self.potential(q, t) + 0.5 * p.dot(&(h * p)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub q: DVector<f64>,
    /// `pbar` in the step form, `p` in the Dirac form.
    pub p: DVector<f64>,
    pub t: f64,
}

impl PhaseState {
    pub fn new(q: DVector<f64>, p: DVector<f64>, t: f64) -> Result<Self> {
        if q.len() != p.len() {
            return Err(Error::DimensionMismatch {
                expected: q.len(),
                got: p.len(),
            });
        }
        if !linalg::all_finite(&q) || !linalg::all_finite(&p) || !t.is_finite() {
            return Err(Error::InvalidInput("non-finite phase state".into()));
        }
        Ok(Self { q, p, t })
    }

    pub fn from_slices(q: &[f64], p: &[f64], t: f64) -> Result<Self> {
        Self::new(
            DVector::from_column_slice(q),
            DVector::from_column_slice(p),
            t,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formulation {
    Step,
    Dirac,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollisionEvent {
    pub time: f64,
    pub constraint: String,
    pub index: usize,
    /// Restitution actually applied (0 for touch-downs below `CONTACT_SPEED`).
    pub restitution: f64,
    pub impulse: f64,
    pub normal: DVector<f64>,
    pub gdot_pre: f64,
    pub gdot_post: f64,
    pub kinetic_pre: f64,
    pub kinetic_post: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseEventKind {
    Collision,
    ContactStart,
    Release,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseEvent {
    pub kind: PhaseEventKind,
    pub time: f64,
    pub constraint: String,
    pub index: usize,
    pub pre: PhaseState,
    pub post: PhaseState,
    pub collision: Option<CollisionEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSample {
    pub t: f64,
    pub q: DVector<f64>,
    pub p: DVector<f64>,
    pub velocity: DVector<f64>,
    pub contact: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTrajectory {
    pub form: Formulation,
    pub samples: Vec<PhaseSample>,
    pub events: Vec<PhaseEvent>,
}

impl PhaseTrajectory {
    pub fn sample_at(&self, t: f64) -> Option<&PhaseSample> {
        self.samples
            .binary_search_by(|s| s.t.partial_cmp(&t).expect("finite times"))
            .ok()
            .map(|i| &self.samples[i])
    }

    pub fn collisions(&self) -> impl Iterator<Item = &CollisionEvent> {
        self.events.iter().filter_map(|e| e.collision.as_ref())
    }
}

/// Constraint speed `gdot = dg/dq^T qdot + dg/dt`.
fn gdot(c: &ConstraintFunction, q: &DVector<f64>, qdot: &DVector<f64>, t: f64) -> f64 {
    c.gradient(q, t).dot(qdot) + c.time_derivative(q, t)
}

/// Collision multiplier `-(1 + e) gdot / (n^T H n)` for an incoming contact.
/// `state.p` is the physical momentum, so `qdot = H p`.
pub fn collision_multiplier(
    ham: &Hamiltonian,
    g: &ConstraintFunction,
    state: &PhaseState,
    restitution: f64,
) -> Result<f64> {
    check_restitution(restitution)?;
    let h = ham.inverse_mass(&state.q)?;
    let qdot = &h * &state.p;
    let gd = gdot(g, &state.q, &qdot, state.t);
    if gd <= 0.0 {
        return Err(Error::NotIncoming {
            label: g.label().to_string(),
            gdot: gd,
        });
    }
    let n = g.gradient(&state.q, state.t);
    Ok(-(1.0 + restitution) * gd / n.dot(&(h * &n)))
}

fn check_restitution(e: f64) -> Result<()> {
    if (0.0..=1.0).contains(&e) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("restitution {e} outside [0, 1]")))
    }
}

/// Internal state `z = [q; p; w]`; `w` stays zero in the Dirac form.
struct Integrator<'a> {
    ham: &'a Hamiltonian,
    set: &'a ConstraintSet,
    form: Formulation,
    n: usize,
}

struct Unpacked {
    q: DVector<f64>,
    p: DVector<f64>,
    w: DVector<f64>,
}

impl<'a> Integrator<'a> {
    fn unpack(&self, z: &DVector<f64>) -> Unpacked {
        let n = self.n;
        Unpacked {
            q: z.rows(0, n).clone_owned(),
            p: z.rows(n, n).clone_owned(),
            w: z.rows(2 * n, n).clone_owned(),
        }
    }

    fn pack(&self, q: &DVector<f64>, p: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let mut z = DVector::zeros(3 * n);
        z.rows_mut(0, n).copy_from(q);
        z.rows_mut(n, n).copy_from(p);
        z.rows_mut(2 * n, n).copy_from(w);
        z
    }

    fn velocity(&self, u: &Unpacked) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let h = self.ham.inverse_mass(&u.q)?;
        let qdot = &h * &u.p + &u.w;
        Ok((h, qdot))
    }

    fn constraint_speed(&self, j: usize, u: &Unpacked, t: f64) -> Result<f64> {
        let (_, qdot) = self.velocity(u)?;
        Ok(gdot(self.set.get(j), &u.q, &qdot, t))
    }

    /// Applies a constraint-velocity change `lambda (n^T H n)` along `n`.
    fn apply_increment(&self, u: &mut Unpacked, h: &DMatrix<f64>, n: &DVector<f64>, lambda: f64) {
        match self.form {
            Formulation::Dirac => u.p += n * lambda,
            Formulation::Step => u.w += h * n * lambda,
        }
    }

    /// Right-hand side with persistent-contact forces for `contact`.
    /// Returns the derivative and the contacts kept by the force pivot.
    fn rhs(&self, contact: &[usize], z: &DVector<f64>, t: f64) -> Result<(DVector<f64>, Vec<usize>)> {
        let u = self.unpack(z);
        let (h, qdot) = self.velocity(&u)?;
        let pdot_free = -self.ham.dh_dq(&u.q, &u.p, t) + self.ham.generalized_force(&qdot, t);
        let mut pdot = pdot_free.clone();
        let mut wdot = DVector::zeros(self.n);
        let mut kept = Vec::new();
        if !contact.is_empty() {
            let normals: Vec<DVector<f64>> = contact
                .iter()
                .map(|&j| self.set.get(j).gradient(&u.q, t))
                .collect();
            let raised: Vec<DVector<f64>> = normals.iter().map(|n| &h * n).collect();
            let k = contact.len();
            let gram = DMatrix::from_fn(k, k, |a, b| normals[a].dot(&raised[b]));
            let speed = |q: &DVector<f64>, p: &DVector<f64>, tt: f64, j: usize| -> Result<f64> {
                let uu = Unpacked {
                    q: q.clone(),
                    p: p.clone(),
                    w: u.w.clone(),
                };
                self.constraint_speed(j, &uu, tt)
            };
            let qn = qdot.norm();
            let eps_q = if qn > 0.0 {
                1e-6 * u.q.norm().max(1.0) / qn
            } else {
                0.0
            };
            let eps_t = 1e-6 * t.abs().max(1.0);
            let mut b = DVector::zeros(k);
            for (a, &j) in contact.iter().enumerate() {
                let dq = if eps_q > 0.0 {
                    (speed(&(&u.q + &qdot * eps_q), &u.p, t, j)?
                        - speed(&(&u.q - &qdot * eps_q), &u.p, t, j)?)
                        / (2.0 * eps_q)
                } else {
                    0.0
                };
                let dt = (speed(&u.q, &u.p, t + eps_t, j)? - speed(&u.q, &u.p, t - eps_t, j)?)
                    / (2.0 * eps_t);
                b[a] = dq + raised[a].dot(&pdot_free) + dt;
            }
            let r = constraints::resolve(&gram, &b, self.set.release_tol)?;
            for (&pos, &mu) in r.retained.iter().zip(&r.lambdas) {
                match self.form {
                    Formulation::Dirac => pdot += &normals[pos] * mu,
                    Formulation::Step => wdot += &raised[pos] * mu,
                }
                kept.push(contact[pos]);
            }
        }
        Ok((self.pack(&qdot, &pdot, &wdot), kept))
    }

    fn rk4(&self, contact: &[usize], z: &DVector<f64>, t: f64, h: f64) -> Result<DVector<f64>> {
        flow::rk4_step(|z, t| Ok(self.rhs(contact, z, t)?.0), z, t, h)
    }

    /// Pulls contact constraints back onto `g = 0` and removes any outward
    /// constraint speed that accumulated during the step.
    fn settle(&self, contact: &[usize], z: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        if contact.is_empty() {
            return Ok(z.clone());
        }
        let mut u = self.unpack(z);
        let idx: Vec<usize> = contact
            .iter()
            .copied()
            .filter(|&j| self.set.get(j).value(&u.q, t) >= -self.set.activation_tol)
            .collect();
        u.q = flow::project_onto(self.set, &u.q, t, &idx)?;
        for &j in &idx {
            let s = self.constraint_speed(j, &u, t)?;
            if s > 0.0 {
                let h = self.ham.inverse_mass(&u.q)?;
                let n = self.set.get(j).gradient(&u.q, t);
                let l = -s / n.dot(&(&h * &n));
                self.apply_increment(&mut u, &h, &n, l);
            }
        }
        Ok(self.pack(&u.q, &u.p, &u.w))
    }

    fn phase_state(&self, z: &DVector<f64>, t: f64) -> PhaseState {
        let u = self.unpack(z);
        PhaseState { q: u.q, p: u.p, t }
    }

    fn sample(&self, z: &DVector<f64>, t: f64, contact: &[usize]) -> Result<PhaseSample> {
        let u = self.unpack(z);
        let (_, qdot) = self.velocity(&u)?;
        Ok(PhaseSample {
            t,
            q: u.q,
            p: u.p,
            velocity: qdot,
            contact: contact.to_vec(),
        })
    }

    fn in_band(&self, j: usize, q: &DVector<f64>, t: f64) -> bool {
        self.set.get(j).value(q, t).abs() <= self.set.activation_tol
    }

    fn run(&self, x0: &PhaseState, restitution: f64, config: &SimConfig) -> Result<PhaseTrajectory> {
        config.validate()?;
        check_restitution(restitution)?;
        if x0.q.len() != self.n || x0.p.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x0.q.len(),
            });
        }
        let set = self.set;
        constraints::detect_active(set, &StateVector { x: x0.q.clone(), t: x0.t })?;
        let t0 = x0.t;
        let mut t = t0;
        let mut z = self.pack(&x0.q, &x0.p, &DVector::zeros(self.n));
        let mut traj = PhaseTrajectory {
            form: self.form,
            samples: Vec::new(),
            events: Vec::new(),
        };
        let mut contact: Vec<usize> = Vec::new();
        let mut first = true;
        let mut grid_k: u64 = 0;
        let mut stalled = 0usize;

        loop {
            // contact candidates: current contacts plus resting touches
            let u = self.unpack(&z);
            let mut cand = Vec::new();
            for j in 0..set.len() {
                let resting = || -> Result<bool> {
                    Ok(self.in_band(j, &u.q, t)
                        && self.constraint_speed(j, &u, t)?.abs() <= CONTACT_SPEED)
                };
                if contact.contains(&j) || resting()? {
                    cand.push(j);
                }
            }
            let retained = if cand.is_empty() {
                Vec::new()
            } else {
                self.rhs(&cand, &z, t)?.1
            };
            if !first {
                let here = self.phase_state(&z, t);
                for &j in contact.iter().filter(|j| !retained.contains(j)) {
                    traj.events.push(self.plain_event(PhaseEventKind::Release, j, &here));
                }
                for &j in retained.iter().filter(|j| !contact.contains(j)) {
                    traj.events.push(self.plain_event(PhaseEventKind::ContactStart, j, &here));
                }
            }
            first = false;
            contact = retained;
            let s = self.sample(&z, t, &contact)?;
            match traj.samples.last_mut() {
                Some(last) if last.t == t => *last = s,
                _ => traj.samples.push(s),
            }
            if t >= config.t_end {
                break;
            }

            let grid_next = t0 + (grid_k + 1) as f64 * config.dt_max;
            let (target, on_grid) = if grid_next >= config.t_end {
                (config.t_end, false)
            } else {
                (grid_next, true)
            };
            let advance = |tau: f64| -> Result<DVector<f64>> {
                let zz = self.rk4(&contact, &z, t, tau - t)?;
                self.settle(&contact, &zz, tau)
            };
            let z_new = advance(target)?;
            let q_new = z_new.rows(0, self.n).clone_owned();
            let crossing: Vec<usize> = (0..set.len())
                .filter(|j| !contact.contains(j))
                .filter(|&j| set.get(j).value(&q_new, target) > set.activation_tol)
                .collect();
            if crossing.is_empty() {
                z = z_new;
                t = target;
                if on_grid {
                    grid_k += 1;
                }
                stalled = 0;
                continue;
            }

            let mut best: Option<(f64, usize)> = None;
            for &j in &crossing {
                let c = set.get(j);
                let (mut lo, mut hi) = (t, target);
                while hi - lo > config.event_tol {
                    if hi - lo < MIN_BRACKET {
                        return Err(Error::StepTooSmall { t: lo, dt: hi - lo });
                    }
                    let mid = 0.5 * (lo + hi);
                    let zm = advance(mid)?;
                    if c.value(&zm.rows(0, self.n).clone_owned(), mid) > set.activation_tol {
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
            let z_pre = if t_event == t { z.clone() } else { advance(t_event)? };
            let (z_post, ev) = self.collide(j, &z_pre, t_event, restitution, &contact)?;
            traj.events.push(ev);
            if t_event == t {
                stalled += 1;
                if stalled > set.len() + 2 {
                    return Err(Error::StepTooSmall { t, dt: 0.0 });
                }
            } else {
                stalled = 0;
            }
            z = z_post;
            t = t_event;
        }
        Ok(traj)
    }

    fn plain_event(&self, kind: PhaseEventKind, j: usize, state: &PhaseState) -> PhaseEvent {
        PhaseEvent {
            kind,
            time: state.t,
            constraint: self.set.get(j).label().to_string(),
            index: j,
            pre: state.clone(),
            post: state.clone(),
            collision: None,
        }
    }

    fn collide(
        &self,
        j: usize,
        z_pre: &DVector<f64>,
        t: f64,
        restitution: f64,
        contact: &[usize],
    ) -> Result<(DVector<f64>, PhaseEvent)> {
        let c = self.set.get(j);
        let mut u = self.unpack(z_pre);
        let (h, qdot_pre) = self.velocity(&u)?;
        let n = c.gradient(&u.q, t);
        let nhn = n.dot(&(&h * &n));
        let gd_pre = gdot(c, &u.q, &qdot_pre, t);
        let e = if gd_pre > CONTACT_SPEED { restitution } else { 0.0 };
        let lambda = if gd_pre > 0.0 {
            -(1.0 + e) * gd_pre / nhn
        } else {
            0.0
        };
        let kinetic_pre = self.ham.kinetic_energy(&u.q, &qdot_pre)?;
        self.apply_increment(&mut u, &h, &n, lambda);
        let (_, qdot_post) = self.velocity(&u)?;
        let gd_post = gdot(c, &u.q, &qdot_post, t);
        let kinetic_post = self.ham.kinetic_energy(&u.q, &qdot_post)?;
        let mut idx = contact.to_vec();
        idx.push(j);
        u.q = flow::project_onto(self.set, &u.q, t, &idx)?;
        let z_post = self.pack(&u.q, &u.p, &u.w);
        let collision = CollisionEvent {
            time: t,
            constraint: c.label().to_string(),
            index: j,
            restitution: e,
            impulse: lambda,
            normal: n,
            gdot_pre: gd_pre,
            gdot_post: gd_post,
            kinetic_pre,
            kinetic_post,
        };
        let ev = PhaseEvent {
            kind: PhaseEventKind::Collision,
            time: t,
            constraint: c.label().to_string(),
            index: j,
            pre: self.phase_state(z_pre, t),
            post: self.phase_state(&z_post, t),
            collision: Some(collision),
        };
        Ok((z_post, ev))
    }
}

fn simulate_form(
    form: Formulation,
    ham: &Hamiltonian,
    constraints: &ConstraintSet,
    x0: &PhaseState,
    restitution: f64,
    config: &SimConfig,
) -> Result<PhaseTrajectory> {
    Integrator {
        ham,
        set: constraints,
        form,
        n: ham.dim(),
    }
    .run(x0, restitution, config)
}

/// Step-velocity form: `qdot = H pbar + w`, collisions increment `w`.
pub fn simulate_step_form(
    ham: &Hamiltonian,
    constraints: &ConstraintSet,
    x0: &PhaseState,
    restitution: f64,
    config: &SimConfig,
) -> Result<PhaseTrajectory> {
    simulate_form(Formulation::Step, ham, constraints, x0, restitution, config)
}

/// Dirac-impulse form: `qdot = H p`, collisions jump `p`.
pub fn simulate_dirac_form(
    ham: &Hamiltonian,
    constraints: &ConstraintSet,
    x0: &PhaseState,
    restitution: f64,
    config: &SimConfig,
) -> Result<PhaseTrajectory> {
    simulate_form(Formulation::Dirac, ham, constraints, x0, restitution, config)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub max_deviation: f64,
    pub time_of_max: f64,
    pub compared: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Largest position difference over common sample times.
pub fn equivalence_check(
    a: &PhaseTrajectory,
    b: &PhaseTrajectory,
    tol: f64,
) -> Result<EquivalenceReport> {
    let (ea, eb) = (a.collisions().count(), b.collisions().count());
    if ea != eb {
        return Err(Error::EventCountMismatch {
            left: ea,
            right: eb,
        });
    }
    let mut max_deviation = 0.0_f64;
    let mut time_of_max = f64::NAN;
    let mut compared = 0;
    for sa in &a.samples {
        if let Some(sb) = b.sample_at(sa.t) {
            let d = (&sa.q - &sb.q).norm();
            compared += 1;
            if d > max_deviation || time_of_max.is_nan() {
                max_deviation = d;
                time_of_max = sa.t;
            }
        }
    }
    Ok(EquivalenceReport {
        max_deviation,
        time_of_max,
        compared,
        tol,
        passed: compared > 0 && max_deviation <= tol,
    })
}
