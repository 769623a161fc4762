mod common;

use contraq_core::constraints::ConstraintSet;
use contraq_core::flow::{self, rk4_step, simulate, SimConfig};
use contraq_core::geometry::{CovectorField, MetricField, StateVector};
use nalgebra::DMatrix;
use proptest::prelude::*;

use common::{decay, example1_field, parabola, static_circle, v};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trajectories_stay_feasible(x1 in -1.5..1.5f64, depth in 0.0..2.0f64) {
        let set = parabola();
        let x0 = StateVector::from_slice(&[x1, -x1 * x1 - depth], 0.0).unwrap();
        let traj = simulate(&MetricField::identity(2), &example1_field(), &set, &x0, &SimConfig::new(1e-2, 1.5)).unwrap();
        for s in &traj.samples {
            prop_assert!(set.max_violation(&s.x, s.t) <= set.activation_tol, "t = {}", s.t);
        }
    }

    #[test]
    fn unconstrained_flow_is_plain_rk4(
        x in prop::array::uniform3(-3.0..3.0f64),
        dt in 1e-3..0.2f64,
        t_end in 0.1..2.0f64,
    ) {
        let metric = MetricField::constant(DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 3.0]));
        let a = DMatrix::from_row_slice(3, 3, &[-1.0, 0.2, 0.0, 0.4, -0.5, 1.0, 0.0, -1.0, 0.3]);
        let f = CovectorField::linear(a);
        let x0 = StateVector::from_slice(&x, 0.0).unwrap();
        let traj = simulate(&metric, &f, &ConstraintSet::empty(), &x0, &SimConfig::new(dt, t_end)).unwrap();

        let mut xs = vec![(0.0, x0.x.clone())];
        let mut k = 0u64;
        loop {
            let (t, xk) = xs.last().unwrap().clone();
            if t >= t_end {
                break;
            }
            let next = ((k + 1) as f64 * dt).min(t_end);
            let vel = |x: &nalgebra::DVector<f64>, t: f64| {
                flow::unconstrained_velocity(&metric, &f, &StateVector { x: x.clone(), t })
            };
            xs.push((next, rk4_step(vel, &xk, t, next - t).unwrap()));
            k += 1;
        }
        prop_assert!(traj.events.is_empty());
        prop_assert_eq!(traj.samples.len(), xs.len());
        for (s, (t, x)) in traj.samples.iter().zip(&xs) {
            prop_assert_eq!(s.t, *t);
            prop_assert_eq!(&s.x, x);
        }
    }
}

#[test]
fn persistent_contact_keeps_zero_constraint_speed() {
    let set = parabola();
    let metric = MetricField::identity(2);
    let f = example1_field();
    let x0 = StateVector::from_slice(&[1.0, -1.0], 0.0).unwrap();
    let traj = simulate(&metric, &f, &set, &x0, &SimConfig::new(1e-3, 2.0)).unwrap();
    let mut checked = 0;
    for s in traj.samples.iter().filter(|s| s.active.contains(&0)) {
        let xdot = flow::solve_velocity(&metric, &f, &set, &s.state()).unwrap();
        let gdot = set.get(0).gradient(&s.x, s.t).dot(&xdot);
        assert!(gdot.abs() <= 1e-8, "t = {} gdot = {gdot}", s.t);
        checked += 1;
    }
    assert!(checked > 1000);
}

#[test]
fn repeated_runs_are_identical() {
    // decay toward the origin runs into the circle around (2, 0)
    let f = CovectorField::affine(-DMatrix::identity(2, 2), v(&[0.0, 0.0]));
    let x0 = StateVector::from_slice(&[4.0, 0.3], 0.0).unwrap();
    let cfg = SimConfig::new(1e-2, 3.0);
    let run = || simulate(&MetricField::identity(2), &f, &static_circle(), &x0, &cfg).unwrap();
    let (a, b) = (run(), run());
    assert!(!a.events.is_empty());
    assert_eq!(a, b);
}

#[test]
fn decay_reaches_expected_value() {
    let x0 = StateVector::from_slice(&[1.0, -2.0], 0.0).unwrap();
    let traj = simulate(&MetricField::identity(2), &decay(2), &ConstraintSet::empty(), &x0, &SimConfig::new(1e-2, 1.0)).unwrap();
    let end = traj.final_state().unwrap();
    let e = (-1.0f64).exp();
    assert!((end.x[0] - e).abs() < 1e-9 && (end.x[1] + 2.0 * e).abs() < 1e-9);
}
