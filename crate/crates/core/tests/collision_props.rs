mod common;

use contraq_core::collisions::{simulate_dirac_form, simulate_step_form, Hamiltonian, PhaseState};
use contraq_core::constraints::{ConstraintFunction, ConstraintSet};
use contraq_core::flow::SimConfig;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use common::{envelope_constraints, envelope_hamiltonian, push_input};

fn free_particle(h: f64) -> Hamiltonian {
    Hamiltonian::quadratic(DMatrix::from_element(1, 1, h), DMatrix::zeros(1, 1))
}

fn wall_at_one() -> ConstraintSet {
    ConstraintSet::new(vec![ConstraintFunction::linear("wall", DVector::from_element(1, 1.0), -1.0)]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn restitution_law(e in 0.05..1.0f64, p0 in 0.5..2.0f64, h in 0.5..2.0f64, dirac in any::<bool>()) {
        let ham = free_particle(h);
        let x0 = PhaseState::from_slices(&[0.0], &[p0], 0.0).unwrap();
        let cfg = SimConfig::new(1e-2, 1.0 / (h * p0) + 0.5);
        let traj = if dirac {
            simulate_dirac_form(&ham, &wall_at_one(), &x0, e, &cfg)
        } else {
            simulate_step_form(&ham, &wall_at_one(), &x0, e, &cfg)
        }
        .unwrap();
        let hits: Vec<_> = traj.collisions().collect();
        prop_assert_eq!(hits.len(), 1);
        let c = hits[0];
        // localization stops inside the activation band
        prop_assert!((c.time - 1.0 / (h * p0)).abs() < 2e-9 / (h * p0));
        prop_assert!((c.gdot_pre - h * p0).abs() < 1e-12 * h * p0);
        prop_assert!((c.gdot_post + e * c.gdot_pre).abs() <= 1e-12 * c.gdot_pre);
        prop_assert!((c.kinetic_post - e * e * c.kinetic_pre).abs() <= 1e-12 * c.kinetic_pre);
        let last = traj.samples.last().unwrap();
        prop_assert!(last.q[0] < 1.0);
    }
}

#[test]
fn plastic_contact_holds_until_release() {
    let ham = envelope_hamiltonian(push_input(2.5));
    let set = envelope_constraints();
    let x0 = PhaseState::from_slices(&[0.0], &[0.0], 0.0).unwrap();
    let cfg = SimConfig::new(1e-3, 4.0);
    for traj in [
        simulate_step_form(&ham, &set, &x0, 0.0, &cfg).unwrap(),
        simulate_dirac_form(&ham, &set, &x0, 0.0, &cfg).unwrap(),
    ] {
        let held: Vec<_> = traj.samples.iter().filter(|s| s.contact.contains(&0)).collect();
        assert!(held.len() > 100);
        for s in &held {
            assert!((s.q[0] - 2.0).abs() <= 1e-9, "t = {} q = {}", s.t, s.q[0]);
            assert!(s.velocity[0].abs() <= 1e-8, "t = {} v = {}", s.t, s.velocity[0]);
        }
        // contact ends once the push is gone
        let last = traj.samples.last().unwrap();
        assert!(last.contact.is_empty() && last.q[0] < 2.0);
    }
}
