use contraq_core::constraints::ConstraintSet;
use contraq_core::contraction::{contraction_bounds, empirical_rate};
use contraq_core::flow::SimConfig;
use contraq_core::geometry::{CovectorField, MetricField, StateVector};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn measured_rate_within_bounds(
        a in prop::array::uniform4(-1.5..1.5f64),
        m in prop::array::uniform3(-0.4..0.4f64),
        x in prop::array::uniform2(-1.0..1.0f64),
        dir in prop::array::uniform2(-1.0..1.0f64),
    ) {
        let dir = DVector::from_column_slice(&dir);
        prop_assume!(dir.norm() > 0.1);
        let metric = MetricField::constant(DMatrix::from_row_slice(2, 2, &[1.0 + m[0].abs(), m[1], m[1], 1.0 + m[2].abs()]));
        let f = CovectorField::linear(DMatrix::from_row_slice(2, 2, &a));
        let set = ConstraintSet::empty();
        let x0 = StateVector::from_slice(&x, 0.0).unwrap();
        let b = contraction_bounds(&metric, &f, &set, &x0).unwrap();
        let rates = empirical_rate(&metric, &f, &set, &x0, 1e-6, &dir, &SimConfig::new(1e-3, 0.5)).unwrap();
        prop_assert!(!rates.is_empty());
        for r in &rates {
            prop_assert!(r.rate >= b.lambda_min - 1e-4 && r.rate <= b.lambda_max + 1e-4,
                "rate {} outside [{}, {}]", r.rate, b.lambda_min, b.lambda_max);
        }
    }
}
