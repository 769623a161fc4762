//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p contraq-core --test acceptance`.

mod common;

use std::time::{Duration, Instant};

use contraq_core::collisions::{
    collision_multiplier, equivalence_check, simulate_dirac_form, simulate_step_form, PhaseState,
    PhaseTrajectory,
};
use contraq_core::constraints::{self, ConstraintFunction, ConstraintSet};
use contraq_core::contraction::{activation_jump, contraction_bounds, empirical_rate};
use contraq_core::flow::{simulate, SimConfig};
use contraq_core::geodesics::{double_slit, shortest_paths, Point};
use contraq_core::geometry::{
    christoffel, covariant_derivative_vector, covariant_hessian_scalar, CovectorField,
    MetricField, StateVector, Tensor3,
};
use contraq_core::Result;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

// tolerances
const EX1_LAMBDA_TOL: f64 = 1e-9;
const EX1_INVARIANCE_TOL: f64 = 1e-7;
const EX2_RATE_TOL: f64 = 0.05;
const EX3_RATE_TOL: f64 = 1e-12;
const IMPULSE_TOL: f64 = 1e-12;
const EQUIVALENCE_TOL: f64 = 1e-6;
const RATIO_RANGE: (f64, f64) = (1.7, 2.3);
const ENERGY_TOL: f64 = 1e-8;
const ORACLE_REL_TOL: f64 = 1e-5;
const ORTHONORMAL_TOL: f64 = 1e-12;
const TANGENCY_TOL: f64 = 1e-10;
const EXPANSION_TOL: f64 = 1e-12;
const SLIT_EQUAL_TOL: f64 = 1e-12;
const GRID_REL_TOL: f64 = 0.015;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { passed, detail })
}

fn example1_multiplier() -> Result<Outcome> {
    let set = parabola();
    let f = example1_field();
    let metric = MetricField::identity(2);
    let mut worst = 0.0_f64;
    for x1 in [-2.0, -1.0, 0.0, 1.0, 2.0] {
        let s = StateVector::from_slice(&[x1, -x1 * x1], 0.0)?;
        let active = constraints::detect_active(&set, &s)?;
        let sol = constraints::solve_multipliers(&set, &active, &metric, &f, &s, 0.0)?;
        let want = -(x1 * x1 + 1.0) / (4.0 * x1 * x1 + 1.0);
        worst = worst.max((sol.lambda(0).unwrap_or(f64::NAN) - want).abs());
    }
    outcome(worst <= EX1_LAMBDA_TOL, format!("max |lambda - closed form| = {worst:.3e}"))
}

fn example1_invariance() -> Result<Outcome> {
    let x0 = StateVector::from_slice(&[1.0, -1.0], 0.0)?;
    let traj = simulate(
        &MetricField::identity(2),
        &example1_field(),
        &parabola(),
        &x0,
        &SimConfig::new(1e-3, 2.0),
    )?;
    let worst = traj
        .samples
        .iter()
        .map(|s| (s.x[1] + s.x[0] * s.x[0]).abs())
        .fold(0.0, f64::max);
    let end = traj.samples.last().map_or(f64::NAN, |s| s.t);
    outcome(
        worst <= EX1_INVARIANCE_TOL && end == 2.0,
        format!("max |x2 + x1^2| = {worst:.3e} over {} samples", traj.samples.len()),
    )
}

fn example2_contraction() -> Result<Outcome> {
    let th: f64 = 0.3;
    let x0 = StateVector::from_slice(&[2.0 + th.cos(), th.sin()], 0.0)?;
    let u = v(&[-th.sin(), th.cos()]);
    let set = static_circle();
    let rates = empirical_rate(
        &MetricField::identity(2),
        &decay(2),
        &set,
        &x0,
        1e-5,
        &u,
        &SimConfig::new(1e-3, 2.0),
    )?;
    let mut worst = 0.0_f64;
    let mut on_arc = 0;
    for r in &rates {
        let s = StateVector::new(r.x.clone(), r.t)?;
        let sol = contraq_core::flow::ConstrainedFlow::new(&MetricField::identity(2), &decay(2), &set)
            .multipliers(&s)?;
        let Some(lambda) = sol.lambda(0) else { continue };
        on_arc += 1;
        worst = worst.max((r.rate + (1.0 + 2.0 * lambda)).abs());
    }
    outcome(
        on_arc > 100 && worst <= EX2_RATE_TOL,
        format!("{on_arc} arc samples, max |rate + (1 + 2 lambda)| = {worst:.3e}"),
    )
}

fn example3_rate() -> Result<Outcome> {
    let f = CovectorField::linear(DMatrix::from_row_slice(2, 2, &[-1.0, -2.0, 1.0, -1.0]));
    let m = MetricField::constant(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]));
    let s = StateVector::from_slice(&[0.5, -0.25], 0.0)?;
    let b = contraction_bounds(&m, &f, &ConstraintSet::empty(), &s)?;
    let err = (b.lambda_min + 0.5).abs().max((b.lambda_max + 0.5).abs());
    outcome(
        err <= EX3_RATE_TOL,
        format!("lambda_min = {:.15}, lambda_max = {:.15}", b.lambda_min, b.lambda_max),
    )
}

fn example3_impulses() -> Result<Outcome> {
    let ham = envelope_hamiltonian(|_| 0.0);
    let set = envelope_constraints();
    let mut worst = 0.0_f64;
    for vel in [0.5, 1.0, 2.0] {
        let s = PhaseState::from_slices(&[2.0], &[1.5 * vel], 0.0)?;
        let plastic = collision_multiplier(&ham, set.get(0), &s, 0.0)?;
        let elastic = collision_multiplier(&ham, set.get(0), &s, 1.0)?;
        worst = worst
            .max((plastic + 1.5 * vel).abs())
            .max((elastic + 3.0 * vel).abs());
    }
    outcome(worst <= IMPULSE_TOL, format!("max multiplier error = {worst:.3e}"))
}

fn envelope_pair(e: f64, dt: f64) -> Result<(PhaseTrajectory, PhaseTrajectory)> {
    let ham = envelope_hamiltonian(push_input(if e == 0.0 { 2.5 } else { 1.6 }));
    let set = envelope_constraints();
    let x0 = PhaseState::from_slices(&[0.0], &[0.0], 0.0)?;
    let cfg = SimConfig::new(dt, 4.0);
    Ok((
        simulate_step_form(&ham, &set, &x0, e, &cfg)?,
        simulate_dirac_form(&ham, &set, &x0, e, &cfg)?,
    ))
}

fn theorem2_equivalence() -> Result<Outcome> {
    let mut detail = Vec::new();
    let mut ok = true;
    for e in [0.0, 1.0] {
        let (a, b) = envelope_pair(e, 1e-4)?;
        let r = equivalence_check(&a, &b, EQUIVALENCE_TOL)?;
        ok &= r.passed && a.collisions().count() > 0;
        detail.push(format!(
            "e={e}: {} collisions, max dev {:.3e}",
            a.collisions().count(),
            r.max_deviation
        ));
    }
    let mut devs = Vec::new();
    for k in 0..4 {
        let dt = 1e-4 / f64::from(1 << k);
        let (a, b) = envelope_pair(0.0, dt)?;
        devs.push(equivalence_check(&a, &b, EQUIVALENCE_TOL)?.max_deviation);
    }
    let ratios: Vec<f64> = devs.windows(2).map(|w| w[0] / w[1]).collect();
    let in_range = ratios
        .iter()
        .all(|r| *r >= RATIO_RANGE.0 && *r <= RATIO_RANGE.1);
    ok &= in_range;
    detail.push(format!(
        "deviations under halving {:?}, ratios {:?}",
        devs.iter().map(|d| format!("{d:.2e}")).collect::<Vec<_>>(),
        ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>()
    ));
    outcome(ok, detail.join("; "))
}

fn elastic_energy() -> Result<Outcome> {
    let mut worst = 0.0_f64;
    let mut count = 0;
    let (a, b) = envelope_pair(1.0, 1e-3)?;
    let free = contraq_core::collisions::Hamiltonian::quadratic(
        DMatrix::from_element(1, 1, 2.0 / 3.0),
        DMatrix::zeros(1, 1),
    );
    let x0 = PhaseState::from_slices(&[1.0], &[3.0], 0.0)?;
    let cfg = SimConfig::new(1e-3, 5.0);
    let bouncing = simulate_dirac_form(&free, &envelope_constraints(), &x0, 1.0, &cfg)?;
    for traj in [&a, &b, &bouncing] {
        for c in traj.collisions().filter(|c| c.restitution == 1.0) {
            count += 1;
            worst = worst.max((c.kinetic_post - c.kinetic_pre).abs());
        }
    }
    outcome(
        count >= 3 && worst <= ENERGY_TOL,
        format!("{count} elastic events, max |dK| = {worst:.3e}"),
    )
}

/// Random smooth metric `S + sum_l sin(x_l) B_l` with its analytic derivative.
fn random_metric(rng: &mut ChaCha8Rng, n: usize) -> MetricField {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let s = &a * a.transpose() + DMatrix::identity(n, n) * (n as f64 + 1.0);
    let bs: Vec<DMatrix<f64>> = (0..n)
        .map(|_| {
            let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.3..0.3));
            (&b + b.transpose()) * 0.5
        })
        .collect();
    let bs2 = bs.clone();
    MetricField::analytic(n, move |x, _| {
        let mut m = s.clone();
        for (l, b) in bs.iter().enumerate() {
            m += b * x[l].sin();
        }
        m
    })
    .with_d_dx(move |x, _| {
        let slices: Vec<DMatrix<f64>> =
            bs2.iter().enumerate().map(|(l, b)| b * x[l].cos()).collect();
        Tensor3::from_slices(&slices)
    })
    .time_invariant()
}

fn fd_christoffel(metric: &MetricField, x: &DVector<f64>) -> Tensor3 {
    let n = x.len();
    let m = metric.eval_raw(x, 0.0);
    let minv = m.try_inverse().unwrap();
    let dm: Vec<DMatrix<f64>> = (0..n)
        .map(|l| {
            let h = 1e-5 * x[l].abs().max(1.0);
            let mut xp = x.clone();
            xp[l] += h;
            let mut xm = x.clone();
            xm[l] -= h;
            (metric.eval_raw(&xp, 0.0) - metric.eval_raw(&xm, 0.0)) / (2.0 * h)
        })
        .collect();
    Tensor3::from_fn(n, |i, j, k| {
        (0..n)
            .map(|l| {
                0.5 * (dm[j][(i, l)] + dm[i][(j, l)] - dm[l][(i, j)]) * minv[(k, l)]
            })
            .sum()
    })
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

fn geometry_oracle() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let n = rng.gen_range(2..=4);
        let metric = random_metric(&mut rng, n);
        let x = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        let s = StateVector::new(x.clone(), 0.0)?;

        let gamma = christoffel(&metric, &s)?.gamma;
        let oracle = fd_christoffel(&metric, &x);
        let scale = oracle.max_abs().max(1.0);
        let mut e = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    e = e.max((gamma[(i, j, k)] - oracle[(i, j, k)]).abs() / scale);
                }
            }
        }
        worst = worst.max(e);

        // f_i = sum_j A_ij x_j + c_i sin(x_i)
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let c = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let (a2, c2) = (a.clone(), c.clone());
        let f = CovectorField::new(n, move |x, _| &a * x + c.component_mul(&x.map(f64::sin)))
            .with_jacobian(move |x, _| {
                &a2 + DMatrix::from_diagonal(&c2.component_mul(&x.map(f64::cos)))
            });
        let cov = covariant_derivative_vector(&f, &metric, &s)?;
        let jac_fd = DMatrix::from_fn(n, n, |i, j| {
            let h = 1e-5 * x[j].abs().max(1.0);
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            (f.eval(&xp, 0.0)[i] - f.eval(&xm, 0.0)[i]) / (2.0 * h)
        });
        let fx = f.eval(&x, 0.0);
        let cov_oracle = DMatrix::from_fn(n, n, |i, j| {
            jac_fd[(i, j)] - (0..n).map(|k| oracle[(i, j, k)] * fx[k]).sum::<f64>()
        });
        worst = worst.max(rel_err(&cov, &cov_oracle));

        // g = x^T Q x + b.x with analytic Hessian 2 sym(Q)
        let q = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let b = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let g = ConstraintFunction::quadratic("g", q.clone(), b.clone(), -100.0);
        let hess = covariant_hessian_scalar(&g, &metric, &s)?;
        let grad = (&q + q.transpose()) * &x + &b;
        let hess_oracle = DMatrix::from_fn(n, n, |i, j| {
            q[(i, j)] + q[(j, i)] - (0..n).map(|k| oracle[(i, j, k)] * grad[k]).sum::<f64>()
        });
        worst = worst.max(rel_err(&hess, &hess_oracle));
    }
    outcome(
        worst <= ORACLE_REL_TOL,
        format!("100 fields, max relative deviation {worst:.3e}"),
    )
}

fn projection_suite() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut orth, mut tang, mut grow) = (0.0_f64, 0.0_f64, f64::NEG_INFINITY);
    for _ in 0..1000 {
        let n = rng.gen_range(2..=5);
        let k = rng.gen_range(1..n);
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let m = &a * a.transpose() + DMatrix::identity(n, n) * 0.5;
        let x = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let normals: Vec<DVector<f64>> = (0..k)
            .map(|_| DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let set = ConstraintSet::new(
            normals
                .iter()
                .enumerate()
                .map(|(j, nv)| ConstraintFunction::linear(format!("g{j}"), nv.clone(), -nv.dot(&x)))
                .collect(),
        )?;
        let s = StateVector::new(x.clone(), 0.0)?;
        let active = constraints::detect_active(&set, &s)?;
        let basis = constraints::tangent_basis(&set, &active, &s);
        let g = &basis.g_par;
        orth = orth.max((g.transpose() * g - DMatrix::identity(g.ncols(), g.ncols())).amax());
        for nv in &normals {
            tang = tang.max((g.transpose() * nv).amax());
        }
        let mut dx: DVector<f64> = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        dx /= dx.dot(&(&m * &dx)).sqrt();
        let after = activation_jump(&m, &normals, &dx);
        grow = grow.max(after.dot(&(&m * &after)) - 1.0);
    }
    outcome(
        orth <= ORTHONORMAL_TOL && tang <= TANGENCY_TOL && grow <= EXPANSION_TOL,
        format!("|GtG - I| = {orth:.2e}, |Gt n| = {tang:.2e}, max M-norm growth = {grow:.2e}"),
    )
}

fn double_slit_paths() -> Result<Outcome> {
    let src = Point::new(-4.0, 0.0);
    let sym = double_slit(1.0, 2.0, 6.0, src, Point::new(4.0, 0.0))?;
    let paths = shortest_paths(&sym, 4)?;
    let min = paths[0].length;
    let minimal: Vec<_> = paths
        .iter()
        .filter(|p| (p.length - min).abs() <= SLIT_EQUAL_TOL * min)
        .collect();
    let oracle = grid_oracle(&sym, 5.0, 400, 4).unwrap_or(f64::NAN);
    let grid_err = minimal
        .iter()
        .map(|p| (p.length - oracle).abs() / oracle)
        .fold(0.0, f64::max);
    let shifted = double_slit(1.0, 2.0, 6.0, src, Point::new(4.0, 1.0))?;
    let sp = shortest_paths(&shifted, 2)?;
    let shifted_oracle = grid_oracle(&shifted, 5.0, 400, 4).unwrap_or(f64::NAN);
    let shifted_err = (sp[0].length - shifted_oracle).abs() / shifted_oracle;
    let ordered = sp.len() == 2 && sp[0].length < sp[1].length;
    let equal = minimal.len() == 2
        && (minimal[0].length - minimal[1].length).abs() < SLIT_EQUAL_TOL * min;
    outcome(
        equal && grid_err <= GRID_REL_TOL && shifted_err <= GRID_REL_TOL && ordered,
        format!(
            "{} minimal paths of length {:.9} (grid {:.6}, rel {:.2e}); displaced {:.6} < {:.6} (grid rel {:.2e})",
            minimal.len(),
            min,
            oracle,
            grid_err,
            sp[0].length,
            sp.get(1).map_or(f64::NAN, |p| p.length),
            shifted_err
        ),
    )
}

type Criterion = (&'static str, Duration, fn() -> Result<Outcome>);

fn main() {
    let criteria: [Criterion; 10] = [
        ("example1_multiplier", Duration::from_secs(1), example1_multiplier),
        ("example1_invariance", Duration::from_secs(5), example1_invariance),
        ("example2_contraction_rate", Duration::from_secs(10), example2_contraction),
        ("example3_rate", Duration::from_millis(100), example3_rate),
        ("example3_impulses", Duration::from_millis(100), example3_impulses),
        ("step_dirac_equivalence", Duration::from_secs(30), theorem2_equivalence),
        ("elastic_energy", Duration::from_secs(5), elastic_energy),
        ("geometry_oracle", Duration::from_secs(10), geometry_oracle),
        ("projection_suite", Duration::from_secs(5), projection_suite),
        ("double_slit", Duration::from_secs(20), double_slit_paths),
    ];
    let mut failures = 0;
    for (name, limit, run) in criteria {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let (passed, detail) = match result {
            Ok(o) => (o.passed && elapsed <= limit, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !passed {
            failures += 1;
        }
        println!(
            "{} {name} [{:.3} s / limit {:.1} s] {detail}",
            if passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria passed", 10 - failures, 10);
    if failures > 0 {
        std::process::exit(1);
    }
}
