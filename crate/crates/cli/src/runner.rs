//! Executes a scenario and writes its result files.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use contraq_core::collisions::{
    equivalence_check, simulate_dirac_form, simulate_step_form, Formulation, PhaseEventKind,
    PhaseTrajectory,
};
use contraq_core::constraints::{self, ConstraintSet};
use contraq_core::contraction::{contraction_bounds, pair_rate, RateSample};
use contraq_core::flow::{simulate, EventKind, Trajectory};
use contraq_core::geodesics::{corner_fan, path_table, shortest_paths};
use contraq_core::geometry::{CovectorField, MetricField, StateVector};
use contraq_core::Error;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::error::{CliError, Result};
use crate::model;
use crate::output::{self, farr, fnum, num, Csv};
use crate::scenario::{CheckSpec, ExpectBounds, FormSpec, Kind, Scenario};

/// Command-line overrides for a run.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub dt: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckVerdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn verdict(name: &str, passed: bool, detail: String) -> CheckVerdict {
    CheckVerdict {
        name: name.to_string(),
        passed,
        detail,
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub scenario: String,
    pub kind: Kind,
    /// Files written, report last.
    pub outputs: Vec<PathBuf>,
    pub checks: Vec<CheckVerdict>,
    /// Solver error that stopped the run, if any.
    pub error: Option<String>,
    pub elapsed: Duration,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.checks.iter().all(|c| c.passed)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            2
        }
    }

    /// Report contents; the elapsed time is left out so reruns are byte-identical.
    pub fn to_json(&self) -> Value {
        let names: Vec<String> = self
            .outputs
            .iter()
            .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
            .collect();
        json!({
            "scenario": self.scenario,
            "kind": self.kind.as_str(),
            "passed": self.passed(),
            "error": self.error,
            "outputs": names,
            "checks": self.checks.iter().map(|c| json!({
                "name": c.name,
                "passed": c.passed,
                "detail": c.detail,
            })).collect::<Vec<_>>(),
        })
    }
}

/// Result files and verdicts produced by one scenario kind.
#[derive(Default)]
struct Artifacts {
    files: Vec<(String, String)>,
    checks: Vec<CheckVerdict>,
}

/// Runs `s`, writing `<name>_*` files into `out_dir`. Solver errors are
/// recorded in the report; only IO failures are returned as errors.
pub fn run(s: &Scenario, out_dir: &Path, opts: &RunOptions) -> Result<RunReport> {
    let start = Instant::now();
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let result = match s.kind {
        Kind::Flow => run_flow(s, opts),
        Kind::Hamiltonian => run_hamiltonian(s, opts),
        Kind::Geodesic => run_geodesic(s),
    };
    let (art, error) = match result {
        Ok(a) => (a, None),
        Err(e) => {
            let checks = s
                .checks
                .iter()
                .map(|c| verdict(c.name(), false, format!("not evaluated: {e}")))
                .collect();
            (
                Artifacts {
                    files: Vec::new(),
                    checks,
                },
                Some(e.to_string()),
            )
        }
    };
    let mut outputs = Vec::new();
    for (file, text) in &art.files {
        outputs.push(output::write(out_dir, file, text)?);
    }
    outputs.push(out_dir.join(format!("{}_report.json", s.name)));
    let report = RunReport {
        scenario: s.name.clone(),
        kind: s.kind,
        outputs,
        checks: art.checks,
        error,
        elapsed: start.elapsed(),
    };
    output::write(out_dir, &format!("{}_report.json", s.name), &output::json(&report.to_json()))?;
    Ok(report)
}

/// Contraction bounds for `s` without writing files: along the simulated
/// trajectory for flows, at the listed states otherwise.
pub fn bounds_only(s: &Scenario, opts: &RunOptions) -> std::result::Result<Value, Error> {
    match s.kind {
        Kind::Flow => {
            let setup = FlowSetup::new(s)?;
            let traj = simulate(&setup.metric, &setup.field, &setup.set, &setup.x0, &setup.config(s, opts))?;
            let series = BoundSeries::along(&setup, &traj, stride_for(s, &traj))?;
            Ok(bounds_json(&series, &[]))
        }
        Kind::Hamiltonian | Kind::Geodesic => {
            let Some(points) = s.checks.iter().find_map(|c| match c {
                CheckSpec::Bounds { at: Some(at), .. } => Some(at),
                _ => None,
            }) else {
                return Err(Error::InvalidInput(format!(
                    "scenario `{}` has no states to evaluate bounds at",
                    s.name
                )));
            };
            let (field, metric) = first_order_form(s)?;
            let t = s.initial.as_ref().map_or(0.0, |i| i.t);
            let series = BoundSeries::at(&metric, &field, &ConstraintSet::empty(), points, t)?;
            Ok(bounds_json(&series, &[]))
        }
    }
}

fn first_order_form(s: &Scenario) -> std::result::Result<(CovectorField, MetricField), Error> {
    let Some(f) = &s.field else {
        return Err(Error::InvalidInput("scenario has no field".into()));
    };
    let field = model::field(f);
    let metric = model::metric(s.metric.as_ref(), field.dim());
    Ok((field, metric))
}

struct FlowSetup {
    field: CovectorField,
    metric: MetricField,
    set: ConstraintSet,
    x0: StateVector,
}

impl FlowSetup {
    fn new(s: &Scenario) -> std::result::Result<Self, Error> {
        let field = model::field(s.field.as_ref().expect("validated"));
        let metric = model::metric(s.metric.as_ref(), field.dim());
        let set = model::constraints(&s.constraints, s.sim.as_ref())?;
        let x0 = model::initial_state(s)?;
        Ok(Self {
            field,
            metric,
            set,
            x0,
        })
    }

    fn config(&self, s: &Scenario, opts: &RunOptions) -> contraq_core::flow::SimConfig {
        model::sim_config(s.sim.as_ref().expect("validated"), opts.dt)
    }
}

/// Bounds evaluated at a list of states; NaN where the tangent space is empty.
#[derive(Debug, Default)]
struct BoundSeries {
    t: Vec<f64>,
    lambda_min: Vec<f64>,
    lambda_max: Vec<f64>,
}

impl BoundSeries {
    fn push(
        &mut self,
        metric: &MetricField,
        field: &CovectorField,
        set: &ConstraintSet,
        state: &StateVector,
    ) -> std::result::Result<(), Error> {
        let (lo, hi) = match contraction_bounds(metric, field, set, state) {
            Ok(b) => (b.lambda_min, b.lambda_max),
            Err(Error::DegenerateTangentSpace) => (f64::NAN, f64::NAN),
            Err(e) => return Err(e),
        };
        self.t.push(state.t);
        self.lambda_min.push(lo);
        self.lambda_max.push(hi);
        Ok(())
    }

    fn along(setup: &FlowSetup, traj: &Trajectory, stride: usize) -> std::result::Result<Self, Error> {
        let mut out = Self::default();
        let n = traj.samples.len();
        for (i, sample) in traj.samples.iter().enumerate() {
            if i % stride == 0 || i + 1 == n {
                out.push(&setup.metric, &setup.field, &setup.set, &sample.state())?;
            }
        }
        Ok(out)
    }

    fn at(
        metric: &MetricField,
        field: &CovectorField,
        set: &ConstraintSet,
        points: &[Vec<f64>],
        t: f64,
    ) -> std::result::Result<Self, Error> {
        let mut out = Self::default();
        for p in points {
            out.push(metric, field, set, &StateVector::from_slice(p, t)?)?;
        }
        Ok(out)
    }

    fn min(&self) -> f64 {
        self.lambda_min.iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min)
    }

    fn max(&self) -> f64 {
        self.lambda_max.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max)
    }
}

fn bounds_json(series: &BoundSeries, rates: &[RateSample]) -> Value {
    json!({
        "lambda_min": fnum(series.min()),
        "lambda_max": fnum(series.max()),
        "samples": {
            "t": farr(series.t.iter().copied()),
            "lambda_min": farr(series.lambda_min.iter().copied()),
            "lambda_max": farr(series.lambda_max.iter().copied()),
        },
        "rate": {
            "t": farr(rates.iter().map(|r| r.t)),
            "value": farr(rates.iter().map(|r| r.rate)),
        },
    })
}

fn stride_for(s: &Scenario, traj: &Trajectory) -> usize {
    s.checks
        .iter()
        .find_map(|c| match c {
            CheckSpec::Bounds { stride, .. } => *stride,
            _ => None,
        })
        .unwrap_or_else(|| (traj.samples.len() / 500).max(1))
}

fn check_expect(series: &BoundSeries, expect: Option<&ExpectBounds>) -> (bool, String) {
    let (lo, hi) = (series.min(), series.max());
    let mut ok = lo.is_finite() && hi.is_finite();
    let mut detail = format!("lambda in [{lo:.6e}, {hi:.6e}] over {} states", series.t.len());
    if let Some(e) = expect {
        if let Some(want) = e.lambda_min {
            ok &= (lo - want).abs() <= e.tol;
            detail.push_str(&format!(", lambda_min error {:.3e}", (lo - want).abs()));
        }
        if let Some(want) = e.lambda_max {
            ok &= (hi - want).abs() <= e.tol;
            detail.push_str(&format!(", lambda_max error {:.3e}", (hi - want).abs()));
        }
    }
    (ok, detail)
}

/// Event labels grouped onto the first sample at or after each event.
fn event_column<E>(times: &[f64], events: &[E], key: impl Fn(&E) -> (f64, String)) -> Vec<String> {
    let mut keyed: Vec<(f64, String)> = events.iter().map(key).collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = vec![String::new(); times.len()];
    let mut next = 0;
    for (i, &t) in times.iter().enumerate() {
        let mut labels = Vec::new();
        while next < keyed.len() && (keyed[next].0 <= t || i + 1 == times.len()) {
            labels.push(keyed[next].1.clone());
            next += 1;
        }
        out[i] = labels.join(";");
    }
    out
}

fn trajectory_csv(dim: usize, with_p: bool, rows: impl Iterator<Item = (f64, Vec<f64>, String)>) -> String {
    let mut header = vec!["t".to_string()];
    header.extend((1..=dim).map(|i| format!("x{i}")));
    if with_p {
        header.extend((1..=dim).map(|i| format!("p{i}")));
    }
    header.push("event".into());
    let mut csv = Csv::new(&header);
    for (t, values, event) in rows {
        let mut fields = vec![num(t)];
        fields.extend(values.into_iter().map(num));
        fields.push(event);
        csv.row(fields);
    }
    csv.into_string()
}

fn run_flow(s: &Scenario, opts: &RunOptions) -> std::result::Result<Artifacts, Error> {
    let setup = FlowSetup::new(s)?;
    let config = setup.config(s, opts);
    let (metric, field, set) = (&setup.metric, &setup.field, &setup.set);
    let traj = simulate(metric, field, set, &setup.x0, &config)?;
    let n = field.dim();

    let times: Vec<f64> = traj.samples.iter().map(|x| x.t).collect();
    let events = event_column(&times, &traj.events, |e| {
        let kind = match e.kind {
            EventKind::Activation => "activation",
            EventKind::Release => "release",
        };
        (e.time, format!("{kind}:{}", e.constraint))
    });
    let csv = trajectory_csv(
        n,
        false,
        traj.samples
            .iter()
            .zip(events)
            .map(|(x, e)| (x.t, x.x.iter().copied().collect(), e)),
    );

    let series = BoundSeries::along(&setup, &traj, stride_for(s, &traj))?;
    let mut rates = Vec::new();
    let mut checks = Vec::new();
    for c in &s.checks {
        checks.push(match c {
            CheckSpec::Feasibility { tol } => {
                let worst = traj
                    .samples
                    .iter()
                    .map(|x| set.max_violation(&x.x, x.t))
                    .fold(f64::NEG_INFINITY, f64::max);
                verdict(
                    c.name(),
                    worst <= *tol,
                    format!("max g = {worst:.3e} over {} samples", traj.samples.len()),
                )
            }
            CheckSpec::Bounds { at, expect, .. } => {
                let series = match at {
                    Some(points) => BoundSeries::at(metric, field, set, points, setup.x0.t)?,
                    None => BoundSeries {
                        t: series.t.clone(),
                        lambda_min: series.lambda_min.clone(),
                        lambda_max: series.lambda_max.clone(),
                    },
                };
                let (ok, detail) = check_expect(&series, expect.as_ref());
                verdict(c.name(), ok, detail)
            }
            CheckSpec::EmpiricalRate {
                epsilon,
                direction,
                tol,
            } => {
                let u = match direction {
                    Some(d) => DVector::from_column_slice(d),
                    None => random_tangent(set, &setup.x0, opts.seed.unwrap_or(s.seed))?,
                };
                let x1 = StateVector::new(&setup.x0.x + &u * (*epsilon / u.norm()), setup.x0.t)?;
                let other = simulate(metric, field, set, &x1, &config)?;
                rates = pair_rate(metric, &traj, &other)?;
                let (lo, hi) = (series.min() - tol, series.max() + tol);
                let outside = rates.iter().filter(|r| r.rate < lo || r.rate > hi).count();
                verdict(
                    c.name(),
                    !rates.is_empty() && outside == 0,
                    format!(
                        "{} rate samples, {outside} outside [{lo:.6e}, {hi:.6e}]",
                        rates.len()
                    ),
                )
            }
            _ => unreachable!("validated check kind"),
        });
    }

    Ok(Artifacts {
        files: vec![
            (format!("{}_traj.csv", s.name), csv),
            (
                format!("{}_bounds.json", s.name),
                output::json(&bounds_json(&series, &rates)),
            ),
        ],
        checks,
    })
}

/// Seeded random unit direction tangent to the constraints active at `x0`.
fn random_tangent(set: &ConstraintSet, x0: &StateVector, seed: u64) -> std::result::Result<DVector<f64>, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = DVector::from_fn(x0.dim(), |_, _| rng.gen_range(-1.0..1.0));
    let active = constraints::detect_active(set, x0)?;
    let basis = constraints::tangent_basis(set, &active, x0);
    if basis.dim() == 0 {
        return Err(Error::DegenerateTangentSpace);
    }
    let u = basis.projector() * raw;
    if u.norm() == 0.0 {
        return Err(Error::InvalidInput("random direction vanished after projection".into()));
    }
    Ok(u)
}

fn simulate_form(
    form: Formulation,
    s: &Scenario,
    opts: &RunOptions,
) -> std::result::Result<PhaseTrajectory, Error> {
    let ham = model::hamiltonian(s.hamiltonian.as_ref().expect("validated"));
    let set = model::constraints(&s.constraints, s.sim.as_ref())?;
    let x0 = model::initial_phase(s)?;
    let config = model::sim_config(s.sim.as_ref().expect("validated"), opts.dt);
    let e = s.restitution.unwrap_or(0.0);
    match form {
        Formulation::Step => simulate_step_form(&ham, &set, &x0, e, &config),
        Formulation::Dirac => simulate_dirac_form(&ham, &set, &x0, e, &config),
    }
}

fn run_hamiltonian(s: &Scenario, opts: &RunOptions) -> std::result::Result<Artifacts, Error> {
    let spec = s.hamiltonian.as_ref().expect("validated");
    let (form, other_form) = match spec.formulation {
        FormSpec::Dirac => (Formulation::Dirac, Formulation::Step),
        FormSpec::Step => (Formulation::Step, Formulation::Dirac),
    };
    let traj = simulate_form(form, s, opts)?;
    let set = model::constraints(&s.constraints, s.sim.as_ref())?;
    let n = spec.inverse_mass.len();

    let times: Vec<f64> = traj.samples.iter().map(|x| x.t).collect();
    let events = event_column(&times, &traj.events, |e| {
        let kind = match e.kind {
            PhaseEventKind::Collision => "collision",
            PhaseEventKind::ContactStart => "contact",
            PhaseEventKind::Release => "release",
        };
        (e.time, format!("{kind}:{}", e.constraint))
    });
    let csv = trajectory_csv(
        n,
        true,
        traj.samples.iter().zip(events).map(|(x, e)| {
            let values = x.q.iter().chain(x.p.iter()).copied().collect();
            (x.t, values, e)
        }),
    );
    let mut files = vec![(format!("{}_traj.csv", s.name), csv)];

    let collisions: Vec<_> = traj.collisions().collect();
    let mut checks = Vec::new();
    for c in &s.checks {
        checks.push(match c {
            CheckSpec::Feasibility { tol } => {
                let worst = traj
                    .samples
                    .iter()
                    .map(|x| set.max_violation(&x.q, x.t))
                    .fold(f64::NEG_INFINITY, f64::max);
                verdict(c.name(), worst <= *tol, format!("max g = {worst:.3e}"))
            }
            CheckSpec::Equivalence { tol } => {
                let other = simulate_form(other_form, s, opts)?;
                match equivalence_check(&traj, &other, *tol) {
                    Ok(r) => verdict(
                        c.name(),
                        r.passed,
                        format!(
                            "max deviation {:.3e} at t = {:.6} over {} samples",
                            r.max_deviation, r.time_of_max, r.compared
                        ),
                    ),
                    Err(e @ Error::EventCountMismatch { .. }) => verdict(c.name(), false, e.to_string()),
                    Err(e) => return Err(e),
                }
            }
            CheckSpec::Energy { tol } => {
                let elastic: Vec<_> = collisions.iter().filter(|x| x.restitution == 1.0).collect();
                let worst = elastic
                    .iter()
                    .map(|x| (x.kinetic_post - x.kinetic_pre).abs())
                    .fold(0.0, f64::max);
                verdict(
                    c.name(),
                    !elastic.is_empty() && worst <= *tol,
                    format!("{} elastic collisions, max |dK| = {worst:.3e}", elastic.len()),
                )
            }
            CheckSpec::Collisions { min } => verdict(
                c.name(),
                collisions.len() >= *min,
                format!("{} collisions (need {min})", collisions.len()),
            ),
            CheckSpec::Bounds { at, expect, .. } => {
                let (field, metric) = first_order_form(s)?;
                let t = s.initial.as_ref().map_or(0.0, |i| i.t);
                let points = at.as_ref().expect("validated");
                let series = BoundSeries::at(&metric, &field, &ConstraintSet::empty(), points, t)?;
                files.push((format!("{}_bounds.json", s.name), output::json(&bounds_json(&series, &[]))));
                let (ok, detail) = check_expect(&series, expect.as_ref());
                verdict(c.name(), ok, detail)
            }
            _ => unreachable!("validated check kind"),
        });
    }
    Ok(Artifacts { files, checks })
}

fn run_geodesic(s: &Scenario) -> std::result::Result<Artifacts, Error> {
    let spec = s.geodesic.as_ref().expect("validated");
    let world = model::world(spec)?;
    let paths = shortest_paths(&world, spec.paths)?;
    let rows = path_table(&paths, spec.speed)?;

    let mut table = Csv::new(
        &[
            "rank",
            "length",
            "travel_time",
            "action",
            "travel_time_difference",
            "action_difference",
            "corners",
        ]
        .map(String::from),
    );
    for (i, (row, p)) in rows.iter().zip(&paths).enumerate() {
        let corners: Vec<String> = p.corners.iter().map(|(o, v)| format!("{o}:{v}")).collect();
        table.row([
            (i + 1).to_string(),
            num(row.length),
            num(row.travel_time),
            num(row.action),
            num(row.travel_time_difference),
            num(row.action_difference),
            corners.join(";"),
        ]);
    }
    let mut vertices = Csv::new(&["rank", "index", "x", "y"].map(String::from));
    for (i, p) in paths.iter().enumerate() {
        for (k, v) in p.vertices.iter().enumerate() {
            vertices.row([(i + 1).to_string(), k.to_string(), num(v.x), num(v.y)]);
        }
    }
    let mut files = vec![
        (format!("{}_paths.csv", s.name), table.into_string()),
        (format!("{}_vertices.csv", s.name), vertices.into_string()),
    ];
    let fan = spec.fan.map(|count| corner_fan(&world, &paths[0], count));
    if let Some(fan) = &fan {
        let mut csv = Csv::new(&["index", "dx", "dy"].map(String::from));
        for (i, d) in fan.iter().enumerate() {
            csv.row([i.to_string(), num(d.x), num(d.y)]);
        }
        files.push((format!("{}_fan.csv", s.name), csv.into_string()));
    }

    let lengths: Vec<f64> = paths.iter().map(|p| p.length).collect();
    let shown = lengths.iter().map(|l| format!("{l:.9}")).collect::<Vec<_>>().join(", ");
    let mut checks = Vec::new();
    for c in &s.checks {
        checks.push(match c {
            CheckSpec::PathCount { expected } => verdict(
                c.name(),
                paths.len() == *expected,
                format!("{} paths: {shown}", paths.len()),
            ),
            CheckSpec::EqualLengths { count, tol } => {
                let head = &lengths[..(*count).min(lengths.len())];
                let lo = head.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = head.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let rel = (hi - lo) / lo;
                verdict(
                    c.name(),
                    head.len() == *count && rel < *tol,
                    format!("relative spread {rel:.3e} over {} paths", head.len()),
                )
            }
            CheckSpec::Ordered {} => {
                let ok = lengths.len() >= 2
                    && lengths.windows(2).all(|w| w[1] > w[0] * (1.0 + 1e-12));
                verdict(c.name(), ok, format!("lengths {shown}"))
            }
            CheckSpec::Fan { count } => {
                let got = fan.as_ref().map_or(0, Vec::len);
                verdict(c.name(), got == *count, format!("{got} headings"))
            }
            _ => unreachable!("validated check kind"),
        });
    }
    Ok(Artifacts { files, checks })
}
