//! Scenario files: JSON documents describing one run.

use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use crate::error::{CliError, Location, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Flow,
    Hamiltonian,
    Geodesic,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Flow => "flow",
            Kind::Hamiltonian => "hamiltonian",
            Kind::Geodesic => "geodesic",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub kind: Kind,
    #[serde(default)]
    pub field: Option<FieldSpec>,
    #[serde(default)]
    pub metric: Option<MetricSpec>,
    #[serde(default)]
    pub constraints: Vec<ConstraintSpec>,
    #[serde(default)]
    pub initial: Option<InitialSpec>,
    #[serde(default)]
    pub sim: Option<SimSpec>,
    #[serde(default)]
    pub hamiltonian: Option<HamiltonianSpec>,
    #[serde(default)]
    pub restitution: Option<f64>,
    #[serde(default)]
    pub geodesic: Option<GeodesicSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub checks: Vec<CheckSpec>,
}

/// One monomial `coef * prod_i x_i^powers[i]`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub coef: f64,
    pub powers: Vec<u32>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    /// `f = a x + b`
    Affine {
        a: Matrix,
        #[serde(default)]
        b: Option<Vec<f64>>,
    },
    /// `f = -rate x` in `dim` dimensions.
    LinearDecay { dim: usize, rate: f64 },
    /// One term list per component.
    Polynomial { components: Vec<Vec<Term>> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricSpec {
    Identity { dim: usize },
    Constant { m: Matrix },
    /// Symmetric matrix of term lists; only the upper triangle is read.
    Polynomial { entries: Vec<Vec<Vec<Term>>> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Knot {
    pub t: f64,
    pub center: [f64; 2],
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintSpec {
    /// `g = a . x + b`
    Linear { label: String, a: Vec<f64>, b: f64 },
    /// `g = x^T q x + a . x + c`
    Quadratic {
        label: String,
        q: Matrix,
        a: Vec<f64>,
        c: f64,
    },
    /// Outside of a disk whose center follows a natural cubic spline.
    Circle {
        label: String,
        radius: f64,
        knots: Vec<Knot>,
    },
}

impl ConstraintSpec {
    pub fn label(&self) -> &str {
        match self {
            ConstraintSpec::Linear { label, .. }
            | ConstraintSpec::Quadratic { label, .. }
            | ConstraintSpec::Circle { label, .. } => label,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default)]
    pub t: f64,
    #[serde(default)]
    pub x: Option<Vec<f64>>,
    #[serde(default)]
    pub q: Option<Vec<f64>>,
    #[serde(default)]
    pub p: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub event_tol: Option<f64>,
    #[serde(default)]
    pub activation_tol: Option<f64>,
    #[serde(default)]
    pub release_tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormSpec {
    #[default]
    Dirac,
    Step,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianSpec {
    /// Constant inverse mass matrix.
    #[serde(rename = "H")]
    pub inverse_mass: Matrix,
    #[serde(rename = "V")]
    pub potential: PotentialSpec,
    #[serde(default)]
    pub damping: Option<Matrix>,
    #[serde(default)]
    pub force: Option<ForceSpec>,
    #[serde(default)]
    pub formulation: FormSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    Zero,
    /// `V = 1/2 q^T k q`
    Quadratic { k: Matrix },
    Polynomial { terms: Vec<Term> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForceSpec {
    /// `values[i]` holds on `[breaks[i-1], breaks[i])`.
    PiecewiseConstant { breaks: Vec<f64>, values: Matrix },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub vertices: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeodesicSpec {
    pub obstacles: Vec<ObstacleSpec>,
    pub source: [f64; 2],
    pub target: [f64; 2],
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_speed")]
    pub speed: f64,
    #[serde(default)]
    pub fan: Option<usize>,
}

fn default_paths() -> usize {
    2
}

fn default_speed() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectBounds {
    #[serde(default)]
    pub lambda_min: Option<f64>,
    #[serde(default)]
    pub lambda_max: Option<f64>,
    pub tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckSpec {
    /// `max_j g_j <= tol` on every sample.
    Feasibility { tol: f64 },
    /// Contraction bounds along the trajectory, or at the listed states.
    Bounds {
        #[serde(default)]
        at: Option<Matrix>,
        #[serde(default)]
        stride: Option<usize>,
        #[serde(default)]
        expect: Option<ExpectBounds>,
    },
    /// Measured log-distance rate of a neighboring pair stays inside the
    /// bound envelope widened by `tol`.
    EmpiricalRate {
        epsilon: f64,
        #[serde(default)]
        direction: Option<Vec<f64>>,
        tol: f64,
    },
    /// Step and Dirac forms agree to `tol` in position.
    Equivalence { tol: f64 },
    /// Fully elastic collisions keep the kinetic energy.
    Energy { tol: f64 },
    Collisions { min: usize },
    PathCount { expected: usize },
    EqualLengths { count: usize, tol: f64 },
    Ordered {},
    Fan { count: usize },
}

impl CheckSpec {
    pub fn name(&self) -> &'static str {
        match self {
            CheckSpec::Feasibility { .. } => "feasibility",
            CheckSpec::Bounds { .. } => "bounds",
            CheckSpec::EmpiricalRate { .. } => "empirical_rate",
            CheckSpec::Equivalence { .. } => "equivalence",
            CheckSpec::Energy { .. } => "energy",
            CheckSpec::Collisions { .. } => "collisions",
            CheckSpec::PathCount { .. } => "path_count",
            CheckSpec::EqualLengths { .. } => "equal_lengths",
            CheckSpec::Ordered {} => "ordered",
            CheckSpec::Fan { .. } => "fan",
        }
    }

    fn allowed(&self, kind: Kind) -> bool {
        use CheckSpec::*;
        match kind {
            Kind::Flow => matches!(self, Feasibility { .. } | Bounds { .. } | EmpiricalRate { .. }),
            Kind::Hamiltonian => matches!(
                self,
                Feasibility { .. } | Bounds { .. } | Equivalence { .. } | Energy { .. } | Collisions { .. }
            ),
            Kind::Geodesic => matches!(
                self,
                PathCount { .. } | EqualLengths { .. } | Ordered {} | Fan { .. }
            ),
        }
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_scenario(&text, path)
}

/// Parses and validates scenario text; `origin` is used in diagnostics.
pub fn parse_scenario(text: &str, origin: &Path) -> Result<Scenario> {
    let schema = |location: Location, message: String| CliError::Schema {
        path: origin.to_path_buf(),
        location,
        message,
    };
    let value: Value = serde_json::from_str(text).map_err(|e| {
        schema(
            Location {
                line: Some(e.line()),
                column: Some(e.column()),
                field: None,
            },
            e.to_string(),
        )
    })?;
    match value.get("schema_version") {
        None => {
            return Err(schema(
                Location {
                    line: Some(1),
                    column: None,
                    field: Some("schema_version".into()),
                },
                "missing schema version".into(),
            ))
        }
        Some(v) if v.as_u64() != Some(u64::from(SCHEMA_VERSION)) => {
            return Err(schema(
                locate(text, "schema_version"),
                format!("unsupported schema version {v}, expected {SCHEMA_VERSION}"),
            ))
        }
        Some(_) => {}
    }
    let scenario: Scenario = serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        let location = Location {
            line: Some(e.line()),
            column: Some(e.column()),
            field: quoted(&msg, "unknown field `").or_else(|| quoted(&msg, "missing field `")),
        };
        match quoted(&msg, "unknown variant `") {
            Some(name) => CliError::UnknownBuiltin {
                path: origin.to_path_buf(),
                location,
                name,
            },
            None => schema(location, msg),
        }
    })?;
    validate(&scenario).map_err(|(field, message)| schema(locate(text, &field), message))?;
    Ok(scenario)
}

fn quoted(msg: &str, prefix: &str) -> Option<String> {
    let start = msg.find(prefix)? + prefix.len();
    let len = msg[start..].find('`')?;
    Some(msg[start..start + len].to_string())
}

/// Best-effort line of a dotted field path such as `constraints[1].a`.
fn locate(text: &str, field: &str) -> Location {
    let mut offset = 0;
    let mut found = None;
    for key in field.split('.') {
        let key = key.split('[').next().unwrap_or(key);
        if key.is_empty() {
            continue;
        }
        if let Some(pos) = text[offset..].find(&format!("\"{key}\"")) {
            offset += pos;
            found = Some(offset);
        }
    }
    Location {
        line: found.map(|o| text[..o].matches('\n').count() + 1),
        column: None,
        field: Some(field.to_string()),
    }
}

type Invalid = (String, String);

fn bad<T>(field: impl Into<String>, message: impl Into<String>) -> std::result::Result<T, Invalid> {
    Err((field.into(), message.into()))
}

fn finite(field: &str, v: f64) -> std::result::Result<(), Invalid> {
    if v.is_finite() {
        Ok(())
    } else {
        bad(field, "value must be finite")
    }
}

fn positive(field: &str, v: f64) -> std::result::Result<(), Invalid> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        bad(field, format!("must be positive, got {v}"))
    }
}

fn vector(field: &str, v: &[f64], n: usize) -> std::result::Result<(), Invalid> {
    if v.len() != n {
        return bad(field, format!("expected {n} entries, got {}", v.len()));
    }
    v.iter().try_for_each(|&x| finite(field, x))
}

fn square(field: &str, m: &Matrix, n: usize) -> std::result::Result<(), Invalid> {
    if m.len() != n {
        return bad(field, format!("expected {n} rows, got {}", m.len()));
    }
    for (i, row) in m.iter().enumerate() {
        vector(&format!("{field}[{i}]"), row, n)?;
    }
    Ok(())
}

fn terms(field: &str, ts: &[Term], n: usize) -> std::result::Result<(), Invalid> {
    for (i, t) in ts.iter().enumerate() {
        finite(field, t.coef)?;
        if t.powers.len() != n {
            return bad(
                format!("{field}[{i}].powers"),
                format!("expected {n} exponents, got {}", t.powers.len()),
            );
        }
    }
    Ok(())
}

impl FieldSpec {
    pub fn dim(&self) -> usize {
        match self {
            FieldSpec::Affine { a, .. } => a.len(),
            FieldSpec::LinearDecay { dim, .. } => *dim,
            FieldSpec::Polynomial { components } => components.len(),
        }
    }
}

impl MetricSpec {
    pub fn dim(&self) -> usize {
        match self {
            MetricSpec::Identity { dim } => *dim,
            MetricSpec::Constant { m } => m.len(),
            MetricSpec::Polynomial { entries } => entries.len(),
        }
    }
}

fn validate_field(f: &FieldSpec, n: usize) -> std::result::Result<(), Invalid> {
    match f {
        FieldSpec::Affine { a, b } => {
            square("field.a", a, n)?;
            if let Some(b) = b {
                vector("field.b", b, n)?;
            }
        }
        FieldSpec::LinearDecay { rate, .. } => finite("field.rate", *rate)?,
        FieldSpec::Polynomial { components } => {
            for (i, c) in components.iter().enumerate() {
                terms(&format!("field.components[{i}]"), c, n)?;
            }
        }
    }
    Ok(())
}

fn validate_metric(m: &MetricSpec, n: usize) -> std::result::Result<(), Invalid> {
    if m.dim() != n {
        return bad("metric", format!("metric dimension {} does not match {n}", m.dim()));
    }
    match m {
        MetricSpec::Identity { .. } => Ok(()),
        MetricSpec::Constant { m } => {
            square("metric.m", m, n)?;
            for (i, row) in m.iter().enumerate() {
                for (j, v) in row.iter().enumerate().take(i) {
                    if *v != m[j][i] {
                        return bad("metric.m", "matrix must be symmetric");
                    }
                }
            }
            Ok(())
        }
        MetricSpec::Polynomial { entries } => {
            for (i, row) in entries.iter().enumerate() {
                if row.len() != n {
                    return bad("metric.entries", format!("row {i} must have {n} entries"));
                }
                for (j, ts) in row.iter().enumerate() {
                    terms(&format!("metric.entries[{i}][{j}]"), ts, n)?;
                }
            }
            Ok(())
        }
    }
}

fn validate_constraints(cs: &[ConstraintSpec], n: usize) -> std::result::Result<(), Invalid> {
    let mut labels = std::collections::HashSet::new();
    for (k, c) in cs.iter().enumerate() {
        let at = |s: &str| format!("constraints[{k}].{s}");
        if !labels.insert(c.label()) {
            return bad(at("label"), format!("duplicate label `{}`", c.label()));
        }
        match c {
            ConstraintSpec::Linear { a, b, .. } => {
                vector(&at("a"), a, n)?;
                finite(&at("b"), *b)?;
            }
            ConstraintSpec::Quadratic { q, a, c, .. } => {
                square(&at("q"), q, n)?;
                vector(&at("a"), a, n)?;
                finite(&at("c"), *c)?;
            }
            ConstraintSpec::Circle { radius, knots, .. } => {
                if n < 2 {
                    return bad(at("type"), "circle constraints need at least two coordinates");
                }
                positive(&at("radius"), *radius)?;
                if knots.is_empty() {
                    return bad(at("knots"), "at least one knot is required");
                }
                for (i, kn) in knots.iter().enumerate() {
                    finite(&at("knots"), kn.t)?;
                    vector(&at("knots"), &kn.center, 2)?;
                    if i > 0 && kn.t <= knots[i - 1].t {
                        return bad(at("knots"), "knot times must increase");
                    }
                }
            }
        }
    }
    Ok(())
}

fn validate_sim(sim: Option<&SimSpec>) -> std::result::Result<(), Invalid> {
    let Some(sim) = sim else {
        return bad("sim", "missing simulation settings");
    };
    positive("sim.dt", sim.dt)?;
    positive("sim.t_end", sim.t_end)?;
    for (name, v) in [
        ("sim.event_tol", sim.event_tol),
        ("sim.activation_tol", sim.activation_tol),
        ("sim.release_tol", sim.release_tol),
    ] {
        if let Some(v) = v {
            positive(name, v)?;
        }
    }
    Ok(())
}

fn validate_checks(s: &Scenario, n: usize) -> std::result::Result<(), Invalid> {
    for (i, c) in s.checks.iter().enumerate() {
        let at = |f: &str| format!("checks[{i}].{f}");
        if !c.allowed(s.kind) {
            return bad(
                at("type"),
                format!("check `{}` does not apply to a {} scenario", c.name(), s.kind.as_str()),
            );
        }
        match c {
            CheckSpec::Feasibility { tol }
            | CheckSpec::Equivalence { tol }
            | CheckSpec::Energy { tol } => positive(&at("tol"), *tol)?,
            CheckSpec::EqualLengths { tol, .. } => positive(&at("tol"), *tol)?,
            CheckSpec::EmpiricalRate {
                epsilon,
                direction,
                tol,
            } => {
                positive(&at("epsilon"), *epsilon)?;
                positive(&at("tol"), *tol)?;
                if let Some(d) = direction {
                    vector(&at("direction"), d, n)?;
                    if d.iter().all(|&x| x == 0.0) {
                        return bad(at("direction"), "direction must be nonzero");
                    }
                }
            }
            CheckSpec::Bounds { at: points, stride, expect } => {
                if s.kind == Kind::Hamiltonian {
                    if s.field.is_none() || s.metric.is_none() {
                        return bad(at("type"), "bounds on a hamiltonian scenario need `field` and `metric`");
                    }
                    if points.is_none() {
                        return bad(at("at"), "bounds on a hamiltonian scenario need explicit states");
                    }
                }
                let fd = s.field.as_ref().map_or(n, FieldSpec::dim);
                if let Some(points) = points {
                    if points.is_empty() {
                        return bad(at("at"), "at least one state is required");
                    }
                    for p in points {
                        vector(&at("at"), p, fd)?;
                    }
                }
                if *stride == Some(0) {
                    return bad(at("stride"), "stride must be at least 1");
                }
                if let Some(e) = expect {
                    positive(&at("expect.tol"), e.tol)?;
                    for v in [e.lambda_min, e.lambda_max].into_iter().flatten() {
                        finite(&at("expect"), v)?;
                    }
                }
            }
            CheckSpec::Collisions { .. } | CheckSpec::PathCount { .. } | CheckSpec::Ordered {} => {}
            CheckSpec::Fan { count } => {
                if s.geodesic.as_ref().and_then(|g| g.fan).is_none() {
                    return bad(at("type"), "fan check needs `geodesic.fan`");
                }
                if *count == 0 {
                    return bad(at("count"), "count must be positive");
                }
            }
        }
    }
    Ok(())
}

fn validate(s: &Scenario) -> std::result::Result<(), Invalid> {
    if s.name.is_empty()
        || !s
            .name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
    {
        return bad("name", "name must be non-empty and use only [A-Za-z0-9_-]");
    }
    if let Some(e) = s.restitution {
        if !(0.0..=1.0).contains(&e) {
            return bad("restitution", format!("restitution {e} outside [0, 1]"));
        }
    }
    match s.kind {
        Kind::Flow => {
            let Some(field) = &s.field else {
                return bad("field", "flow scenarios need a field");
            };
            let n = field.dim();
            if n == 0 {
                return bad("field", "dimension must be positive");
            }
            validate_field(field, n)?;
            if let Some(m) = &s.metric {
                validate_metric(m, n)?;
            }
            validate_constraints(&s.constraints, n)?;
            let Some(x) = s.initial.as_ref().and_then(|i| i.x.as_ref()) else {
                return bad("initial.x", "flow scenarios need an initial state `x`");
            };
            vector("initial.x", x, n)?;
            finite("initial.t", s.initial.as_ref().map_or(0.0, |i| i.t))?;
            validate_sim(s.sim.as_ref())?;
            for (f, present) in [
                ("hamiltonian", s.hamiltonian.is_some()),
                ("geodesic", s.geodesic.is_some()),
                ("restitution", s.restitution.is_some()),
            ] {
                if present {
                    return bad(f, "not used by flow scenarios");
                }
            }
            validate_checks(s, n)
        }
        Kind::Hamiltonian => {
            let Some(h) = &s.hamiltonian else {
                return bad("hamiltonian", "hamiltonian scenarios need a `hamiltonian` block");
            };
            let n = h.inverse_mass.len();
            if n == 0 {
                return bad("hamiltonian.H", "dimension must be positive");
            }
            square("hamiltonian.H", &h.inverse_mass, n)?;
            match &h.potential {
                PotentialSpec::Zero => {}
                PotentialSpec::Quadratic { k } => square("hamiltonian.V.k", k, n)?,
                PotentialSpec::Polynomial { terms: ts } => terms("hamiltonian.V.terms", ts, n)?,
            }
            if let Some(d) = &h.damping {
                square("hamiltonian.damping", d, n)?;
            }
            if let Some(ForceSpec::PiecewiseConstant { breaks, values }) = &h.force {
                if values.len() != breaks.len() + 1 {
                    return bad("hamiltonian.force.values", "need one value more than breaks");
                }
                for (i, b) in breaks.iter().enumerate() {
                    finite("hamiltonian.force.breaks", *b)?;
                    if i > 0 && *b <= breaks[i - 1] {
                        return bad("hamiltonian.force.breaks", "breaks must increase");
                    }
                }
                for v in values {
                    vector("hamiltonian.force.values", v, n)?;
                }
            }
            if let (Some(f), Some(m)) = (&s.field, &s.metric) {
                validate_field(f, f.dim())?;
                validate_metric(m, f.dim())?;
            }
            validate_constraints(&s.constraints, n)?;
            let init = s.initial.as_ref();
            let Some(q) = init.and_then(|i| i.q.as_ref()) else {
                return bad("initial.q", "hamiltonian scenarios need `q`");
            };
            let Some(p) = init.and_then(|i| i.p.as_ref()) else {
                return bad("initial.p", "hamiltonian scenarios need `p`");
            };
            vector("initial.q", q, n)?;
            vector("initial.p", p, n)?;
            validate_sim(s.sim.as_ref())?;
            if s.geodesic.is_some() {
                return bad("geodesic", "not used by hamiltonian scenarios");
            }
            validate_checks(s, n)
        }
        Kind::Geodesic => {
            let Some(g) = &s.geodesic else {
                return bad("geodesic", "geodesic scenarios need a `geodesic` block");
            };
            for (i, o) in g.obstacles.iter().enumerate() {
                if o.vertices.len() < 2 {
                    return bad(format!("geodesic.obstacles[{i}].vertices"), "need at least 2 vertices");
                }
                for v in &o.vertices {
                    vector(&format!("geodesic.obstacles[{i}].vertices"), v, 2)?;
                }
            }
            vector("geodesic.source", &g.source, 2)?;
            vector("geodesic.target", &g.target, 2)?;
            positive("geodesic.speed", g.speed)?;
            if g.paths == 0 {
                return bad("geodesic.paths", "must request at least one path");
            }
            for (f, present) in [
                ("field", s.field.is_some()),
                ("metric", s.metric.is_some()),
                ("hamiltonian", s.hamiltonian.is_some()),
                ("sim", s.sim.is_some()),
                ("initial", s.initial.is_some()),
            ] {
                if present {
                    return bad(f, "not used by geodesic scenarios");
                }
            }
            if !s.constraints.is_empty() {
                return bad("constraints", "geodesic scenarios use `geodesic.obstacles`");
            }
            validate_checks(s, 2)
        }
    }
}
