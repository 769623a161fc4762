#![allow(dead_code)]

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use contraq_core::collisions::Hamiltonian;
use contraq_core::constraints::{ConstraintFunction, ConstraintSet};
use contraq_core::geodesics::{Point, PolygonalWorld};
use contraq_core::geometry::CovectorField;
use nalgebra::{DMatrix, DVector};

pub fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

pub fn parabola() -> ConstraintSet {
    ConstraintSet::new(vec![ConstraintFunction::quadratic(
        "parabola",
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
        v(&[0.0, 1.0]),
        0.0,
    )])
    .unwrap()
}

/// f = (x1, x2 + 1)
pub fn example1_field() -> CovectorField {
    CovectorField::affine(DMatrix::identity(2, 2), v(&[0.0, 1.0]))
}

pub fn static_circle() -> ConstraintSet {
    ConstraintSet::new(vec![ConstraintFunction::circle(
        "circle",
        1.0,
        |_| (2.0, 0.0),
        |_| (0.0, 0.0),
    )])
    .unwrap()
}

pub fn decay(n: usize) -> CovectorField {
    CovectorField::linear(-DMatrix::identity(n, n))
}

/// The envelope oscillator as a one-dimensional Hamiltonian system
/// (H = 2/3, V = 3/4 x^2, damping 1.5, input force -1.5 u(t)).
pub fn envelope_hamiltonian(u: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Hamiltonian {
    Hamiltonian::quadratic(
        DMatrix::from_element(1, 1, 2.0 / 3.0),
        DMatrix::from_element(1, 1, 1.5),
    )
    .with_damping(DMatrix::from_element(1, 1, 1.5))
    .with_force(move |t| DVector::from_element(1, -1.5 * u(t)))
}

pub fn envelope_constraints() -> ConstraintSet {
    ConstraintSet::new(vec![
        ConstraintFunction::linear("upper", DVector::from_element(1, 1.0), -2.0),
        ConstraintFunction::linear("lower", DVector::from_element(1, -1.0), -2.0),
    ])
    .unwrap()
}

/// Pushes against the upper wall until `t_off`, then lets go.
pub fn push_input(t_off: f64) -> impl Fn(f64) -> f64 + Send + Sync + 'static {
    move |t| if t < t_off { -4.0 } else { 0.0 }
}

fn seg_intersect_closed(a: Point, b: Point, c: Point, d: Point) -> bool {
    let o = |p: Point, q: Point, r: Point| (q - p).perp(&(r - p));
    let d1 = o(c, d, a);
    let d2 = o(c, d, b);
    let d3 = o(a, b, c);
    let d4 = o(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let within = |p: Point, q: Point, r: Point| {
        r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
    };
    (d1 == 0.0 && within(c, d, a))
        || (d2 == 0.0 && within(c, d, b))
        || (d3 == 0.0 && within(a, b, c))
        || (d4 == 0.0 && within(a, b, d))
}

fn inside_polygon(poly: &[Point], p: Point) -> bool {
    let mut inside = false;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        if (a.y > p.y) != (b.y > p.y) && p.x < a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y) {
            inside = !inside;
        }
    }
    inside
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 { a.abs() } else { gcd(b, a % b) }
}

/// Shortest path length on a square grid over `[-half, half]^2` with
/// `cells` cells per side, using every primitive move with `|dx|, |dy| <= reach`.
/// A move is rejected when it touches a wall or crosses a polygon.
pub fn grid_oracle(world: &PolygonalWorld, half: f64, cells: usize, reach: i64) -> Option<f64> {
    let n = cells + 1;
    let h = 2.0 * half / cells as f64;
    let pt = |i: usize, j: usize| Point::new(-half + i as f64 * h, -half + j as f64 * h);
    let snap = |p: Point| {
        (
            ((p.x + half) / h).round() as usize,
            ((p.y + half) / h).round() as usize,
        )
    };
    let blocked_node: Vec<bool> = (0..n * n)
        .map(|k| {
            let p = pt(k % n, k / n);
            world
                .obstacles
                .iter()
                .any(|o| o.vertices.len() > 2 && inside_polygon(&o.vertices, p))
        })
        .collect();
    let mut moves = Vec::new();
    for dx in -reach..=reach {
        for dy in -reach..=reach {
            if (dx, dy) != (0, 0) && gcd(dx, dy) == 1 {
                moves.push((dx, dy, ((dx * dx + dy * dy) as f64).sqrt() * h));
            }
        }
    }
    let edge_ok = |a: Point, b: Point| {
        world.obstacles.iter().all(|o| {
            let vs = &o.vertices;
            if vs.len() == 2 {
                return !seg_intersect_closed(a, b, vs[0], vs[1]);
            }
            let crosses = (0..vs.len()).any(|i| {
                let (c, d) = (vs[i], vs[(i + 1) % vs.len()]);
                seg_intersect_closed(a, b, c, d)
            });
            !crosses && !inside_polygon(vs, (a + b) * 0.5)
        })
    };
    let (si, sj) = snap(world.source);
    let (ti, tj) = snap(world.target);
    let mut dist = vec![f64::INFINITY; n * n];
    let mut heap = BinaryHeap::new();
    let start = sj * n + si;
    dist[start] = 0.0;
    heap.push(Reverse((ordered(0.0), start)));
    while let Some(Reverse((d, k))) = heap.pop() {
        let d = f64::from_bits(d);
        if d > dist[k] {
            continue;
        }
        let (i, j) = (k % n, k / n);
        if (i, j) == (ti, tj) {
            return Some(d);
        }
        for &(dx, dy, w) in &moves {
            let (ni, nj) = (i as i64 + dx, j as i64 + dy);
            if ni < 0 || nj < 0 || ni >= n as i64 || nj >= n as i64 {
                continue;
            }
            let nk = nj as usize * n + ni as usize;
            if blocked_node[nk] || d + w >= dist[nk] {
                continue;
            }
            if !edge_ok(pt(i, j), pt(ni as usize, nj as usize)) {
                continue;
            }
            dist[nk] = d + w;
            heap.push(Reverse((ordered(d + w), nk)));
        }
    }
    None
}

/// Bit pattern that orders like the value for non-negative floats.
fn ordered(x: f64) -> u64 {
    x.to_bits()
}
