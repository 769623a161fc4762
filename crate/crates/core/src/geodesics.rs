//! Shortest paths in the plane around polygonal obstacles.
//!
//! Paths are searched on the visibility graph of the source, the target and
//! every obstacle vertex. Several locally shortest (taut) paths are
//! enumerated with Yen's algorithm, which is how the two equal-length routes
//! through a symmetric double slit are both recovered.

use std::cmp::Ordering;

use nalgebra::Vector2;

use crate::error::{Error, Result};

pub type Point = Vector2<f64>;

/// Tolerance for on-boundary grazing in the segment tests.
pub const GEOM_EPS: f64 = 1e-12;

/// Closed polygon (3 or more vertices) or a zero-thickness wall (2 vertices).
#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub vertices: Vec<Point>,
}

impl Obstacle {
    pub fn polygon(vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidInput("polygon needs at least 3 vertices".into()));
        }
        let o = Self { vertices };
        o.validate()?;
        Ok(o)
    }

    pub fn wall(a: Point, b: Point) -> Result<Self> {
        if (a - b).norm() <= GEOM_EPS {
            return Err(Error::InvalidInput("wall endpoints coincide".into()));
        }
        Ok(Self {
            vertices: vec![a, b],
        })
    }

    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::polygon(vec![
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
        ])
    }

    pub fn is_wall(&self) -> bool {
        self.vertices.len() == 2
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        let count = if n == 2 { 1 } else { n };
        (0..count).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    fn validate(&self) -> Result<()> {
        if self.vertices.iter().any(|v| !v.x.is_finite() || !v.y.is_finite()) {
            return Err(Error::InvalidInput("non-finite obstacle vertex".into()));
        }
        let edges: Vec<_> = self.edges().collect();
        let n = edges.len();
        for i in 0..n {
            for j in i + 1..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if !adjacent && segments_touch(edges[i].0, edges[i].1, edges[j].0, edges[j].1) {
                    return Err(Error::InvalidInput("polygon is not simple".into()));
                }
            }
        }
        Ok(())
    }

    /// Strictly inside (points on the boundary are outside). Walls have no interior.
    pub fn contains_strict(&self, p: Point) -> bool {
        if self.is_wall() {
            return false;
        }
        if self.edges().any(|(a, b)| on_segment(p, a, b)) {
            return false;
        }
        let mut inside = false;
        let n = self.vertices.len();
        for i in 0..n {
            let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

fn cross(a: Point, b: Point) -> f64 {
    a.x * b.y - a.y * b.x
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    let v = cross(b - a, c - a);
    let scale = (b - a).norm() * (c - a).norm();
    if v.abs() <= GEOM_EPS * scale {
        0.0
    } else {
        v
    }
}

fn on_segment(p: Point, a: Point, b: Point) -> bool {
    orient(a, b, p) == 0.0
        && p.x >= a.x.min(b.x) - GEOM_EPS
        && p.x <= a.x.max(b.x) + GEOM_EPS
        && p.y >= a.y.min(b.y) - GEOM_EPS
        && p.y <= a.y.max(b.y) + GEOM_EPS
}

/// Interiors of both segments cross at a single point.
fn proper_crossing(a: Point, b: Point, c: Point, d: Point) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

fn segments_touch(a: Point, b: Point, c: Point, d: Point) -> bool {
    proper_crossing(a, b, c, d)
        || on_segment(c, a, b)
        || on_segment(d, a, b)
        || on_segment(a, c, d)
        || on_segment(b, c, d)
}

/// Parameters in [0, 1] along `ab` where it meets segment `cd`.
fn contact_params(a: Point, b: Point, c: Point, d: Point, out: &mut Vec<f64>) {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let param = |p: Point| ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    for p in [c, d] {
        if on_segment(p, a, b) {
            out.push(param(p));
        }
    }
    for p in [a, b] {
        if on_segment(p, c, d) {
            out.push(param(p));
        }
    }
    if proper_crossing(a, b, c, d) {
        let cd = d - c;
        let t = cross(c - a, cd) / cross(ab, cd);
        out.push(t.clamp(0.0, 1.0));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolygonalWorld {
    pub obstacles: Vec<Obstacle>,
    pub source: Point,
    pub target: Point,
}

impl PolygonalWorld {
    pub fn new(obstacles: Vec<Obstacle>, source: Point, target: Point) -> Result<Self> {
        let w = Self {
            obstacles,
            source,
            target,
        };
        for p in [source, target] {
            if w.obstacles.iter().any(|o| o.contains_strict(p)) {
                return Err(Error::InvalidInput(format!(
                    "endpoint ({}, {}) lies inside an obstacle",
                    p.x, p.y
                )));
            }
        }
        Ok(w)
    }

    pub fn without_obstacle(&self, i: usize) -> Self {
        let mut w = self.clone();
        w.obstacles.remove(i);
        w
    }

    /// Whether the closed segment `ab` avoids every obstacle interior and
    /// does not pass through any wall.
    pub fn visible(&self, a: Point, b: Point) -> bool {
        if (b - a).norm() <= GEOM_EPS {
            return true;
        }
        for o in &self.obstacles {
            let mut params = vec![0.0, 1.0];
            for (c, d) in o.edges() {
                if proper_crossing(a, b, c, d) {
                    return false;
                }
                if !o.is_wall() {
                    contact_params(a, b, c, d, &mut params);
                }
            }
            for v in &o.vertices {
                let t = (v - a).dot(&(b - a)) / (b - a).norm_squared();
                if t > GEOM_EPS && t < 1.0 - GEOM_EPS && on_segment(*v, a, b) {
                    let side = |r: &Point| orient(Point::zeros(), b - a, *r);
                    let rays = self.rays_at(*v);
                    if rays.iter().any(|r| side(r) > 0.0) && rays.iter().any(|r| side(r) < 0.0) {
                        return false;
                    }
                }
            }
            if o.is_wall() {
                continue;
            }
            params.sort_by(f64::total_cmp);
            for w in params.windows(2) {
                if w[1] - w[0] <= GEOM_EPS {
                    continue;
                }
                let mid = a + (b - a) * (0.5 * (w[0] + w[1]));
                if o.contains_strict(mid) {
                    return false;
                }
            }
        }
        true
    }
}

impl PolygonalWorld {
    /// Unit directions of every obstacle edge leaving the point `p`.
    pub fn rays_at(&self, p: Point) -> Vec<Point> {
        let mut out = Vec::new();
        for o in &self.obstacles {
            for (c, d) in o.edges() {
                let (pc, pd) = ((c - p).norm() <= GEOM_EPS, (d - p).norm() <= GEOM_EPS);
                if pc {
                    out.push((d - c).normalize());
                } else if pd {
                    out.push((c - d).normalize());
                } else if on_segment(p, c, d) {
                    out.push((d - c).normalize());
                    out.push((c - d).normalize());
                }
            }
        }
        out
    }

    /// Whether directions `u` and `v` from `p` lie in the same angular gap
    /// between the obstacle edges meeting at `p`.
    fn same_gap(&self, p: Point, u: Point, v: Point) -> bool {
        let tau = 2.0 * std::f64::consts::PI;
        let angle = |d: Point| d.y.atan2(d.x);
        let (au, av) = (angle(u), angle(v));
        let span = (av - au).rem_euclid(tau);
        let rays = self.rays_at(p);
        if rays.len() < 2 {
            return true;
        }
        // a ray strictly inside the counterclockwise sweep u -> v separates
        // them on that side; they share a gap if one of the two sweeps is clear
        let inside = |r: &Point| {
            let a = (angle(*r) - au).rem_euclid(tau);
            a > 1e-12 && a < span - 1e-12
        };
        let outside = |r: &Point| {
            let a = (angle(*r) - au).rem_euclid(tau);
            a > span + 1e-12 && a < tau - 1e-12
        };
        !rays.iter().any(inside) || !rays.iter().any(outside)
    }
}

/// Obstacle vertex touched by a path: `(obstacle, vertex)`.
pub type CornerId = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicPath {
    pub vertices: Vec<Point>,
    pub corners: Vec<CornerId>,
    pub length: f64,
    /// At unit speed.
    pub travel_time: f64,
    /// `1/2 speed * length` at unit speed and unit mass.
    pub action: f64,
}

struct Graph {
    points: Vec<Point>,
    corner: Vec<Option<CornerId>>,
    weight: Vec<Vec<Option<f64>>>,
}

impl Graph {
    fn build(world: &PolygonalWorld) -> Self {
        let mut points = vec![world.source, world.target];
        let mut corner = vec![None, None];
        for (i, o) in world.obstacles.iter().enumerate() {
            for (k, v) in o.vertices.iter().enumerate() {
                if world.obstacles.iter().any(|other| other.contains_strict(*v)) {
                    continue;
                }
                points.push(*v);
                corner.push(Some((i, k)));
            }
        }
        let n = points.len();
        let mut weight = vec![vec![None; n]; n];
        for a in 0..n {
            for b in a + 1..n {
                if world.visible(points[a], points[b]) {
                    let d = (points[b] - points[a]).norm();
                    weight[a][b] = Some(d);
                    weight[b][a] = Some(d);
                }
            }
        }
        Self {
            points,
            corner,
            weight,
        }
    }

    fn len(&self, path: &[usize]) -> f64 {
        path.windows(2)
            .map(|w| self.weight[w[0]][w[1]].expect("edge on path"))
            .sum()
    }

    /// Dense Dijkstra; ties resolved by lowest node index.
    fn dijkstra(
        &self,
        from: usize,
        to: usize,
        banned_nodes: &[bool],
        banned_edges: &[(usize, usize)],
    ) -> Option<Vec<usize>> {
        let n = self.points.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![usize::MAX; n];
        let mut done = vec![false; n];
        dist[from] = 0.0;
        loop {
            let u = (0..n)
                .filter(|&i| !done[i] && dist[i].is_finite())
                .min_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)))?;
            if u == to {
                break;
            }
            done[u] = true;
            for v in 0..n {
                if done[v] || banned_nodes[v] || banned_edges.contains(&(u, v)) {
                    continue;
                }
                if let Some(w) = self.weight[u][v] {
                    let nd = dist[u] + w;
                    if nd < dist[v] {
                        dist[v] = nd;
                        prev[v] = u;
                    }
                }
            }
        }
        let mut path = vec![to];
        let mut cur = to;
        while cur != from {
            cur = prev[cur];
            path.push(cur);
        }
        path.reverse();
        Some(path)
    }

    /// A path is taut when no corner can be cut: a short chord across each
    /// bend must be blocked by an obstacle.
    fn taut(&self, world: &PolygonalWorld, path: &[usize]) -> bool {
        path.windows(3).all(|w| {
            let (a, c, b) = (self.points[w[0]], self.points[w[1]], self.points[w[2]]);
            let da = (a - c).normalize();
            let db = (b - c).normalize();
            if cross(da, db).abs() <= 1e-12 && da.dot(&db) < 0.0 {
                return false;
            }
            if !world.same_gap(c, da, db) {
                return false;
            }
            let scale = 1e-6 * (a - c).norm().min((b - c).norm()).min(1.0);
            !world.visible(c + da * scale, c + db * scale)
        })
    }

    fn corners_of(&self, path: &[usize]) -> Vec<CornerId> {
        path.iter().filter_map(|&i| self.corner[i]).collect()
    }
}

fn compare_paths(a: &(f64, Vec<CornerId>), b: &(f64, Vec<CornerId>)) -> Ordering {
    let scale = a.0.abs().max(b.0.abs()).max(1.0);
    if (a.0 - b.0).abs() <= 1e-12 * scale {
        a.1.cmp(&b.1)
    } else {
        a.0.total_cmp(&b.0)
    }
}

/// The `k` shortest taut paths with distinct corner sequences, by length.
pub fn shortest_paths(world: &PolygonalWorld, k: usize) -> Result<Vec<GeodesicPath>> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let g = Graph::build(world);
    let n = g.points.len();
    let none = vec![false; n];
    let first = g.dijkstra(0, 1, &none, &[]).ok_or(Error::Unreachable)?;

    let mut accepted: Vec<Vec<usize>> = vec![first];
    let mut candidates: Vec<Vec<usize>> = Vec::new();
    let max_enumerated = 64 + 16 * k;
    let key = |p: &Vec<usize>| (g.len(p), g.corners_of(p));
    let count_taut =
        |acc: &Vec<Vec<usize>>| acc.iter().filter(|p| g.taut(world, p)).count();

    while count_taut(&accepted) < k && accepted.len() < max_enumerated {
        let prev = accepted.last().expect("nonempty").clone();
        for i in 0..prev.len() - 1 {
            let root = &prev[..=i];
            let spur = prev[i];
            let banned_edges: Vec<(usize, usize)> = accepted
                .iter()
                .filter(|p| p.len() > i + 1 && &p[..=i] == root)
                .map(|p| (p[i], p[i + 1]))
                .collect();
            let mut banned_nodes = vec![false; n];
            for &r in &root[..i] {
                banned_nodes[r] = true;
            }
            if let Some(tail) = g.dijkstra(spur, 1, &banned_nodes, &banned_edges) {
                let mut cand = root[..i].to_vec();
                cand.extend(tail);
                if !accepted.contains(&cand) && !candidates.contains(&cand) {
                    candidates.push(cand);
                }
            }
        }
        if candidates.is_empty() {
            break;
        }
        let best = (0..candidates.len())
            .min_by(|&a, &b| compare_paths(&key(&candidates[a]), &key(&candidates[b])))
            .expect("nonempty");
        accepted.push(candidates.swap_remove(best));
    }

    let mut out: Vec<(f64, Vec<CornerId>, Vec<usize>)> = accepted
        .into_iter()
        .filter(|p| g.taut(world, p))
        .map(|p| (g.len(&p), g.corners_of(&p), p))
        .collect();
    out.sort_by(|a, b| compare_paths(&(a.0, a.1.clone()), &(b.0, b.1.clone())));
    out.dedup_by(|a, b| a.1 == b.1);
    out.truncate(k);
    if out.is_empty() {
        return Err(Error::Unreachable);
    }
    Ok(out
        .into_iter()
        .map(|(length, corners, p)| GeodesicPath {
            vertices: p.iter().map(|&i| g.points[i]).collect(),
            corners,
            length,
            travel_time: length,
            action: 0.5 * length,
        })
        .collect())
}

/// Free angular sector at the last corner of `path`, sampled uniformly.
///
/// The sector is the set of forward headings (within 90 degrees of the
/// incoming direction) that do not point into the obstacle owning the
/// corner. When the obstacle splits it into two arcs the larger is used.
pub fn corner_fan(world: &PolygonalWorld, path: &GeodesicPath, count: usize) -> Vec<Point> {
    let Some(&(oi, vi)) = path.corners.last() else {
        return Vec::new();
    };
    if count == 0 {
        return Vec::new();
    }
    let obstacle = &world.obstacles[oi];
    let c = obstacle.vertices[vi];
    let pos = path
        .vertices
        .iter()
        .rposition(|v| (v - c).norm() <= GEOM_EPS)
        .expect("corner lies on path");
    let u = (c - path.vertices[pos - 1]).normalize();
    let base = u.y.atan2(u.x) - std::f64::consts::FRAC_PI_2;
    let pi = std::f64::consts::PI;
    let tau = 2.0 * pi;
    let angle = |d: Point| d.y.atan2(d.x);
    let rel = |a: f64| (a - base).rem_euclid(tau);

    // blocked cone as (start offset, width) in the sector coordinate
    let mut cuts: Vec<(f64, f64)> = Vec::new();
    if obstacle.is_wall() {
        let other = obstacle.vertices[1 - vi];
        cuts.push((rel(angle(other - c)), 0.0));
    } else {
        let n = obstacle.vertices.len();
        let e1 = obstacle.vertices[(vi + n - 1) % n] - c;
        let e2 = obstacle.vertices[(vi + 1) % n] - c;
        let (a1, a2) = (angle(e1), angle(e2));
        // counterclockwise width from e1 to e2
        let w12 = (a2 - a1).rem_euclid(tau);
        let probe_dir = a1 + 0.5 * w12;
        let probe = c + Point::new(probe_dir.cos(), probe_dir.sin()) * 1e-7;
        let (start, width) = if obstacle.contains_strict(probe) {
            (a1, w12)
        } else {
            (a2, tau - w12)
        };
        cuts.push((rel(start), width));
    }

    let mut arcs: Vec<(f64, f64)> = vec![(0.0, pi)];
    for (o, w) in cuts {
        for shift in [o, o - tau] {
            let (lo, hi) = (shift, shift + w);
            let mut next = Vec::new();
            for (a, b) in arcs {
                if w == 0.0 {
                    if lo > a && lo < b {
                        next.push((a, lo));
                        next.push((lo, b));
                    } else {
                        next.push((a, b));
                    }
                    continue;
                }
                if hi <= a || lo >= b {
                    next.push((a, b));
                    continue;
                }
                if lo > a {
                    next.push((a, lo));
                }
                if hi < b {
                    next.push((hi, b));
                }
            }
            arcs = next;
        }
    }
    let Some((a, b)) = arcs
        .into_iter()
        .filter(|(a, b)| b - a > GEOM_EPS)
        .fold(None, |best: Option<(f64, f64)>, arc| match best {
            Some(bb) if bb.1 - bb.0 >= arc.1 - arc.0 => Some(bb),
            _ => Some(arc),
        })
    else {
        return Vec::new();
    };
    (0..count)
        .map(|i| {
            let s = if count == 1 {
                0.5 * (a + b)
            } else {
                a + (b - a) * i as f64 / (count - 1) as f64
            };
            let phi = base + s;
            Point::new(phi.cos(), phi.sin())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathRow {
    pub length: f64,
    pub travel_time: f64,
    pub action: f64,
    pub travel_time_difference: f64,
    pub action_difference: f64,
}

/// Lengths, travel times and classical actions at constant `speed`,
/// with differences against the shortest path.
pub fn path_table(paths: &[GeodesicPath], speed: f64) -> Result<Vec<PathRow>> {
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(Error::InvalidInput("speed must be positive".into()));
    }
    let shortest = paths
        .iter()
        .map(|p| p.length)
        .fold(f64::INFINITY, f64::min);
    Ok(paths
        .iter()
        .map(|p| PathRow {
            length: p.length,
            travel_time: p.length / speed,
            action: 0.5 * speed * p.length,
            travel_time_difference: (p.length - shortest) / speed,
            action_difference: 0.5 * speed * (p.length - shortest),
        })
        .collect())
}

/// Two slits in the line `x = 0`: a central wall on `[-inner, inner]` and
/// outer walls from `+-outer` to `+-extent`.
pub fn double_slit(inner: f64, outer: f64, extent: f64, source: Point, target: Point) -> Result<PolygonalWorld> {
    PolygonalWorld::new(
        vec![
            Obstacle::wall(Point::new(0.0, -inner), Point::new(0.0, inner))?,
            Obstacle::wall(Point::new(0.0, outer), Point::new(0.0, extent))?,
            Obstacle::wall(Point::new(0.0, -extent), Point::new(0.0, -outer))?,
        ],
        source,
        target,
    )
}

/// One slit `|y| < half_width` in the line `x = 0`.
pub fn single_slit(half_width: f64, extent: f64, source: Point, target: Point) -> Result<PolygonalWorld> {
    PolygonalWorld::new(
        vec![
            Obstacle::wall(Point::new(0.0, half_width), Point::new(0.0, extent))?,
            Obstacle::wall(Point::new(0.0, -extent), Point::new(0.0, -half_width))?,
        ],
        source,
        target,
    )
}
