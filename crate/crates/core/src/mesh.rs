//! Boundary curves and their element partitions.
//!
//! Curves are parametrized by arclength and made of smooth pieces (polygon
//! sides, or a single circle or circular arc). Every element lies inside one
//! piece, so corners always coincide with mesh nodes. Meshes are immutable;
//! [`refine`] returns a new mesh.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{BemError, Result};

pub type Vec2 = Vector2<f64>;

/// Neighbor size ratio enforced by [`refine`] unless overridden.
pub const DEFAULT_NEIGHBOR_CAP: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Curve {
    /// Counter-clockwise closed polygon.
    ClosedPolygon { vertices: Vec<[f64; 2]> },
    /// Open polyline from the first to the last vertex.
    OpenPolygon { vertices: Vec<[f64; 2]> },
    /// Circle traversed counter-clockwise from angle zero.
    Circle { center: [f64; 2], radius: f64 },
    /// Counter-clockwise circular arc with `0 < sweep < 2π`.
    Arc {
        center: [f64; 2],
        radius: f64,
        start_angle: f64,
        sweep: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveKind {
    ClosedPolygon,
    OpenPolygon,
    ParametrizedClosed,
    ParametrizedOpen,
}

impl Curve {
    pub fn circle(radius: f64) -> Self {
        Curve::Circle {
            center: [0.0, 0.0],
            radius,
        }
    }

    /// Axis-aligned square centered at the origin.
    pub fn square(side: f64) -> Self {
        let a = 0.5 * side;
        Curve::ClosedPolygon {
            vertices: vec![[-a, -a], [a, -a], [a, a], [-a, a]],
        }
    }

    /// Straight slit `[0, length] × {0}`.
    pub fn slit(length: f64) -> Self {
        Curve::OpenPolygon {
            vertices: vec![[0.0, 0.0], [length, 0.0]],
        }
    }

    pub fn kind(&self) -> CurveKind {
        match self {
            Curve::ClosedPolygon { .. } => CurveKind::ClosedPolygon,
            Curve::OpenPolygon { .. } => CurveKind::OpenPolygon,
            Curve::Circle { .. } => CurveKind::ParametrizedClosed,
            Curve::Arc { .. } => CurveKind::ParametrizedOpen,
        }
    }

    pub fn is_closed(&self) -> bool {
        matches!(self, Curve::ClosedPolygon { .. } | Curve::Circle { .. })
    }

    /// Splits the curve into smooth pieces after validating it.
    pub fn pieces(&self) -> Result<Vec<Piece>> {
        match self {
            Curve::ClosedPolygon { vertices } | Curve::OpenPolygon { vertices } => {
                let closed = self.is_closed();
                let min_vertices = if closed { 3 } else { 2 };
                if vertices.len() < min_vertices {
                    return Err(BemError::InvalidArgument(format!(
                        "polygon needs at least {min_vertices} vertices"
                    )));
                }
                if vertices.iter().flatten().any(|c| !c.is_finite()) {
                    return Err(BemError::InvalidArgument("non-finite vertex".into()));
                }
                let pts: Vec<Vec2> = vertices.iter().map(|v| Vec2::new(v[0], v[1])).collect();
                let nsides = if closed { pts.len() } else { pts.len() - 1 };
                let mut pieces = Vec::with_capacity(nsides);
                let mut s = 0.0;
                for i in 0..nsides {
                    let a = pts[i];
                    let b = pts[(i + 1) % pts.len()];
                    let len = (b - a).norm();
                    if len <= 1e-14 * (1.0 + a.norm()) {
                        return Err(BemError::DegenerateElement(format!(
                            "polygon side {i} has zero length"
                        )));
                    }
                    pieces.push(Piece::Segment {
                        start: a,
                        dir: (b - a) / len,
                        s0: s,
                        len,
                    });
                    s += len;
                }
                check_simple(&pts, closed)?;
                if closed && signed_area(&pts) <= 0.0 {
                    return Err(BemError::InvalidArgument(
                        "closed polygon must be oriented counter-clockwise".into(),
                    ));
                }
                Ok(pieces)
            }
            Curve::Circle { center, radius } => {
                check_radius(*radius)?;
                Ok(vec![Piece::CircularArc {
                    center: Vec2::new(center[0], center[1]),
                    radius: *radius,
                    angle0: 0.0,
                    s0: 0.0,
                    len: 2.0 * PI * radius,
                }])
            }
            Curve::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => {
                check_radius(*radius)?;
                if !(*sweep > 0.0 && *sweep < 2.0 * PI) {
                    return Err(BemError::NonSimpleCurve(format!(
                        "arc sweep {sweep} must lie in (0, 2π)"
                    )));
                }
                Ok(vec![Piece::CircularArc {
                    center: Vec2::new(center[0], center[1]),
                    radius: *radius,
                    angle0: *start_angle,
                    s0: 0.0,
                    len: sweep * radius,
                }])
            }
        }
    }

    pub fn length(&self) -> Result<f64> {
        Ok(self.pieces()?.iter().map(|p| p.len()).sum())
    }

    /// Euclidean diameter of the curve.
    pub fn diameter(&self) -> f64 {
        match self {
            Curve::ClosedPolygon { vertices } | Curve::OpenPolygon { vertices } => {
                let mut d: f64 = 0.0;
                for a in vertices {
                    for b in vertices {
                        d = d.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
                    }
                }
                d
            }
            Curve::Circle { radius, .. } => 2.0 * radius,
            Curve::Arc { radius, sweep, .. } => {
                if *sweep >= PI {
                    2.0 * radius
                } else {
                    2.0 * radius * (0.5 * sweep).sin()
                }
            }
        }
    }
}

fn check_radius(r: f64) -> Result<()> {
    if !(r.is_finite() && r > 0.0) {
        return Err(BemError::InvalidArgument(format!("radius {r} must be positive")));
    }
    Ok(())
}

fn signed_area(pts: &[Vec2]) -> f64 {
    let n = pts.len();
    0.5 * (0..n)
        .map(|i| {
            let a = pts[i];
            let b = pts[(i + 1) % n];
            a.x * b.y - a.y * b.x
        })
        .sum::<f64>()
}

fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b - a).perp(&(c - a))
}

fn segments_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |p: Vec2, q: Vec2, r: Vec2, o: f64| {
        o == 0.0
            && r.x >= p.x.min(q.x)
            && r.x <= p.x.max(q.x)
            && r.y >= p.y.min(q.y)
            && r.y <= p.y.max(q.y)
    };
    on(c, d, a, d1) || on(c, d, b, d2) || on(a, b, c, d3) || on(a, b, d, d4)
}

fn check_simple(pts: &[Vec2], closed: bool) -> Result<()> {
    let n = pts.len();
    let nsides = if closed { n } else { n - 1 };
    let side = |i: usize| (pts[i], pts[(i + 1) % n]);
    for i in 0..nsides {
        for j in (i + 1)..nsides {
            let adjacent = j == i + 1 || (closed && i == 0 && j == nsides - 1);
            let (a, b) = side(i);
            let (c, d) = side(j);
            if adjacent {
                // Adjacent sides may only share their common vertex.
                let (shared, p, q) = if j == i + 1 { (b, a, d) } else { (a, b, c) };
                let u = p - shared;
                let v = q - shared;
                if u.perp(&v).abs() <= 1e-14 * u.norm() * v.norm() && u.dot(&v) > 0.0 {
                    return Err(BemError::NonSimpleCurve(format!(
                        "sides {i} and {j} fold back onto each other"
                    )));
                }
            } else if segments_intersect(a, b, c, d) {
                return Err(BemError::NonSimpleCurve(format!(
                    "sides {i} and {j} intersect"
                )));
            }
        }
    }
    Ok(())
}

/// One smooth piece of a curve, parametrized by global arclength `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Piece {
    Segment {
        start: Vec2,
        dir: Vec2,
        s0: f64,
        len: f64,
    },
    CircularArc {
        center: Vec2,
        radius: f64,
        angle0: f64,
        s0: f64,
        len: f64,
    },
}

impl Piece {
    pub fn s0(&self) -> f64 {
        match *self {
            Piece::Segment { s0, .. } | Piece::CircularArc { s0, .. } => s0,
        }
    }

    pub fn len(&self) -> f64 {
        match *self {
            Piece::Segment { len, .. } | Piece::CircularArc { len, .. } => len,
        }
    }

    pub fn s1(&self) -> f64 {
        self.s0() + self.len()
    }

    pub fn is_straight(&self) -> bool {
        matches!(self, Piece::Segment { .. })
    }

    pub fn point(&self, s: f64) -> Vec2 {
        match *self {
            Piece::Segment { start, dir, s0, .. } => start + dir * (s - s0),
            Piece::CircularArc {
                center,
                radius,
                angle0,
                s0,
                ..
            } => {
                let th = angle0 + (s - s0) / radius;
                center + radius * Vec2::new(th.cos(), th.sin())
            }
        }
    }

    pub fn tangent(&self, s: f64) -> Vec2 {
        match *self {
            Piece::Segment { dir, .. } => dir,
            Piece::CircularArc {
                radius, angle0, s0, ..
            } => {
                let th = angle0 + (s - s0) / radius;
                Vec2::new(-th.sin(), th.cos())
            }
        }
    }

    /// Unit normal `(τ_y, -τ_x)`, outward on counter-clockwise closed curves.
    pub fn normal(&self, s: f64) -> Vec2 {
        let t = self.tangent(s);
        Vec2::new(t.y, -t.x)
    }

    /// Arclength in `[sa, sb]` of the point closest to `x`.
    pub fn closest(&self, x: Vec2, sa: f64, sb: f64) -> f64 {
        match *self {
            Piece::Segment { start, dir, s0, .. } => (s0 + (x - start).dot(&dir)).clamp(sa, sb),
            Piece::CircularArc {
                center,
                radius,
                angle0,
                s0,
                ..
            } => {
                let d = x - center;
                if d.norm() == 0.0 {
                    return 0.5 * (sa + sb);
                }
                let mid = 0.5 * (sa + sb);
                let th_mid = angle0 + (mid - s0) / radius;
                let th = d.y.atan2(d.x);
                // Angle relative to the element midpoint, wrapped to (-π, π].
                let mut rel = th - th_mid;
                rel -= 2.0 * PI * (rel / (2.0 * PI)).round();
                let s = mid + rel * radius;
                if s >= sa && s <= sb {
                    s
                } else if (self.point(sa) - x).norm() <= (self.point(sb) - x).norm() {
                    sa
                } else {
                    sb
                }
            }
        }
    }

    /// `|x - y| / |s_x - s_y|` for two points on this piece.
    pub fn chord_ratio(&self, ds: f64) -> f64 {
        match *self {
            Piece::Segment { .. } => 1.0,
            Piece::CircularArc { radius, .. } => {
                let a = 0.5 * ds / radius;
                if a.abs() < 1e-4 {
                    1.0 - a * a / 6.0 + a.powi(4) / 120.0
                } else {
                    (a.sin() / a).abs()
                }
            }
        }
    }

    /// Geometry of the pair `x = γ(s_x)`, `y = γ(s_y)` with `ds = s_x - s_y`,
    /// computed without cancellation.
    pub fn same_piece_pair(&self, ds: f64) -> PairGeom {
        match *self {
            Piece::Segment { .. } => PairGeom {
                dist: ds.abs(),
                dn_x: 0.0,
                dn_y: 0.0,
                dt_x: 1.0 / ds,
            },
            Piece::CircularArc { radius, .. } => {
                let half = 0.5 * ds / radius;
                PairGeom {
                    dist: 2.0 * radius * half.sin().abs(),
                    dn_x: 0.5 / radius,
                    dn_y: -0.5 / radius,
                    dt_x: 0.5 / (radius * half.tan()),
                }
            }
        }
    }

    /// `(x - y)·τ(x) / |x - y|² - 1/(s_x - s_y)`, smooth across `ds = 0`.
    pub fn tangential_remainder(&self, ds: f64) -> f64 {
        match *self {
            Piece::Segment { .. } => 0.0,
            Piece::CircularArc { radius, .. } => {
                let phi = ds / radius;
                if phi.abs() < 1e-2 {
                    (-phi / 12.0 - phi.powi(3) / 720.0) / radius
                } else {
                    (0.5 / (0.5 * phi).tan() - 1.0 / phi) / radius
                }
            }
        }
    }
}

/// Kernel-relevant geometry of a point pair `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairGeom {
    pub dist: f64,
    /// `(x - y)·ν(x) / |x - y|²`
    pub dn_x: f64,
    /// `(x - y)·ν(y) / |x - y|²`
    pub dn_y: f64,
    /// `(x - y)·τ(x) / |x - y|²`
    pub dt_x: f64,
}

impl PairGeom {
    pub fn from_points(x: Vec2, nx: Vec2, tx: Vec2, y: Vec2, ny: Vec2) -> Self {
        let d = x - y;
        let r2 = d.norm_squared();
        PairGeom {
            dist: r2.sqrt(),
            dn_x: d.dot(&nx) / r2,
            dn_y: d.dot(&ny) / r2,
            dt_x: d.dot(&tx) / r2,
        }
    }
}

/// A point on the boundary together with its frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint {
    pub x: Vec2,
    pub s: f64,
    pub tangent: Vec2,
    pub normal: Vec2,
    pub element: usize,
    /// Local parameter in `[0, 1]` on `element`.
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub id: usize,
    pub piece: usize,
    pub s0: f64,
    pub s1: f64,
    /// Euclidean diameter.
    pub h: f64,
}

impl Element {
    /// Arclength `|γ'|` of the affine element parametrization.
    pub fn len(&self) -> f64 {
        self.s1 - self.s0
    }

    pub fn s_at(&self, t: f64) -> f64 {
        self.s0 + t * (self.s1 - self.s0)
    }
}

/// How [`build_mesh`] partitions the curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeshSpec {
    /// `n` elements; polygon sides receive counts proportional to length.
    Uniform(usize),
    /// Explicit arclength breakpoints from `0` to the curve length.
    Breakpoints(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct BoundaryMesh {
    curve: Curve,
    pieces: Vec<Piece>,
    elements: Vec<Element>,
}

pub fn build_mesh(curve: &Curve, spec: &MeshSpec) -> Result<BoundaryMesh> {
    let pieces = curve.pieces()?;
    let total: f64 = pieces.iter().map(|p| p.len()).sum();
    let breaks = match spec {
        MeshSpec::Uniform(n) => {
            let n = *n;
            let min_elems = pieces.len().max(if curve.is_closed() { 2 } else { 1 });
            if n < min_elems {
                return Err(BemError::InvalidArgument(format!(
                    "{n} elements cannot resolve a curve with {} pieces",
                    pieces.len()
                )));
            }
            let counts = allocate_counts(&pieces, n);
            let mut b = vec![0.0];
            for (p, &c) in pieces.iter().zip(&counts) {
                for k in 1..c {
                    b.push(p.s0() + p.len() * k as f64 / c as f64);
                }
                b.push(p.s1());
            }
            b
        }
        MeshSpec::Breakpoints(b) => {
            if b.len() < 2 {
                return Err(BemError::InvalidArgument("need at least two breakpoints".into()));
            }
            if b[0].abs() > 1e-12 * total || (b[b.len() - 1] - total).abs() > 1e-12 * total {
                return Err(BemError::InvalidArgument(format!(
                    "breakpoints must run from 0 to the curve length {total}"
                )));
            }
            let mut b = b.clone();
            b[0] = 0.0;
            let last = b.len() - 1;
            b[last] = total;
            b
        }
    };
    BoundaryMesh::from_breakpoints(curve.clone(), pieces, &breaks)
}

fn allocate_counts(pieces: &[Piece], n: usize) -> Vec<usize> {
    let total: f64 = pieces.iter().map(|p| p.len()).sum();
    let extra = n - pieces.len();
    let ideal: Vec<f64> = pieces
        .iter()
        .map(|p| n as f64 * p.len() / total - 1.0)
        .map(|x| x.max(0.0))
        .collect();
    let mut counts: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
    let mut assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..pieces.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - ideal[a].floor();
        let rb = ideal[b] - ideal[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut k = 0;
    while assigned < extra {
        counts[order[k % order.len()]] += 1;
        assigned += 1;
        k += 1;
    }
    counts.iter().map(|c| c + 1).collect()
}

fn element_diameter(piece: &Piece, len: f64) -> f64 {
    match *piece {
        Piece::Segment { .. } => len,
        Piece::CircularArc { radius, .. } => {
            let half = 0.5 * len / radius;
            if half >= 0.5 * PI {
                2.0 * radius
            } else {
                2.0 * radius * half.sin()
            }
        }
    }
}

impl BoundaryMesh {
    fn from_breakpoints(curve: Curve, pieces: Vec<Piece>, breaks: &[f64]) -> Result<Self> {
        let total: f64 = pieces.iter().map(|p| p.len()).sum();
        let tol = 1e-12 * total;
        let mut elements = Vec::with_capacity(breaks.len() - 1);
        for (id, w) in breaks.windows(2).enumerate() {
            let (mut s0, mut s1) = (w[0], w[1]);
            if !(s1 - s0 > tol) {
                return Err(BemError::DegenerateElement(format!(
                    "element {id} has non-positive length {}",
                    s1 - s0
                )));
            }
            let mid = 0.5 * (s0 + s1);
            let piece = pieces
                .iter()
                .position(|p| mid >= p.s0() && mid <= p.s1())
                .unwrap_or(pieces.len() - 1);
            let p = &pieces[piece];
            if s0 < p.s0() - tol || s1 > p.s1() + tol {
                return Err(BemError::InvalidArgument(format!(
                    "element {id} straddles a corner at s = {}",
                    if s0 < p.s0() { p.s0() } else { p.s1() }
                )));
            }
            // Snap to corners so that neighboring pieces agree exactly.
            if (s0 - p.s0()).abs() <= tol {
                s0 = p.s0();
            }
            if (s1 - p.s1()).abs() <= tol {
                s1 = p.s1();
            }
            elements.push(Element {
                id,
                piece,
                s0,
                s1,
                h: element_diameter(p, s1 - s0),
            });
        }
        if curve.is_closed() && elements.len() < 2 {
            return Err(BemError::InvalidArgument(
                "closed meshes need at least two elements".into(),
            ));
        }
        Ok(BoundaryMesh {
            curve,
            pieces,
            elements,
        })
    }

    pub fn curve(&self) -> &Curve {
        &self.curve
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn element(&self, id: usize) -> &Element {
        &self.elements[id]
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn is_closed(&self) -> bool {
        self.curve.is_closed()
    }

    pub fn num_nodes(&self) -> usize {
        if self.is_closed() {
            self.elements.len()
        } else {
            self.elements.len() + 1
        }
    }

    /// Start and end node of an element.
    pub fn element_nodes(&self, id: usize) -> (usize, usize) {
        let n = self.elements.len();
        if self.is_closed() {
            (id, (id + 1) % n)
        } else {
            (id, id + 1)
        }
    }

    pub fn node_position(&self, node: usize) -> Vec2 {
        let n = self.elements.len();
        if node < n {
            let e = &self.elements[node];
            self.pieces[e.piece].point(e.s0)
        } else {
            let e = &self.elements[n - 1];
            self.pieces[e.piece].point(e.s1)
        }
    }

    pub fn piece_of(&self, id: usize) -> &Piece {
        &self.pieces[self.elements[id].piece]
    }

    pub fn point(&self, id: usize, t: f64) -> Vec2 {
        let e = &self.elements[id];
        self.pieces[e.piece].point(e.s_at(t))
    }

    pub fn boundary_point(&self, id: usize, t: f64) -> BoundaryPoint {
        let e = &self.elements[id];
        let p = &self.pieces[e.piece];
        let s = e.s_at(t);
        BoundaryPoint {
            x: p.point(s),
            s,
            tangent: p.tangent(s),
            normal: p.normal(s),
            element: id,
            t,
        }
    }

    /// Elements sharing a node with `id`, in increasing order.
    pub fn neighbors(&self, id: usize) -> Vec<usize> {
        let n = self.elements.len();
        let mut out = BTreeSet::new();
        if self.is_closed() {
            out.insert((id + n - 1) % n);
            out.insert((id + 1) % n);
        } else {
            if id > 0 {
                out.insert(id - 1);
            }
            if id + 1 < n {
                out.insert(id + 1);
            }
        }
        out.remove(&id);
        out.into_iter().collect()
    }

    /// Element patch `ω(T)`: `T` and its neighbors, in increasing order.
    pub fn patch(&self, id: usize) -> Result<Vec<usize>> {
        if id >= self.elements.len() {
            return Err(BemError::InvalidArgument(format!(
                "element {id} does not exist (mesh has {})",
                self.elements.len()
            )));
        }
        let mut p = self.neighbors(id);
        p.push(id);
        p.sort_unstable();
        Ok(p)
    }

    /// Geometry of `x = γ_{ex}(tx)` and `y = γ_{ey}(ty)`.
    pub fn pair(&self, ex: usize, tx: f64, ey: usize, ty: f64) -> PairGeom {
        let a = &self.elements[ex];
        let b = &self.elements[ey];
        if a.piece == b.piece {
            let ds = if ex == ey {
                a.len() * (tx - ty)
            } else {
                a.s_at(tx) - b.s_at(ty)
            };
            self.pieces[a.piece].same_piece_pair(ds)
        } else {
            let pa = &self.pieces[a.piece];
            let pb = &self.pieces[b.piece];
            let sx = a.s_at(tx);
            let sy = b.s_at(ty);
            PairGeom::from_points(
                pa.point(sx),
                pa.normal(sx),
                pa.tangent(sx),
                pb.point(sy),
                pb.normal(sy),
            )
        }
    }

    /// Closest local parameter on `id` to `x`, and the distance.
    pub fn closest_on_element(&self, id: usize, x: Vec2) -> (f64, f64) {
        let e = &self.elements[id];
        let p = &self.pieces[e.piece];
        let s = p.closest(x, e.s0, e.s1);
        let t = ((s - e.s0) / e.len()).clamp(0.0, 1.0);
        (t, (p.point(s) - x).norm())
    }

    pub fn h_max(&self) -> f64 {
        self.elements.iter().map(|e| e.h).fold(0.0, f64::max)
    }

    pub fn h_min(&self) -> f64 {
        self.elements.iter().map(|e| e.h).fold(f64::INFINITY, f64::min)
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.elements.iter().map(|e| e.s0).collect();
        b.push(self.elements.last().map(|e| e.s1).unwrap_or(0.0));
        b
    }

    pub fn max_neighbor_ratio(&self) -> f64 {
        let mut r: f64 = 1.0;
        for (i, e) in self.elements.iter().enumerate() {
            for j in self.neighbors(i) {
                r = r.max(e.h / self.elements[j].h);
            }
        }
        r
    }

    pub fn shape_report(&self) -> ShapeReport {
        let per_element: Vec<f64> = self
            .elements
            .iter()
            .map(|e| {
                // Arclength maps have constant Gramian G_T = |T|².
                let g = e.len() * e.len();
                let h2 = e.h * e.h;
                h2 / g + g / h2
            })
            .collect();
        let gram = per_element.iter().copied().fold(0.0, f64::max);
        let ratio = self.max_neighbor_ratio();
        ShapeReport {
            kappa: gram.max(ratio),
            gramian_bound: gram,
            max_neighbor_ratio: ratio,
            per_element,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&self.to_json()).expect("mesh serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn to_json(&self) -> MeshJson {
        let n = self.elements.len();
        MeshJson {
            curve: self.curve.clone(),
            elements: self
                .elements
                .iter()
                .map(|e| ElementJson {
                    id: e.id,
                    param_range: [e.s0, e.s1],
                    h: e.h,
                })
                .collect(),
            nodes: (0..self.num_nodes())
                .map(|k| {
                    let p = self.node_position(k);
                    [p.x, p.y]
                })
                .collect(),
            adjacency: (0..n).map(|i| self.neighbors(i)).collect(),
        }
    }

    pub fn from_json(json: &MeshJson) -> Result<Self> {
        let pieces = json.curve.pieces()?;
        let mut breaks: Vec<f64> = json.elements.iter().map(|e| e.param_range[0]).collect();
        match json.elements.last() {
            Some(e) => breaks.push(e.param_range[1]),
            None => return Err(BemError::InvalidArgument("mesh has no elements".into())),
        }
        for w in json.elements.windows(2) {
            if w[0].param_range[1] != w[1].param_range[0] {
                return Err(BemError::InvalidArgument(format!(
                    "elements {} and {} are not contiguous",
                    w[0].id, w[1].id
                )));
            }
        }
        BoundaryMesh::from_breakpoints(json.curve.clone(), pieces, &breaks)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeReport {
    /// Shape constant: the larger of the Gramian bound and the neighbor ratio.
    pub kappa: f64,
    /// `max_T sup_T (h_T²/G_T + G_T/h_T²)`.
    pub gramian_bound: f64,
    pub max_neighbor_ratio: f64,
    pub per_element: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementJson {
    pub id: usize,
    pub param_range: [f64; 2],
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshJson {
    pub curve: Curve,
    pub elements: Vec<ElementJson>,
    pub nodes: Vec<[f64; 2]>,
    pub adjacency: Vec<Vec<usize>>,
}

/// Bisects every marked element, then bisects further until no neighbor
/// size ratio exceeds `cap`.
///
/// Returns the refined mesh and, for each new element, its parent.
pub fn refine(
    mesh: &BoundaryMesh,
    marked: &BTreeSet<usize>,
    cap: f64,
) -> Result<(BoundaryMesh, Vec<usize>)> {
    if !(cap >= 1.0) {
        return Err(BemError::InvalidArgument(format!("neighbor cap {cap} must be >= 1")));
    }
    if let Some(&bad) = marked.iter().find(|&&m| m >= mesh.num_elements()) {
        return Err(BemError::InvalidArgument(format!("marked element {bad} does not exist")));
    }
    // Work on (s0, s1, piece, ancestor) intervals until the closure is stable.
    let mut cells: Vec<(f64, f64, usize, usize)> = mesh
        .elements
        .iter()
        .map(|e| (e.s0, e.s1, e.piece, e.id))
        .collect();
    let mut to_split: BTreeSet<usize> = marked.clone();
    let closed = mesh.is_closed();
    loop {
        if to_split.is_empty() {
            break;
        }
        let mut next = Vec::with_capacity(cells.len() + to_split.len());
        for (i, c) in cells.iter().enumerate() {
            if to_split.contains(&i) {
                let mid = 0.5 * (c.0 + c.1);
                next.push((c.0, mid, c.2, c.3));
                next.push((mid, c.1, c.2, c.3));
            } else {
                next.push(*c);
            }
        }
        cells = next;
        to_split.clear();
        let n = cells.len();
        let diam = |c: &(f64, f64, usize, usize)| element_diameter(&mesh.pieces[c.2], c.1 - c.0);
        for i in 0..n {
            let nbrs: Vec<usize> = if closed {
                vec![(i + n - 1) % n, (i + 1) % n]
            } else {
                [i.checked_sub(1), (i + 1 < n).then_some(i + 1)]
                    .into_iter()
                    .flatten()
                    .collect()
            };
            let hi = diam(&cells[i]);
            for j in nbrs {
                if j != i && hi > cap * (1.0 + 1e-12) * diam(&cells[j]) {
                    to_split.insert(i);
                }
            }
        }
    }
    let breaks: Vec<f64> = cells
        .iter()
        .map(|c| c.0)
        .chain(std::iter::once(cells[cells.len() - 1].1))
        .collect();
    let parents = cells.iter().map(|c| c.3).collect();
    let refined = BoundaryMesh::from_breakpoints(mesh.curve.clone(), mesh.pieces.clone(), &breaks)?;
    Ok((refined, parents))
}

/// Refines every element once.
pub fn refine_uniform(mesh: &BoundaryMesh) -> Result<BoundaryMesh> {
    let all: BTreeSet<usize> = (0..mesh.num_elements()).collect();
    Ok(refine(mesh, &all, DEFAULT_NEIGHBOR_CAP)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_uniform_mesh() {
        let m = build_mesh(&Curve::square(0.25), &MeshSpec::Uniform(8)).unwrap();
        assert_eq!(m.num_elements(), 8);
        for e in m.elements() {
            assert!((e.h - 0.125).abs() < 1e-15);
        }
        assert!((m.shape_report().kappa - 2.0).abs() < 1e-14);
    }

    #[test]
    fn circle_shape_constant() {
        let m = build_mesh(&Curve::circle(0.4), &MeshSpec::Uniform(16)).unwrap();
        let k = m.shape_report().kappa;
        assert!((k - 2.0).abs() < 0.02, "kappa {k}");
        let fine = refine_uniform(&m).unwrap();
        assert_eq!(fine.num_elements(), 32);
        let kf = fine.shape_report().kappa;
        assert!(kf / k < 1.01 && k / kf < 1.01);
    }

    #[test]
    fn patch_of_first_element_on_closed_curve() {
        let m = build_mesh(&Curve::square(0.25), &MeshSpec::Uniform(8)).unwrap();
        assert_eq!(m.patch(0).unwrap(), vec![0, 1, 7]);
        assert!(m.patch(8).is_err());
        let s = build_mesh(&Curve::slit(1.0), &MeshSpec::Uniform(4)).unwrap();
        assert_eq!(s.patch(0).unwrap(), vec![0, 1]);
        assert_eq!(s.patch(3).unwrap(), vec![2, 3]);
    }

    #[test]
    fn rejects_bad_curves() {
        let bowtie = Curve::ClosedPolygon {
            vertices: vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]],
        };
        assert!(matches!(bowtie.pieces(), Err(BemError::NonSimpleCurve(_))));
        let dup = Curve::ClosedPolygon {
            vertices: vec![[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
        };
        assert!(matches!(dup.pieces(), Err(BemError::DegenerateElement(_))));
        let cw = Curve::ClosedPolygon {
            vertices: vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]],
        };
        assert!(cw.pieces().is_err());
        let m = build_mesh(
            &Curve::slit(1.0),
            &MeshSpec::Breakpoints(vec![0.0, 0.5, 0.5, 1.0]),
        );
        assert!(matches!(m, Err(BemError::DegenerateElement(_))));
    }

    #[test]
    fn refinement_respects_cap() {
        let m = build_mesh(&Curve::slit(1.0), &MeshSpec::Uniform(8)).unwrap();
        let mut mesh = m;
        for _ in 0..6 {
            let marked: BTreeSet<usize> = [0].into_iter().collect();
            mesh = refine(&mesh, &marked, 2.0).unwrap().0;
            assert!(mesh.max_neighbor_ratio() <= 2.0 * (1.0 + 1e-12));
        }
        assert!(mesh.num_elements() > 8);
    }

    #[test]
    fn same_piece_geometry_matches_coordinates() {
        let p = Curve::circle(0.7).pieces().unwrap()[0];
        for ds in [1e-3, 0.2, -0.9, 2.5] {
            let sx = 0.4;
            let sy = sx - ds;
            let g = p.same_piece_pair(ds);
            let c = PairGeom::from_points(
                p.point(sx),
                p.normal(sx),
                p.tangent(sx),
                p.point(sy),
                p.normal(sy),
            );
            assert!((g.dist - c.dist).abs() < 1e-12);
            assert!((g.dn_x - c.dn_x).abs() < 1e-8 * (1.0 + c.dn_x.abs()));
            assert!((g.dn_y - c.dn_y).abs() < 1e-8 * (1.0 + c.dn_y.abs()));
            assert!((g.dt_x - c.dt_x).abs() < 1e-8 * (1.0 + c.dt_x.abs()));
            let rem = p.tangential_remainder(ds);
            assert!((rem - (g.dt_x - 1.0 / ds)).abs() < 1e-9);
        }
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let m = build_mesh(&Curve::square(0.25), &MeshSpec::Uniform(12)).unwrap();
        let s = serde_json::to_string(&m.to_json()).unwrap();
        let back: MeshJson = serde_json::from_str(&s).unwrap();
        let m2 = BoundaryMesh::from_json(&back).unwrap();
        assert_eq!(m.elements(), m2.elements());
        assert_eq!(m.hash(), m2.hash());
    }
}
