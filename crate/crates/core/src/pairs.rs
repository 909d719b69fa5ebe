//! Quadrature over pairs of elements `T_x × T_y` for Galerkin assembly.
//!
//! * identical elements use relative coordinates `u = |t_x - t_y|`, so no node
//!   sits on the diagonal; with a logarithmic kernel the `log u` part is
//!   integrated by a log-weighted Gauss rule;
//! * elements sharing a node use a Duffy transform centered at that node;
//! * other pairs are subdivided until the pieces are well separated.
//!
//! Node weights include the arclength Jacobians of both elements.

use std::sync::OnceLock;

use crate::error::{BemError, Result};
use crate::mesh::BoundaryMesh;
use crate::quadrature::{gauss_legendre, log_gauss_rule, QuadratureRule};

/// How the kernel value at a node has to be formed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodePart {
    /// Evaluate the full kernel.
    Regular,
    /// The logarithm is carried by the weight; the kernel contributes its
    /// constant factor only.
    LogCore,
    /// Identical elements: `log |x - y| - log |t_x - t_y|`.
    SelfRemainder,
    /// Touching elements: `log |x - y| - log z` for the Duffy variable `z`.
    CornerRemainder { z: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairNode {
    pub tx: f64,
    pub ty: f64,
    pub w: f64,
    pub part: NodePart,
}

const MAX_CACHED: usize = 64;

fn gauss(m: usize) -> &'static QuadratureRule {
    static CACHE: OnceLock<Vec<QuadratureRule>> = OnceLock::new();
    let rules = CACHE.get_or_init(|| (1..=MAX_CACHED).map(gauss_legendre).collect());
    &rules[m.clamp(1, MAX_CACHED) - 1]
}

fn log_gauss(m: usize) -> &'static QuadratureRule {
    static CACHE: OnceLock<Vec<QuadratureRule>> = OnceLock::new();
    let rules = CACHE.get_or_init(|| {
        (1..=MAX_CACHED)
            .map(|m| log_gauss_rule(m).expect("log-Gauss rule"))
            .collect()
    });
    &rules[m.clamp(1, MAX_CACHED) - 1]
}

/// Cached Gauss–Legendre rule with `m` points (`m ≤ 64`).
pub fn cached_gauss(m: usize) -> &'static QuadratureRule {
    gauss(m)
}

/// Cached log-weighted Gauss rule with `m` points (`m ≤ 64`).
pub fn cached_log_gauss(m: usize) -> &'static QuadratureRule {
    log_gauss(m)
}

/// Separation factor: boxes are integrated directly once their distance is at
/// least this multiple of the larger box length.
const ETA: f64 = 1.0;
const MAX_DEPTH: usize = 48;

#[derive(Clone, Copy)]
struct Box1 {
    a: f64,
    b: f64,
}

impl Box1 {
    fn len(&self) -> f64 {
        self.b - self.a
    }
}

/// Quadrature nodes for `∫_{T_x} ∫_{T_y} k(x, y) φ(x) ψ(y)` where `φ`, `ψ`
/// have local degrees `px`, `py`.
pub fn pair_nodes(
    mesh: &BoundaryMesh,
    ex: usize,
    ey: usize,
    px: usize,
    py: usize,
    log_kernel: bool,
) -> Result<Vec<PairNode>> {
    let lx = mesh.element(ex).len();
    let ly = mesh.element(ey).len();
    let mut nodes = Vec::new();
    let poly = (px + py) / 2 + 2;
    let smooth = px.max(py) + 10;
    if ex == ey {
        self_nodes(lx, poly, smooth, log_kernel, &mut nodes);
        return Ok(nodes);
    }
    let full = Box1 { a: 0.0, b: 1.0 };
    recurse(
        mesh, ex, ey, full, full, lx, ly, poly, smooth, log_kernel, 0, &mut nodes,
    )?;
    Ok(nodes)
}

fn self_nodes(len: f64, poly: usize, smooth: usize, log_kernel: bool, out: &mut Vec<PairNode>) {
    let jac = len * len;
    let mut push_sym = |u: f64, tau: f64, w: f64, part: NodePart| {
        out.push(PairNode {
            tx: tau + u,
            ty: tau,
            w,
            part,
        });
        out.push(PairNode {
            tx: tau,
            ty: tau + u,
            w,
            part,
        });
    };
    if log_kernel {
        // log u part, integrated exactly for polynomial densities.
        for (u, wu) in log_gauss(poly).iter() {
            for (g, wg) in gauss(poly).iter() {
                let tau = (1.0 - u) * g;
                push_sym(u, tau, -wu * wg * (1.0 - u) * jac, NodePart::LogCore);
            }
        }
        for (u, wu) in gauss(smooth).iter() {
            for (g, wg) in gauss(smooth).iter() {
                let tau = (1.0 - u) * g;
                push_sym(u, tau, wu * wg * (1.0 - u) * jac, NodePart::SelfRemainder);
            }
        }
    } else {
        for (u, wu) in gauss(smooth).iter() {
            for (g, wg) in gauss(smooth).iter() {
                let tau = (1.0 - u) * g;
                push_sym(u, tau, wu * wg * (1.0 - u) * jac, NodePart::Regular);
            }
        }
    }
}

/// Shared mesh nodes of two boxes as `(x at end?, y at end?)` pairs.
fn touching(mesh: &BoundaryMesh, ex: usize, ey: usize, bx: Box1, by: Box1) -> Vec<(bool, bool)> {
    let (xs, xe) = mesh.element_nodes(ex);
    let (ys, ye) = mesh.element_nodes(ey);
    let mut out = Vec::new();
    let xends = [(bx.a == 0.0, xs, false), (bx.b == 1.0, xe, true)];
    let yends = [(by.a == 0.0, ys, false), (by.b == 1.0, ye, true)];
    for &(xon, xn, xend) in &xends {
        for &(yon, yn, yend) in &yends {
            if xon && yon && xn == yn {
                out.push((xend, yend));
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    mesh: &BoundaryMesh,
    ex: usize,
    ey: usize,
    bx: Box1,
    by: Box1,
    lx: f64,
    ly: f64,
    poly: usize,
    smooth: usize,
    log_kernel: bool,
    depth: usize,
    out: &mut Vec<PairNode>,
) -> Result<()> {
    if depth > MAX_DEPTH {
        return Err(BemError::Quadrature(format!(
            "pair ({ex}, {ey}) did not separate after {MAX_DEPTH} subdivisions"
        )));
    }
    let shared = touching(mesh, ex, ey, bx, by);
    let ax = bx.len() * lx;
    let ay = by.len() * ly;
    if shared.len() >= 2 {
        // Two elements closing a curve: split the longer box.
        return split(mesh, ex, ey, bx, by, lx, ly, poly, smooth, log_kernel, depth, out);
    }
    if let Some(&(xend, yend)) = shared.first() {
        duffy_nodes(bx, by, xend, yend, lx, ly, poly, smooth, log_kernel, out);
        return Ok(());
    }
    let cx = mesh.point(ex, 0.5 * (bx.a + bx.b));
    let cy = mesh.point(ey, 0.5 * (by.a + by.b));
    let gap = (cx - cy).norm() - 0.5 * (ax + ay);
    let big = ax.max(ay);
    if gap >= ETA * big {
        let ratio = gap / big;
        let extra = if ratio < 2.0 {
            12
        } else if ratio < 6.0 {
            8
        } else {
            4
        };
        let m = poly + extra;
        let rule = gauss(m);
        let jac = bx.len() * by.len() * lx * ly;
        for (s, ws) in rule.iter() {
            for (r, wr) in rule.iter() {
                out.push(PairNode {
                    tx: bx.a + s * bx.len(),
                    ty: by.a + r * by.len(),
                    w: ws * wr * jac,
                    part: NodePart::Regular,
                });
            }
        }
        return Ok(());
    }
    split(mesh, ex, ey, bx, by, lx, ly, poly, smooth, log_kernel, depth, out)
}

#[allow(clippy::too_many_arguments)]
fn split(
    mesh: &BoundaryMesh,
    ex: usize,
    ey: usize,
    bx: Box1,
    by: Box1,
    lx: f64,
    ly: f64,
    poly: usize,
    smooth: usize,
    log_kernel: bool,
    depth: usize,
    out: &mut Vec<PairNode>,
) -> Result<()> {
    if bx.len() * lx >= by.len() * ly {
        let mid = 0.5 * (bx.a + bx.b);
        for half in [Box1 { a: bx.a, b: mid }, Box1 { a: mid, b: bx.b }] {
            recurse(mesh, ex, ey, half, by, lx, ly, poly, smooth, log_kernel, depth + 1, out)?;
        }
    } else {
        let mid = 0.5 * (by.a + by.b);
        for half in [Box1 { a: by.a, b: mid }, Box1 { a: mid, b: by.b }] {
            recurse(mesh, ex, ey, bx, half, lx, ly, poly, smooth, log_kernel, depth + 1, out)?;
        }
    }
    Ok(())
}

/// Duffy rule for boxes meeting at a common node. `alpha`, `beta` measure the
/// box-relative distance from that node in `x` and `y`.
#[allow(clippy::too_many_arguments)]
fn duffy_nodes(
    bx: Box1,
    by: Box1,
    xend: bool,
    yend: bool,
    lx: f64,
    ly: f64,
    poly: usize,
    smooth: usize,
    log_kernel: bool,
    out: &mut Vec<PairNode>,
) {
    let jac = bx.len() * by.len() * lx * ly;
    let map_x = |alpha: f64| if xend { bx.b - alpha * bx.len() } else { bx.a + alpha * bx.len() };
    let map_y = |beta: f64| if yend { by.b - beta * by.len() } else { by.a + beta * by.len() };
    let mut push = |z: f64, w: f64, weight: f64, part: NodePart| {
        // triangle alpha >= beta, then beta >= alpha
        out.push(PairNode {
            tx: map_x(z),
            ty: map_y(z * w),
            w: weight,
            part,
        });
        out.push(PairNode {
            tx: map_x(z * w),
            ty: map_y(z),
            w: weight,
            part,
        });
    };
    if log_kernel {
        for (z, wz) in log_gauss(poly).iter() {
            for (w, ww) in gauss(poly).iter() {
                push(z, w, -wz * z * ww * jac, NodePart::LogCore);
            }
        }
        for (z, wz) in gauss(smooth).iter() {
            for (w, ww) in gauss(smooth).iter() {
                push(z, w, wz * z * ww * jac, NodePart::CornerRemainder { z });
            }
        }
    } else {
        for (z, wz) in gauss(smooth).iter() {
            for (w, ww) in gauss(smooth).iter() {
                push(z, w, wz * z * ww * jac, NodePart::Regular);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, Curve, MeshSpec};

    fn log_integral(mesh: &BoundaryMesh, ex: usize, ey: usize) -> f64 {
        let lx = mesh.element(ex).len();
        pair_nodes(mesh, ex, ey, 0, 0, true)
            .unwrap()
            .iter()
            .map(|n| {
                let v = match n.part {
                    NodePart::LogCore => 1.0,
                    NodePart::SelfRemainder => {
                        let g = mesh.pair(ex, n.tx, ey, n.ty);
                        (g.dist / (lx * (n.tx - n.ty)).abs()).ln() + lx.ln()
                    }
                    NodePart::CornerRemainder { z } => mesh.pair(ex, n.tx, ey, n.ty).dist.ln() - z.ln(),
                    NodePart::Regular => mesh.pair(ex, n.tx, ey, n.ty).dist.ln(),
                };
                n.w * v
            })
            .sum()
    }

    #[test]
    fn self_pair_log_integral_on_segment() {
        // ∫₀ᴸ∫₀ᴸ log|s - s'| = L² (log L - 3/2)
        let m = build_mesh(&Curve::slit(0.7), &MeshSpec::Uniform(1)).unwrap();
        let l: f64 = 0.7;
        let exact = l * l * (l.ln() - 1.5);
        assert!((log_integral(&m, 0, 0) - exact).abs() < 1e-14);
    }

    #[test]
    fn collinear_neighbors_log_integral() {
        // ∫₀¹∫₁² log(y - x) dy dx = (4 log 2 - 3) / 2
        let m = build_mesh(&Curve::slit(2.0), &MeshSpec::Uniform(2)).unwrap();
        let exact = 0.5 * (4.0 * 2f64.ln() - 3.0);
        assert!((log_integral(&m, 0, 1) - exact).abs() < 1e-13);
        assert!((log_integral(&m, 1, 0) - exact).abs() < 1e-13);
    }

    #[test]
    fn separated_pair_matches_tensor_rule() {
        let m = build_mesh(&Curve::slit(4.0), &MeshSpec::Uniform(4)).unwrap();
        // ∫₀¹∫₂³ log(y - x) dy dx = (9 log 3 - 8 log 2 - 3) / 2
        let exact = 0.5 * (9.0 * 3f64.ln() - 8.0 * 2f64.ln() - 3.0);
        assert!((log_integral(&m, 0, 2) - exact).abs() < 1e-14);
    }

    #[test]
    fn closing_pair_splits() {
        let m = build_mesh(&Curve::circle(0.4), &MeshSpec::Uniform(2)).unwrap();
        let nodes = pair_nodes(&m, 0, 1, 0, 0, true).unwrap();
        let area: f64 = nodes
            .iter()
            .filter(|n| !matches!(n.part, NodePart::LogCore))
            .map(|n| n.w)
            .sum();
        let l = m.element(0).len();
        assert!((area - l * l).abs() < 1e-12);
    }
}
