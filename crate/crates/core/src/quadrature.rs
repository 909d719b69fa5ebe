//! One-dimensional quadrature rules on the reference interval `[0, 1]`.
//!
//! Three families are provided: plain Gauss–Legendre, Gauss rules for the
//! logarithmic weight `log(1/t)`, and composite rules geometrically graded
//! toward a point. Everything else in the crate (pair rules for Galerkin
//! assembly, potential evaluation, trace quadrature) is built from these.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{BemError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    Gauss,
    LogWeightedGauss,
    CompositeGraded,
}

/// Points and weights on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub kind: RuleKind,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    /// Number of points of the underlying Gauss rule.
    pub order: usize,
    /// Geometric grading ratio, only meaningful for composite rules.
    pub grading: Option<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.iter().map(|(t, w)| w * f(t)).sum()
    }

    /// Affinely maps the rule onto `[a, b]`, scaling the weights.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let len = b - a;
        self.iter().map(move |(t, w)| (a + len * t, w * len))
    }
}

/// Gauss–Legendre rule with `m` points on `[0, 1]`, exact for degree `2m - 1`.
pub fn gauss_legendre(m: usize) -> QuadratureRule {
    assert!(m >= 1, "Gauss rule needs at least one point");
    let mut points = vec![0.0; m];
    let mut weights = vec![0.0; m];
    let n = m as f64;
    for i in 0..m.div_ceil(2) {
        // Newton iteration on P_m starting from the Tricomi approximation.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(m, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                let (_, d) = legendre_with_derivative(m, x);
                dp = d;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // Map from [-1, 1] to [0, 1].
        points[i] = 0.5 * (1.0 - x);
        points[m - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[m - 1 - i] = 0.5 * w;
    }
    QuadratureRule {
        kind: RuleKind::Gauss,
        points,
        weights,
        order: m,
        grading: None,
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss rule for `∫₀¹ f(t) log(1/t) dt`, exact for polynomials of degree `2m - 1`.
///
/// Recurrence coefficients come from the modified Chebyshev algorithm with
/// shifted Legendre modified moments, which stays well conditioned for the
/// logarithmic weight; nodes and weights then follow from Golub–Welsch.
pub fn log_gauss_rule(m: usize) -> Result<QuadratureRule> {
    if m < 1 {
        return Err(BemError::InvalidArgument(
            "log-weighted Gauss rule needs m >= 1".into(),
        ));
    }
    let (alpha, beta) = log_weight_recurrence(m);
    let mut jacobi = DMatrix::<f64>::zeros(m, m);
    for k in 0..m {
        jacobi[(k, k)] = alpha[k];
        if k + 1 < m {
            let off = beta[k + 1].sqrt();
            jacobi[(k, k + 1)] = off;
            jacobi[(k + 1, k)] = off;
        }
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut nodes: Vec<(f64, f64)> = (0..m)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], beta[0] * v0 * v0)
        })
        .collect();
    nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(QuadratureRule {
        kind: RuleKind::LogWeightedGauss,
        points: nodes.iter().map(|n| n.0).collect(),
        weights: nodes.iter().map(|n| n.1).collect(),
        order: m,
        grading: None,
    })
}

fn log_weight_recurrence(n: usize) -> (Vec<f64>, Vec<f64>) {
    // Monic shifted Legendre: p_{k+1} = (t - 1/2) p_k - b_k p_{k-1}.
    let a = vec![0.5; 2 * n];
    let b: Vec<f64> = (0..2 * n)
        .map(|k| {
            if k == 0 {
                1.0
            } else {
                let k = k as f64;
                k * k / (4.0 * (4.0 * k * k - 1.0))
            }
        })
        .collect();
    // ∫ log(1/t) P*_k(t) dt = (-1)^k / (k (k+1)) for k >= 1, divided by the
    // leading coefficient binom(2k, k) to get monic moments.
    let mut moments = vec![0.0; 2 * n];
    moments[0] = 1.0;
    let mut lead = 1.0;
    for (k, mom) in moments.iter_mut().enumerate().skip(1) {
        let kf = k as f64;
        lead *= (2.0 * kf) * (2.0 * kf - 1.0) / (kf * kf);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        *mom = sign / (kf * (kf + 1.0)) / lead;
    }

    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    let len = 2 * n;
    let mut sig_prev = vec![0.0; len + 1];
    let mut sig = moments.clone();
    sig.push(0.0);
    alpha[0] = a[0] + moments[1] / moments[0];
    beta[0] = moments[0];
    for k in 1..n {
        let mut sig_next = vec![0.0; len + 1];
        for l in k..(len - k) {
            sig_next[l] = sig[l + 1] - (alpha[k - 1] - a[l]) * sig[l] - beta[k - 1] * sig_prev[l]
                + b[l] * sig[l - 1];
        }
        alpha[k] = a[k] + sig_next[k + 1] / sig_next[k] - sig[k] / sig[k - 1];
        beta[k] = sig_next[k] / sig[k - 1];
        sig_prev = sig;
        sig = sig_next;
    }
    (alpha, beta)
}

/// Composite Gauss rule on `[0, 1]` graded geometrically toward `focus`.
///
/// Each side of `focus` is cut at distances `L σ^k` from it; grading stops as
/// soon as the innermost interval is no longer than `resolve` (the distance of
/// a near singularity), or after `max_depth` levels.
pub fn graded_rule(
    focus: f64,
    m: usize,
    ratio: f64,
    max_depth: usize,
    resolve: f64,
) -> QuadratureRule {
    let gauss = gauss_legendre(m);
    let mut nodes = Vec::new();
    graded_nodes(&gauss, focus, ratio, max_depth, resolve, &mut nodes);
    QuadratureRule {
        kind: RuleKind::CompositeGraded,
        points: nodes.iter().map(|n| n.0).collect(),
        weights: nodes.iter().map(|n| n.1).collect(),
        order: m,
        grading: Some(ratio),
    }
}

/// Appends the nodes of [`graded_rule`] built from a given Gauss rule.
pub fn graded_nodes(
    gauss: &QuadratureRule,
    focus: f64,
    ratio: f64,
    max_depth: usize,
    resolve: f64,
    out: &mut Vec<(f64, f64)>,
) {
    let focus = focus.clamp(0.0, 1.0);
    for (side_len, dir) in [(focus, -1.0), (1.0 - focus, 1.0)] {
        if side_len <= 0.0 {
            continue;
        }
        let mut outer = side_len;
        let mut depth = 0;
        loop {
            // Points closer than ~1e-13 would round onto the focus itself.
            let at_bottom = depth >= max_depth || outer <= resolve.max(1e-13);
            let inner = if at_bottom { 0.0 } else { outer * ratio };
            for (x, w) in gauss.mapped(inner, outer) {
                out.push((focus + dir * x, w));
            }
            if at_bottom {
                break;
            }
            outer = inner;
            depth += 1;
        }
    }
}

/// Element rule graded toward both endpoints, used for integrands that may
/// carry logarithmic singularities at mesh nodes.
pub fn endpoint_graded_rule(m: usize, ratio: f64, depth: usize) -> QuadratureRule {
    let gauss = gauss_legendre(m);
    let mut cuts = vec![0.0];
    let left: Vec<f64> = (1..=depth)
        .rev()
        .map(|k| 0.5 * ratio.powi(k as i32))
        .collect();
    cuts.extend(left.iter().copied());
    cuts.push(0.5);
    cuts.extend(left.iter().rev().map(|c| 1.0 - c));
    cuts.push(1.0);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for win in cuts.windows(2) {
        for (t, w) in gauss.mapped(win[0], win[1]) {
            points.push(t);
            weights.push(w);
        }
    }
    QuadratureRule {
        kind: RuleKind::CompositeGraded,
        points,
        weights,
        order: m,
        grading: Some(ratio),
    }
}

/// Number of grading levels toward each endpoint in [`element_rule`].
pub const ELEMENT_RULE_DEPTH: usize = 8;
/// Grading ratio toward element endpoints in [`element_rule`].
pub const ELEMENT_RULE_RATIO: f64 = 0.15;

/// Cached endpoint-graded rule with `q + 4` points per sub-interval, exact
/// for polynomials of degree `2q + 7` and robust against logarithmic
/// singularities at element endpoints.
pub fn element_rule(q: usize) -> &'static QuadratureRule {
    static CACHE: std::sync::OnceLock<Vec<QuadratureRule>> = std::sync::OnceLock::new();
    let rules = CACHE.get_or_init(|| {
        (0..=40)
            .map(|q| endpoint_graded_rule(q + 4, ELEMENT_RULE_RATIO, ELEMENT_RULE_DEPTH))
            .collect()
    });
    &rules[q.min(40)]
}
