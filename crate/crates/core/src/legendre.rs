//! Shifted Legendre polynomials `L_k(2t - 1)` on `[0, 1]` and the Legendre
//! functions of the second kind used for Cauchy principal values.

/// Values `L_k(2t-1)` for `k = 0..=n`.
pub fn shifted_values(n: usize, t: f64, out: &mut [f64]) {
    let x = 2.0 * t - 1.0;
    out[0] = 1.0;
    if n >= 1 {
        out[1] = x;
    }
    for k in 1..n {
        let kf = k as f64;
        out[k + 1] = ((2.0 * kf + 1.0) * x * out[k] - kf * out[k - 1]) / (kf + 1.0);
    }
}

/// Values and `t`-derivatives of `L_k(2t-1)` for `k = 0..=n`.
pub fn shifted_values_and_derivatives(n: usize, t: f64, val: &mut [f64], der: &mut [f64]) {
    let x = 2.0 * t - 1.0;
    val[0] = 1.0;
    der[0] = 0.0;
    if n >= 1 {
        val[1] = x;
        der[1] = 2.0;
    }
    for k in 1..n {
        let kf = k as f64;
        val[k + 1] = ((2.0 * kf + 1.0) * x * val[k] - kf * val[k - 1]) / (kf + 1.0);
        // P'_{k+1} = P'_{k-1} + (2k+1) P_k, times dx/dt = 2.
        der[k + 1] = der[k - 1] + 2.0 * (2.0 * kf + 1.0) * val[k];
    }
}

/// Legendre functions of the second kind `Q_k(ξ)` for `|ξ| < 1`, `k = 0..=n`.
///
/// `pv ∫₋₁¹ P_k(x) / (ξ - x) dx = 2 Q_k(ξ)`.
pub fn second_kind(n: usize, xi: f64, out: &mut [f64]) {
    out[0] = 0.5 * ((1.0 + xi) / (1.0 - xi)).ln();
    if n >= 1 {
        out[1] = xi * out[0] - 1.0;
    }
    for k in 1..n {
        let kf = k as f64;
        out[k + 1] = ((2.0 * kf + 1.0) * xi * out[k] - kf * out[k - 1]) / (kf + 1.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::gauss_legendre;

    #[test]
    fn known_values() {
        let mut v = [0.0; 4];
        shifted_values(3, 0.75, &mut v);
        assert_eq!(v[0], 1.0);
        assert_eq!(v[1], 0.5);
        assert!((v[2] + 0.125).abs() < 1e-15);
        shifted_values(3, 0.5, &mut v);
        assert!((v[2] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn orthogonality() {
        let g = gauss_legendre(12);
        let mut v = [0.0; 8];
        for a in 0..8 {
            for b in 0..8 {
                let s: f64 = g
                    .iter()
                    .map(|(t, w)| {
                        shifted_values(7, t, &mut v);
                        w * v[a] * v[b]
                    })
                    .sum();
                let exact = if a == b { 1.0 / (2.0 * a as f64 + 1.0) } else { 0.0 };
                assert!((s - exact).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut v = [0.0; 7];
        let mut d = [0.0; 7];
        let mut vp = [0.0; 7];
        let mut vm = [0.0; 7];
        let t = 0.37;
        let e = 1e-6;
        shifted_values_and_derivatives(6, t, &mut v, &mut d);
        shifted_values(6, t + e, &mut vp);
        shifted_values(6, t - e, &mut vm);
        for k in 0..7 {
            assert!((d[k] - (vp[k] - vm[k]) / (2.0 * e)).abs() < 1e-6);
        }
    }

    #[test]
    fn second_kind_matches_principal_value() {
        // pv ∫ P_k(x)/(ξ-x) dx = ∫ (P_k(x) - P_k(ξ))/(ξ-x) dx + P_k(ξ) log((1+ξ)/(1-ξ))
        let xi = 0.3;
        let g = gauss_legendre(20);
        let mut q = [0.0; 6];
        second_kind(5, xi, &mut q);
        let mut pv = [0.0; 6];
        let mut px = [0.0; 6];
        let txi = 0.5 * (xi + 1.0);
        shifted_values(5, txi, &mut pv);
        for k in 0..6 {
            let smooth: f64 = g
                .iter()
                .map(|(t, w)| {
                    let x = 2.0 * t - 1.0;
                    shifted_values(5, t, &mut px);
                    2.0 * w * (px[k] - pv[k]) / (xi - x)
                })
                .sum();
            let total = smooth + pv[k] * ((1.0 + xi) / (1.0 - xi)).ln();
            assert!((total - 2.0 * q[k]).abs() < 1e-12, "k={k}");
        }
    }
}
