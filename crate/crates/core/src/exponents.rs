//! Integrability exponents appearing in the uniqueness conditions.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Hölder conjugate `r' = r/(r−1)`.
pub fn conjugate(r: f64) -> f64 {
    r / (r - 1.0)
}

/// `p_r = r' p / (p − r')`.
pub fn p_sub(p: f64, r: f64) -> f64 {
    let rc = conjugate(r);
    rc * p / (p - rc)
}

/// Sobolev conjugate `Np/(N−p)` for `p < N`, `None` (any finite exponent) otherwise.
pub fn sobolev_conjugate(n: usize, p: f64) -> Option<f64> {
    let nf = n as f64;
    (p < nf).then(|| nf * p / (nf - p))
}

/// Open upper end of the admissible `σ_N` interval for `N ∈ {2, 3}`.
pub fn sigma_upper(n: usize) -> Option<f64> {
    match n {
        2 => Some(f64::INFINITY),
        3 => Some(6.0 + 10.0 / 3.0),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentTable {
    pub n: usize,
    pub p: f64,
    pub k: f64,
    pub l: f64,
    pub sigma_n: f64,
    /// `2p/(p−2)`.
    pub p2: f64,
    /// `σ_N' p/(p − σ_N')`.
    pub p_sigma_n: f64,
    /// Smallest admissible `q₀ ≥ N/2` (and `≥ 1`).
    pub q0: f64,
    /// `(2l − k) N/2`: sup-in-time integrability needed under polynomial growth.
    pub r_required: f64,
    /// `max{2(1+k), σ_N'(1+l)}`.
    pub p_required: f64,
    pub p_ok: bool,
    /// `V₂` solutions of the SKT system are unique for `N ≤ 4`.
    pub skt_uni_ok: bool,
    /// Generalized SKT: `1 ≤ k ≤ 4/N`.
    pub gen_skt_uni_ok: bool,
}

/// Computes the exponent table. For `N ∈ {2, 3}` a `sigma_choice` inside the
/// admissible open interval is mandatory; for `N ≥ 4`, `σ_N = 2(N+2)/(N−2)`
/// and any supplied choice must equal it.
pub fn exponent_table(n: usize, p: f64, k: f64, l: f64, sigma_choice: Option<f64>) -> Result<ExponentTable> {
    if n < 2 {
        return Err(invalid(format!("spatial dimension must be >= 2, got {n}")));
    }
    if !(p > 2.0 && p.is_finite()) {
        return Err(invalid(format!("p must be > 2 (p2 undefined otherwise), got {p}")));
    }
    if !(k >= 0.0 && l >= 0.0) {
        return Err(invalid("growth exponents must be >= 0"));
    }
    let sigma_n = match (sigma_upper(n), sigma_choice) {
        (Some(hi), Some(s)) if s > 1.0 && s < hi => s,
        (Some(hi), Some(s)) => {
            return Err(invalid(format!("sigma_N = {s} outside (1, {hi}) for N = {n}")))
        }
        (Some(hi), None) => {
            return Err(invalid(format!("N = {n} requires a sigma_N choice in (1, {hi})")))
        }
        (None, choice) => {
            let nf = n as f64;
            let s = 2.0 * (nf + 2.0) / (nf - 2.0);
            if let Some(c) = choice {
                if c != s {
                    return Err(invalid(format!("sigma_N is fixed to {s} for N = {n}, got {c}")));
                }
            }
            s
        }
    };
    let p2 = 2.0 * p / (p - 2.0);
    let sc = conjugate(sigma_n);
    if !(p > sc) {
        return Err(invalid(format!("p = {p} must exceed sigma_N' = {sc}")));
    }
    let p_sigma_n = sc * p / (p - sc);
    let nf = n as f64;
    let p_required = (2.0 * (1.0 + k)).max(sc * (1.0 + l));
    Ok(ExponentTable {
        n,
        p,
        k,
        l,
        sigma_n,
        p2,
        p_sigma_n,
        q0: (nf / 2.0).max(1.0),
        r_required: (2.0 * l - k) * nf / 2.0,
        p_required,
        p_ok: p >= p_required,
        skt_uni_ok: n <= 4,
        gen_skt_uni_ok: 1.0 <= k && k <= 4.0 / nf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_for_n4() {
        let t = exponent_table(4, 4.0, 1.0, 1.0, None).unwrap();
        assert_eq!(t.sigma_n, 6.0);
        assert_eq!(t.p2, 4.0);
        assert!(t.skt_uni_ok);
        assert!(t.gen_skt_uni_ok);
    }

    #[test]
    fn p2_matches_p_sub_with_r_two() {
        for p in [2.5, 3.0, 4.0, 10.0] {
            let t = exponent_table(5, p, 1.0, 1.0, None);
            if let Ok(t) = t {
                assert!((t.p2 - p_sub(p, 2.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn generalized_gate() {
        assert!(exponent_table(2, 4.0, 1.0, 1.0, Some(4.0)).unwrap().gen_skt_uni_ok);
        let t5 = exponent_table(5, 4.0, 1.0, 1.0, None).unwrap();
        assert!(!t5.gen_skt_uni_ok);
        assert!(!t5.skt_uni_ok);
        assert!(!exponent_table(2, 4.0, 0.5, 0.5, Some(4.0)).unwrap().gen_skt_uni_ok);
    }

    #[test]
    fn sigma_choice_validation() {
        assert!(exponent_table(2, 4.0, 1.0, 1.0, None).is_err());
        assert!(exponent_table(2, 4.0, 1.0, 1.0, Some(1.0)).is_err());
        assert!(exponent_table(3, 4.0, 1.0, 1.0, Some(9.5)).is_err());
        assert!(exponent_table(3, 4.0, 1.0, 1.0, Some(9.3)).is_ok());
        assert!(exponent_table(4, 4.0, 1.0, 1.0, Some(5.0)).is_err());
        assert!(exponent_table(4, 4.0, 1.0, 1.0, Some(6.0)).is_ok());
    }

    #[test]
    fn rejects_p_at_most_two() {
        assert!(exponent_table(4, 2.0, 1.0, 1.0, None).is_err());
        assert!(exponent_table(4, 1.5, 1.0, 1.0, None).is_err());
    }

    #[test]
    fn derived_exponents_are_finite_and_above_one() {
        for n in 2..=6 {
            for p in [3.0, 4.0, 8.0] {
                let sigma = sigma_upper(n).map(|_| 4.0);
                let t = exponent_table(n, p, 1.0, 1.0, sigma).unwrap();
                for v in [t.sigma_n, t.p2, t.p_sigma_n, t.q0] {
                    assert!(v.is_finite() && v >= 1.0, "n={n} p={p} {t:?}");
                }
            }
        }
    }

    #[test]
    fn pure_function() {
        let a = exponent_table(3, 5.0, 1.0, 2.0, Some(4.0)).unwrap();
        let b = exponent_table(3, 5.0, 1.0, 2.0, Some(4.0)).unwrap();
        assert_eq!(a, b);
    }
}
