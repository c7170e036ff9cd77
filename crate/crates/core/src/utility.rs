//! Marginal-utility kinds with a common asymptotic relative risk aversion
//! index. Only the marginal u' is ever represented: the Euler operator, the
//! convergence metric, and the fixed-point map all consume u' alone.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Marginal utility specification.
///
/// `Crra` is the workhorse: u'(c) = c^(-gamma). `PathologicalSinLog` is a
/// stress fixture whose local relative risk aversion oscillates forever
/// (u'(c) = c^(-gamma) exp(delta sin log c)); it still has asymptotic
/// exponent -gamma. `BrraTabulated` carries a user-supplied marginal as a
/// piecewise-linear interpolant in log-log space together with declared
/// bounds on the local relative risk aversion.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilitySpec {
    Crra {
        gamma: f64,
    },
    PathologicalSinLog {
        gamma: f64,
        delta: f64,
    },
    BrraTabulated {
        gamma: f64,
        gamma_lower: f64,
        gamma_upper: f64,
        log_c: Vec<f64>,
        log_marginal: Vec<f64>,
    },
}

impl UtilitySpec {
    pub fn crra(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::invalid(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        Ok(UtilitySpec::Crra { gamma })
    }

    /// u'(c) = c^(-gamma) exp(delta sin log c); requires 0 < delta < gamma
    /// so that u'' < 0 everywhere (the local RRA gamma - delta cos log c
    /// stays positive).
    pub fn pathological_sin_log(gamma: f64, delta: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::invalid(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        if !(delta > 0.0 && delta < gamma) {
            return Err(Error::invalid(format!(
                "pathological utility requires 0 < delta < gamma, got delta={delta}, gamma={gamma}"
            )));
        }
        Ok(UtilitySpec::PathologicalSinLog { gamma, delta })
    }

    /// Tabulated bounded-RRA marginal: `log_marginal[i]` is log u' at
    /// consumption exp(`log_c[i]`). The table must be strictly decreasing
    /// and the sampled local RRA must stay inside
    /// `[gamma_lower - 1e-6, gamma_upper + 1e-6]`.
    pub fn brra_tabulated(
        gamma: f64,
        gamma_lower: f64,
        gamma_upper: f64,
        log_c: Vec<f64>,
        log_marginal: Vec<f64>,
    ) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::invalid(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        if !(0.0 <= gamma_lower && gamma_lower <= gamma_upper && gamma_upper.is_finite()) {
            return Err(Error::invalid(
                "BRRA bounds must satisfy 0 <= gamma_lower <= gamma_upper < inf",
            ));
        }
        if log_c.len() != log_marginal.len() || log_c.len() < 2 {
            return Err(Error::invalid(
                "BRRA table needs at least two matching knots",
            ));
        }
        for w in log_c.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::invalid(
                    "BRRA log_c knots must be strictly increasing",
                ));
            }
        }
        for w in log_marginal.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::invalid(
                    "BRRA log_marginal must be strictly decreasing (u'' < 0)",
                ));
            }
        }
        let spec = UtilitySpec::BrraTabulated {
            gamma,
            gamma_lower,
            gamma_upper,
            log_c,
            log_marginal,
        };
        // segment slopes are the local RRA of the interpolant; validate them
        if let UtilitySpec::BrraTabulated {
            log_c,
            log_marginal,
            ..
        } = &spec
        {
            for i in 0..log_c.len() - 1 {
                let rra = -(log_marginal[i + 1] - log_marginal[i]) / (log_c[i + 1] - log_c[i]);
                if rra < gamma_lower - 1e-6 || rra > gamma_upper + 1e-6 {
                    return Err(Error::invalid(format!(
                        "BRRA table slope {rra} outside declared bounds [{gamma_lower}, {gamma_upper}]"
                    )));
                }
            }
        }
        Ok(spec)
    }

    /// Asymptotic relative risk aversion index.
    pub fn gamma(&self) -> f64 {
        match self {
            UtilitySpec::Crra { gamma }
            | UtilitySpec::PathologicalSinLog { gamma, .. }
            | UtilitySpec::BrraTabulated { gamma, .. } => *gamma,
        }
    }

    pub fn is_crra(&self) -> bool {
        matches!(self, UtilitySpec::Crra { .. })
    }

    /// Declared RRA bounds: exact (gamma, gamma) for CRRA,
    /// (gamma - delta, gamma + delta) for the sin-log fixture, the user's
    /// declaration for tabulated marginals.
    pub fn rra_bounds(&self) -> (f64, f64) {
        match self {
            UtilitySpec::Crra { gamma } => (*gamma, *gamma),
            UtilitySpec::PathologicalSinLog { gamma, delta } => (gamma - delta, gamma + delta),
            UtilitySpec::BrraTabulated {
                gamma_lower,
                gamma_upper,
                ..
            } => (*gamma_lower, *gamma_upper),
        }
    }

    /// Marginal utility u'(c). Panics on c <= 0: every caller in this crate
    /// guarantees positivity, and u'(0) = infinity is outside f64.
    pub fn marginal(&self, c: f64) -> f64 {
        assert!(c > 0.0, "marginal utility requires c > 0, got {c}");
        match self {
            UtilitySpec::Crra { gamma } => c.powf(-gamma),
            UtilitySpec::PathologicalSinLog { gamma, delta } => {
                (-gamma * c.ln() + delta * c.ln().sin()).exp()
            }
            UtilitySpec::BrraTabulated {
                log_c,
                log_marginal,
                ..
            } => interp_linear(log_c, log_marginal, c.ln()).exp(),
        }
    }

    /// Inverse of the marginal: the consumption c with u'(c) = m, to 1e-12
    /// relative. Closed form for CRRA, bracketed bisection otherwise.
    pub fn inverse_marginal(&self, m: f64) -> f64 {
        assert!(m > 0.0, "inverse marginal requires m > 0, got {m}");
        match self {
            UtilitySpec::Crra { gamma } => m.powf(-1.0 / gamma),
            _ => {
                // bisect on log c; expand the bracket geometrically first
                let target = m.ln();
                let log_m = |lc: f64| -> f64 {
                    match self {
                        UtilitySpec::PathologicalSinLog { gamma, delta } => {
                            -gamma * lc + delta * lc.sin()
                        }
                        UtilitySpec::BrraTabulated {
                            log_c,
                            log_marginal,
                            ..
                        } => interp_linear(log_c, log_marginal, lc),
                        UtilitySpec::Crra { .. } => unreachable!(),
                    }
                };
                let mut lo = -1.0f64;
                let mut hi = 1.0f64;
                // log u' is decreasing in log c
                while log_m(lo) < target {
                    lo *= 2.0;
                    assert!(lo > -1e6, "inverse_marginal bracket blowup");
                }
                while log_m(hi) > target {
                    hi *= 2.0;
                    assert!(hi < 1e6, "inverse_marginal bracket blowup");
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if log_m(mid) > target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-14 {
                        break;
                    }
                }
                (0.5 * (lo + hi)).exp()
            }
        }
    }

    /// Local relative risk aversion -c u''(c) / u'(c): closed form where
    /// available, otherwise a central finite difference of log u' in log c.
    pub fn local_rra(&self, c: f64) -> f64 {
        assert!(c > 0.0, "local RRA requires c > 0, got {c}");
        match self {
            UtilitySpec::Crra { gamma } => *gamma,
            UtilitySpec::PathologicalSinLog { gamma, delta } => gamma - delta * c.ln().cos(),
            UtilitySpec::BrraTabulated { .. } => self.local_rra_fd(c),
        }
    }

    /// Finite-difference estimate of the local RRA, step h = c * 1e-6.
    fn local_rra_fd(&self, c: f64) -> f64 {
        let h = c * 1e-6;
        let up = self.marginal(c + h).ln();
        let down = self.marginal(c - h).ln();
        -(up - down) / ((c + h).ln() - (c - h).ln())
    }
}

/// Piecewise-linear interpolation with linear extrapolation past both ends.
fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    let seg = if x <= xs[0] {
        0
    } else if x >= xs[n - 1] {
        n - 2
    } else {
        xs.partition_point(|&v| v < x).saturating_sub(1)
    };
    let t = (x - xs[seg]) / (xs[seg + 1] - xs[seg]);
    ys[seg] + t * (ys[seg + 1] - ys[seg])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0_f64).max(a.abs().max(b.abs()))
    }

    #[test]
    fn crra_marginal_values() {
        let u = UtilitySpec::crra(2.0).unwrap();
        assert_eq!(u.marginal(1.0), 1.0);
        assert!(close(u.marginal(10.0), 0.01, 1e-15));
    }

    #[test]
    fn sin_log_marginal_at_unit_c() {
        let u = UtilitySpec::pathological_sin_log(2.0, 0.5).unwrap();
        assert!(close(u.marginal(1.0), 1.0, 1e-15));
    }

    #[test]
    #[should_panic(expected = "requires c > 0")]
    fn marginal_rejects_nonpositive_c() {
        let u = UtilitySpec::crra(2.0).unwrap();
        u.marginal(0.0);
    }

    #[test]
    fn inverse_marginal_crra() {
        let u = UtilitySpec::crra(2.0).unwrap();
        assert!(close(u.inverse_marginal(0.01), 10.0, 1e-13));
        let log_u = UtilitySpec::crra(1.0).unwrap();
        assert!(close(log_u.inverse_marginal(4.0), 0.25, 1e-13));
    }

    #[test]
    fn inverse_marginal_roundtrip_at_one() {
        for u in [
            UtilitySpec::crra(3.0).unwrap(),
            UtilitySpec::pathological_sin_log(2.0, 0.5).unwrap(),
        ] {
            let m = u.marginal(1.0);
            assert!(close(u.inverse_marginal(m), 1.0, 1e-10));
        }
    }

    #[test]
    fn local_rra_constant_for_crra() {
        let u = UtilitySpec::crra(3.0).unwrap();
        for c in [1e-3, 1.0, 1e4] {
            assert_eq!(u.local_rra(c), 3.0);
        }
    }

    #[test]
    fn local_rra_sin_log_closed_form() {
        let u = UtilitySpec::pathological_sin_log(2.0, 0.5).unwrap();
        // at c = 1: gamma - delta cos 0 = 1.5
        assert!(close(u.local_rra(1.0), 1.5, 1e-14));
    }

    #[test]
    fn local_rra_finite_difference_matches_closed_form() {
        let u = UtilitySpec::crra(2.0).unwrap();
        for c in [0.5, 1.0, 7.3, 250.0] {
            assert!((u.local_rra_fd(c) - 2.0).abs() < 1e-6);
        }
        let s = UtilitySpec::pathological_sin_log(2.0, 0.5).unwrap();
        for c in [0.9, 3.0, 40.0] {
            assert!((s.local_rra_fd(c) - s.local_rra(c)).abs() < 1e-5);
        }
    }

    #[test]
    fn marginal_strictly_decreasing_on_log_grid() {
        for u in [
            UtilitySpec::crra(2.0).unwrap(),
            UtilitySpec::pathological_sin_log(2.0, 0.5).unwrap(),
        ] {
            let mut prev = f64::INFINITY;
            let mut c = 1e-8;
            while c <= 1e12 {
                let m = u.marginal(c);
                assert!(m < prev, "u' must strictly decrease, c={c}");
                prev = m;
                c *= 3.7;
            }
        }
    }

    #[test]
    fn sin_log_asymptotic_exponent_approaches_minus_gamma() {
        // log u'(c) / log c -> -gamma along c = 10^k, with shrinking deviation
        let u = UtilitySpec::pathological_sin_log(2.0, 0.5).unwrap();
        let dev = |k: i32| {
            let c = 10f64.powi(k);
            (u.marginal(c).ln() / c.ln() + 2.0).abs()
        };
        assert!(dev(10) < dev(2));
        assert!(dev(10) < 0.05);
    }

    #[test]
    fn brra_table_round_trips_and_validates() {
        // a CRRA(2) marginal tabulated on a log grid
        let log_c: Vec<f64> = (-10..=10).map(|k| k as f64).collect();
        let log_m: Vec<f64> = log_c.iter().map(|&lc| -2.0 * lc).collect();
        let u = UtilitySpec::brra_tabulated(2.0, 1.9, 2.1, log_c, log_m).unwrap();
        assert!(close(u.marginal(1.0), 1.0, 1e-12));
        assert!(close(u.local_rra(2.5), 2.0, 1e-5));
        assert!(close(u.inverse_marginal(u.marginal(3.0)), 3.0, 1e-9));
    }

    #[test]
    fn brra_table_rejects_out_of_bound_slopes() {
        let log_c = vec![0.0, 1.0, 2.0];
        let log_m = vec![0.0, -1.0, -5.0]; // slopes 1 and 4
        assert!(UtilitySpec::brra_tabulated(2.0, 0.9, 1.1, log_c, log_m).is_err());
    }

    #[test]
    fn pathological_requires_delta_below_gamma() {
        assert!(UtilitySpec::pathological_sin_log(2.0, 2.5).is_err());
        assert!(UtilitySpec::pathological_sin_log(2.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn inverse_marginal_is_right_inverse(log10_c in -6.0f64..6.0) {
            let c = 10f64.powf(log10_c);
            for u in [
                UtilitySpec::crra(2.0).unwrap(),
                UtilitySpec::crra(0.7).unwrap(),
                UtilitySpec::pathological_sin_log(1.5, 0.4).unwrap(),
            ] {
                let m = u.marginal(c);
                let back = u.inverse_marginal(m);
                prop_assert!((back - c).abs() <= 1e-10 * c);
            }
        }
    }
}
