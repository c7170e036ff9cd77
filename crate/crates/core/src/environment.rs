//! The exogenous stochastic environment: a finite Markov chain driving
//! per-state discrete distributions of the discount factor, the gross return
//! on wealth, and non-financial income.
//!
//! The three shocks are mutually independent within a state, so conditional
//! moments factor into products of per-support sums. The convention
//! `beta R^(1-gamma) = (beta R) R^(-gamma)` with `0 * inf = 0` is enforced by
//! skipping support points where `beta = 0` or `R = 0`.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::matrix::{spectral_radius, NonnegMatrix, TransitionMatrix};
use crate::utility::UtilitySpec;
use crate::Result;

/// Finite discrete distribution: a list of (value, probability) atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct DiscreteSupport {
    atoms: Vec<(f64, f64)>,
}

impl DiscreteSupport {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::invalid("support must have at least one atom"));
        }
        let mut total = 0.0;
        for &(v, p) in &atoms {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!(
                    "support values must be finite and nonnegative, got {v}"
                )));
            }
            if !p.is_finite() || p < 0.0 {
                return Err(Error::invalid(format!(
                    "probabilities must be finite and nonnegative, got {p}"
                )));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "support probabilities sum to {total}, expected 1"
            )));
        }
        Ok(DiscreteSupport { atoms })
    }

    /// Point mass at `v`.
    pub fn degenerate(v: f64) -> Result<Self> {
        DiscreteSupport::new(vec![(v, 1.0)])
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|&(v, p)| v * p).sum()
    }

    /// E f(V) skipping atoms with value exactly zero (the 0 * inf = 0
    /// convention for negative powers).
    pub fn mean_skip_zero(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.atoms
            .iter()
            .filter(|&&(v, _)| v > 0.0)
            .map(|&(v, p)| f(v) * p)
            .sum()
    }

    /// Multiply every value by a positive constant.
    pub fn scaled(&self, c: f64) -> Self {
        DiscreteSupport {
            atoms: self.atoms.iter().map(|&(v, p)| (v * c, p)).collect(),
        }
    }
}

impl TryFrom<Vec<(f64, f64)>> for DiscreteSupport {
    type Error = Error;
    fn try_from(atoms: Vec<(f64, f64)>) -> Result<Self> {
        DiscreteSupport::new(atoms)
    }
}

impl From<DiscreteSupport> for Vec<(f64, f64)> {
    fn from(s: DiscreteSupport) -> Vec<(f64, f64)> {
        s.atoms
    }
}

/// Per-state shock distributions; the three are mutually independent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateShocks {
    pub beta: DiscreteSupport,
    pub r: DiscreteSupport,
    pub y: DiscreteSupport,
}

/// Conditional-moment selector for the diagonal matrices `D_X`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Moment {
    /// E_z beta
    Beta,
    /// E_z beta R
    BetaR,
    /// E_z beta R^(1-gamma), under the (beta R) R^(-gamma) convention
    BetaRPowOneMinusGamma,
    /// E_z Y
    Income,
}

/// The Markov environment `{beta, R, Y}` with asymptotic risk aversion
/// `gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEnvironment", into = "RawEnvironment")]
pub struct MarkovEnvironment {
    p: TransitionMatrix,
    shocks: Vec<StateShocks>,
    gamma: f64,
}

/// JSON wire schema: `{gamma, P: [[..]], states: [{beta, r, y}, ..]}` with
/// each shock a list of `[value, probability]` pairs.
#[derive(Serialize, Deserialize)]
struct RawEnvironment {
    gamma: f64,
    #[serde(rename = "P")]
    p: Vec<Vec<f64>>,
    states: Vec<StateShocks>,
}

impl TryFrom<RawEnvironment> for MarkovEnvironment {
    type Error = Error;
    fn try_from(raw: RawEnvironment) -> Result<Self> {
        MarkovEnvironment::new(TransitionMatrix::from_rows(&raw.p)?, raw.states, raw.gamma)
    }
}

impl From<MarkovEnvironment> for RawEnvironment {
    fn from(env: MarkovEnvironment) -> RawEnvironment {
        RawEnvironment {
            gamma: env.gamma,
            p: env.p.clone().into(),
            states: env.shocks,
        }
    }
}

impl MarkovEnvironment {
    pub fn new(p: TransitionMatrix, shocks: Vec<StateShocks>, gamma: f64) -> Result<Self> {
        if shocks.len() != p.n_states() {
            return Err(Error::invalid(format!(
                "{} shock states for a {}-state transition matrix",
                shocks.len(),
                p.n_states()
            )));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::invalid(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        let env = MarkovEnvironment { p, shocks, gamma };
        for z in 0..env.n_states() {
            for m in [Moment::Beta, Moment::BetaR, Moment::Income] {
                let v = env.expected(z, m);
                if !v.is_finite() {
                    return Err(Error::invalid(format!(
                        "conditional moment {m:?} not finite in state {z}"
                    )));
                }
            }
        }
        Ok(env)
    }

    /// Single-state environment from scalar supports.
    pub fn single_state(
        beta: DiscreteSupport,
        r: DiscreteSupport,
        y: DiscreteSupport,
        gamma: f64,
    ) -> Result<Self> {
        let p = TransitionMatrix::from_rows(&[vec![1.0]])?;
        MarkovEnvironment::new(p, vec![StateShocks { beta, r, y }], gamma)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::invalid(format!("environment JSON: {e}")))
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.p.n_states()
    }

    #[inline]
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn transition(&self) -> &TransitionMatrix {
        &self.p
    }

    pub fn shocks(&self, z: usize) -> &StateShocks {
        &self.shocks[z]
    }

    /// Conditional moment E_z X for the given selector.
    pub fn expected(&self, z: usize, moment: Moment) -> f64 {
        let s = &self.shocks[z];
        match moment {
            Moment::Beta => s.beta.mean(),
            Moment::BetaR => s.beta.mean() * s.r.mean(),
            Moment::BetaRPowOneMinusGamma => {
                // (beta R) R^(-gamma): atoms with beta = 0 or R = 0 drop out
                s.beta.mean() * s.r.mean_skip_zero(|r| r.powf(1.0 - self.gamma))
            }
            Moment::Income => s.y.mean(),
        }
    }

    /// Diagonal matrix of conditional moments `D_X(z,z) = E_z X`.
    pub fn moment_diagonal(&self, moment: Moment) -> Result<NonnegMatrix> {
        let d: Vec<f64> = (0..self.n_states())
            .map(|z| self.expected(z, moment))
            .collect();
        NonnegMatrix::diag(&d)
    }

    /// Per-state expected wealth growth factor E_z R * (1 - c_bar(z)),
    /// as a diagonal matrix.
    pub fn growth_diagonal(&self, c_bar: &[f64]) -> Result<NonnegMatrix> {
        if c_bar.len() != self.n_states() {
            return Err(Error::invalid("c_bar length must match state count"));
        }
        let d: Vec<f64> = (0..self.n_states())
            .map(|z| self.shocks[z].r.mean() * (1.0 - c_bar[z]))
            .collect();
        NonnegMatrix::diag(&d)
    }

    /// `K = P * D_{beta R^(1-gamma)}`, the matrix governing asymptotic MPCs.
    pub fn k_matrix(&self) -> Result<NonnegMatrix> {
        let d = self.moment_diagonal(Moment::BetaRPowOneMinusGamma)?;
        let diag: Vec<f64> = (0..self.n_states()).map(|z| d.get(z, z)).collect();
        self.p.mul_diag(&diag)
    }

    /// Smallest strictly positive return value across all states (the
    /// delta of the returns-bounded-away-from-zero assumption); `None` when
    /// every return is zero.
    pub fn min_positive_r(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for s in &self.shocks {
            for &(v, _) in s.r.atoms() {
                if v > 0.0 {
                    best = Some(match best {
                        Some(b) => b.min(v),
                        None => v,
                    });
                }
            }
        }
        best
    }

    /// Left side of the bounded-RRA sufficient condition:
    /// max_z E_z beta R max{R^(-gl), R^(-gu)}.
    pub fn brra_condition_value(&self, gamma_lower: f64, gamma_upper: f64) -> f64 {
        (0..self.n_states())
            .map(|z| {
                let s = &self.shocks[z];
                s.beta.mean()
                    * s.r
                        .mean_skip_zero(|r| r * r.powf(-gamma_lower).max(r.powf(-gamma_upper)))
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Growth detrending at rate `g` for CRRA utility: the return becomes
    /// `R e^(-g)`, the discount factor `beta e^((1-gamma) g)`, and income is
    /// interpreted as the already-detrended constant level (unchanged).
    pub fn detrend(&self, utility: &UtilitySpec, g: f64) -> Result<MarkovEnvironment> {
        if !utility.is_crra() {
            return Err(Error::precondition(
                "detrending is only valid for CRRA utility",
            ));
        }
        if (utility.gamma() - self.gamma).abs() > 1e-12 {
            return Err(Error::precondition(format!(
                "utility gamma {} does not match environment gamma {}",
                utility.gamma(),
                self.gamma
            )));
        }
        let beta_factor = ((1.0 - self.gamma) * g).exp();
        let r_factor = (-g).exp();
        let shocks = self
            .shocks
            .iter()
            .map(|s| StateShocks {
                beta: s.beta.scaled(beta_factor),
                r: s.r.scaled(r_factor),
                y: s.y.clone(),
            })
            .collect();
        MarkovEnvironment::new(self.p.clone(), shocks, self.gamma)
    }
}

/// Spectral-radius conditions for existence of a solution, plus the
/// sufficient-condition value for a guaranteed asymptotic-MPC limit.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub r_pd_beta: f64,
    pub r_pd_beta_r: f64,
    pub r_pd_beta_r_1mg: f64,
    pub assumption2_ok: bool,
    pub brra_condition_value: f64,
    pub notes: Vec<String>,
}

/// Compute the three spectral radii and evaluate the existence conditions.
/// The bounded-RRA value is evaluated at the CRRA point (both bounds equal
/// to gamma), where it coincides with max_z E_z beta R^(1-gamma).
pub fn check_conditions(env: &MarkovEnvironment) -> Result<ConditionReport> {
    let radius_of = |moment: Moment| -> Result<f64> {
        let d = env.moment_diagonal(moment)?;
        let diag: Vec<f64> = (0..env.n_states()).map(|z| d.get(z, z)).collect();
        Ok(spectral_radius(&env.transition().mul_diag(&diag)?))
    };
    let r_pd_beta = radius_of(Moment::Beta)?;
    let r_pd_beta_r = radius_of(Moment::BetaR)?;
    let r_pd_beta_r_1mg = radius_of(Moment::BetaRPowOneMinusGamma)?;
    let assumption2_ok = r_pd_beta < 1.0 && r_pd_beta_r < 1.0;
    let brra_condition_value = env.brra_condition_value(env.gamma(), env.gamma());

    let mut notes = Vec::new();
    if !assumption2_ok {
        notes.push(format!(
            "existence conditions fail: r(PD_beta) = {r_pd_beta}, r(PD_betaR) = {r_pd_beta_r}"
        ));
    }
    if r_pd_beta_r_1mg >= 1.0 {
        notes.push(format!(
            "r(PD_betaR^(1-gamma)) = {r_pd_beta_r_1mg} >= 1: zero asymptotic MPC regime"
        ));
    }
    if brra_condition_value < 1.0 {
        notes.push("sufficient condition for the asymptotic-MPC limit holds".to_string());
    }
    if let Some(delta) = env.min_positive_r() {
        notes.push(format!(
            "returns bounded below by delta = {delta} when positive"
        ));
    }

    Ok(ConditionReport {
        r_pd_beta,
        r_pd_beta_r,
        r_pd_beta_r_1mg,
        assumption2_ok,
        brra_condition_value,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0_f64).max(a.abs().max(b.abs()))
    }

    fn constant_env(beta: f64, r: f64, y: f64, gamma: f64) -> MarkovEnvironment {
        MarkovEnvironment::single_state(
            DiscreteSupport::degenerate(beta).unwrap(),
            DiscreteSupport::degenerate(r).unwrap(),
            DiscreteSupport::degenerate(y).unwrap(),
            gamma,
        )
        .unwrap()
    }

    #[test]
    fn moment_scalar_arithmetic() {
        let env = constant_env(0.96, 1.02, 1.0, 2.0);
        let d = env.moment_diagonal(Moment::BetaRPowOneMinusGamma).unwrap();
        assert!(close(d.get(0, 0), 0.96 / 1.02, 1e-14));
    }

    #[test]
    fn zero_beta_kills_all_beta_moments() {
        let env = constant_env(0.0, 1.05, 1.0, 3.0);
        for m in [Moment::Beta, Moment::BetaR, Moment::BetaRPowOneMinusGamma] {
            assert_eq!(env.expected(0, m), 0.0);
        }
    }

    #[test]
    fn zero_return_atoms_drop_out() {
        let env = MarkovEnvironment::single_state(
            DiscreteSupport::degenerate(1.0).unwrap(),
            DiscreteSupport::new(vec![(0.0, 0.5), (2.0, 0.5)]).unwrap(),
            DiscreteSupport::degenerate(1.0).unwrap(),
            1.0,
        )
        .unwrap();
        // E beta R^0 with the R = 0 branch contributing nothing
        assert!(close(
            env.expected(0, Moment::BetaRPowOneMinusGamma),
            0.5,
            1e-15
        ));
    }

    #[test]
    fn gamma_one_beta_moment_equals_beta() {
        let env = MarkovEnvironment::single_state(
            DiscreteSupport::new(vec![(0.9, 0.3), (0.95, 0.7)]).unwrap(),
            DiscreteSupport::new(vec![(0.98, 0.5), (1.07, 0.5)]).unwrap(),
            DiscreteSupport::degenerate(1.0).unwrap(),
            1.0,
        )
        .unwrap();
        assert_eq!(
            env.expected(0, Moment::BetaRPowOneMinusGamma),
            env.expected(0, Moment::Beta)
        );
    }

    #[test]
    fn conditions_scalar_discounting() {
        let p = TransitionMatrix::from_rows(&[vec![0.3, 0.7], vec![0.6, 0.4]]).unwrap();
        let mk = |_| StateShocks {
            beta: DiscreteSupport::degenerate(0.95).unwrap(),
            r: DiscreteSupport::degenerate(1.0).unwrap(),
            y: DiscreteSupport::degenerate(1.0).unwrap(),
        };
        let env = MarkovEnvironment::new(p, (0..2).map(mk).collect(), 2.0).unwrap();
        let report = check_conditions(&env).unwrap();
        assert!(close(report.r_pd_beta, 0.95, 1e-10));
        assert!(report.assumption2_ok);
    }

    #[test]
    fn conditions_fail_at_unit_discounting() {
        let env = constant_env(1.0, 1.0, 1.0, 2.0);
        let report = check_conditions(&env).unwrap();
        assert!(!report.assumption2_ok);
    }

    #[test]
    fn detrend_identity_at_zero_growth() {
        let env = constant_env(0.96, 1.02, 1.0, 2.0);
        let u = UtilitySpec::crra(2.0).unwrap();
        let out = env.detrend(&u, 0.0).unwrap();
        assert_eq!(out, env);
    }

    #[test]
    fn detrend_log_utility_keeps_beta() {
        let env = constant_env(0.96, 1.02, 1.0, 1.0);
        let u = UtilitySpec::crra(1.0).unwrap();
        let out = env.detrend(&u, 0.01).unwrap();
        assert_eq!(out.shocks(0).beta.atoms()[0].0, 0.96);
        assert!(close(
            out.shocks(0).r.atoms()[0].0,
            1.02 * (-0.01f64).exp(),
            1e-15
        ));
    }

    #[test]
    fn detrend_shifts_log_return_by_growth() {
        let g = 1.6208e-3;
        let mu: f64 = 6.8011e-3;
        let env = constant_env(0.9913, mu.exp(), 1.0, 2.0);
        let u = UtilitySpec::crra(2.0).unwrap();
        let out = env.detrend(&u, g).unwrap();
        assert!(close(out.shocks(0).r.atoms()[0].0.ln(), mu - g, 1e-12));
    }

    #[test]
    fn detrend_roundtrip_recovers_environment() {
        let env = MarkovEnvironment::single_state(
            DiscreteSupport::new(vec![(0.9, 0.4), (0.97, 0.6)]).unwrap(),
            DiscreteSupport::new(vec![(0.99, 0.5), (1.06, 0.5)]).unwrap(),
            DiscreteSupport::degenerate(1.0).unwrap(),
            2.5,
        )
        .unwrap();
        let u = UtilitySpec::crra(2.5).unwrap();
        let back = env.detrend(&u, 0.02).unwrap().detrend(&u, -0.02).unwrap();
        for z in 0..env.n_states() {
            for (a, b) in env
                .shocks(z)
                .beta
                .atoms()
                .iter()
                .zip(back.shocks(z).beta.atoms())
            {
                assert!(close(a.0, b.0, 1e-12));
            }
            for (a, b) in env.shocks(z).r.atoms().iter().zip(back.shocks(z).r.atoms()) {
                assert!(close(a.0, b.0, 1e-12));
            }
        }
    }

    #[test]
    fn detrend_rejects_non_crra() {
        let env = constant_env(0.96, 1.02, 1.0, 2.0);
        let u = UtilitySpec::pathological_sin_log(2.0, 0.5).unwrap();
        assert!(env.detrend(&u, 0.01).is_err());
    }

    #[test]
    fn json_round_trip() {
        let doc = r#"{
            "gamma": 2.0,
            "P": [[0.9, 0.1], [0.2, 0.8]],
            "states": [
                {"beta": [[0.96, 1.0]], "r": [[1.01, 0.5], [1.03, 0.5]], "y": [[1.0, 1.0]]},
                {"beta": [[0.9, 1.0]], "r": [[0.98, 1.0]], "y": [[0.5, 0.5], [1.5, 0.5]]}
            ]
        }"#;
        let env = MarkovEnvironment::from_json_str(doc).unwrap();
        assert_eq!(env.n_states(), 2);
        assert!(close(env.expected(0, Moment::BetaR), 0.96 * 1.02, 1e-14));
        let back = MarkovEnvironment::from_json_str(&serde_json::to_string(&env).unwrap()).unwrap();
        assert_eq!(back, env);
    }

    #[test]
    fn json_rejects_bad_probabilities() {
        let doc = r#"{
            "gamma": 2.0,
            "P": [[1.0]],
            "states": [{"beta": [[0.96, 0.9]], "r": [[1.0, 1.0]], "y": [[1.0, 1.0]]}]
        }"#;
        assert!(MarkovEnvironment::from_json_str(doc).is_err());
    }
}
