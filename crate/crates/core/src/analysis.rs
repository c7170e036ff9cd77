//! Saving rates and figure-data assembly.
//!
//! The saving rate is the change in net worth divided by total income,
//! `s = 1 - (c/a) / ((R-1)(1 - c/a) + Y/a)`; its wealthy-agent limit
//! replaces c/a by the asymptotic MPC and drops the income term. The figure
//! builders produce the CSV tables behind the calibrated GARCH experiment:
//! regime maps over (gamma, delta), consumption levels and rates across
//! volatility states, and saving-rate curves with explicit gaps at the
//! zero-total-income singularity.

use rayon::prelude::*;
use serde::Serialize;

use crate::ampc::AmpcSolution;
use crate::environment::{MarkovEnvironment, Moment};
use crate::error::Error;
use crate::garch::GarchChain;
use crate::matrix::spectral_radius;
use crate::policy::PolicySolution;
use crate::utility::UtilitySpec;
use crate::Result;

/// Saving rate at finite wealth; `None` marks the removable singularity
/// where total income `(R-1)(a-c) + Y` is exactly zero.
pub fn saving_rate(a: f64, c: f64, r_next: f64, y_next: f64) -> Option<f64> {
    assert!(a > 0.0 && c > 0.0 && c <= a, "need 0 < c <= a");
    assert!(y_next >= 0.0, "income must be nonnegative");
    let rate = c / a;
    let denom = (r_next - 1.0) * (1.0 - rate) + y_next / a;
    if denom == 0.0 {
        None
    } else {
        Some(1.0 - rate / denom)
    }
}

/// Saving rate of an infinitely wealthy agent: 1 when the asymptotic MPC is
/// zero, undefined when it is one (zero savings) or when `r_hat = 1` (zero
/// capital income), otherwise `1 - c_bar / ((r_hat - 1)(1 - c_bar))`.
pub fn asymptotic_saving_rate(c_bar: f64, r_hat: f64) -> Option<f64> {
    assert!((0.0..=1.0).contains(&c_bar), "c_bar must lie in [0, 1]");
    if c_bar == 0.0 {
        return Some(1.0);
    }
    if c_bar == 1.0 || r_hat == 1.0 {
        return None;
    }
    Some(1.0 - c_bar / ((r_hat - 1.0) * (1.0 - c_bar)))
}

/// Asymptotic saving-rate verdict for the constant-coefficient case with
/// `beta R < 1 < R`: the rate is always negative there, equivalently
/// `(beta R)^(1/gamma) < 1`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BewleyVerdict {
    pub c_bar: f64,
    pub saving_rate: f64,
    /// `(beta R)^(1/gamma)`; below 1 exactly when the rate is negative.
    pub condition_value: f64,
}

pub fn check_bewley_sign(beta: f64, r: f64, gamma: f64) -> Result<BewleyVerdict> {
    if !(beta * r < 1.0 && r > 1.0 && gamma > 0.0) {
        return Err(Error::precondition(format!(
            "need beta R < 1 < R and gamma > 0, got beta = {beta}, R = {r}, gamma = {gamma}"
        )));
    }
    let b = beta * r.powf(1.0 - gamma); // < 1 because beta R < 1 and R > 1
    let c_bar = 1.0 - b.powf(1.0 / gamma);
    let s = asymptotic_saving_rate(c_bar, r)
        .expect("interior c_bar with R > 1 has a defined saving rate");
    Ok(BewleyVerdict {
        c_bar,
        saving_rate: s,
        condition_value: (beta * r).powf(1.0 / gamma),
    })
}

/// Expected wealth growth factor `E R (1 - c_bar)` of an infinitely wealthy
/// agent in an iid single-state environment; at `r_hat = E R` the asymptotic
/// saving rate is nonpositive exactly when this is at most 1.
pub fn expected_growth_check(env: &MarkovEnvironment, c_bar: f64) -> Result<f64> {
    if env.n_states() != 1 {
        return Err(Error::precondition(
            "expected_growth_check applies to iid single-state environments",
        ));
    }
    if !(0.0..=1.0).contains(&c_bar) {
        return Err(Error::precondition("c_bar must lie in [0, 1]"));
    }
    Ok(
        env.expected(0, Moment::BetaR) / env.expected(0, Moment::Beta).max(f64::MIN_POSITIVE)
            * (1.0 - c_bar),
    )
}

/// Asymptotic-MPC regime of one (gamma, delta) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// r(PD_{beta R}) >= 1: the problem itself has no solution.
    NoSolution,
    /// r(PD_{beta R^(1-gamma)}) < 1: positive asymptotic MPCs.
    PositiveMpc,
    /// r(PD_{beta R^(1-gamma)}) >= 1: zero asymptotic MPCs.
    ZeroMpc,
}

impl Regime {
    pub fn label(self) -> &'static str {
        match self {
            Regime::NoSolution => "no-solution",
            Regime::PositiveMpc => "positive-mpc",
            Regime::ZeroMpc => "zero-mpc",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Fig1Row {
    pub gamma: f64,
    pub delta: f64,
    pub r_beta_r: f64,
    pub r_beta_r_1mg: f64,
    pub regime: Regime,
}

/// One regime-map cell: discount rate delta (so beta = e^(-delta)), risk
/// aversion gamma, growth-detrended chain returns.
pub fn figure1_cell(chain: &GarchChain, g: f64, gamma: f64, delta: f64) -> Result<Fig1Row> {
    let beta = (-delta).exp();
    let u = UtilitySpec::crra(gamma)?;
    let env = chain.to_environment(beta, gamma, 1.0)?.detrend(&u, g)?;
    let radius = |m: Moment| -> Result<f64> {
        let d = env.moment_diagonal(m)?;
        let diag: Vec<f64> = (0..env.n_states()).map(|z| d.get(z, z)).collect();
        Ok(spectral_radius(&env.transition().mul_diag(&diag)?))
    };
    let r_beta_r = radius(Moment::BetaR)?;
    let r_beta_r_1mg = radius(Moment::BetaRPowOneMinusGamma)?;
    let regime = if r_beta_r >= 1.0 {
        Regime::NoSolution
    } else if r_beta_r_1mg < 1.0 {
        Regime::PositiveMpc
    } else {
        Regime::ZeroMpc
    };
    Ok(Fig1Row {
        gamma,
        delta,
        r_beta_r,
        r_beta_r_1mg,
        regime,
    })
}

/// Regime map over a (gamma, delta) grid; cells are independent and run in
/// parallel in a fixed order.
pub fn figure1_table(
    chain: &GarchChain,
    g: f64,
    gammas: &[f64],
    deltas: &[f64],
) -> Result<Vec<Fig1Row>> {
    let cells: Vec<(f64, f64)> = gammas
        .iter()
        .flat_map(|&ga| deltas.iter().map(move |&de| (ga, de)))
        .collect();
    cells
        .into_par_iter()
        .map(|(ga, de)| figure1_cell(chain, g, ga, de))
        .collect()
}

/// Evenly spaced parameter axis, endpoints included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// A solved calibration case feeding the per-gamma figure tables.
pub struct SolvedCase<'a> {
    pub gamma: f64,
    pub ampc: &'a AmpcSolution,
    pub policy: &'a PolicySolution,
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Volatility-state representatives: the states with innovation exactly
/// zero, one per variance level, labeled by their variance.
fn vol_states(chain: &GarchChain) -> Vec<(usize, usize, f64)> {
    let mid = chain.eps_grid.len() / 2;
    (0..chain.v_grid.len())
        .map(|m| (m, chain.state_index(m, mid), chain.v_grid[m]))
        .collect()
}

/// Consumption levels c(a, z) across volatility states at zero innovation.
pub fn figure2_csv(chain: &GarchChain, cases: &[SolvedCase]) -> Result<String> {
    let mut out = String::from("gamma,vol_level,sigma2,a,c\n");
    for case in cases {
        if case.policy.c.len() != chain.n_states() {
            return Err(Error::invalid("policy states do not match the chain"));
        }
        for &(m, z, v) in &vol_states(chain) {
            for (i, &a) in case.policy.grid.points().iter().enumerate() {
                out.push_str(&format!(
                    "{},{m},{},{},{}\n",
                    fmt(case.gamma),
                    fmt(v),
                    fmt(a),
                    fmt(case.policy.c[z][i])
                ));
            }
        }
    }
    Ok(out)
}

/// Consumption rates c(a, z)/a with the theoretical asymptotic MPC level.
pub fn figure3_csv(chain: &GarchChain, cases: &[SolvedCase]) -> Result<String> {
    let mut out = String::from("gamma,vol_level,sigma2,a,c_over_a,c_bar_theory\n");
    for case in cases {
        if case.policy.c.len() != chain.n_states() {
            return Err(Error::invalid("policy states do not match the chain"));
        }
        for &(m, z, v) in &vol_states(chain) {
            let c_bar = case.ampc.c_bar[z];
            for (i, &a) in case.policy.grid.points().iter().enumerate() {
                out.push_str(&format!(
                    "{},{m},{},{},{},{}\n",
                    fmt(case.gamma),
                    fmt(v),
                    fmt(a),
                    fmt(case.policy.c[z][i] / a),
                    fmt(c_bar)
                ));
            }
        }
    }
    Ok(out)
}

/// Saving rates holding the variance state fixed and the next innovation at
/// zero, with detrended unit income; singular points (zero total income)
/// are emitted as explicit gaps (empty field).
pub fn figure4_csv(chain: &GarchChain, g: f64, cases: &[SolvedCase]) -> Result<String> {
    let mut out = String::from("gamma,vol_level,sigma2,a,saving_rate\n");
    for case in cases {
        if case.policy.c.len() != chain.n_states() {
            return Err(Error::invalid("policy states do not match the chain"));
        }
        for &(m, z, v) in &vol_states(chain) {
            // same variance next period, zero innovation, detrended return
            let r_hat = (chain.spec.mu - g - chain.v_grid[m] / 2.0).exp();
            for (i, &a) in case.policy.grid.points().iter().enumerate() {
                let s = saving_rate(a, case.policy.c[z][i], r_hat, 1.0);
                let cell = s.map(fmt).unwrap_or_default();
                out.push_str(&format!(
                    "{},{m},{},{},{cell}\n",
                    fmt(case.gamma),
                    fmt(v),
                    fmt(a)
                ));
            }
        }
    }
    Ok(out)
}

/// Figure-1 CSV over the given axes.
pub fn figure1_csv(chain: &GarchChain, g: f64, gammas: &[f64], deltas: &[f64]) -> Result<String> {
    let rows = figure1_table(chain, g, gammas, deltas)?;
    let mut out = String::from("gamma,delta,r_beta_r,r_beta_r_1mg,regime\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt(r.gamma),
            fmt(r.delta),
            fmt(r.r_beta_r),
            fmt(r.r_beta_r_1mg),
            r.regime.label()
        ));
    }
    Ok(out)
}

/// All four figure tables for a calibrated chain.
pub struct FigureBundle {
    pub fig1: String,
    pub fig2: String,
    pub fig3: String,
    pub fig4: String,
}

pub fn emit_figures(
    chain: &GarchChain,
    g: f64,
    cases: &[SolvedCase],
    gammas: &[f64],
    deltas: &[f64],
) -> Result<FigureBundle> {
    Ok(FigureBundle {
        fig1: figure1_csv(chain, g, gammas, deltas)?,
        fig2: figure2_csv(chain, cases)?,
        fig3: figure3_csv(chain, cases)?,
        fig4: figure4_csv(chain, g, cases)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::DiscreteSupport;
    use crate::garch::{build_chain, GarchSpec};
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0_f64).max(a.abs().max(b.abs()))
    }

    #[test]
    fn saving_rate_constrained_agent() {
        // c = a: total income is just Y, so s = 1 - a / Y
        for a in [0.25, 1.0, 3.0] {
            let s = saving_rate(a, a, 1.07, 1.0).unwrap();
            assert!(close(s, 1.0 - a, 1e-14));
        }
    }

    #[test]
    fn saving_rate_direct_arithmetic_two_routes() {
        let (a, c, r, y) = (1.0, 0.5, 1.04, 0.1);
        let s = saving_rate(a, c, r, y).unwrap();
        assert!(close(s, 1.0 - 0.5 / 0.12, 1e-12));
        // second route: (a' - a) / total income
        let a_next = r * (a - c) + y;
        let total = (r - 1.0) * (a - c) + y;
        assert!(close(s, (a_next - a) / total, 1e-12));
    }

    #[test]
    fn saving_rate_approaches_one_as_consumption_vanishes() {
        let s = saving_rate(1e6, 1e-8, 1.05, 1.0).unwrap();
        assert!(close(s, 1.0, 1e-6));
    }

    #[test]
    fn saving_rate_singularity_is_a_gap() {
        // (R-1)(a-c) + Y = 0 exactly: R < 1 with matching income
        let (a, c) = (2.0, 1.0);
        let r = 0.5;
        let y = 0.5; // (0.5-1)*(1) + 0.5 = 0
        assert_eq!(saving_rate(a, c, r, y), None);
    }

    #[test]
    fn asymptotic_rate_limits() {
        assert_eq!(asymptotic_saving_rate(0.0, 1.05), Some(1.0));
        assert_eq!(asymptotic_saving_rate(1.0, 1.05), None);
        assert_eq!(asymptotic_saving_rate(0.5, 1.0), None);
        // continuity toward 1 as c_bar -> 0+
        let s = asymptotic_saving_rate(1e-9, 1.05).unwrap();
        assert!(s < 1.0 && s > 1.0 - 1e-6);
    }

    #[test]
    fn bewley_rate_is_negative() {
        let v = check_bewley_sign(0.96, 1.02, 2.0).unwrap();
        assert!(v.saving_rate < 0.0);
        assert!(v.condition_value < 1.0);

        let v = check_bewley_sign(0.99, 1.0099, 5.0).unwrap();
        assert!(v.saving_rate < 0.0);

        // beta R -> 1 from below: the rate tends to 0 from below
        let v = check_bewley_sign(1.0 / 1.02 - 1e-6, 1.02, 2.0).unwrap();
        assert!(v.saving_rate < 0.0 && v.saving_rate > -1e-4);
    }

    #[test]
    fn bewley_rejects_inadmissible_triples() {
        assert!(check_bewley_sign(0.97, 1.02, 2.0).is_ok());
        assert!(check_bewley_sign(0.999, 1.002, 0.0).is_err());
        assert!(check_bewley_sign(0.9, 0.99, 2.0).is_err()); // R <= 1
        assert!(check_bewley_sign(1.0, 1.01, 2.0).is_err()); // beta R >= 1
    }

    #[test]
    fn growth_check_limits_and_sign_equivalence() {
        let env = MarkovEnvironment::single_state(
            DiscreteSupport::degenerate(0.95).unwrap(),
            DiscreteSupport::new(vec![(1.01, 0.5), (1.05, 0.5)]).unwrap(),
            DiscreteSupport::degenerate(1.0).unwrap(),
            2.0,
        )
        .unwrap();
        let er = 0.5 * (1.01 + 1.05);
        assert!(close(expected_growth_check(&env, 0.0).unwrap(), er, 1e-12));
        assert!(close(expected_growth_check(&env, 1.0).unwrap(), 0.0, 1e-12));

        // Prop-6 instance: growth factor <= 1 iff rate at R_hat = E R nonpositive
        let b = 0.95 * (1.01f64.powf(-1.0) * 0.5 + 1.05f64.powf(-1.0) * 0.5);
        let c_bar = 1.0 - b.powf(0.5);
        let growth = expected_growth_check(&env, c_bar).unwrap();
        let s = asymptotic_saving_rate(c_bar, er).unwrap();
        assert_eq!(growth <= 1.0, s <= 0.0);
    }

    #[test]
    fn figure1_regime_boundary_for_calibrated_chain() {
        let spec = GarchSpec::new(9.1297e-5, 0.8354, 0.1188, 6.8011e-3).unwrap();
        let chain = build_chain(&spec, 7, 3).unwrap();
        let g = 1.6208e-3;
        let delta = -(0.9913f64.ln());
        let low = figure1_cell(&chain, g, 2.0, delta).unwrap();
        let high = figure1_cell(&chain, g, 4.0, delta).unwrap();
        assert_eq!(low.regime, Regime::PositiveMpc, "gamma=2: {low:?}");
        assert_eq!(high.regime, Regime::ZeroMpc, "gamma=4: {high:?}");
        assert!(low.r_beta_r_1mg < 1.0);
        assert!(high.r_beta_r_1mg >= 1.0);
    }

    #[test]
    fn figure1_table_covers_the_grid() {
        let spec = GarchSpec::new(9.1297e-5, 0.8354, 0.1188, 6.8011e-3).unwrap();
        let chain = build_chain(&spec, 3, 2).unwrap();
        let gammas = linspace(1.0, 6.0, 4);
        let deltas = linspace(0.005 / 12.0, 0.3 / 12.0, 3);
        let rows = figure1_table(&chain, 1.6208e-3, &gammas, &deltas).unwrap();
        assert_eq!(rows.len(), 12);
        let csv = figure1_csv(&chain, 1.6208e-3, &gammas, &deltas).unwrap();
        assert_eq!(csv.lines().count(), 13);
        assert!(csv.starts_with("gamma,delta,"));
    }

    proptest! {
        #[test]
        fn saving_rate_scale_invariant(
            a in 0.1f64..100.0,
            crate_frac in 0.01f64..1.0,
            r in 0.8f64..1.2,
            y in 0.0f64..5.0,
            lambda in 0.01f64..100.0,
        ) {
            let c = crate_frac * a;
            let base = saving_rate(a, c, r, y);
            let scaled = saving_rate(lambda * a, lambda * c, r, lambda * y);
            match (base, scaled) {
                (Some(s1), Some(s2)) => prop_assert!((s1 - s2).abs() <= 1e-9 * (1.0 + s1.abs())),
                _ => {}
            }
        }
    }
}
