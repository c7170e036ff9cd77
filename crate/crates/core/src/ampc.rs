//! Asymptotic marginal propensities to consume.
//!
//! The consumption function of the income fluctuation problem is
//! asymptotically linear when marginal utility is regularly varying, and the
//! per-state slopes are determined by the fixed point of the monotone map
//!
//! ```text
//! (Fx)(z) = (1 + (K x)(z)^(1/gamma))^gamma,     K = P D_{beta R^(1-gamma)},
//! ```
//!
//! with `c_bar(z) = x*(z)^(-1/gamma)`. A fixed point exists iff r(K) < 1;
//! when some irreducible block of K with radius >= 1 is reachable from z the
//! iterates diverge and c_bar(z) = 0, and c_bar(z) = 1 exactly when row z of
//! K vanishes (next-period discounted returns are almost surely zero).
//!
//! States are classified *before* any iteration: the graph structure of K
//! decides divergence exactly, so the numeric loop only ever runs on blocks
//! where monotone convergence is guaranteed.

use serde::Serialize;

use crate::environment::MarkovEnvironment;
use crate::error::Error;
use crate::matrix::{decompose_blocks, solve_linear_neumann, spectral_radius, NonnegMatrix};
use crate::utility::UtilitySpec;
use crate::Result;

/// Classes with spectral radius within this distance of 1 are treated as
/// divergent (the boundary case r = 1 diverges, and a conservative tie keeps
/// the iteration away from near-unit contraction moduli).
const RADIUS_TIE: f64 = 1e-10;

/// Per-state asymptotic MPC regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Classification {
    /// c_bar = 1: next-period `beta R` vanishes almost surely.
    One,
    /// c_bar in (0, 1): finite fixed-point value.
    Interior,
    /// c_bar = 0: a divergent block is reachable.
    Zero,
}

/// Solution of the asymptotic-MPC fixed point problem.
#[derive(Debug, Clone, Serialize)]
pub struct AmpcSolution {
    /// Fixed-point values in [1, +inf]; divergent states store
    /// `f64::INFINITY` (serialized as null).
    pub x_star: Vec<f64>,
    /// Asymptotic MPCs: exactly 0 for Zero states, exactly 1 for One states.
    pub c_bar: Vec<f64>,
    pub classification: Vec<Classification>,
    /// Spectral radius of K = P D_{beta R^(1-gamma)}.
    pub r_pd: f64,
    /// Fixed-point iterations from the lower seed.
    pub iterations: usize,
    pub converged: bool,
}

/// phi(t) = (1 + t^(1/gamma))^gamma evaluated in log space so that large
/// pre-convergence iterates cannot overflow prematurely.
fn phi(t: f64, gamma: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    if t.is_infinite() {
        return f64::INFINITY;
    }
    let u = t.ln() / gamma;
    let ln_phi = if u > 0.0 {
        gamma * (u + (-u).exp().ln_1p())
    } else {
        gamma * u.exp().ln_1p()
    };
    ln_phi.exp()
}

fn apply_f_matrix(k: &NonnegMatrix, gamma: f64, x: &[f64]) -> Vec<f64> {
    let n = k.n();
    let mut out = Vec::with_capacity(n);
    for z in 0..n {
        let row = k.row(z);
        let mut acc = 0.0f64;
        for (j, &w) in row.iter().enumerate() {
            if w > 0.0 {
                if x[j].is_infinite() {
                    acc = f64::INFINITY;
                    break;
                }
                acc += w * x[j];
            }
        }
        out.push(phi(acc, gamma));
    }
    out
}

/// One application of the map F to a vector of per-state values in
/// `[1, +inf]`. Entries reached with positive weight that are infinite make
/// the output infinite.
pub fn apply_f(env: &MarkovEnvironment, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != env.n_states() {
        return Err(Error::invalid("x length must match state count"));
    }
    let k = env.k_matrix()?;
    Ok(apply_f_matrix(&k, env.gamma(), x))
}

/// Exact classification of every state: One on zero rows of K, Zero when a
/// block with radius >= 1 is reachable (in one or more steps), Interior
/// otherwise.
pub fn classify_states(env: &MarkovEnvironment) -> Result<Vec<Classification>> {
    let k = env.k_matrix()?;
    Ok(classify_matrix(&k))
}

fn classify_matrix(k: &NonnegMatrix) -> Vec<Classification> {
    let n = k.n();
    let blocks = decompose_blocks(k);
    let bad: Vec<usize> = blocks
        .class_spectral_radii
        .iter()
        .enumerate()
        .filter(|&(_, &r)| r >= 1.0 - RADIUS_TIE)
        .map(|(j, _)| j)
        .collect();
    (0..n)
        .map(|z| {
            if k.row(z).iter().all(|&w| w == 0.0) {
                Classification::One
            } else if bad.iter().any(|&j| blocks.reach[z][j]) {
                Classification::Zero
            } else {
                Classification::Interior
            }
        })
        .collect()
}

/// Monotone fixed-point iteration with an error estimate from the empirical
/// contraction ratio: stops once both the relative step and the estimated
/// distance to the limit fall below `tol`.
fn iterate_f(
    k: &NonnegMatrix,
    gamma: f64,
    mut x: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)> {
    let mut prev_change = f64::INFINITY;
    for it in 1..=max_iter {
        let next = apply_f_matrix(k, gamma, &x);
        let mut change = 0.0f64;
        for (a, b) in x.iter().zip(&next) {
            change = change.max((a - b).abs() / b.max(1.0));
        }
        x = next;
        if change == 0.0 {
            return Ok((x, it));
        }
        if change < tol {
            let ratio = (change / prev_change).clamp(0.0, 0.999);
            if change * ratio / (1.0 - ratio) < tol {
                return Ok((x, it));
            }
        }
        prev_change = change;
    }
    Err(Error::numerical(format!(
        "fixed-point iteration did not converge within {max_iter} steps"
    )))
}

/// Classify, then solve the fixed point on the convergent block from both
/// the lower seed x = 1 and an affine-bound upper seed, confirming the two
/// limits agree (uniqueness check).
pub fn solve_fixed_point(env: &MarkovEnvironment) -> Result<AmpcSolution> {
    let gamma = env.gamma();
    let k = env.k_matrix()?;
    let r_pd = spectral_radius(&k);
    let classification = classify_matrix(&k);
    let n = env.n_states();

    let mut x_star = vec![1.0; n];
    let mut c_bar = vec![1.0; n];
    for z in 0..n {
        if classification[z] == Classification::Zero {
            x_star[z] = f64::INFINITY;
            c_bar[z] = 0.0;
        }
    }

    // the One/Interior block closes under K: an Interior state never puts
    // positive weight on a Zero state (it would be Zero itself)
    let live: Vec<usize> = (0..n)
        .filter(|&z| classification[z] != Classification::Zero)
        .collect();
    let mut iterations = 0usize;
    if classification.contains(&Classification::Interior) {
        let ks = k.submatrix(&live);
        let r_s = spectral_radius(&ks);

        let (x_lo, iters) = iterate_f(&ks, gamma, vec![1.0; live.len()], 1e-12, 1_000_000)?;
        iterations = iters;

        // upper seed v0 = (I - a K)^(-1) b 1 with phi(t) <= a t + b
        let target_a = if gamma <= 1.0 {
            1.0
        } else {
            ((1.0 + 1.0 / r_s.max(1e-12)) / 2.0).min(2.0)
        };
        let (a, b) = affine_bound_params(gamma, target_a)?;
        let v0 = solve_linear_neumann(&ks.scaled(a), &vec![b; live.len()])?;
        let (x_hi, _) = iterate_f(&ks, gamma, v0, 1e-12, 1_000_000)?;

        for (i, (&lo, &hi)) in x_lo.iter().zip(&x_hi).enumerate() {
            if (lo - hi).abs() > 1e-9 * lo.max(1.0) {
                return Err(Error::numerical(format!(
                    "fixed-point limits from the two seeds disagree at state {}: {lo} vs {hi}",
                    live[i]
                )));
            }
        }

        for (i, &z) in live.iter().enumerate() {
            if classification[z] == Classification::Interior {
                x_star[z] = x_lo[i];
                c_bar[z] = x_lo[i].powf(-1.0 / gamma);
            }
        }
    }

    Ok(AmpcSolution {
        x_star,
        c_bar,
        classification,
        r_pd,
        iterations,
        converged: true,
    })
}

/// Whether the asymptotic-MPC limit (not just the upper bound) is guaranteed
/// by the sufficient conditions: CRRA with r(K) < 1, or bounded RRA with the
/// max_z E_z beta R max{R^(-gl), R^(-gu)} condition below 1.
pub fn limit_guaranteed(env: &MarkovEnvironment, utility: &UtilitySpec) -> Result<bool> {
    if utility.is_crra() {
        let r = spectral_radius(&env.k_matrix()?);
        Ok(r < 1.0)
    } else {
        let (gl, gu) = utility.rra_bounds();
        Ok(env.brra_condition_value(gl, gu) < 1.0)
    }
}

/// Log-utility closed form: x* = (I - P D_beta)^(-1) 1 and
/// c_bar = 1 / x*, always strictly positive.
pub fn closed_form_gamma1(env: &MarkovEnvironment) -> Result<Vec<f64>> {
    if (env.gamma() - 1.0).abs() > 1e-12 {
        return Err(Error::precondition(format!(
            "closed_form_gamma1 requires gamma = 1, got {}",
            env.gamma()
        )));
    }
    let d = env.moment_diagonal(crate::environment::Moment::Beta)?;
    let diag: Vec<f64> = (0..env.n_states()).map(|z| d.get(z, z)).collect();
    let pd = env.transition().mul_diag(&diag)?;
    if spectral_radius(&pd) >= 1.0 {
        return Err(Error::precondition(
            "closed_form_gamma1 requires r(PD_beta) < 1",
        ));
    }
    let x = solve_linear_neumann(&pd, &vec![1.0; env.n_states()])?;
    Ok(x.iter().map(|v| 1.0 / v).collect())
}

/// Constant-discounting lognormal-return closed form: with discount rate
/// `delta_rate`, log return mean `mu - sigma^2/2` and standard deviation
/// `sigma`, the asymptotic MPC is `1 - exp(-psi delta - (1-psi)(mu - gamma
/// sigma^2/2))` with `psi = 1/gamma` when `delta_rate` exceeds
/// `(1-gamma)(mu - gamma sigma^2/2)`, and 0 otherwise.
pub fn closed_form_lognormal(gamma: f64, delta_rate: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::precondition(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    if !(delta_rate > mu) {
        return Err(Error::precondition(format!(
            "lognormal closed form requires delta_rate > mu, got {delta_rate} <= {mu}"
        )));
    }
    let m = mu - gamma * sigma * sigma / 2.0;
    if delta_rate > (1.0 - gamma) * m {
        let psi = 1.0 / gamma;
        Ok(1.0 - (-psi * delta_rate - (1.0 - psi) * m).exp())
    } else {
        Ok(0.0)
    }
}

/// Parameters (a, b) with phi(t) = (1 + t^(1/gamma))^gamma <= a t + b for
/// all t >= 0. For gamma <= 1 the pair (1, 1) works; for gamma > 1 the
/// tangent line at the point u where phi'(u) = target_a is used (phi is
/// concave there), and any target_a > 1 is attainable since phi' decreases
/// to 1 from above.
pub fn affine_bound_params(gamma: f64, target_a: f64) -> Result<(f64, f64)> {
    if gamma <= 1.0 {
        return Ok((1.0, 1.0));
    }
    if target_a <= 1.0 {
        return Err(Error::precondition(
            "for gamma > 1, phi'(t) > 1 everywhere: target_a must exceed 1",
        ));
    }
    // phi'(u) = (u^(-1/gamma) + 1)^(gamma-1) = target_a
    let root = target_a.powf(1.0 / (gamma - 1.0)) - 1.0;
    let u = root.powf(-gamma);
    let b = (phi(u, gamma) - target_a * u).max(0.0);
    Ok((target_a, b))
}
