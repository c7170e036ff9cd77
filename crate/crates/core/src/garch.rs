//! GARCH(1,1) return processes: discretization into a finite Markov chain
//! with exact conditional moments, and maximum-likelihood estimation from a
//! returns series.
//!
//! The chain lives on a product grid (variance level) x (innovation level).
//! Variance transitions split the deterministic update
//! `v_hat = omega + alpha eps^2 + rho v` linearly between the two bracketing
//! grid points, which makes the conditional mean of the variance exact.
//! Innovation probabilities match the conditional mean (zero) and variance
//! (`v_hat`) exactly: a closed form for a 3-point grid, a maximum-entropy
//! exponential tilt of a Gaussian base solved by damped Newton otherwise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::environment::{DiscreteSupport, MarkovEnvironment, StateShocks};
use crate::error::Error;
use crate::matrix::TransitionMatrix;
use crate::Result;

/// GARCH(1,1) parameters: variance recursion
/// `v_t = omega + alpha eps_{t-1}^2 + rho v_{t-1}`, log return
/// `log R_t = mu - v_t/2 + eps_t` so that `E R_t = e^mu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarchSpec {
    pub omega: f64,
    pub alpha: f64,
    pub rho: f64,
    pub mu: f64,
}

impl GarchSpec {
    pub fn new(omega: f64, alpha: f64, rho: f64, mu: f64) -> Result<Self> {
        let spec = GarchSpec {
            omega,
            alpha,
            rho,
            mu,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.alpha > 0.0 && self.rho > 0.0) {
            return Err(Error::invalid(format!(
                "omega, alpha, rho must be positive, got ({}, {}, {})",
                self.omega, self.alpha, self.rho
            )));
        }
        if !(self.alpha + self.rho < 1.0) {
            return Err(Error::invalid(format!(
                "stationarity requires alpha + rho < 1, got {}",
                self.alpha + self.rho
            )));
        }
        if !self.mu.is_finite() {
            return Err(Error::invalid("mu must be finite"));
        }
        Ok(())
    }

    /// Unconditional variance omega / (1 - alpha - rho).
    pub fn stationary_variance(&self) -> f64 {
        self.omega / (1.0 - self.alpha - self.rho)
    }
}

/// Shifted exponential grid: N points on [a, b] whose logs (after shifting
/// by s = (c^2 - ab)/(a + b - 2c)) are evenly spaced, so that the median
/// point of an odd-length grid lands exactly on c. Valid for
/// c in (a, (a+b)/2).
pub fn exp_grid(a: f64, b: f64, c: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::invalid("exp_grid needs at least 2 points"));
    }
    if !(a < c && c < (a + b) / 2.0) {
        return Err(Error::invalid(format!(
            "exp_grid median {c} outside the validity region ({a}, {})",
            (a + b) / 2.0
        )));
    }
    let s = (c * c - a * b) / (a + b - 2.0 * c);
    let lo = (a + s).ln();
    let hi = (b + s).ln();
    let step = (hi - lo) / (n - 1) as f64;
    let mut grid = Vec::with_capacity(n);
    for i in 0..n {
        grid.push((lo + i as f64 * step).exp() - s);
    }
    grid[0] = a;
    grid[n - 1] = b;
    Ok(grid)
}

/// Variance and innovation grids sized so that the variance recursion never
/// leaves the grid and the innovation variance stays matchable:
/// `eps_bar = k sqrt(omega/(1-alpha-rho))` with
/// `k = sqrt(1 + N_eps (1-rho)(1 + rho/alpha))`, innovations evenly spaced
/// and centered at zero, variances exponentially spaced on
/// `[omega, (1 + N_eps (alpha+rho)) omega/(1-alpha-rho)]` with the
/// stationary variance as the exact median point.
pub fn build_grids(spec: &GarchSpec, n_eps: usize, n_v: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    spec.validate()?;
    if n_eps < 3 || n_eps % 2 == 0 {
        return Err(Error::invalid(format!(
            "n_eps must be odd and at least 3, got {n_eps}"
        )));
    }
    if n_v < 2 {
        return Err(Error::invalid(format!("n_v must be at least 2, got {n_v}")));
    }
    let stat_var = spec.stationary_variance();
    let k = (1.0 + n_eps as f64 * (1.0 - spec.rho) * (1.0 + spec.rho / spec.alpha)).sqrt();
    let eps_bar = k * stat_var.sqrt();

    // symmetric construction keeps the middle point exactly zero
    let half = (n_eps - 1) / 2;
    let step = eps_bar / half as f64;
    let mut eps_grid = Vec::with_capacity(n_eps);
    for i in 0..n_eps {
        eps_grid.push((i as f64 - half as f64) * step);
    }
    eps_grid[0] = -eps_bar;
    eps_grid[n_eps - 1] = eps_bar;

    let v_hi = (1.0 + n_eps as f64 * (spec.alpha + spec.rho)) * stat_var;
    let v_grid = exp_grid(spec.omega, v_hi, stat_var, n_v)?;
    Ok((v_grid, eps_grid))
}

/// Innovation probabilities on a symmetric grid matching mean 0 and
/// variance `v_hat` exactly. Closed form on 3 points; otherwise a Gaussian
/// base tilted by exp(lambda eps^2) with lambda solved by damped Newton.
fn innovation_probs(eps_grid: &[f64], v_hat: f64) -> Result<Vec<f64>> {
    let n = eps_grid.len();
    let eps_bar = eps_grid[n - 1];
    if n == 3 {
        let p = v_hat / (2.0 * eps_bar * eps_bar);
        if !(p > 0.0 && p < 0.5) {
            return Err(Error::numerical(format!(
                "3-point innovation weight {p} outside (0, 1/2): grid sizing bug"
            )));
        }
        return Ok(vec![p, 1.0 - 2.0 * p, p]);
    }
    if !(v_hat < eps_bar * eps_bar) {
        return Err(Error::numerical(
            "target variance at or above eps_bar^2 cannot be tilted onto the grid",
        ));
    }

    // weights q_i proportional to exp((lambda - 1/(2 v_hat)) eps_i^2)
    let weights = |lambda: f64| -> Vec<f64> {
        let coef = lambda - 1.0 / (2.0 * v_hat);
        let exponents: Vec<f64> = eps_grid.iter().map(|&e| coef * e * e).collect();
        let m = exponents.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut q: Vec<f64> = exponents.iter().map(|&e| (e - m).exp()).collect();
        let total: f64 = q.iter().sum();
        q.iter_mut().for_each(|v| *v /= total);
        q
    };
    let moment = |q: &[f64]| -> (f64, f64) {
        let m2: f64 = q.iter().zip(eps_grid).map(|(&p, &e)| p * e * e).sum();
        let m4: f64 = q
            .iter()
            .zip(eps_grid)
            .map(|(&p, &e)| p * e * e * e * e)
            .sum();
        (m2, m4)
    };

    let tol = (1e-13 * v_hat).max(1e-17);
    let mut lambda = 0.0f64;
    let mut q = weights(lambda);
    let (mut m2, mut m4) = moment(&q);
    for _ in 0..200 {
        let f = m2 - v_hat;
        if f.abs() <= tol {
            return Ok(q);
        }
        let deriv = m4 - m2 * m2; // Var_q(eps^2) > 0
        let mut step = -f / deriv;
        // damp: halve until the residual actually shrinks
        for _ in 0..60 {
            let cand = weights(lambda + step);
            let (c2, c4) = moment(&cand);
            if (c2 - v_hat).abs() < f.abs() {
                lambda += step;
                q = cand;
                m2 = c2;
                m4 = c4;
                break;
            }
            step *= 0.5;
        }
    }
    if (m2 - v_hat).abs() <= 1e-12 * v_hat.max(1.0) {
        return Ok(q);
    }
    Err(Error::numerical(format!(
        "innovation tilt did not converge: residual {}",
        m2 - v_hat
    )))
}

/// One transition row from state (m, n): the variance update
/// `v_hat = omega + alpha eps_n^2 + rho v_m` split between its bracketing
/// grid points, crossed with the innovation weights for variance `v_hat`.
/// States are indexed row-major, variance-major: (m, n) -> m * N_eps + n.
pub fn transition_row(
    spec: &GarchSpec,
    v_grid: &[f64],
    eps_grid: &[f64],
    m: usize,
    n: usize,
) -> Result<Vec<f64>> {
    let n_v = v_grid.len();
    let n_eps = eps_grid.len();
    let mut v_hat = spec.omega + spec.alpha * eps_grid[n] * eps_grid[n] + spec.rho * v_grid[m];
    let v_max = v_grid[n_v - 1];
    if v_hat > v_max {
        if v_hat > v_max * (1.0 + 1e-9) {
            return Err(Error::numerical(format!(
                "variance update {v_hat} escapes the grid top {v_max}: grid sizing bug"
            )));
        }
        v_hat = v_max; // containment holds with equality at the top corner
    }
    if v_hat < v_grid[0] {
        return Err(Error::numerical(format!(
            "variance update {v_hat} below the grid bottom {}: grid sizing bug",
            v_grid[0]
        )));
    }

    let hi = v_grid.partition_point(|&v| v < v_hat).min(n_v - 1).max(1);
    let lo = hi - 1;
    let theta = (v_hat - v_grid[lo]) / (v_grid[hi] - v_grid[lo]);
    let q = innovation_probs(eps_grid, v_hat)?;

    let mut row = vec![0.0; n_v * n_eps];
    for (j, &qj) in q.iter().enumerate() {
        row[lo * n_eps + j] = (1.0 - theta) * qj;
        row[hi * n_eps + j] = theta * qj;
    }
    Ok(row)
}

/// Discretized GARCH(1,1) chain over (variance, innovation) product states.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GarchChain {
    pub spec: GarchSpec,
    pub v_grid: Vec<f64>,
    pub eps_grid: Vec<f64>,
    #[serde(rename = "P")]
    pub p: TransitionMatrix,
    /// Gross return of each state, exp(mu - v/2 + eps) at that state's own
    /// (v, eps).
    pub returns: Vec<f64>,
}

impl GarchChain {
    #[inline]
    pub fn n_states(&self) -> usize {
        self.v_grid.len() * self.eps_grid.len()
    }

    #[inline]
    pub fn state_index(&self, m: usize, n: usize) -> usize {
        m * self.eps_grid.len() + n
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::invalid(format!("chain JSON: {e}")))
    }

    /// Wrap the chain as a Markov environment with constant discount factor
    /// `beta` and constant income.
    pub fn to_environment(&self, beta: f64, gamma: f64, income: f64) -> Result<MarkovEnvironment> {
        let shocks: Result<Vec<StateShocks>> = self
            .returns
            .iter()
            .map(|&r| {
                Ok(StateShocks {
                    beta: DiscreteSupport::degenerate(beta)?,
                    r: DiscreteSupport::degenerate(r)?,
                    y: DiscreteSupport::degenerate(income)?,
                })
            })
            .collect();
        MarkovEnvironment::new(self.p.clone(), shocks?, gamma)
    }
}

/// Assemble the full chain: grids, all transition rows, per-state returns.
pub fn build_chain(spec: &GarchSpec, n_eps: usize, n_v: usize) -> Result<GarchChain> {
    let (v_grid, eps_grid) = build_grids(spec, n_eps, n_v)?;
    let mut rows = Vec::with_capacity(n_v * n_eps);
    for m in 0..n_v {
        for n in 0..n_eps {
            rows.push(transition_row(spec, &v_grid, &eps_grid, m, n)?);
        }
    }
    let p = TransitionMatrix::from_rows(&rows)?;
    let mut returns = Vec::with_capacity(n_v * n_eps);
    for &v in &v_grid {
        for &e in &eps_grid {
            returns.push((spec.mu - v / 2.0 + e).exp());
        }
    }
    Ok(GarchChain {
        spec: *spec,
        v_grid,
        eps_grid,
        p,
        returns,
    })
}

/// Estimated GARCH(1,1) parameters with fit diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct GarchFit {
    pub omega: f64,
    pub alpha: f64,
    pub rho: f64,
    pub log_likelihood: f64,
    pub converged: bool,
    /// True when the optimum sits at the edge of the admissible region
    /// (vanishing alpha, or persistence alpha + rho near 1).
    pub boundary: bool,
    pub notes: Vec<String>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn garch_params(x: &[f64; 3]) -> (f64, f64, f64) {
    let omega = x[0].exp();
    let total = sigmoid(x[1]);
    let frac = sigmoid(x[2]);
    (omega, total * frac, total * (1.0 - frac))
}

/// Gaussian GARCH(1,1) maximum likelihood on a demeaned log excess return
/// series, via Nelder-Mead on unconstrained transformed parameters. The
/// variance recursion is initialized at the sample variance.
pub fn estimate_garch(returns: &[f64]) -> Result<GarchFit> {
    if returns.len() < 100 {
        return Err(Error::invalid(format!(
            "need at least 100 observations, got {}",
            returns.len()
        )));
    }
    if returns.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("returns contain non-finite values"));
    }
    let n = returns.len() as f64;
    let mean: f64 = returns.iter().sum::<f64>() / n;
    let eps: Vec<f64> = returns.iter().map(|r| r - mean).collect();
    let sample_var: f64 = eps.iter().map(|e| e * e).sum::<f64>() / n;
    if sample_var <= 1e-24 * (1.0 + mean * mean) {
        return Err(Error::invalid("degenerate series: zero sample variance"));
    }

    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let nll = |x: &[f64; 3]| -> f64 {
        let (omega, alpha, rho) = garch_params(x);
        let mut v = sample_var;
        let mut acc = 0.0;
        for t in 0..eps.len() {
            if t > 0 {
                v = omega + alpha * eps[t - 1] * eps[t - 1] + rho * v;
            }
            let v_safe = v.max(1e-300);
            acc += half_ln_2pi + 0.5 * v_safe.ln() + 0.5 * eps[t] * eps[t] / v_safe;
        }
        if acc.is_finite() {
            acc
        } else {
            f64::MAX
        }
    };

    let x0 = [
        (0.1 * sample_var).ln(),
        logit(0.9),
        logit(0.1 / 0.9), // alpha = 0.1, rho = 0.8
    ];
    let (x_best, f_best, converged) = nelder_mead(nll, x0, 0.5, 1e-10, 3000);
    let (omega, alpha, rho) = garch_params(&x_best);

    let mut notes = Vec::new();
    let mut boundary = false;
    if alpha < 5e-3 {
        boundary = true;
        notes.push(format!(
            "alpha = {alpha} at the lower boundary (no ARCH effect)"
        ));
    }
    if alpha + rho > 0.995 {
        boundary = true;
        notes.push(format!(
            "persistence alpha + rho = {} near the stationarity boundary",
            alpha + rho
        ));
    }
    if !converged {
        notes.push("simplex search hit the iteration cap".to_string());
    }

    Ok(GarchFit {
        omega,
        alpha,
        rho,
        log_likelihood: -f_best,
        converged,
        boundary,
        notes,
    })
}

/// Plain Nelder-Mead simplex minimization in 3 dimensions; deterministic.
fn nelder_mead(
    f: impl Fn(&[f64; 3]) -> f64,
    x0: [f64; 3],
    step: f64,
    tol: f64,
    max_iter: usize,
) -> ([f64; 3], f64, bool) {
    let mut simplex: Vec<[f64; 3]> = vec![x0];
    for i in 0..3 {
        let mut v = x0;
        v[i] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(&f).collect();

    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let (best, second_worst, worst) = (order[0], order[2], order[3]);

        if (values[worst] - values[best]).abs() <= tol * (1.0 + values[best].abs()) {
            return (simplex[best], values[best], true);
        }

        let mut centroid = [0.0; 3];
        for &i in &order[..3] {
            for k in 0..3 {
                centroid[k] += simplex[i][k] / 3.0;
            }
        }
        let dir = |c: f64| -> [f64; 3] {
            let mut v = [0.0; 3];
            for k in 0..3 {
                v[k] = centroid[k] + c * (centroid[k] - simplex[worst][k]);
            }
            v
        };

        let reflected = dir(1.0);
        let fr = f(&reflected);
        if fr < values[best] {
            let expanded = dir(2.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[worst] = expanded;
                values[worst] = fe;
            } else {
                simplex[worst] = reflected;
                values[worst] = fr;
            }
        } else if fr < values[second_worst] {
            simplex[worst] = reflected;
            values[worst] = fr;
        } else {
            let contracted = dir(-0.5);
            let fc = f(&contracted);
            if fc < values[worst] {
                simplex[worst] = contracted;
                values[worst] = fc;
            } else {
                // shrink toward the best vertex
                let b = simplex[best];
                for i in 0..4 {
                    if i == best {
                        continue;
                    }
                    for k in 0..3 {
                        simplex[i][k] = b[k] + 0.5 * (simplex[i][k] - b[k]);
                    }
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    (simplex[order[0]], values[order[0]], false)
}

/// Simulate a GARCH(1,1) innovation series (zero-mean log excess returns),
/// seeded and reproducible.
pub fn simulate(spec: &GarchSpec, n: usize, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = spec.stationary_variance();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let z: f64 = StandardNormal.sample(&mut rng);
        let e = v.sqrt() * z;
        out.push(e);
        v = spec.omega + spec.alpha * e * e + spec.rho * v;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0_f64).max(a.abs().max(b.abs()))
    }

    fn calibrated_spec() -> GarchSpec {
        GarchSpec::new(9.1297e-5, 0.8354, 0.1188, 6.8011e-3).unwrap()
    }

    #[test]
    fn exp_grid_shift_arithmetic() {
        // s = (2.5^2 - 0) / (10 - 5) = 1.25 and the 3-point median is exact
        let g = exp_grid(0.0, 10.0, 2.5, 3).unwrap();
        assert_eq!(g[0], 0.0);
        assert_eq!(g[2], 10.0);
        assert!(close(g[1], 2.5, 1e-13));
    }

    #[test]
    fn exp_grid_two_points_are_endpoints() {
        let g = exp_grid(1.0, 9.0, 2.0, 2).unwrap();
        assert_eq!(g, vec![1.0, 9.0]);
    }

    #[test]
    fn exp_grid_rejects_median_outside_region() {
        assert!(exp_grid(0.0, 10.0, 5.0, 3).is_err()); // c = (a+b)/2
        assert!(exp_grid(0.0, 10.0, 5.0001, 3).is_err());
        assert!(exp_grid(0.0, 10.0, 4.9999, 3).is_ok());
        assert!(exp_grid(2.0, 10.0, 2.0, 3).is_err()); // c = a
    }

    #[test]
    fn grids_match_direct_formula_evaluation() {
        let spec = calibrated_spec();
        let (v_grid, eps_grid) = build_grids(&spec, 7, 3).unwrap();

        // independent evaluation of the sizing formulas
        let stat = spec.omega / (1.0 - spec.alpha - spec.rho);
        let k = (1.0 + 7.0 * (1.0 - spec.rho) * (1.0 + spec.rho / spec.alpha)).sqrt();
        let eps_bar = k * stat.sqrt();
        let v_bar = (1.0 + 7.0 * (spec.alpha + spec.rho)) * stat;

        assert!(close(eps_grid[6], eps_bar, 1e-14));
        assert!(close(eps_grid[0], -eps_bar, 1e-14));
        assert_eq!(eps_grid[3], 0.0); // exact center
        assert_eq!(v_grid[0], spec.omega);
        assert!(close(v_grid[2], v_bar, 1e-14));
        assert!(close(v_grid[1], stat, 1e-13)); // exact median
                                                // second-moment feasibility: eps_bar^2 > v_bar
        assert!(eps_bar * eps_bar > v_bar);
    }

    #[test]
    fn grids_reject_even_innovation_count() {
        assert!(build_grids(&calibrated_spec(), 6, 3).is_err());
        assert!(build_grids(&calibrated_spec(), 7, 1).is_err());
    }

    #[test]
    fn three_point_weights_in_range() {
        let spec = calibrated_spec();
        let (v_grid, eps_grid) = build_grids(&spec, 3, 3).unwrap();
        let eps_bar = eps_grid[2];
        for m in 0..3 {
            for n in 0..3 {
                let v_hat =
                    spec.omega + spec.alpha * eps_grid[n] * eps_grid[n] + spec.rho * v_grid[m];
                let p = v_hat / (2.0 * eps_bar * eps_bar);
                assert!(p > 0.0 && p < 0.5);
                let row = transition_row(&spec, &v_grid, &eps_grid, m, n).unwrap();
                let total: f64 = row.iter().sum();
                assert!(close(total, 1.0, 1e-13));
            }
        }
    }

    #[test]
    fn rows_match_conditional_moments_exactly() {
        let spec = calibrated_spec();
        let chain = build_chain(&spec, 7, 3).unwrap();
        let n_eps = chain.eps_grid.len();
        for m in 0..chain.v_grid.len() {
            for n in 0..n_eps {
                let v_hat = spec.omega
                    + spec.alpha * chain.eps_grid[n] * chain.eps_grid[n]
                    + spec.rho * chain.v_grid[m];
                let row = chain.p.row(chain.state_index(m, n));
                let mut sum = 0.0;
                let mut mean_eps = 0.0;
                let mut var_eps = 0.0;
                let mut mean_v = 0.0;
                for mp in 0..chain.v_grid.len() {
                    for np in 0..n_eps {
                        let p = row[mp * n_eps + np];
                        sum += p;
                        mean_eps += p * chain.eps_grid[np];
                        var_eps += p * chain.eps_grid[np] * chain.eps_grid[np];
                        mean_v += p * chain.v_grid[mp];
                    }
                }
                assert!((sum - 1.0).abs() < 1e-12);
                assert!(mean_eps.abs() < 1e-12);
                assert!((var_eps - v_hat).abs() < 1e-12);
                assert!((mean_v - v_hat).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn variance_update_hits_grid_top_exactly() {
        // at (m, n) = (top, extreme) the update equals the top grid point
        let spec = calibrated_spec();
        let (v_grid, eps_grid) = build_grids(&spec, 7, 3).unwrap();
        let row = transition_row(&spec, &v_grid, &eps_grid, 2, 6).unwrap();
        // all variance mass on the top level
        let n_eps = eps_grid.len();
        let top_mass: f64 = row[2 * n_eps..].iter().sum();
        assert!(close(top_mass, 1.0, 1e-9));
    }

    #[test]
    fn chain_returns_use_own_state() {
        let spec = calibrated_spec();
        let chain = build_chain(&spec, 7, 3).unwrap();
        let idx = chain.state_index(1, 4);
        let expected = (spec.mu - chain.v_grid[1] / 2.0 + chain.eps_grid[4]).exp();
        assert_eq!(chain.returns[idx], expected);
    }

    #[test]
    fn small_chain_is_stochastic() {
        let spec = calibrated_spec();
        let chain = build_chain(&spec, 3, 2).unwrap();
        assert_eq!(chain.n_states(), 6);
        // TransitionMatrix construction would have rejected bad rows
        for i in 0..6 {
            let s: f64 = chain.p.row(i).iter().sum();
            assert!(close(s, 1.0, 1e-12));
        }
    }

    #[test]
    fn stationary_variance_of_chain_near_continuous_value() {
        let spec = calibrated_spec();
        let chain = build_chain(&spec, 7, 5).unwrap();
        let n = chain.n_states();
        // stationary distribution by repeated squaring of P
        let mut pi = vec![1.0 / n as f64; n];
        for _ in 0..20_000 {
            let mut next = vec![0.0; n];
            for i in 0..n {
                let row = chain.p.row(i);
                for j in 0..n {
                    next[j] += pi[i] * row[j];
                }
            }
            pi = next;
        }
        let mean_v: f64 = (0..n)
            .map(|i| pi[i] * chain.v_grid[i / chain.eps_grid.len()])
            .sum();
        let target = spec.stationary_variance();
        assert!(
            (mean_v - target).abs() < 0.05 * target,
            "chain stationary variance {mean_v} vs {target}"
        );
    }

    #[test]
    fn chain_json_round_trip() {
        let chain = build_chain(&calibrated_spec(), 3, 2).unwrap();
        let s = serde_json::to_string(&chain).unwrap();
        let back = GarchChain::from_json_str(&s).unwrap();
        assert_eq!(back.returns, chain.returns);
        assert_eq!(back.p, chain.p);
    }

    #[test]
    fn estimate_recovers_simulated_parameters() {
        let truth = GarchSpec::new(1e-4, 0.12, 0.8, 0.0).unwrap();
        let series = simulate(&truth, 50_000, 42).unwrap();
        let fit = estimate_garch(&series).unwrap();
        assert!(
            (fit.omega - truth.omega).abs() < 0.1 * truth.omega,
            "omega {} vs {}",
            fit.omega,
            truth.omega
        );
        assert!((fit.alpha - truth.alpha).abs() < 0.1 * truth.alpha);
        assert!((fit.rho - truth.rho).abs() < 0.1 * truth.rho);
    }

    #[test]
    fn estimate_rejects_degenerate_series() {
        let series = vec![0.01; 500];
        assert!(estimate_garch(&series).is_err());
        assert!(estimate_garch(&[0.01; 50]).is_err());
    }

    #[test]
    fn estimate_flags_white_noise_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let series: Vec<f64> = (0..5000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.02 * z
            })
            .collect();
        let fit = estimate_garch(&series).unwrap();
        assert!(fit.alpha < 0.05, "alpha = {}", fit.alpha);
    }

    proptest! {
        #[test]
        fn exp_grid_monotone_with_exact_endpoints(
            a in 0.0f64..5.0,
            span in 1.0f64..100.0,
            frac in 0.05f64..0.9,
            n in 2usize..40,
        ) {
            let b = a + span;
            let c = a + frac * (0.5 * (b - a)); // inside (a, (a+b)/2)
            let g = exp_grid(a, b, c, n).unwrap();
            prop_assert_eq!(g[0], a);
            prop_assert_eq!(g[n - 1], b);
            for w in g.windows(2) {
                prop_assert!(w[1] > w[0]);
            }
        }
    }
}
