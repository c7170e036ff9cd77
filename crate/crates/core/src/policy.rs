//! Time-iteration policy solver for the income fluctuation problem.
//!
//! Starting from the consume-everything seed c(a, z) = a, each sweep updates
//! the consumption function pointwise on an asset grid: the new value at
//! (a, z) is the unique xi in (0, a] with
//!
//! ```text
//! u'(xi) = max{ E_z beta' R' u'(c(R'(a - xi) + Y', Z')), u'(a) },
//! ```
//!
//! solved by bisection (the left side strictly decreases in xi, the right
//! side does not decrease). Iterates decrease monotonically toward the
//! unique solution; convergence is judged by a relative sup-norm on
//! consumption, while the sup distance in marginal-utility units is tracked
//! per sweep as the contraction diagnostic (see [`SolverOptions`] for why it
//! cannot serve as the stopping rule). Off-grid evaluations extrapolate
//! linearly, which the asymptotic linearity of the consumption function
//! justifies.

use rayon::prelude::*;
use serde::Serialize;

use crate::environment::{check_conditions, DiscreteSupport, MarkovEnvironment, StateShocks};
use crate::error::Error;
use crate::garch::exp_grid;
use crate::utility::UtilitySpec;
use crate::Result;

/// Strictly increasing positive asset grid.
#[derive(Debug, Clone, Serialize)]
pub struct AssetGrid {
    points: Vec<f64>,
}

impl AssetGrid {
    /// Shifted exponential grid on [a_min, a_max] with the given median
    /// point, at least 16 points.
    pub fn exponential(a_min: f64, a_max: f64, median: f64, n: usize) -> Result<Self> {
        if !(a_min > 0.0) {
            return Err(Error::invalid("asset grid must start above zero"));
        }
        if n < 16 {
            return Err(Error::invalid("asset grid needs at least 16 points"));
        }
        let points = exp_grid(a_min, a_max, median, n)?;
        Ok(AssetGrid { points })
    }

    /// 200 points on [1e-4, 1e10] with median near unit income.
    pub fn default_grid() -> Self {
        AssetGrid::exponential(1e-4, 1e10, 1.0, 200).expect("default grid parameters are valid")
    }

    #[inline]
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Converged (or capped) policy iteration output.
#[derive(Debug, Clone, Serialize)]
pub struct PolicySolution {
    pub grid: AssetGrid,
    /// Consumption values, `c[z][i]` at grid point i in state z.
    pub c: Vec<Vec<f64>>,
    /// Linear-extrapolation slope over the last grid interval, per state.
    pub slope_tail: Vec<f64>,
    /// Sup distance in u' units between successive sweeps.
    pub rho_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Solver controls.
///
/// Convergence is judged by the sup *relative* consumption change: it is the
/// only scale-free rule here. The u'-metric distance is recorded per sweep
/// (`rho_trace`) but cannot stop the run by itself: an absolute threshold
/// on |Δu'| is blind to the large-asset tail (u' is minuscule there, so the
/// tail can be far from converged while the metric looks tiny) and
/// unreachable near the borrowing constraint in low-income runs (u' is
/// enormous there, so bisection noise alone exceeds any sensible threshold).
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Stop when the sup relative consumption change falls below this.
    pub c_rel_tol: f64,
    pub max_iter: usize,
    /// Verify feasibility/monotonicity invariants after every sweep.
    pub check_invariants: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            c_rel_tol: 1e-10,
            max_iter: 10_000,
            check_invariants: true,
        }
    }
}

/// Piecewise-linear policy evaluator over one sweep's data.
#[derive(Clone, Copy)]
pub struct PolicyView<'a> {
    grid: &'a [f64],
    c: &'a [Vec<f64>],
    slope_tail: &'a [f64],
}

impl<'a> PolicyView<'a> {
    pub fn new(grid: &'a [f64], c: &'a [Vec<f64>], slope_tail: &'a [f64]) -> Self {
        PolicyView {
            grid,
            c,
            slope_tail,
        }
    }

    /// Evaluate consumption at any positive asset level: linear between
    /// grid points, through the origin below the grid, tail-slope
    /// extrapolation above, always clipped into (0, a].
    pub fn eval(&self, a: f64, z: usize) -> f64 {
        assert!(a > 0.0, "policy evaluation requires a > 0, got {a}");
        let g = self.grid;
        let cz = &self.c[z];
        let n = g.len();
        if a <= g[0] {
            if a == g[0] {
                return cz[0];
            }
            return (a * (cz[0] / g[0])).min(a);
        }
        if a >= g[n - 1] {
            let v = cz[n - 1] + self.slope_tail[z] * (a - g[n - 1]);
            return v.clamp(cz[n - 1], a);
        }
        let hi = g.partition_point(|&p| p < a);
        if a == g[hi] {
            return cz[hi];
        }
        let lo = hi - 1;
        let t = (a - g[lo]) / (g[hi] - g[lo]);
        cz[lo] + t * (cz[hi] - cz[lo])
    }
}

/// Off-grid evaluation of a solved policy.
pub fn interpolate_policy(sol: &PolicySolution, a: f64, z: usize) -> f64 {
    PolicyView::new(sol.grid.points(), &sol.c, &sol.slope_tail).eval(a, z)
}

impl PolicySolution {
    /// Empirical contraction modulus: the geometric mean per-sweep decay of
    /// the u'-metric distance over the signal-dominated part of the trace
    /// (entries within 10x of the terminal plateau are noise and excluded).
    /// `None` when the trace is too short to estimate.
    pub fn empirical_modulus(&self) -> Option<f64> {
        let trace = &self.rho_trace;
        let m = trace.len();
        if m < 10 {
            return None;
        }
        let plateau = trace[m - (m / 10).max(5)..]
            .iter()
            .fold(0.0f64, |a, &b| a.max(b));
        let start = m / 5;
        let end = (start..m)
            .find(|&i| trace[i] <= plateau * 10.0)
            .unwrap_or(m);
        if end < start + 5 || trace[start] <= 0.0 || trace[end - 1] <= 0.0 {
            return None;
        }
        Some((trace[end - 1] / trace[start]).powf(1.0 / (end - 1 - start) as f64))
    }
}

/// Sup distance between two gridded policies in marginal-utility units.
pub fn rho_distance(u: &UtilitySpec, c1: &[Vec<f64>], c2: &[Vec<f64>]) -> f64 {
    let mut best = 0.0f64;
    for (r1, r2) in c1.iter().zip(c2) {
        for (&a, &b) in r1.iter().zip(r2) {
            best = best.max((u.marginal(a) - u.marginal(b)).abs());
        }
    }
    best
}

/// Conditional-expectation table for the Euler right-hand side: per current
/// state, the successor states with positive weight `P(z, z') E_{z'} beta`,
/// and their return/income atoms (zero-return atoms dropped: they
/// contribute nothing).
struct ExpectationTable<'a> {
    terms: Vec<Vec<(f64, usize, &'a StateShocks)>>,
}

impl<'a> ExpectationTable<'a> {
    fn new(env: &'a MarkovEnvironment) -> Self {
        let n = env.n_states();
        let terms = (0..n)
            .map(|z| {
                let row = env.transition().row(z);
                (0..n)
                    .filter_map(|zh| {
                        let w = row[zh] * env.shocks(zh).beta.mean();
                        (w > 0.0).then(|| (w, zh, env.shocks(zh)))
                    })
                    .collect()
            })
            .collect();
        ExpectationTable { terms }
    }

    /// E_z beta' R' u'(c(R'(a - xi) + Y', Z')); infinite when a zero-asset
    /// point is reached with positive weight (u'(0) = inf).
    fn rhs(&self, u: &UtilitySpec, view: &PolicyView, a: f64, xi: f64, z: usize) -> f64 {
        let mut acc = 0.0;
        for &(w, zh, shocks) in &self.terms[z] {
            let mut inner = 0.0;
            for &(r, qr) in shocks.r.atoms() {
                if r == 0.0 || qr == 0.0 {
                    continue;
                }
                for &(y, qy) in shocks.y.atoms() {
                    if qy == 0.0 {
                        continue;
                    }
                    let next = r * (a - xi) + y;
                    if next > 0.0 {
                        inner += qr * qy * r * u.marginal(view.eval(next, zh));
                    } else {
                        return f64::INFINITY;
                    }
                }
            }
            acc += w * inner;
        }
        acc
    }
}

/// One Euler update at (a, z) against a previous policy: returns the unique
/// xi in (0, a] with u'(xi) = max{rhs(xi), u'(a)}, by bisection to 1e-12
/// relative (60 halvings cover the bracket).
pub fn euler_update(
    env: &MarkovEnvironment,
    u: &UtilitySpec,
    c_prev: &PolicyView,
    a: f64,
    z: usize,
) -> f64 {
    let table = ExpectationTable::new(env);
    euler_update_with(&table, u, c_prev, a, z)
}

fn euler_update_with(
    table: &ExpectationTable,
    u: &UtilitySpec,
    c_prev: &PolicyView,
    a: f64,
    z: usize,
) -> f64 {
    assert!(a > 0.0, "euler_update requires a > 0, got {a}");
    // constraint check: consume everything when u'(a) already weakly
    // dominates the discounted continuation at xi = a
    if u.marginal(a) >= table.rhs(u, c_prev, a, a, z) {
        return a;
    }
    let mut lo = 0.0f64;
    let mut hi = a;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if u.marginal(mid) > table.rhs(u, c_prev, a, mid, z) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn tail_slopes(grid: &[f64], c: &[Vec<f64>]) -> Vec<f64> {
    let n = grid.len();
    c.iter()
        .map(|cz| (cz[n - 1] - cz[n - 2]) / (grid[n - 1] - grid[n - 2]))
        .collect()
}

/// Replace exact-zero income atoms with 1e-10: marginal utility at zero
/// income is infinite, which the finite-expectation requirement on u'(Y)
/// rules out.
fn nudge_zero_income(env: &MarkovEnvironment) -> Result<MarkovEnvironment> {
    let mut changed = false;
    let shocks: Result<Vec<StateShocks>> = (0..env.n_states())
        .map(|z| {
            let s = env.shocks(z);
            if s.y.atoms().iter().any(|&(v, p)| v == 0.0 && p > 0.0) {
                changed = true;
                let atoms =
                    s.y.atoms()
                        .iter()
                        .map(|&(v, p)| (if v == 0.0 { 1e-10 } else { v }, p))
                        .collect();
                Ok(StateShocks {
                    beta: s.beta.clone(),
                    r: s.r.clone(),
                    y: DiscreteSupport::new(atoms)?,
                })
            } else {
                Ok(s.clone())
            }
        })
        .collect();
    if changed {
        MarkovEnvironment::new(env.transition().clone(), shocks?, env.gamma())
    } else {
        Ok(env.clone())
    }
}

fn check_sweep_invariants(
    grid: &[f64],
    new_c: &[Vec<f64>],
    old_c: &[Vec<f64>],
    sweep: usize,
) -> Result<()> {
    let slack = 1e-9;
    for (z, cz) in new_c.iter().enumerate() {
        for (i, &v) in cz.iter().enumerate() {
            if !(v > 0.0) || v > grid[i] {
                return Err(Error::numerical(format!(
                    "sweep {sweep}: infeasible consumption {v} at a = {} (state {z})",
                    grid[i]
                )));
            }
            if v > old_c[z][i] * (1.0 + slack) {
                return Err(Error::numerical(format!(
                    "sweep {sweep}: iterate increased at a = {} (state {z})",
                    grid[i]
                )));
            }
            if i > 0 {
                if v < cz[i - 1] * (1.0 - slack) {
                    return Err(Error::numerical(format!(
                        "sweep {sweep}: consumption decreasing in assets at a = {} (state {z})",
                        grid[i]
                    )));
                }
                let s_here = grid[i] - v;
                let s_prev = grid[i - 1] - cz[i - 1];
                if s_here < s_prev - slack * grid[i] {
                    return Err(Error::numerical(format!(
                        "sweep {sweep}: savings decreasing in assets at a = {} (state {z})",
                        grid[i]
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Iterate the Euler update from the c(a, z) = a seed until the u'-metric
/// or the relative consumption change converges. Within a sweep the updates
/// are independent and run in parallel; results are identical to a
/// sequential sweep because every update reads only the previous iterate.
pub fn iterate_policy(
    env: &MarkovEnvironment,
    u: &UtilitySpec,
    grid: &AssetGrid,
    opts: &SolverOptions,
) -> Result<PolicySolution> {
    let report = check_conditions(env)?;
    if !report.assumption2_ok {
        return Err(Error::precondition(format!(
            "existence conditions fail: r(PD_beta) = {}, r(PD_betaR) = {}",
            report.r_pd_beta, report.r_pd_beta_r
        )));
    }
    if (u.gamma() - env.gamma()).abs() > 1e-12 {
        return Err(Error::precondition(
            "utility gamma must match the environment gamma",
        ));
    }
    let env = nudge_zero_income(env)?;
    let pts = grid.points();
    let n = pts.len();
    let zn = env.n_states();
    let table = ExpectationTable::new(&env);

    let mut c: Vec<Vec<f64>> = (0..zn).map(|_| pts.to_vec()).collect();
    let mut rho_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for sweep in 1..=opts.max_iter {
        let slopes = tail_slopes(pts, &c);
        let view = PolicyView::new(pts, &c, &slopes);
        let flat: Vec<f64> = (0..zn * n)
            .into_par_iter()
            .map(|idx| euler_update_with(&table, u, &view, pts[idx % n], idx / n))
            .collect();
        let new_c: Vec<Vec<f64>> = flat.chunks(n).map(|ch| ch.to_vec()).collect();

        let mut rho = 0.0f64;
        let mut rel = 0.0f64;
        for (old_z, new_z) in c.iter().zip(&new_c) {
            for (&o, &v) in old_z.iter().zip(new_z) {
                rho = rho.max((u.marginal(o) - u.marginal(v)).abs());
                rel = rel.max((o - v).abs() / o);
            }
        }
        rho_trace.push(rho);
        if opts.check_invariants {
            check_sweep_invariants(pts, &new_c, &c, sweep)?;
        }
        c = new_c;
        iterations = sweep;
        if rel < opts.c_rel_tol {
            converged = true;
            break;
        }
    }

    if !converged {
        let tail: Vec<f64> = rho_trace.iter().rev().take(3).copied().collect();
        return Err(Error::numerical(format!(
            "policy iteration did not converge in {} sweeps; last rho values {:?}",
            opts.max_iter, tail
        )));
    }

    let slope_tail = tail_slopes(pts, &c);
    Ok(PolicySolution {
        grid: grid.clone(),
        c,
        slope_tail,
        rho_trace,
        iterations,
        converged,
    })
}

/// Largest relative Euler-equation residual |u'(c) - rhs| / u'(c) over
/// unconstrained grid points of a solved policy.
pub fn euler_residual(
    env: &MarkovEnvironment,
    u: &UtilitySpec,
    sol: &PolicySolution,
) -> Result<f64> {
    let env = nudge_zero_income(env)?;
    let table = ExpectationTable::new(&env);
    let pts = sol.grid.points();
    let view = PolicyView::new(pts, &sol.c, &sol.slope_tail);
    let mut worst = 0.0f64;
    for z in 0..env.n_states() {
        for (i, &a) in pts.iter().enumerate() {
            let cv = sol.c[z][i];
            if cv >= a {
                continue; // constraint binds: no interior Euler equation
            }
            let lhs = u.marginal(cv);
            let rhs = table.rhs(u, &view, a, cv, z);
            worst = worst.max((lhs - rhs).abs() / lhs);
        }
    }
    Ok(worst)
}

/// Serialize a policy to CSV rows `a, z, c, c_over_a` (17 significant
/// digits).
pub fn policy_to_csv(sol: &PolicySolution) -> String {
    let mut out = String::from("a,z,c,c_over_a\n");
    for (z, cz) in sol.c.iter().enumerate() {
        for (i, &c) in cz.iter().enumerate() {
            let a = sol.grid.points()[i];
            out.push_str(&format!("{:.16e},{z},{:.16e},{:.16e}\n", a, c, c / a));
        }
    }
    out
}
