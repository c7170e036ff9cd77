//! `ifp`: batch pipeline for income fluctuation problems.
//!
//! Every subcommand reads one JSON config (whose `command` field must match
//! the subcommand), writes machine-readable outputs into `--out`, and embeds
//! the resolved config and crate version in everything it writes. Runs are
//! deterministic: no wall clock, no unseeded randomness, and `--threads 1`
//! reproduces `--threads N` bitwise.
//!
//! Exit codes: 0 success, 1 conditions-not-satisfied (`check` only),
//! 2 config error, 3 numerical failure. Errors are JSON objects on stderr.

mod config;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use ifp_core::ampc::{limit_guaranteed, solve_fixed_point};
use ifp_core::analysis::{emit_figures, linspace, SolvedCase};
use ifp_core::environment::check_conditions;
use ifp_core::garch::{build_chain, estimate_garch, simulate, GarchSpec};
use ifp_core::policy::{iterate_policy, policy_to_csv};
use ifp_core::Error as CoreError;

use config::RunConfig;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug)]
pub struct CliError {
    kind: ErrorKind,
    message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ErrorKind {
    Config,
    Numerical,
}

impl CliError {
    fn config(msg: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Config,
            message: msg.into(),
        }
    }

    fn numerical(msg: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Numerical,
            message: msg.into(),
        }
    }

    fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Config => 2,
            ErrorKind::Numerical => 3,
        }
    }

    fn to_json(&self) -> String {
        json!({
            "error": {
                "kind": match self.kind {
                    ErrorKind::Config => "config",
                    ErrorKind::Numerical => "numerical",
                },
                "message": self.message,
            }
        })
        .to_string()
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidInput(m) => CliError::config(m),
            CoreError::Precondition(m) => CliError::config(m),
            CoreError::Numerical(m) => CliError::numerical(m),
        }
    }
}

#[derive(Parser)]
#[command(name = "ifp", version, about = "Income fluctuation problem toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads; 0 uses all cores. Results are identical for any N.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Spectral-radius existence conditions; exit 0 only when they hold.
    Check,
    /// Asymptotic MPCs: classification and fixed-point values.
    Ampc,
    /// Solve the consumption policy by time iteration; writes policy.csv.
    Solve,
    /// Discretize a GARCH(1,1) return process into a Markov chain.
    GarchDiscretize,
    /// Estimate GARCH(1,1) parameters from a returns series.
    GarchEstimate,
    /// Full calibrated reproduction pipeline; writes figure1..4.csv.
    Figures,
}

fn main() {
    let cli = Cli::parse();
    if cli.threads > 0 {
        // must precede any rayon use; ignore the error if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match execute(&cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("{}", e.to_json());
            std::process::exit(e.exit_code());
        }
    }
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("--config PATH is required"))?;
    let cfg = RunConfig::load(config_path)?;
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| CliError::config(format!("cannot create output dir: {e}")))?;

    match cli.command {
        Command::Check => cmd_check(&cfg, &cli.out),
        Command::Ampc => cmd_ampc(&cfg, &cli.out),
        Command::Solve => cmd_solve(&cfg, &cli.out),
        Command::GarchDiscretize => cmd_garch_discretize(&cfg, &cli.out),
        Command::GarchEstimate => cmd_garch_estimate(&cfg, &cli.out),
        Command::Figures => cmd_figures(&cfg, &cli.out),
    }
}

/// JSON output wrapper carrying provenance.
fn write_json<T: Serialize>(
    out: &Path,
    name: &str,
    cfg: &RunConfig,
    result: &T,
) -> Result<(), CliError> {
    let doc = json!({
        "version": VERSION,
        "config": cfg,
        "result": result,
    });
    let text = serde_json::to_string_pretty(&doc)
        .map_err(|e| CliError::numerical(format!("serialization: {e}")))?;
    std::fs::write(out.join(name), text)
        .map_err(|e| CliError::config(format!("cannot write {name}: {e}")))?;
    Ok(())
}

/// CSV output with provenance comment lines before the header.
fn write_csv(out: &Path, name: &str, cfg: &RunConfig, body: &str) -> Result<(), CliError> {
    let meta = format!(
        "# version: {VERSION}\n# config: {}\n",
        serde_json::to_string(cfg).map_err(|e| CliError::numerical(e.to_string()))?
    );
    std::fs::write(out.join(name), format!("{meta}{body}"))
        .map_err(|e| CliError::config(format!("cannot write {name}: {e}")))?;
    Ok(())
}

fn cmd_check(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    cfg.expect_command("check")?;
    let env = cfg.environment()?;
    let report = check_conditions(&env)?;
    write_json(out, "report.json", cfg, &report)?;
    println!(
        "r(PD_beta) = {:.6}, r(PD_betaR) = {:.6}, r(PD_betaR^(1-gamma)) = {:.6}; assumption2_ok = {}",
        report.r_pd_beta, report.r_pd_beta_r, report.r_pd_beta_r_1mg, report.assumption2_ok
    );
    Ok(if report.assumption2_ok { 0 } else { 1 })
}

fn cmd_ampc(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    cfg.expect_command("ampc")?;
    let env = cfg.environment()?;
    let sol = solve_fixed_point(&env)?;
    let utility = cfg.utility(env.gamma())?;
    let guaranteed = limit_guaranteed(&env, &utility)?;
    let result = json!({
        "c_bar": sol.c_bar,
        "x_star": sol.x_star,
        "classification": sol.classification,
        "r_pd": sol.r_pd,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "limit_guaranteed": guaranteed,
    });
    write_json(out, "ampc.json", cfg, &result)?;
    println!(
        "c_bar = {:?} (r(PD) = {:.6}, limit guaranteed: {guaranteed})",
        sol.c_bar, sol.r_pd
    );
    Ok(0)
}

fn cmd_solve(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    cfg.expect_command("solve")?;
    let env = cfg.environment()?;
    let utility = cfg.utility(env.gamma())?;
    let grid = cfg.asset_grid()?;
    let opts = cfg.solver_options();
    let sol = iterate_policy(&env, &utility, &grid, &opts)?;
    write_csv(out, "policy.csv", cfg, &policy_to_csv(&sol))?;
    let summary = json!({
        "iterations": sol.iterations,
        "converged": sol.converged,
        "final_rho": sol.rho_trace.last(),
        "empirical_modulus": sol.empirical_modulus(),
        "slope_tail": sol.slope_tail,
    });
    write_json(out, "solve_summary.json", cfg, &summary)?;
    println!(
        "converged in {} sweeps; final rho = {:e}; tail slopes {:?}",
        sol.iterations,
        sol.rho_trace.last().copied().unwrap_or(f64::NAN),
        sol.slope_tail
    );
    Ok(0)
}

fn cmd_garch_discretize(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    cfg.expect_command("garch-discretize")?;
    let (spec, n_eps, n_v) = cfg.garch_spec()?;
    let chain = build_chain(&spec, n_eps, n_v)?;
    write_json(out, "chain.json", cfg, &chain)?;
    println!(
        "discretized {} states ({} variance x {} innovation levels)",
        chain.n_states(),
        n_v,
        n_eps
    );
    Ok(0)
}

fn cmd_garch_estimate(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    cfg.expect_command("garch-estimate")?;
    let series = if let Some(path) = &cfg.returns_csv {
        read_returns_csv(path, cfg.has_header.unwrap_or(false))?
    } else if let Some(sim) = &cfg.simulate {
        let spec = GarchSpec::new(sim.omega, sim.alpha, sim.rho, 0.0)?;
        simulate(&spec, sim.n, cfg.seed.unwrap_or(0))?
    } else {
        return Err(CliError::config(
            "garch-estimate needs 'returns_csv' or a 'simulate' block",
        ));
    };
    let fit = estimate_garch(&series)?;
    let result = json!({
        "spec": {
            "omega": fit.omega,
            "alpha": fit.alpha,
            "rho": fit.rho,
            "mu": cfg.mu.unwrap_or(0.0),
        },
        "log_likelihood": fit.log_likelihood,
        "converged": fit.converged,
        "boundary": fit.boundary,
        "notes": fit.notes,
        "observations": series.len(),
    });
    write_json(out, "estimate.json", cfg, &result)?;
    println!(
        "omega = {:.6e}, alpha = {:.4}, rho = {:.4}, loglik = {:.3}{}",
        fit.omega,
        fit.alpha,
        fit.rho,
        fit.log_likelihood,
        if fit.boundary { " (boundary)" } else { "" }
    );
    Ok(0)
}

fn cmd_figures(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    cfg.expect_command("figures")?;
    let chain = cfg
        .load_chain()?
        .ok_or_else(|| CliError::config("figures needs a 'garch' block or 'chain_path'"))?;
    let g = cfg.growth.unwrap_or(0.0);
    let beta = cfg
        .beta
        .ok_or_else(|| CliError::config("figures needs a 'beta' field"))?;
    let income = cfg.income.unwrap_or(1.0);
    let grid = cfg.asset_grid()?;
    let opts = cfg.solver_options();

    let fig = cfg.figures.clone().unwrap_or(config::FiguresBlock {
        gammas: None,
        fig1_gamma_min: None,
        fig1_gamma_max: None,
        fig1_gamma_steps: None,
        fig1_delta_min: None,
        fig1_delta_max: None,
        fig1_delta_steps: None,
    });
    let gammas_solved = fig.gammas.clone().unwrap_or(vec![2.0, 4.0]);
    let fig1_gammas = linspace(
        fig.fig1_gamma_min.unwrap_or(1.0),
        fig.fig1_gamma_max.unwrap_or(6.0),
        fig.fig1_gamma_steps.unwrap_or(61),
    );
    let fig1_deltas = linspace(
        fig.fig1_delta_min.unwrap_or(0.005 / 12.0),
        fig.fig1_delta_max.unwrap_or(0.3 / 12.0),
        fig.fig1_delta_steps.unwrap_or(61),
    );

    let mut solved = Vec::new();
    for &gamma in &gammas_solved {
        let utility = cfg.utility(gamma)?;
        let env = chain
            .to_environment(beta, gamma, income)?
            .detrend(&utility, g)?;
        let ampc = solve_fixed_point(&env)?;
        let policy = iterate_policy(&env, &utility, &grid, &opts)?;
        println!(
            "gamma = {gamma}: policy converged in {} sweeps; c_bar (vol states at eps = 0) computed",
            policy.iterations
        );
        solved.push((gamma, ampc, policy));
    }
    let cases: Vec<SolvedCase> = solved
        .iter()
        .map(|(gamma, ampc, policy)| SolvedCase {
            gamma: *gamma,
            ampc,
            policy,
        })
        .collect();

    let bundle = emit_figures(&chain, g, &cases, &fig1_gammas, &fig1_deltas)?;
    write_csv(out, "figure1.csv", cfg, &bundle.fig1)?;
    write_csv(out, "figure2.csv", cfg, &bundle.fig2)?;
    write_csv(out, "figure3.csv", cfg, &bundle.fig3)?;
    write_csv(out, "figure4.csv", cfg, &bundle.fig4)?;
    println!("wrote figure1.csv .. figure4.csv");
    Ok(0)
}

fn read_returns_csv(path: &Path, has_header: bool) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read returns {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 && has_header {
            continue;
        }
        let field = line.split(',').next().unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        let v: f64 = field
            .parse()
            .map_err(|e| CliError::config(format!("returns line {}: {e}", i + 1)))?;
        out.push(v);
    }
    Ok(out)
}
