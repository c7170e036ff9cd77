//! Run configuration: a single JSON document with a `command` field plus
//! command-specific parameters. The resolved document is embedded verbatim
//! in every output for reproducibility.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use ifp_core::environment::MarkovEnvironment;
use ifp_core::garch::{build_chain, GarchChain, GarchSpec};
use ifp_core::policy::{AssetGrid, SolverOptions};
use ifp_core::utility::UtilitySpec;

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,

    // environment input: inline document, file path, chain file, or GARCH
    // parameters to discretize
    #[serde(skip_serializing_if = "Option::is_none")]
    pub environment: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub environment_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chain_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub garch: Option<GarchBlock>,

    // model parameters for chain-based environments
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub income: Option<f64>,
    /// Income growth rate g; a nonzero value detrends the model (CRRA only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub growth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub utility: Option<UtilityBlock>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<TolBlock>,

    // GARCH estimation input
    #[serde(skip_serializing_if = "Option::is_none")]
    pub returns_csv: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub has_header: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    /// Synthetic-series fallback for `garch-estimate` when no CSV is given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub figures: Option<FiguresBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GarchBlock {
    pub omega: f64,
    pub alpha: f64,
    pub rho: f64,
    pub mu: f64,
    pub n_eps: usize,
    pub n_v: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub a_min: f64,
    pub a_max: f64,
    pub median: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_rel_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    pub omega: f64,
    pub alpha: f64,
    pub rho: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct UtilityBlock {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_upper: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_c: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_marginal: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiguresBlock {
    /// Risk-aversion values solved for the consumption/saving figures.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gammas: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fig1_gamma_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fig1_gamma_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fig1_gamma_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fig1_delta_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fig1_delta_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fig1_delta_steps: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("malformed config JSON: {e}")))?;
        Ok(cfg)
    }

    pub fn expect_command(&self, name: &str) -> Result<(), CliError> {
        if self.command != name {
            return Err(CliError::config(format!(
                "config command field is '{}' but the '{name}' subcommand was invoked",
                self.command
            )));
        }
        Ok(())
    }

    /// Utility from the config, defaulting to CRRA at the given gamma.
    pub fn utility(&self, gamma: f64) -> Result<UtilitySpec, CliError> {
        let Some(block) = &self.utility else {
            return Ok(UtilitySpec::crra(gamma)?);
        };
        let g = block.gamma.unwrap_or(gamma);
        match block.kind.as_str() {
            "crra" => Ok(UtilitySpec::crra(g)?),
            "pathological_sin_log" => {
                let delta = block
                    .delta
                    .ok_or_else(|| CliError::config("pathological_sin_log needs a delta field"))?;
                Ok(UtilitySpec::pathological_sin_log(g, delta)?)
            }
            "brra_tabulated" => {
                let (Some(gl), Some(gu), Some(lc), Some(lm)) = (
                    block.gamma_lower,
                    block.gamma_upper,
                    block.log_c.clone(),
                    block.log_marginal.clone(),
                ) else {
                    return Err(CliError::config(
                        "brra_tabulated needs gamma_lower, gamma_upper, log_c, log_marginal",
                    ));
                };
                Ok(UtilitySpec::brra_tabulated(g, gl, gu, lc, lm)?)
            }
            other => Err(CliError::config(format!("unknown utility kind '{other}'"))),
        }
    }

    pub fn garch_spec(&self) -> Result<(GarchSpec, usize, usize), CliError> {
        let block = self
            .garch
            .as_ref()
            .ok_or_else(|| CliError::config("this command needs a 'garch' block"))?;
        let spec = GarchSpec::new(block.omega, block.alpha, block.rho, block.mu)?;
        Ok((spec, block.n_eps, block.n_v))
    }

    /// Chain from `chain_path` or built from the `garch` block.
    pub fn load_chain(&self) -> Result<Option<GarchChain>, CliError> {
        if let Some(path) = &self.chain_path {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::config(format!("cannot read chain {}: {e}", path.display()))
            })?;
            return Ok(Some(GarchChain::from_json_str(&text)?));
        }
        if self.garch.is_some() {
            let (spec, n_eps, n_v) = self.garch_spec()?;
            return Ok(Some(build_chain(&spec, n_eps, n_v)?));
        }
        Ok(None)
    }

    /// Resolve the environment from whichever input the config provides,
    /// applying growth detrending when `growth` is set and nonzero.
    pub fn environment(&self) -> Result<MarkovEnvironment, CliError> {
        let env = if let Some(doc) = &self.environment {
            serde_json::from_value::<MarkovEnvironment>(doc.clone())
                .map_err(|e| CliError::config(format!("inline environment: {e}")))?
        } else if let Some(path) = &self.environment_path {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::config(format!("cannot read environment {}: {e}", path.display()))
            })?;
            MarkovEnvironment::from_json_str(&text)?
        } else if let Some(chain) = self.load_chain()? {
            let gamma = self
                .gamma
                .ok_or_else(|| CliError::config("chain environments need a 'gamma' field"))?;
            let beta = self
                .beta
                .ok_or_else(|| CliError::config("chain environments need a 'beta' field"))?;
            chain.to_environment(beta, gamma, self.income.unwrap_or(1.0))?
        } else {
            return Err(CliError::config(
                "no environment given: set 'environment', 'environment_path', 'chain_path', or 'garch'",
            ));
        };
        let g = self.growth.unwrap_or(0.0);
        if g != 0.0 {
            let u = self.utility(env.gamma())?;
            Ok(env.detrend(&u, g)?)
        } else {
            Ok(env)
        }
    }

    pub fn asset_grid(&self) -> Result<AssetGrid, CliError> {
        match &self.grid {
            Some(g) => Ok(AssetGrid::exponential(
                g.a_min, g.a_max, g.median, g.points,
            )?),
            None => Ok(AssetGrid::default_grid()),
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        let mut opts = SolverOptions::default();
        if let Some(t) = &self.tolerances {
            if let Some(v) = t.c_rel_tol {
                opts.c_rel_tol = v;
            }
            if let Some(v) = t.max_iter {
                opts.max_iter = v;
            }
        }
        opts
    }
}
