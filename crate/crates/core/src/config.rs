//! Model and run configuration.
//!
//! [`ModelSpec`] is the in-memory configuration consumed by the runner and
//! the model builder. [`RunConfig`] is the versioned on-disk schema behind
//! the CLI; unknown keys are rejected, not warned about.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmrf::{InteractionType, RwOrder};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plan {
    Sequential,
    Parallel,
    Cluster,
}

impl std::str::FromStr for Plan {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "sequential" => Ok(Plan::Sequential),
            "parallel" => Ok(Plan::Parallel),
            "cluster" => Ok(Plan::Cluster),
            other => Err(Error::config(format!("unknown plan {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeStrategy {
    Original,
    Mixture,
}

impl Default for MergeStrategy {
    fn default() -> Self {
        MergeStrategy::Original
    }
}

impl std::str::FromStr for MergeStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "original" => Ok(MergeStrategy::Original),
            "mixture" => Ok(MergeStrategy::Mixture),
            other => Err(Error::config(format!("unknown merge strategy {other:?}"))),
        }
    }
}

/// Prior on the standard deviations of the random effects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SdPrior {
    /// Improper uniform on the standard deviation (default).
    Uniform,
    /// Penalized-complexity prior: P(sigma > u) = alpha.
    Pc { u: f64, alpha: f64 },
}

impl Default for SdPrior {
    fn default() -> Self {
        SdPrior::Uniform
    }
}

/// Hyperpriors of the latent Gaussian model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HyperPrior {
    #[serde(default)]
    pub sd_prior: SdPrior,
    /// precision of the vague intercept prior
    #[serde(default = "default_intercept_precision")]
    pub intercept_precision: f64,
}

fn default_intercept_precision() -> f64 {
    0.001
}

impl Default for HyperPrior {
    fn default() -> Self {
        HyperPrior { sd_prior: SdPrior::Uniform, intercept_precision: 0.001 }
    }
}

impl HyperPrior {
    /// log prior density of a precision hyperparameter in the internal scale
    /// z = log tau, Jacobian included.
    pub fn log_prior_log_tau(&self, z: f64) -> f64 {
        match self.sd_prior {
            // pi(sigma) constant, sigma = exp(-z/2)
            SdPrior::Uniform => -0.5 * z,
            SdPrior::Pc { u, alpha } => {
                let rate = -(alpha.ln()) / u;
                let sigma = (-0.5 * z).exp();
                rate.ln() - rate * sigma - 0.5 * z
            }
        }
    }

    /// log prior of the mixing parameter in the internal scale w = logit
    /// lambda; the base prior on lambda is uniform on [0, 1].
    pub fn log_prior_logit_lambda(&self, w: f64) -> f64 {
        // Jacobian of the logistic transform
        w - 2.0 * (1.0 + w.exp()).ln()
    }
}

/// Tuning knobs of the inference engine. Defaults are the documented
/// behavior; tests and benchmarks may override.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSettings {
    /// points per hyperparameter axis of the exploration grid
    pub grid_points_per_axis: usize,
    /// grid points whose log-posterior falls more than this below the mode
    /// are pruned
    pub prune_log_drop: f64,
    /// inner Newton iteration cap
    pub newton_max_iter: usize,
    /// convergence threshold on the projected gradient, infinity norm
    pub newton_grad_tol: f64,
    /// abscissae per latent marginal
    pub marginal_points: usize,
    /// samples for approximate DIC/WAIC
    pub ic_samples: usize,
    /// admissible window for log precision parameters
    pub log_tau_min: f64,
    pub log_tau_max: f64,
    /// grid step in posterior-sd units
    pub grid_step_sd: f64,
    /// hyperparameter optimizer iteration cap
    pub max_hyper_iter: usize,
    /// cooperative wall-clock budget for one model fit, seconds
    pub time_budget_secs: Option<f64>,
    /// diagonal regularization added before factorizing intrinsic precisions
    pub ridge_eps: f64,
    /// hold individual hyperparameters fixed (internal scale); used for
    /// reduced-dimension fits and oracle studies
    pub fixed_log_tau_xi: Option<f64>,
    pub fixed_logit_lambda: Option<f64>,
    pub fixed_log_tau_gamma: Option<f64>,
    pub fixed_log_tau_delta: Option<f64>,
}

impl Default for EngineSettings {
    fn default() -> Self {
        EngineSettings {
            grid_points_per_axis: 5,
            prune_log_drop: 6.0,
            newton_max_iter: 50,
            newton_grad_tol: 1e-6,
            marginal_points: 75,
            ic_samples: 1000,
            log_tau_min: -12.0,
            log_tau_max: 12.0,
            grid_step_sd: 0.85,
            max_hyper_iter: 40,
            time_budget_secs: None,
            ridge_eps: 1e-8,
            fixed_log_tau_xi: None,
            fixed_logit_lambda: None,
            fixed_log_tau_gamma: None,
            fixed_log_tau_delta: None,
        }
    }
}

impl EngineSettings {
    pub fn fixed_internal(&self) -> [Option<f64>; 4] {
        [
            self.fixed_log_tau_xi,
            self.fixed_logit_lambda,
            self.fixed_log_tau_gamma,
            self.fixed_log_tau_delta,
        ]
    }
}

/// Full model configuration: priors, interaction type, neighbourhood order,
/// execution plan and merge strategy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub temporal_prior: RwOrder,
    pub interaction: InteractionType,
    /// neighbourhood order; 0 is the disjoint model
    pub k: usize,
    pub plan: Plan,
    /// worker endpoints, cluster plan only
    #[serde(default)]
    pub workers: Vec<String>,
    /// parallel width for the parallel plan
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub merge_strategy: MergeStrategy,
    pub seed: u64,
    #[serde(default)]
    pub hyper_prior: HyperPrior,
    #[serde(default)]
    pub engine: EngineSettings,
}

fn default_jobs() -> usize {
    2
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.plan == Plan::Cluster && self.workers.is_empty() {
            return Err(Error::config("plan=cluster requires a nonempty workers list"));
        }
        if self.jobs == 0 {
            return Err(Error::config("jobs must be at least 1"));
        }
        if self.engine.marginal_points < 5 {
            return Err(Error::config("marginal_points must be at least 5"));
        }
        if self.engine.grid_points_per_axis == 0 || self.engine.grid_points_per_axis % 2 == 0 {
            return Err(Error::config("grid_points_per_axis must be odd"));
        }
        Ok(())
    }

    /// A minimal spec for tests and simple fits.
    pub fn basic(interaction: InteractionType, k: usize, seed: u64) -> ModelSpec {
        ModelSpec {
            temporal_prior: RwOrder::Rw1,
            interaction,
            k,
            plan: Plan::Sequential,
            workers: Vec::new(),
            jobs: default_jobs(),
            merge_strategy: MergeStrategy::Original,
            seed,
            hyper_prior: HyperPrior::default(),
            engine: EngineSettings::default(),
        }
    }
}

/// On-disk run configuration, version-checked with a closed schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// count data CSV
    pub data: PathBuf,
    /// adjacency input
    pub graph: PathBuf,
    /// "edges" (default), "dense" or "geojson"
    #[serde(default)]
    pub graph_format: Option<String>,
    #[serde(default)]
    pub geojson_id_key: Option<String>,
    /// partition CSV; absent means the one-subdomain global model
    #[serde(default)]
    pub partition: Option<PathBuf>,
    /// output run directory
    pub out: PathBuf,
    pub model: ModelSpec,
    /// connect disconnected adjacency components before fitting
    #[serde(default = "default_true")]
    pub bridge_islands: bool,
}

fn default_true() -> bool {
    true
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config(format!(
                "config version {} unsupported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if let Some(fmt) = &self.graph_format {
            if !matches!(fmt.as_str(), "edges" | "dense" | "geojson") {
                return Err(Error::config(format!("unknown graph_format {fmt:?}")));
            }
        }
        self.model.validate()
    }

    pub fn from_json_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cluster_plan_requires_workers() {
        let mut spec = ModelSpec::basic(InteractionType::I, 0, 1);
        spec.plan = Plan::Cluster;
        assert!(spec.validate().is_err());
        spec.workers.push("127.0.0.1:9000".into());
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn merge_strategy_defaults_to_original() {
        let spec = ModelSpec::basic(InteractionType::I, 0, 1);
        assert_eq!(spec.merge_strategy, MergeStrategy::Original);
    }

    #[test]
    fn unknown_config_keys_are_errors() {
        let json = r#"{
            "version": 1,
            "data": "counts.csv",
            "graph": "adj.tsv",
            "out": "run",
            "surprise": true,
            "model": null
        }"#;
        assert!(RunConfig::from_json_str(json).is_err());
    }

    #[test]
    fn wrong_version_is_an_error() {
        let json = r#"{
            "version": 2,
            "data": "counts.csv",
            "graph": "adj.tsv",
            "out": "run",
            "model": {
                "temporal_prior": "Rw1",
                "interaction": "I",
                "k": 0,
                "plan": "sequential",
                "seed": 7
            }
        }"#;
        let err = RunConfig::from_json_str(json).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn uniform_sd_prior_density_shape() {
        let hp = HyperPrior::default();
        // pi(sigma) flat means density in z falls as exp(-z/2)
        let a = hp.log_prior_log_tau(0.0);
        let b = hp.log_prior_log_tau(2.0);
        assert!((a - b - 1.0).abs() < 1e-12);
        // logit-lambda prior integrates to one over the real line
        let mut total = 0.0;
        let h = 0.01;
        let mut w = -20.0;
        while w < 20.0 {
            total += hp.log_prior_logit_lambda(w).exp() * h;
            w += h;
        }
        assert!((total - 1.0).abs() < 1e-3);
    }
}
