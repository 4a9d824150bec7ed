use std::path::{Path, PathBuf};

use nrlab_core::analysis::AnalysisSettings;
use nrlab_core::exact::{DEFAULT_LP_CAP, DEFAULT_TENSOR_CAP};
use nrlab_core::mechanism::{Mechanism, MechanismDescriptor, MechanismKind};
use nrlab_core::simulator::{Feedback, LearnerConfig, Population, SimConfig};
use nrlab_core::smoothness::{
    product_value_space, AllPayUniform, BidFraction, DeviationRule, FpaLog, SmoothnessParams,
    TopHalf, ZeroBid,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothnessSpec {
    pub lambda: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeviationSpec {
    BidFraction { fraction: f64 },
    FpaLog,
    AllPayUniform,
    TopHalf,
    Zero,
}

impl DeviationSpec {
    pub fn build(&self) -> Box<dyn DeviationRule> {
        match *self {
            Self::BidFraction { fraction } => Box::new(BidFraction { fraction }),
            Self::FpaLog => Box::new(FpaLog),
            Self::AllPayUniform => Box::new(AllPayUniform),
            Self::TopHalf => Box::new(TopHalf),
            Self::Zero => Box::new(ZeroBid),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Caps {
    #[serde(default = "default_tensor_cap")]
    pub tensor: u128,
    #[serde(default = "default_lp_cap")]
    pub lp: u128,
}

fn default_tensor_cap() -> u128 {
    DEFAULT_TENSOR_CAP
}

fn default_lp_cap() -> u128 {
    DEFAULT_LP_CAP
}

impl Default for Caps {
    fn default() -> Self {
        Self {
            tensor: DEFAULT_TENSOR_CAP,
            lp: DEFAULT_LP_CAP,
        }
    }
}

fn default_record_every() -> u64 {
    1
}

fn default_matchings() -> u32 {
    1
}

/// One experiment, read from a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mechanism: MechanismDescriptor,
    /// Type values of each population.
    pub populations: Vec<Vec<f64>>,
    #[serde(default)]
    pub learner: LearnerConfig,
    /// Per-population overrides of `learner`.
    #[serde(default)]
    pub population_learners: Option<Vec<LearnerConfig>>,
    #[serde(default)]
    pub feedback: Feedback,
    #[serde(default)]
    pub horizon: Option<u64>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "default_record_every")]
    pub record_every: u64,
    #[serde(default = "default_matchings")]
    pub matchings: u32,
    #[serde(default)]
    pub analysis: AnalysisSettings,
    /// Defaults to the textbook constants of the mechanism kind.
    #[serde(default)]
    pub smoothness: Option<SmoothnessSpec>,
    #[serde(default)]
    pub deviation: Option<DeviationSpec>,
    /// Valuation profiles for certification; defaults to the product of the
    /// population types.
    #[serde(default)]
    pub value_space: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub caps: Caps,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// `(1 − 1/e, 1)` for the first-price kinds and `(1/2, 1)` for all-pay.
pub fn default_smoothness(kind: MechanismKind) -> SmoothnessParams {
    let lambda = match kind {
        MechanismKind::AllPay => 0.5,
        MechanismKind::FirstPrice | MechanismKind::MultiUnitFirstPrice => 1.0 - (-1.0f64).exp(),
    };
    SmoothnessParams { lambda, mu: 1.0 }
}

/// A config file together with its text, for line-anchored messages.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub path: PathBuf,
    pub text: String,
    pub config: ExperimentConfig,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            location: path.display().to_string(),
            message: format!("cannot read config: {e}"),
        })?;
        let config: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config {
                location: format!("{}:{}:{}", path.display(), e.line(), e.column()),
                message: e.to_string(),
            })?;
        let loaded = Self {
            path: path.to_path_buf(),
            text,
            config,
        };
        loaded.validate()?;
        Ok(loaded)
    }

    /// Error anchored at the first line mentioning `key`.
    pub fn error_at(&self, key: &str, message: impl Into<String>) -> CliError {
        let needle = format!("\"{key}\"");
        let location = match self.text.lines().position(|l| l.contains(&needle)) {
            Some(line) => format!("{}:{}", self.path.display(), line + 1),
            None => self.path.display().to_string(),
        };
        CliError::Config {
            location,
            message: message.into(),
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let c = &self.config;
        let m = self.mechanism()?;
        if c.populations.len() != m.n_players() {
            return Err(self.error_at(
                "populations",
                format!(
                    "{} populations for a {}-player mechanism",
                    c.populations.len(),
                    m.n_players()
                ),
            ));
        }
        if c.horizon == Some(0) {
            return Err(self.error_at("horizon", "horizon T must be at least 1"));
        }
        if c.record_every == 0 {
            return Err(self.error_at("record_every", "record_every must be at least 1"));
        }
        let a = &c.analysis;
        if !(a.delta > 0.0 && a.delta <= 1.0) {
            return Err(self.error_at("delta", "delta must lie in (0, 1]"));
        }
        if !(a.rho > 0.0 && a.rho <= 1.0) {
            return Err(self.error_at("rho", "rho must lie in (0, 1]"));
        }
        if let Some(z) = a.zeta {
            if !(z.is_finite() && z >= 0.0) {
                return Err(self.error_at("zeta", "zeta must be finite and non-negative"));
            }
        }
        if let Some(s) = &c.smoothness {
            SmoothnessParams::new(s.lambda, s.mu)
                .map_err(|e| self.error_at("smoothness", e.to_string()))?;
        }
        if let Some(DeviationSpec::BidFraction { fraction }) = c.deviation {
            if !(fraction.is_finite() && fraction >= 0.0) {
                return Err(
                    self.error_at("fraction", "bid fraction must be finite and non-negative")
                );
            }
        }
        if let Some(space) = &c.value_space {
            if space.is_empty() {
                return Err(self.error_at("value_space", "value space is empty"));
            }
            for v in space {
                m.validate_values(v)
                    .map_err(|e| self.error_at("value_space", e.to_string()))?;
            }
        }
        Ok(())
    }

    pub fn mechanism(&self) -> Result<Mechanism, CliError> {
        Mechanism::from_descriptor(&self.config.mechanism)
            .map_err(|e| self.error_at("mechanism", e.to_string()))
    }

    pub fn populations(&self) -> Vec<Population> {
        self.config
            .populations
            .iter()
            .map(|t| Population::new(t.clone()))
            .collect()
    }

    pub fn smoothness(
        &self,
        lambda: Option<f64>,
        mu: Option<f64>,
    ) -> Result<SmoothnessParams, CliError> {
        let base = match &self.config.smoothness {
            Some(s) => SmoothnessParams {
                lambda: s.lambda,
                mu: s.mu,
            },
            None => default_smoothness(self.config.mechanism.kind),
        };
        SmoothnessParams::new(lambda.unwrap_or(base.lambda), mu.unwrap_or(base.mu))
            .map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn deviation(&self) -> Result<Box<dyn DeviationRule>, CliError> {
        self.config
            .deviation
            .as_ref()
            .map(DeviationSpec::build)
            .ok_or_else(|| self.error_at("deviation", "config has no \"deviation\" entry"))
    }

    pub fn value_space(&self) -> Vec<Vec<f64>> {
        self.config
            .value_space
            .clone()
            .unwrap_or_else(|| product_value_space(&self.config.populations))
    }

    pub fn sim_config(&self, seed: u64) -> Result<SimConfig, CliError> {
        let c = &self.config;
        let horizon = c
            .horizon
            .ok_or_else(|| self.error_at("horizon", "config has no \"horizon\" entry"))?;
        let sim = SimConfig {
            mechanism: self.mechanism()?,
            populations: self.populations(),
            horizon,
            feedback: c.feedback,
            seed,
            learners: c
                .population_learners
                .clone()
                .unwrap_or_else(|| vec![c.learner]),
            record_every: c.record_every,
            matchings: c.matchings,
        };
        sim.validate().map_err(|e| {
            let msg = e.to_string();
            let key = if msg.contains("matchings") {
                "matchings"
            } else if msg.contains("learner")
                || msg.contains("hedge")
                || msg.contains("gamma")
                || msg.contains("step")
            {
                "learner"
            } else {
                "populations"
            };
            self.error_at(key, msg)
        })?;
        Ok(sim)
    }
}
