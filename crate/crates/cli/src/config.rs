//! JSON run configuration: the instance block is deserialized straight into
//! the library type, the policy block resolves to a concrete policy builder.
//!
//! Parsing is strict end to end. Unknown fields are errors, and the policy
//! block goes through a raw struct so that knobs belonging to one policy are
//! rejected when another is selected.

use std::fs;
use std::path::Path;

use assort_core::policy::{
    EpochUcbConfig, HyperparameterMode, SolverChoice, UcbConfig, UcbState,
};
use assort_core::sim::{AssortmentPolicy, Instance, InstanceConfig, OraclePolicy};
use assort_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverRaw {
    name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    restarts: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    directions: Option<usize>,
}

/// Solver selection as it appears in config files and `solve` flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SolverRaw", into = "SolverRaw")]
pub struct SolverSpec(pub SolverChoice);

impl TryFrom<SolverRaw> for SolverSpec {
    type Error = Error;

    fn try_from(raw: SolverRaw) -> Result<Self> {
        let reject = |field: &str, ok: bool| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "solver field `{field}` does not apply to `{}`",
                    raw.name
                )))
            }
        };
        let choice = match raw.name.as_str() {
            "brute" => {
                reject("restarts", raw.restarts.is_none())?;
                reject("epsilon0", raw.epsilon0.is_none())?;
                reject("alpha", raw.alpha.is_none())?;
                reject("directions", raw.directions.is_none())?;
                SolverChoice::Brute
            }
            "greedy" => {
                reject("epsilon0", raw.epsilon0.is_none())?;
                reject("alpha", raw.alpha.is_none())?;
                reject("directions", raw.directions.is_none())?;
                SolverChoice::Greedy { restarts: raw.restarts.unwrap_or(1) }
            }
            "dp-univariate" => {
                reject("restarts", raw.restarts.is_none())?;
                reject("alpha", raw.alpha.is_none())?;
                reject("directions", raw.directions.is_none())?;
                SolverChoice::DpUnivariate { epsilon0: raw.epsilon0.unwrap_or(0.01) }
            }
            "dp-multivariate" => {
                reject("restarts", raw.restarts.is_none())?;
                SolverChoice::DpMultivariate {
                    alpha: raw.alpha.unwrap_or(3.0),
                    epsilon0: raw.epsilon0.unwrap_or(0.01),
                    directions: raw.directions.unwrap_or(16),
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown solver `{other}`; expected one of brute, greedy, \
                     dp-univariate, dp-multivariate"
                )))
            }
        };
        Ok(Self(choice))
    }
}

impl From<SolverSpec> for SolverRaw {
    fn from(spec: SolverSpec) -> Self {
        match spec.0 {
            SolverChoice::Brute => Self {
                name: "brute".into(),
                restarts: None,
                epsilon0: None,
                alpha: None,
                directions: None,
            },
            SolverChoice::Greedy { restarts } => Self {
                name: "greedy".into(),
                restarts: Some(restarts),
                epsilon0: None,
                alpha: None,
                directions: None,
            },
            SolverChoice::DpUnivariate { epsilon0 } => Self {
                name: "dp-univariate".into(),
                restarts: None,
                epsilon0: Some(epsilon0),
                alpha: None,
                directions: None,
            },
            SolverChoice::DpMultivariate { alpha, epsilon0, directions } => Self {
                name: "dp-multivariate".into(),
                restarts: None,
                epsilon0: Some(epsilon0),
                alpha: Some(alpha),
                directions: Some(directions),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyRaw {
    name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exploration_periods: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pilot_radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    omega: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ridge: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    refresh_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    solver: Option<SolverSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    width_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    optimistic_weight: Option<f64>,
}

/// Overrides applied on top of the preset schedule for the adaptive policy.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UcbOverrides {
    pub exploration_periods: Option<usize>,
    pub tau: Option<f64>,
    pub pilot_radius: Option<f64>,
    pub omega: Option<f64>,
    pub ridge: Option<f64>,
    pub refresh_every: Option<usize>,
    pub solver: Option<SolverChoice>,
}

/// Fully resolved policy selection.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    MleUcb { mode: HyperparameterMode, overrides: UcbOverrides },
    EpochUcb { width_scale: f64, optimistic_weight: f64 },
    Oracle,
}

impl Default for PolicySpec {
    fn default() -> Self {
        Self::MleUcb {
            mode: HyperparameterMode::Experiment,
            overrides: UcbOverrides::default(),
        }
    }
}

impl TryFrom<PolicyRaw> for PolicySpec {
    type Error = Error;

    fn try_from(raw: PolicyRaw) -> Result<Self> {
        let reject = |field: &str, ok: bool| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "policy field `{field}` does not apply to `{}`",
                    raw.name
                )))
            }
        };
        match raw.name.as_str() {
            "mle-ucb" => {
                reject("width_scale", raw.width_scale.is_none())?;
                reject("optimistic_weight", raw.optimistic_weight.is_none())?;
                let pilot_radius = raw.pilot_radius;
                let mode = match raw.mode.as_deref() {
                    None | Some("experiment") => HyperparameterMode::Experiment,
                    Some("theory") => HyperparameterMode::Theory,
                    Some(other) => {
                        return Err(Error::Config(format!(
                            "unknown mode `{other}`; expected theory or experiment"
                        )))
                    }
                };
                Ok(Self::MleUcb {
                    mode,
                    overrides: UcbOverrides {
                        exploration_periods: raw.exploration_periods,
                        tau: raw.tau,
                        pilot_radius,
                        omega: raw.omega,
                        ridge: raw.ridge,
                        refresh_every: raw.refresh_every,
                        solver: raw.solver.map(|s| s.0),
                    },
                })
            }
            "epoch-ucb" => {
                reject("mode", raw.mode.is_none())?;
                reject("exploration_periods", raw.exploration_periods.is_none())?;
                reject("tau", raw.tau.is_none())?;
                reject("pilot_radius", raw.pilot_radius.is_none())?;
                reject("omega", raw.omega.is_none())?;
                reject("ridge", raw.ridge.is_none())?;
                reject("refresh_every", raw.refresh_every.is_none())?;
                reject("solver", raw.solver.is_none())?;
                let defaults = EpochUcbConfig::default();
                Ok(Self::EpochUcb {
                    width_scale: raw.width_scale.unwrap_or(defaults.width_scale),
                    optimistic_weight: raw
                        .optimistic_weight
                        .unwrap_or(defaults.optimistic_weight),
                })
            }
            "oracle" => {
                reject("mode", raw.mode.is_none())?;
                reject("exploration_periods", raw.exploration_periods.is_none())?;
                reject("tau", raw.tau.is_none())?;
                reject("pilot_radius", raw.pilot_radius.is_none())?;
                reject("omega", raw.omega.is_none())?;
                reject("ridge", raw.ridge.is_none())?;
                reject("refresh_every", raw.refresh_every.is_none())?;
                reject("solver", raw.solver.is_none())?;
                reject("width_scale", raw.width_scale.is_none())?;
                reject("optimistic_weight", raw.optimistic_weight.is_none())?;
                Ok(Self::Oracle)
            }
            other => Err(Error::Config(format!(
                "unknown policy `{other}`; expected one of mle-ucb, epoch-ucb, oracle"
            ))),
        }
    }
}

impl From<PolicySpec> for PolicyRaw {
    fn from(spec: PolicySpec) -> Self {
        let blank = Self {
            name: String::new(),
            mode: None,
            exploration_periods: None,
            tau: None,
            pilot_radius: None,
            omega: None,
            ridge: None,
            refresh_every: None,
            solver: None,
            width_scale: None,
            optimistic_weight: None,
        };
        match spec {
            PolicySpec::MleUcb { mode, overrides } => Self {
                name: "mle-ucb".into(),
                mode: Some(
                    match mode {
                        HyperparameterMode::Theory => "theory",
                        HyperparameterMode::Experiment => "experiment",
                    }
                    .into(),
                ),
                exploration_periods: overrides.exploration_periods,
                tau: overrides.tau,
                pilot_radius: overrides.pilot_radius,
                omega: overrides.omega,
                ridge: overrides.ridge,
                refresh_every: overrides.refresh_every,
                solver: overrides.solver.map(SolverSpec),
                ..blank
            },
            PolicySpec::EpochUcb { width_scale, optimistic_weight } => Self {
                name: "epoch-ucb".into(),
                width_scale: Some(width_scale),
                optimistic_weight: Some(optimistic_weight),
                ..blank
            },
            PolicySpec::Oracle => Self { name: "oracle".into(), ..blank },
        }
    }
}

/// Serializable wrapper so the policy block round-trips through the raw
/// struct above.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyRaw", into = "PolicyRaw")]
pub struct PolicyDoc(pub PolicySpec);

impl TryFrom<PolicyRaw> for PolicyDoc {
    type Error = Error;

    fn try_from(raw: PolicyRaw) -> Result<Self> {
        PolicySpec::try_from(raw).map(Self)
    }
}

impl From<PolicyDoc> for PolicyRaw {
    fn from(doc: PolicyDoc) -> Self {
        doc.0.into()
    }
}

impl PolicySpec {
    pub fn id(&self) -> &'static str {
        match self {
            Self::MleUcb { .. } => "mle-ucb",
            Self::EpochUcb { .. } => "epoch-ucb",
            Self::Oracle => "oracle",
        }
    }

    /// Preset schedule for the run shape, with config overrides applied.
    /// Errors for non-adaptive policies.
    pub fn ucb_config(&self, horizon: usize, d: usize, k: usize) -> Result<UcbConfig> {
        match self {
            Self::MleUcb { mode, overrides } => {
                let mut cfg = UcbConfig::default_for(horizon, d, k, *mode);
                if let Some(t0) = overrides.exploration_periods {
                    cfg.exploration_periods = t0;
                }
                if let Some(tau) = overrides.tau {
                    cfg.tau = tau;
                }
                if let Some(radius) = overrides.pilot_radius {
                    cfg.pilot_radius = radius;
                }
                if let Some(omega) = overrides.omega {
                    cfg.omega = omega;
                }
                if let Some(ridge) = overrides.ridge {
                    cfg.ridge = ridge;
                    cfg.mle.ridge = ridge;
                }
                if let Some(refresh) = overrides.refresh_every {
                    cfg.refresh_every = refresh;
                }
                if let Some(solver) = overrides.solver {
                    cfg.solver = solver;
                }
                Ok(cfg)
            }
            other => Err(Error::Config(format!(
                "policy `{}` has no adaptive configuration",
                other.id()
            ))),
        }
    }

    /// Builds a fresh policy for one replication on `instance`.
    pub fn build(&self, instance: &Instance) -> Result<Box<dyn AssortmentPolicy>> {
        let cfg = instance.config();
        match self {
            Self::MleUcb { .. } => {
                let ucb = self.ucb_config(cfg.horizon, cfg.d, cfg.k)?;
                Ok(Box::new(UcbState::new(cfg.d, ucb)?))
            }
            Self::EpochUcb { width_scale, optimistic_weight } => {
                let epoch = EpochUcbConfig {
                    capacity: cfg.k,
                    width_scale: *width_scale,
                    optimistic_weight: *optimistic_weight,
                };
                Ok(Box::new(EpochUcbState::new(epoch)?))
            }
            Self::Oracle => Ok(Box::new(OraclePolicy::new(instance.theta0().clone(), cfg.k))),
        }
    }

    /// Builds the adaptive policy state directly; errors for other policies.
    pub fn build_ucb(&self, instance: &Instance) -> Result<UcbState> {
        let cfg = instance.config();
        let ucb = self.ucb_config(cfg.horizon, cfg.d, cfg.k)?;
        UcbState::new(cfg.d, ucb)
    }
}

use assort_core::policy::EpochUcbState;

fn default_replications() -> u64 {
    20
}

/// One run document: instance, policy, replication count, and an optional
/// worker-thread cap.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub instance: InstanceConfig,
    #[serde(default = "default_policy_doc")]
    pub policy: PolicyDoc,
    #[serde(default = "default_replications")]
    pub replications: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

fn default_policy_doc() -> PolicyDoc {
    PolicyDoc(PolicySpec::default())
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.instance.validate()?;
        if self.replications == 0 {
            return Err(Error::Config("replications must be >= 1".into()));
        }
        if let Some(0) = self.threads {
            return Err(Error::Config("threads must be >= 1 when given".into()));
        }
        Ok(())
    }
}

/// Reads and validates a run document, tagging errors with the file path
/// (and, for JSON syntax or schema errors, the line and column).
pub fn load_run_config(path: &Path) -> std::result::Result<RunConfig, String> {
    let text =
        fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let config: RunConfig = serde_json::from_str(&text)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    config
        .validate()
        .map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(config)
}
