//! Declarative fit configuration: one TOML file with sections
//! {data, model, priors, sampler, output}. Command-line flags override
//! file values; sensitivity sweeps substitute single priors
//! programmatically.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crashlattice::inference::SamplerConfig;
use crashlattice::model::{ModelSpec, PriorTable, Variant};
use crashlattice::priors::PriorSpec;

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub data: DataSection,
    pub model: ModelSection,
    #[serde(default)]
    pub priors: PriorsSection,
    #[serde(default)]
    pub sampler: SamplerConfig,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataSection {
    pub bundle: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSection {
    pub variant: Variant,
    #[serde(default = "default_true")]
    pub include_spatial_theta: bool,
    /// Restrict the regression covariates to these bundle columns;
    /// default: every column with the "z" role.
    #[serde(default)]
    pub regression_covariates: Option<Vec<String>>,
    /// Restrict the exposure covariates; default: every "ztilde" column.
    #[serde(default)]
    pub exposure_covariates: Option<Vec<String>>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PriorsSection {
    pub fixed_effects: Option<PriorSpec>,
    pub beta_x: Option<PriorSpec>,
    pub tau_theta: Option<PriorSpec>,
    pub tau_eps: Option<PriorSpec>,
    pub tau_u: Option<PriorSpec>,
    pub tau_phi: Option<PriorSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputSection {
    pub directory: PathBuf,
}

impl FitConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
    }

    /// Assemble the model spec: configured priors override the defaults
    /// (N(0,50) fixed effects, Gamma(1,5e-5) spatial precisions,
    /// PC(1,0.1)/PC(2,0.1) error precisions).
    pub fn model_spec(&self) -> Result<ModelSpec, CliError> {
        let d = PriorTable::default();
        let priors = PriorTable {
            fixed_effects: self.priors.fixed_effects.unwrap_or(d.fixed_effects),
            beta_x: self.priors.beta_x.or(d.beta_x),
            tau_theta: self.priors.tau_theta.unwrap_or(d.tau_theta),
            tau_eps: self.priors.tau_eps.unwrap_or(d.tau_eps),
            tau_u: self.priors.tau_u.unwrap_or(d.tau_u),
            tau_phi: self.priors.tau_phi.unwrap_or(d.tau_phi),
        };
        let spec = ModelSpec {
            variant: self.model.variant,
            priors,
            include_spatial_theta: self.model.include_spatial_theta,
        };
        spec.validate().map_err(CliError::from)?;
        Ok(spec)
    }

    /// Substitute one prior, the primitive sensitivity sweeps are built
    /// from. Valid parameters: beta_x, tau_eps, tau_u.
    pub fn with_prior_override(&self, parameter: &str, prior: PriorSpec) -> Result<Self, CliError> {
        let mut out = self.clone();
        match parameter {
            "beta_x" => out.priors.beta_x = Some(prior),
            "tau_eps" => out.priors.tau_eps = Some(prior),
            "tau_u" => out.priors.tau_u = Some(prior),
            other => {
                return Err(CliError::validation(format!(
                    "sensitivity sweeps support beta_x, tau_eps, tau_u; got {other:?}"
                )))
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default)]
    pub alternative: Vec<SweepAlternative>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepAlternative {
    pub parameter: String,
    pub prior: PriorSpec,
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
    }
}

pub fn load_scenario(path: &Path) -> Result<crashlattice::sim::SimScenario, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrunePolicyArg {
    KeepLargest,
    MinSize(usize),
}

impl std::str::FromStr for PrunePolicyArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "keep-largest" {
            return Ok(PrunePolicyArg::KeepLargest);
        }
        if let Some(k) = s.strip_prefix("min-size=") {
            return k
                .parse::<usize>()
                .map(PrunePolicyArg::MinSize)
                .map_err(|_| format!("invalid min-size value in {s:?}"));
        }
        Err(format!(
            "prune policy must be keep-largest or min-size=<k>, got {s:?}"
        ))
    }
}
