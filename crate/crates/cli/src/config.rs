//! JSON configuration documents read by the subcommands.

use std::collections::BTreeMap;
use std::path::Path;

use mcglm::estimation::FitOptions;
use mcglm::model::{CorrelationStructure, LinkFunction, PowerPolicy, VarianceFunction};
use mcglm::simulate::{Distribution, GridTarget, Scenario, StudyConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkName {
    Identity,
    Log,
    Logit,
}

impl From<LinkName> for LinkFunction {
    fn from(l: LinkName) -> Self {
        match l {
            LinkName::Identity => LinkFunction::Identity,
            LinkName::Log => LinkFunction::Log,
            LinkName::Logit => LinkFunction::Logit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceName {
    /// μ^p; p = 0 gives constant variance.
    Tweedie,
    PoissonTweedie,
    Binomial,
}

impl From<VarianceName> for VarianceFunction {
    fn from(v: VarianceName) -> Self {
        match v {
            VarianceName::Tweedie => VarianceFunction::Power,
            VarianceName::PoissonTweedie => VarianceFunction::PoissonTweedie,
            VarianceName::Binomial => VarianceFunction::binomial(),
        }
    }
}

/// Power parameter: both the value and whether it is estimated must be given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerConfig {
    pub value: f64,
    pub estimate: bool,
}

impl From<PowerConfig> for PowerPolicy {
    fn from(p: PowerConfig) -> Self {
        if p.estimate {
            PowerPolicy::Estimated(p.value)
        } else {
            PowerPolicy::Fixed(p.value)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseConfig {
    /// Data column holding the response.
    pub name: String,
    pub link: LinkName,
    pub variance: VarianceName,
    pub power: PowerConfig,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub responses: Vec<ResponseConfig>,
    /// Formula entries such as "moment*group" or "x"; shared by all responses.
    pub terms: Vec<String>,
    #[serde(default = "default_true")]
    pub intercept: bool,
    /// Level order of categorical variables; the first level is the reference.
    #[serde(default)]
    pub levels: BTreeMap<String, Vec<String>>,
    /// Further columns to treat as categorical even if they look numeric.
    #[serde(default)]
    pub factors: Vec<String>,
    /// Rows sharing a value of this column form the blocks of Z₁.
    #[serde(default)]
    pub group_column: Option<String>,
    #[serde(default)]
    pub correlation: CorrelationStructure,
    #[serde(default)]
    pub options: FitOptions,
}

impl ModelConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.responses.is_empty() {
            return Err(CliError::Config("at least one response is required".into()));
        }
        let mut names: Vec<&str> = self.responses.iter().map(|r| r.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::Config("response names must be distinct".into()));
        }
        self.options.validate()?;
        Ok(())
    }
}

/// Hypothesis file for `wald`: either an explicit L over named parameters or
/// a Kronecker form over the β or τ block of every response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HypothesisConfig {
    Explicit {
        parameters: Vec<String>,
        #[serde(rename = "L")]
        l: Vec<Vec<f64>>,
        #[serde(default)]
        c: Option<Vec<f64>>,
    },
    Kronecker {
        block: BlockName,
        #[serde(rename = "G")]
        g: Vec<Vec<f64>>,
        #[serde(rename = "F")]
        f: Vec<Vec<f64>>,
        #[serde(default)]
        c: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockName {
    Beta,
    Tau,
}

/// Study file for `simulate`; the seed comes from the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyFile {
    pub scenario: Scenario,
    pub distribution: Distribution,
    pub target: GridTarget,
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub match_correlation: bool,
    #[serde(default)]
    pub fit_options: FitOptions,
}

fn default_alpha() -> f64 {
    0.05
}

impl StudyFile {
    pub fn into_config(self, seed: u64) -> StudyConfig {
        StudyConfig {
            scenario: self.scenario,
            distribution: self.distribution,
            target: self.target,
            sample_sizes: self.sample_sizes,
            replicates: self.replicates,
            alpha: self.alpha,
            seed,
            match_correlation: self.match_correlation,
            fit_options: self.fit_options,
        }
    }
}
