//! TOML run configuration.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use covbal_core::dataset::{ColumnRole, ParseOptions, RoleAssignment, TrimRule};
use covbal_core::outcome::EffectModel;
use covbal_core::{Estimand, EstimatorConfig, SensitivityConfig};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data: DataConfig,
    pub roles: RolesConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub trim: Vec<TrimRule>,
    #[serde(default)]
    pub estimators: EstimatorConfig,
    #[serde(default)]
    pub sensitivity: SensitivitySettings,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub na_tokens: Vec<String>,
    pub delimiter: char,
}

impl Default for DataConfig {
    fn default() -> Self {
        let d = ParseOptions::default();
        Self { na_tokens: d.na_tokens, delimiter: d.delimiter as char }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolesConfig {
    pub treatment: String,
    pub treated_level: String,
    pub outcome: String,
    #[serde(default)]
    pub continuous: Vec<String>,
    #[serde(default)]
    pub binary: Vec<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
}

/// `"auto"` takes the recommendation; anything else names a method.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MethodSelection {
    Auto,
    Named(String),
}

impl<'de> Deserialize<'de> for MethodSelection {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(if s.eq_ignore_ascii_case("auto") { MethodSelection::Auto } else { MethodSelection::Named(s) })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub estimand: Estimand,
    pub method: MethodSelection,
    pub effect_model: EffectModel,
    /// Outcome-model covariates; all confounders when absent.
    pub covariate_subset: Option<Vec<String>>,
    /// Overrides the estimator and sensitivity seeds when set.
    pub seed: Option<u64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            estimand: Estimand::ATE,
            method: MethodSelection::Auto,
            effect_model: EffectModel::DoublyRobust,
            covariate_subset: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct SensitivitySettings {
    pub enabled: bool,
    #[serde(flatten)]
    pub config: SensitivityConfig,
}

impl Default for SensitivitySettings {
    fn default() -> Self {
        Self { enabled: true, config: SensitivityConfig::default() }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("config {}", path.display()))?;
        if let Some(seed) = cfg.analysis.seed {
            cfg.estimators.seed = seed;
            cfg.sensitivity.config.seed = seed;
        }
        Ok(cfg)
    }

    pub fn parse_options(&self) -> Result<ParseOptions> {
        if !self.data.delimiter.is_ascii() {
            bail!("config: data.delimiter must be a single ASCII character");
        }
        Ok(ParseOptions { na_tokens: self.data.na_tokens.clone(), delimiter: self.data.delimiter as u8 })
    }

    /// Role map; columns not listed are ignored.
    pub fn roles(&self) -> Result<RoleAssignment> {
        let r = &self.roles;
        let mut roles = BTreeMap::new();
        let listed = [(&r.treatment, ColumnRole::Treatment), (&r.outcome, ColumnRole::Outcome)]
            .into_iter()
            .map(|(c, role)| (c.clone(), role))
            .chain(r.continuous.iter().map(|c| (c.clone(), ColumnRole::ContinuousConfounder)))
            .chain(r.binary.iter().map(|c| (c.clone(), ColumnRole::BinaryConfounder)))
            .chain(r.categorical.iter().map(|c| (c.clone(), ColumnRole::CategoricalConfounder)));
        for (column, role) in listed {
            if roles.insert(column.clone(), role).is_some() {
                bail!("config: column `{column}` is given more than one role");
            }
        }
        Ok(RoleAssignment { roles, treated_level: r.treated_level.clone() })
    }
}
