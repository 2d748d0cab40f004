//! Analysis session: the six workflow steps as state transitions with
//! ordering checks. Compute-heavy steps are split into a pure `*Job` that can
//! run off the request path and an `install_*` that commits its result.

use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use covbal_core::balance::{balance_table, recommend_method, BalanceReport, Recommendation, SmdDenominator, BALANCE_THRESHOLD};
use covbal_core::dataset::{
    apply_trim, assign_roles, load_csv, overlap_report, summarize, CovariateSummary, OverlapEntry, ParseOptions,
    RoleAssignment, TrimRule,
};
use covbal_core::estimators::{run_all, EstimatorConfig, RunResult};
use covbal_core::outcome::{doubly_robust_effect, weighted_means_effect, EffectEstimate, EffectModel};
use covbal_core::sensitivity::{ov_analysis, SensitivityConfig, SensitivityResult};
use covbal_core::{Dataset, Estimand, Progress, WeightSet};
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};

/// Stamp attached to effects whose weights miss the balance threshold.
pub const ASSOCIATIONAL_STAMP: &str = "associational — balance threshold not met";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Data,
    Roles,
    Weights,
    Method,
    Effect,
    Sensitivity,
}

impl std::fmt::Display for Step {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Step::Data => "data",
            Step::Roles => "roles",
            Step::Weights => "weights",
            Step::Method => "method",
            Step::Effect => "effect",
            Step::Sensitivity => "sensitivity",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimLogEntry {
    pub rules: Vec<TrimRule>,
    pub removed_row_ids: Vec<u64>,
    pub removed_treated: usize,
    pub removed_control: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimPreview {
    pub dry_run: bool,
    pub removed: usize,
    pub removed_treated: usize,
    pub removed_control: usize,
    pub removed_row_ids: Vec<u64>,
    pub resolved_rules: Vec<TrimRule>,
    /// Covariate summaries of the dataset that would remain.
    pub summaries_after: Vec<CovariateSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsStage {
    pub config: EstimatorConfig,
    pub run: RunResult,
    pub balance: BalanceReport,
    pub recommendation: Recommendation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodChoice {
    pub chosen: String,
    pub recommended: Option<String>,
    /// The analyst picked something other than the recommendation.
    pub overrides_recommendation: bool,
    /// The chosen method meets the balance threshold.
    pub balance_feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectStage {
    pub estimate: EffectEstimate,
    pub balance_feasible: bool,
    pub stamp: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRequest {
    #[serde(default = "default_model")]
    pub model: EffectModel,
    #[serde(default)]
    pub covariate_subset: Option<Vec<String>>,
}

fn default_model() -> EffectModel {
    EffectModel::DoublyRobust
}

impl Default for EffectRequest {
    fn default() -> Self {
        Self { model: default_model(), covariate_subset: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub created_at: u64,
    pub updated_at: u64,
    /// Bumped on every mutation; background jobs only commit against the
    /// revision they started from.
    pub revision: u64,
    pub source: Dataset,
    pub roles: Option<RoleAssignment>,
    /// Configured and trimmed dataset.
    pub dataset: Option<Dataset>,
    pub estimand: Estimand,
    pub trims: Vec<TrimLogEntry>,
    pub weights: Option<WeightsStage>,
    pub choice: Option<MethodChoice>,
    pub effect: Option<EffectStage>,
    pub sensitivity: Option<SensitivityResult>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl Session {
    pub fn from_csv(id: String, bytes: &[u8], options: &ParseOptions) -> ServiceResult<Self> {
        let source = load_csv(bytes, options)?;
        let t = now();
        Ok(Self {
            id,
            created_at: t,
            updated_at: t,
            revision: 0,
            source,
            roles: None,
            dataset: None,
            estimand: Estimand::ATE,
            trims: Vec::new(),
            weights: None,
            choice: None,
            effect: None,
            sensitivity: None,
        })
    }

    fn touch(&mut self) {
        self.revision += 1;
        self.updated_at = now();
    }

    /// Drops every artifact computed at or after `step`.
    fn invalidate_from(&mut self, step: Step) {
        if step <= Step::Weights {
            self.weights = None;
        }
        if step <= Step::Method {
            self.choice = None;
        }
        if step <= Step::Effect {
            self.effect = None;
        }
        self.sensitivity = None;
    }

    pub fn completed(&self) -> BTreeMap<Step, bool> {
        BTreeMap::from([
            (Step::Data, true),
            (Step::Roles, self.dataset.is_some()),
            (Step::Weights, self.weights.is_some()),
            (Step::Method, self.choice.is_some()),
            (Step::Effect, self.effect.is_some()),
            (Step::Sensitivity, self.sensitivity.is_some()),
        ])
    }

    /// Fails naming the earliest incomplete step up to and including `step`.
    fn require(&self, step: Step) -> ServiceResult<()> {
        match self.completed().into_iter().find(|&(s, done)| s <= step && !done) {
            Some((missing, _)) => Err(ServiceError::Prerequisite { step: missing }),
            None => Ok(()),
        }
    }

    pub fn dataset(&self) -> ServiceResult<&Dataset> {
        self.require(Step::Roles)?;
        self.dataset.as_ref().ok_or(ServiceError::Prerequisite { step: Step::Roles })
    }

    pub fn weights_stage(&self) -> ServiceResult<&WeightsStage> {
        self.require(Step::Weights)?;
        self.weights.as_ref().ok_or(ServiceError::Prerequisite { step: Step::Weights })
    }

    pub fn choice(&self) -> ServiceResult<&MethodChoice> {
        self.require(Step::Method)?;
        self.choice.as_ref().ok_or(ServiceError::Prerequisite { step: Step::Method })
    }

    pub fn effect_stage(&self) -> ServiceResult<&EffectStage> {
        self.require(Step::Effect)?;
        self.effect.as_ref().ok_or(ServiceError::Prerequisite { step: Step::Effect })
    }

    pub fn chosen_weights(&self) -> ServiceResult<&WeightSet> {
        let choice = self.choice()?;
        self.weights_stage()?
            .run
            .weights
            .get(&choice.chosen)
            .ok_or_else(|| ServiceError::Internal(format!("chosen method `{}` has no weights", choice.chosen)))
    }

    // -- step 1 and data configuration ----------------------------------

    pub fn set_roles(&mut self, roles: RoleAssignment) -> ServiceResult<()> {
        let configured = assign_roles(&self.source, &roles)?;
        self.roles = Some(roles);
        self.dataset = Some(configured);
        self.trims.clear();
        self.invalidate_from(Step::Weights);
        self.touch();
        Ok(())
    }

    pub fn set_estimand(&mut self, e: Estimand) {
        if e != self.estimand {
            self.estimand = e;
            self.invalidate_from(Step::Weights);
        }
        self.touch();
    }

    // -- step 2 ----------------------------------------------------------

    pub fn summary(&self) -> ServiceResult<Vec<CovariateSummary>> {
        Ok(summarize(self.dataset()?)?)
    }

    pub fn overlap(&self, bins: usize) -> ServiceResult<Vec<OverlapEntry>> {
        Ok(overlap_report(self.dataset()?, bins)?)
    }

    /// Previews or commits trimming. A dry run leaves the session untouched.
    pub fn trim(&mut self, rules: &[TrimRule], dry_run: bool) -> ServiceResult<TrimPreview> {
        let d = self.dataset()?;
        let out = apply_trim(d, rules)?;
        let t = d.treatment()?;
        let removed: std::collections::HashSet<u64> = out.removed_row_ids.iter().copied().collect();
        let removed_treated = d
            .row_ids()
            .iter()
            .zip(t)
            .filter(|(id, ti)| **ti == 1.0 && removed.contains(id))
            .count();
        let preview = TrimPreview {
            dry_run,
            removed: out.removed_row_ids.len(),
            removed_treated,
            removed_control: out.removed_row_ids.len() - removed_treated,
            removed_row_ids: out.removed_row_ids.clone(),
            resolved_rules: out.resolved_rules.clone(),
            summaries_after: summarize(&out.dataset)?,
        };
        if !dry_run && !rules.is_empty() {
            self.trims.push(TrimLogEntry {
                rules: out.resolved_rules,
                removed_row_ids: out.removed_row_ids,
                removed_treated: preview.removed_treated,
                removed_control: preview.removed_control,
            });
            self.dataset = Some(out.dataset);
            self.invalidate_from(Step::Weights);
            self.touch();
        }
        Ok(preview)
    }

    // -- steps 3 and 4 ---------------------------------------------------

    pub fn weights_job(&self, config: EstimatorConfig) -> ServiceResult<WeightsJob> {
        Ok(WeightsJob {
            dataset: self.dataset()?.clone(),
            estimand: self.estimand,
            config,
            revision: self.revision,
        })
    }

    pub fn install_weights(&mut self, job_revision: u64, stage: WeightsStage) -> ServiceResult<()> {
        self.check_revision(job_revision)?;
        self.weights = Some(stage);
        self.invalidate_from(Step::Method);
        self.touch();
        Ok(())
    }

    /// Records the analyst's method; `None` takes the recommendation.
    pub fn choose_method(&mut self, method: Option<&str>) -> ServiceResult<&MethodChoice> {
        let stage = self.weights_stage()?;
        let rec = &stage.recommendation;
        let chosen = match method {
            Some(m) => m.to_string(),
            None => rec.recommended.clone().ok_or_else(|| {
                ServiceError::validation("method", "no method meets the balance threshold; name one explicitly")
            })?,
        };
        let key = stage
            .run
            .weights
            .keys()
            .find(|k| k.eq_ignore_ascii_case(&chosen))
            .cloned()
            .ok_or_else(|| match stage.run.failures.get(&chosen) {
                Some(err) => ServiceError::validation("method", format!("`{chosen}` failed to fit: {err}")),
                None => ServiceError::validation("method", format!("unknown method `{chosen}`")),
            })?;
        let feasible = rec.ranking.iter().any(|r| r.method == key && r.feasible);
        let choice = MethodChoice {
            overrides_recommendation: rec.recommended.as_deref() != Some(key.as_str()),
            recommended: rec.recommended.clone(),
            chosen: key,
            balance_feasible: feasible,
        };
        self.choice = Some(choice);
        self.invalidate_from(Step::Effect);
        self.touch();
        Ok(self.choice.as_ref().expect("just set"))
    }

    // -- step 5 ----------------------------------------------------------

    pub fn estimate_effect(&mut self, req: &EffectRequest) -> ServiceResult<&EffectStage> {
        let d = self.dataset()?;
        let w = self.chosen_weights()?;
        let feasible = self.choice()?.balance_feasible;
        let estimate = match req.model {
            EffectModel::DoublyRobust => doubly_robust_effect(d, w, req.covariate_subset.as_deref())?,
            EffectModel::WeightedMeans => weighted_means_effect(d.outcome()?, d.treatment()?, w)?,
        };
        self.effect = Some(EffectStage {
            estimate,
            balance_feasible: feasible,
            stamp: (!feasible).then(|| ASSOCIATIONAL_STAMP.to_string()),
        });
        self.invalidate_from(Step::Sensitivity);
        self.touch();
        Ok(self.effect.as_ref().expect("just set"))
    }

    // -- step 6 ----------------------------------------------------------

    pub fn sensitivity_job(&self, config: SensitivityConfig) -> ServiceResult<SensitivityJob> {
        config.validate()?;
        let effect = self.effect_stage()?.estimate.clone();
        Ok(SensitivityJob {
            dataset: self.dataset()?.clone(),
            weights: self.chosen_weights()?.clone(),
            effect,
            estimators: self.weights_stage()?.config.clone(),
            config,
            revision: self.revision,
        })
    }

    pub fn install_sensitivity(&mut self, job_revision: u64, result: SensitivityResult) -> ServiceResult<()> {
        self.check_revision(job_revision)?;
        self.sensitivity = Some(result);
        self.touch();
        Ok(())
    }

    fn check_revision(&self, job_revision: u64) -> ServiceResult<()> {
        if job_revision == self.revision {
            Ok(())
        } else {
            Err(ServiceError::Conflict("session changed while the job was running; result discarded".into()))
        }
    }

    /// Weight export: `row_id` then one column per fitted method.
    pub fn weights_csv(&self) -> ServiceResult<String> {
        let d = self.dataset()?;
        let stage = self.weights_stage()?;
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["row_id".to_string()];
        header.extend(stage.run.weights.keys().cloned());
        let io = |e: csv::Error| ServiceError::Internal(e.to_string());
        w.write_record(&header).map_err(io)?;
        for (i, id) in d.row_ids().iter().enumerate() {
            let mut rec = vec![id.to_string()];
            rec.extend(stage.run.weights.values().map(|ws| ws.weights[i].to_string()));
            w.write_record(&rec).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| ServiceError::Internal(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Balance export: one row per covariate, SMD and KS per method.
    pub fn balance_csv(&self) -> ServiceResult<String> {
        let report = &self.weights_stage()?.balance;
        let methods: Vec<&String> = report.summaries.keys().collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["covariate".to_string(), "unweighted_smd".into(), "unweighted_ks".into()];
        for m in &methods {
            header.push(format!("{m}_smd"));
            header.push(format!("{m}_ks"));
        }
        let io = |e: csv::Error| ServiceError::Internal(e.to_string());
        w.write_record(&header).map_err(io)?;
        for row in &report.rows {
            let mut rec = vec![row.covariate.clone(), row.unweighted.smd.to_string(), row.unweighted.ks.to_string()];
            for m in &methods {
                let b = row.by_method[*m];
                rec.push(b.smd.to_string());
                rec.push(b.ks.to_string());
            }
            w.write_record(&rec).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| ServiceError::Internal(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn group_sizes(&self) -> ServiceResult<(usize, usize)> {
        Ok(self.dataset()?.group_sizes()?)
    }
}

/// Inputs for fitting all methods and assessing balance.
#[derive(Debug, Clone)]
pub struct WeightsJob {
    dataset: Dataset,
    estimand: Estimand,
    config: EstimatorConfig,
    pub revision: u64,
}

impl WeightsJob {
    pub fn run(self, progress: Option<&Progress>) -> ServiceResult<WeightsStage> {
        let run = run_all(&self.dataset, self.estimand, &self.config, progress)?;
        let balance = balance_table(&self.dataset, &run.weights, self.estimand, SmdDenominator::Weighted)?;
        let recommendation = recommend_method(&balance.summaries, BALANCE_THRESHOLD);
        Ok(WeightsStage { config: self.config, run, balance, recommendation })
    }
}

#[derive(Debug, Clone)]
pub struct SensitivityJob {
    dataset: Dataset,
    weights: WeightSet,
    effect: EffectEstimate,
    estimators: EstimatorConfig,
    config: SensitivityConfig,
    pub revision: u64,
}

impl SensitivityJob {
    pub fn run(self, progress: Option<&Progress>) -> ServiceResult<SensitivityResult> {
        Ok(ov_analysis(&self.dataset, &self.weights, &self.effect, &self.estimators, &self.config, progress)?)
    }
}
