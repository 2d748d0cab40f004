//! The nine weight-producing methods and a batch runner.

mod cbps;
mod entropy;
mod gbm;
mod logistic;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cbps::{fit_cbps, CbpsConfig, CbpsFit};
pub use entropy::{entropy_dual, fit_entropy_balancing, DualEval, EbFit, EbSolve, EntropyConfig};
pub use gbm::{boost, fit_gbm, GbmFit, GbmParams, GbmRun, StopRule, TracePoint, Tree, TreeNode};
pub use logistic::{fit_logistic_irls, fit_logistic_matrix, log_likelihood, LogisticConfig, LogisticFit};
pub(crate) use logistic::sigmoid;

use crate::dataset::{design_matrix, Dataset, DesignMatrix};
use crate::error::{Error, Result};
use crate::job::{self, Progress};
use crate::weights::{ps_to_weights, Estimand, PropensityScores, WeightSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodId {
    Lr,
    GbmEs,
    GbmKs,
    Cbps(u8),
    Eb(u8),
}

impl MethodId {
    pub const ALL: [MethodId; 9] = [
        MethodId::Lr,
        MethodId::GbmEs,
        MethodId::GbmKs,
        MethodId::Cbps(1),
        MethodId::Cbps(2),
        MethodId::Cbps(3),
        MethodId::Eb(1),
        MethodId::Eb(2),
        MethodId::Eb(3),
    ];
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodId::Lr => f.write_str("LR"),
            MethodId::GbmEs => f.write_str("GBM_ES"),
            MethodId::GbmKs => f.write_str("GBM_KS"),
            MethodId::Cbps(k) => write!(f, "CBPS#{k}"),
            MethodId::Eb(k) => write!(f, "EB#{k}"),
        }
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid("estimators", format!("unknown method `{s}`")))
    }
}

impl Serialize for MethodId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MethodId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub logistic: LogisticConfig,
    pub cbps: CbpsConfig,
    pub entropy: EntropyConfig,
    pub gbm: GbmParams,
    pub seed: u64,
    /// Methods to fit; all nine when empty.
    pub methods: Vec<MethodId>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            logistic: LogisticConfig::default(),
            cbps: CbpsConfig::default(),
            entropy: EntropyConfig::default(),
            gbm: GbmParams::default(),
            seed: 20240101,
            methods: Vec::new(),
        }
    }
}

impl EstimatorConfig {
    pub fn selected_methods(&self) -> Vec<MethodId> {
        if self.methods.is_empty() {
            MethodId::ALL.to_vec()
        } else {
            self.methods.clone()
        }
    }
}

fn from_scores(
    method: MethodId,
    ps: &PropensityScores,
    t: &[f64],
    e: Estimand,
    iterations: usize,
    converged: bool,
    note: Option<String>,
) -> Result<WeightSet> {
    let mut ws = ps_to_weights(ps, t, e)?;
    ws.method_id = method.to_string();
    ws.provenance.iterations = iterations;
    ws.provenance.converged = converged;
    ws.provenance.note = note;
    Ok(ws)
}

fn gbm_weights(run: &GbmRun, method: MethodId, t: &[f64], e: Estimand) -> Result<WeightSet> {
    let rule = if method == MethodId::GbmEs { StopRule::EsMean } else { StopRule::KsMax };
    let (fit, ps) = run.select(rule)?;
    let mut ws = from_scores(method, &ps, t, e, fit.trees.len(), true, None)?;
    ws.provenance.selected_iteration = Some(fit.selected_iteration);
    Ok(ws)
}

fn fit_with_design(
    method: MethodId,
    x: &DesignMatrix,
    t: &[f64],
    e: Estimand,
    cfg: &EstimatorConfig,
    progress: Option<&Progress>,
) -> Result<WeightSet> {
    match method {
        MethodId::Lr => {
            let (fit, ps) = fit_logistic_irls(x, t, &cfg.logistic)?;
            let note = fit
                .separated
                .then(|| "separation detected: some linear predictors exceed 30 in magnitude".to_string());
            from_scores(method, &ps, t, e, fit.iterations, fit.converged, note)
        }
        MethodId::GbmEs | MethodId::GbmKs => {
            let run = boost(x, t, e, &cfg.gbm, cfg.seed, progress)?;
            gbm_weights(&run, method, t, e)
        }
        MethodId::Cbps(_) => {
            let (fit, ps) = fit_cbps(x, t, e, &cfg.cbps)?;
            from_scores(method, &ps, t, e, fit.iterations, fit.converged, None)
        }
        MethodId::Eb(_) => {
            let (_, ws) = fit_entropy_balancing(x, t, e, &cfg.entropy)?;
            Ok(ws)
        }
    }
}

fn order_of(method: MethodId) -> Result<usize> {
    match method {
        MethodId::Cbps(k) | MethodId::Eb(k) if (1..=3).contains(&k) => Ok(usize::from(k)),
        MethodId::Cbps(_) | MethodId::Eb(_) => {
            Err(Error::invalid("estimators", format!("moment order of {method} not in 1..=3")))
        }
        _ => Ok(1),
    }
}

/// Fits a single method on a configured dataset.
pub fn fit_method(
    d: &Dataset,
    method: MethodId,
    e: Estimand,
    cfg: &EstimatorConfig,
) -> Result<WeightSet> {
    let t = d.treatment()?;
    let x = design_matrix(d, order_of(method)?)?;
    fit_with_design(method, &x, t, e, cfg, None)
}

/// Weight sets per method plus the error message for each method that failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub weights: BTreeMap<String, WeightSet>,
    pub failures: BTreeMap<String, String>,
}

/// Fits every configured method in parallel. A failing method is recorded
/// and the rest continue; the call errors only when nothing succeeds or the
/// job is cancelled. GBM_ES and GBM_KS share one boosting run.
pub fn run_all(
    d: &Dataset,
    e: Estimand,
    cfg: &EstimatorConfig,
    progress: Option<&Progress>,
) -> Result<RunResult> {
    let t = d.treatment()?;
    let methods = cfg.selected_methods();
    let mut designs: BTreeMap<usize, Result<DesignMatrix>> = BTreeMap::new();
    for m in &methods {
        if let Ok(k) = order_of(*m) {
            designs.entry(k).or_insert_with(|| design_matrix(d, k));
        }
    }
    let wants_gbm = methods.iter().any(|m| matches!(m, MethodId::GbmEs | MethodId::GbmKs));
    // GBM dominates the cost, so its trees are the progress unit; the other
    // methods add one tick each.
    if let Some(p) = progress {
        let gbm = if wants_gbm { cfg.gbm.max_trees } else { 0 };
        let rest = methods.iter().filter(|m| !matches!(m, MethodId::GbmEs | MethodId::GbmKs)).count();
        p.set_total(gbm + rest);
    }

    enum Job {
        Single(MethodId),
        Gbm(Vec<MethodId>),
    }
    let mut jobs: Vec<Job> = methods
        .iter()
        .filter(|m| !matches!(m, MethodId::GbmEs | MethodId::GbmKs))
        .map(|m| Job::Single(*m))
        .collect();
    if wants_gbm {
        jobs.insert(
            0,
            Job::Gbm(methods.iter().copied().filter(|m| matches!(m, MethodId::GbmEs | MethodId::GbmKs)).collect()),
        );
    }

    let outcomes: Vec<(MethodId, Result<WeightSet>)> = jobs
        .par_iter()
        .flat_map_iter(|job| -> Vec<(MethodId, Result<WeightSet>)> {
            match job {
                Job::Single(m) => {
                    let r = order_of(*m).and_then(|k| match &designs[&k] {
                        Ok(x) => {
                            job::checkpoint(progress)?;
                            fit_with_design(*m, x, t, e, cfg, None)
                        }
                        Err(err) => Err(err.clone()),
                    });
                    job::tick(progress);
                    vec![(*m, r)]
                }
                Job::Gbm(ms) => {
                    let run = match &designs[&1] {
                        Ok(x) => boost(x, t, e, &cfg.gbm, cfg.seed, progress),
                        Err(err) => Err(err.clone()),
                    };
                    ms.iter()
                        .map(|m| (*m, run.as_ref().map_err(Clone::clone).and_then(|r| gbm_weights(r, *m, t, e))))
                        .collect()
                }
            }
        })
        .collect();
    job::checkpoint(progress)?;
    let mut result = RunResult {
        weights: BTreeMap::new(),
        failures: BTreeMap::new(),
    };
    for (m, r) in outcomes {
        match r {
            Ok(ws) => {
                result.weights.insert(m.to_string(), ws);
            }
            Err(Error::Cancelled) => return Err(Error::Cancelled),
            Err(err) => {
                result.failures.insert(m.to_string(), err.to_string());
            }
        }
    }
    if result.weights.is_empty() {
        let detail: Vec<String> = result.failures.iter().map(|(m, e)| format!("{m}: {e}")).collect();
        return Err(Error::degenerate("estimators", format!("every method failed ({})", detail.join("; "))));
    }
    Ok(result)
}
