//! Report assembly from a session. Every number is copied from a session
//! artifact; nothing is recomputed here except overlap flags and summaries,
//! which are pure functions of the stored dataset.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use covbal_core::balance::{BalanceReport, Recommendation};
use covbal_core::dataset::{overlap_report, summarize, ColumnRole, CovariateSummary, OverlapFlag, Tail};
use covbal_core::estimators::EstimatorConfig;
use covbal_core::outcome::{EffectEstimate, EffectModel};
use covbal_core::sensitivity::{AnchorCheck, ObservedConfounderPoint, ReweightMethod};
use covbal_core::Estimand;
use serde::{Deserialize, Serialize};

use crate::error::ServiceResult;
use crate::session::{MethodChoice, Session, TrimLogEntry};

pub const OVERLAP_BINS: usize = 20;

pub const SENSITIVITY_MISSING_NOTE: &str = "Sensitivity analysis has not been run. Running it before drawing \
conclusions is strongly recommended, since the estimate assumes no unobserved confounding.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub treatment: String,
    pub outcome: String,
    pub treated_level: String,
    pub confounders: Vec<(String, ColumnRole)>,
    pub estimators: EstimatorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapFinding {
    pub confounder: String,
    pub flags: Vec<OverlapFlag>,
}

/// Step 2: the analysed sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    pub n_rows: usize,
    pub n_treated: usize,
    pub n_control: usize,
    pub rows_loaded: usize,
    pub dropped_na_rows: usize,
    pub summaries: Vec<CovariateSummary>,
    /// Confounders with a non-overlap flag; empty when supports agree.
    pub overlap_findings: Vec<OverlapFinding>,
    pub trims: Vec<TrimLogEntry>,
}

/// Step 3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsSection {
    pub fitted: Vec<String>,
    pub failures: BTreeMap<String, String>,
}

/// Step 4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceSection {
    pub table: BalanceReport,
    pub recommendation: Recommendation,
    pub choice: MethodChoice,
}

/// Step 5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSection {
    pub estimate: EffectEstimate,
    pub balance_feasible: bool,
    pub stamp: Option<String>,
}

/// Step 6, summarized; the full grid lives in the sensitivity export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySection {
    pub procedure: String,
    pub replications: usize,
    pub reweight_method: ReweightMethod,
    pub grid_shape: (usize, usize),
    pub infeasible_cells: usize,
    /// Range of the cell-mean adjusted effects.
    pub effect_range: Option<(f64, f64)>,
    pub anchor: Option<AnchorCheck>,
    pub points: Vec<ObservedConfounderPoint>,
    pub points_in_nonsignificant_region: usize,
    pub very_sensitive: bool,
    pub heuristic_note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub generator: String,
    pub session_id: String,
    pub estimand: Estimand,
    pub configuration: Configuration,
    pub data: DataSection,
    pub weights: WeightsSection,
    pub balance: BalanceSection,
    pub effect: EffectSection,
    pub sensitivity: Option<SensitivitySection>,
    pub notes: Vec<String>,
}

/// Assembles the report; requires the effect step to be complete.
pub fn build_report(s: &Session) -> ServiceResult<Report> {
    let effect = s.effect_stage()?;
    let d = s.dataset()?;
    let stage = s.weights_stage()?;
    let choice = s.choice()?;
    let (n_treated, n_control) = d.group_sizes()?;
    let overlap_findings = overlap_report(d, OVERLAP_BINS)?
        .into_iter()
        .filter(|e| e.non_overlap)
        .map(|e| OverlapFinding { confounder: e.confounder, flags: e.flags })
        .collect();
    let configuration = Configuration {
        treatment: d.treatment_column()?.to_string(),
        outcome: d.outcome_column()?.to_string(),
        treated_level: d.treated_level()?.to_string(),
        confounders: d.confounders()?.iter().map(|c| (c.name.clone(), c.role())).collect(),
        estimators: stage.config.clone(),
    };
    let sensitivity = s.sensitivity.as_ref().map(|r| {
        let effects: Vec<f64> = r.grid.cells.iter().filter_map(|c| c.effect).collect();
        let range = effects.iter().fold(None, |acc: Option<(f64, f64)>, v| {
            Some(acc.map_or((*v, *v), |(lo, hi)| (lo.min(*v), hi.max(*v))))
        });
        SensitivitySection {
            procedure: r.procedure.clone(),
            replications: r.config.replications,
            reweight_method: r.config.reweight_method,
            grid_shape: (r.grid.rho_y.len(), r.grid.es_t.len()),
            infeasible_cells: r.grid.cells.iter().filter(|c| !c.feasible).count(),
            effect_range: range,
            anchor: r.anchor.clone(),
            points: r.points.clone(),
            points_in_nonsignificant_region: r.points_in_nonsignificant_region,
            very_sensitive: r.very_sensitive,
            heuristic_note: "The very-sensitive flag is a reporting heuristic: it is set when at least half of \
                the observed confounders sit in grid cells whose mean p-value exceeds 0.05."
                .into(),
        }
    });
    let mut notes = Vec::new();
    if let Some(stamp) = &effect.stamp {
        notes.push(format!("Effect is {stamp}: no balance-feasible weights were used, so it is not a causal estimate."));
    }
    if choice.overrides_recommendation {
        notes.push(match &choice.recommended {
            Some(r) => format!("The analyst chose {} over the recommended {r}.", choice.chosen),
            None => format!("No method met the balance threshold; the analyst chose {}.", choice.chosen),
        });
    }
    if sensitivity.is_none() {
        notes.push(SENSITIVITY_MISSING_NOTE.into());
    } else if sensitivity.as_ref().is_some_and(|x| x.very_sensitive) {
        notes.push("Findings are very sensitive to unobserved confounding (heuristic flag).".into());
    }
    Ok(Report {
        generator: format!("covbal {}", env!("CARGO_PKG_VERSION")),
        session_id: s.id.clone(),
        estimand: s.estimand,
        configuration,
        data: DataSection {
            n_rows: d.n_rows(),
            n_treated,
            n_control,
            rows_loaded: s.source.n_rows(),
            dropped_na_rows: d.dropped_na_rows(),
            summaries: summarize(d)?,
            overlap_findings,
            trims: s.trims.clone(),
        },
        weights: WeightsSection {
            fitted: stage.run.weights.keys().cloned().collect(),
            failures: stage.run.failures.clone(),
        },
        balance: BalanceSection {
            table: stage.balance.clone(),
            recommendation: stage.recommendation.clone(),
            choice: choice.clone(),
        },
        effect: EffectSection {
            estimate: effect.estimate.clone(),
            balance_feasible: effect.balance_feasible,
            stamp: effect.stamp.clone(),
        },
        sensitivity,
        notes,
    })
}

fn flag_text(f: &OverlapFlag) -> String {
    match f {
        OverlapFlag::TailExcess { group, tail, excess } => {
            let side = match tail {
                Tail::Lower => "lower",
                Tail::Upper => "upper",
                Tail::Both => "both",
            };
            format!("{group} {side} tail extends {excess:.3} beyond the other group")
        }
        OverlapFlag::LevelMissing { level, missing_in } => format!("level `{level}` absent from the {missing_in} group"),
    }
}

/// Plain-text rendering with one section per workflow step.
pub fn render_markdown(r: &Report) -> String {
    let mut out = String::new();
    let c = &r.configuration;
    let _ = writeln!(out, "# Covariate balancing analysis\n");
    let _ = writeln!(out, "Session `{}`, generated by {}.\n", r.session_id, r.generator);
    if let Some(stamp) = &r.effect.stamp {
        let _ = writeln!(out, "> **{stamp}**\n");
    }

    let _ = writeln!(out, "## 1. Estimand\n");
    let _ = writeln!(out, "Target: **{}**. Treatment `{}` (treated level `{}`), outcome `{}`.\n", r.estimand, c.treatment, c.treated_level, c.outcome);
    let _ = writeln!(out, "Confounders: {}.\n", c.confounders.iter().map(|(n, _)| format!("`{n}`")).collect::<Vec<_>>().join(", "));

    let d = &r.data;
    let _ = writeln!(out, "## 2. Overlap and trimming\n");
    let _ = writeln!(
        out,
        "{} rows analysed ({} treated, {} control) of {} loaded; {} dropped for missing values.\n",
        d.n_rows, d.n_treated, d.n_control, d.rows_loaded, d.dropped_na_rows
    );
    let _ = writeln!(out, "| covariate | group | n | mean | sd | median | min | max |");
    let _ = writeln!(out, "|---|---|---|---|---|---|---|---|");
    for s in &d.summaries {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} |",
            s.covariate,
            s.group,
            s.n,
            s.mean,
            s.sd,
            s.median,
            s.min,
            s.max
        );
    }
    out.push('\n');
    if d.overlap_findings.is_empty() {
        let _ = writeln!(out, "No overlap concerns flagged.\n");
    } else {
        for f in &d.overlap_findings {
            let flags: Vec<String> = f.flags.iter().map(flag_text).collect();
            let _ = writeln!(out, "- `{}`: {}", f.confounder, flags.join("; "));
        }
        out.push('\n');
    }
    if d.trims.is_empty() {
        let _ = writeln!(out, "No rows trimmed.\n");
    } else {
        for t in &d.trims {
            let _ = writeln!(
                out,
                "- trimmed {} rows ({} treated, {} control) on {}",
                t.removed_row_ids.len(),
                t.removed_treated,
                t.removed_control,
                t.rules.iter().map(|r| format!("`{}`", r.covariate)).collect::<Vec<_>>().join(", ")
            );
        }
        out.push('\n');
    }

    let _ = writeln!(out, "## 3. Weight estimation\n");
    let _ = writeln!(out, "Fitted: {}.\n", r.weights.fitted.join(", "));
    for (m, e) in &r.weights.failures {
        let _ = writeln!(out, "- {m} failed: {e}");
    }
    if !r.weights.failures.is_empty() {
        out.push('\n');
    }

    let b = &r.balance;
    let _ = writeln!(out, "## 4. Balance\n");
    let _ = writeln!(out, "| method | mean SMD | max SMD | mean KS | max KS | ESS | ESS % | feasible |");
    let _ = writeln!(out, "|---|---|---|---|---|---|---|---|");
    let u = &b.table.unweighted;
    let _ = writeln!(
        out,
        "| unweighted | {:.3} | {:.3} | {:.3} | {:.3} | {:.0} | {:.0} | |",
        u.mean_smd, u.max_smd, u.mean_ks, u.max_ks, u.ess, u.ess_pct
    );
    for rm in &b.recommendation.ranking {
        let s = &b.table.summaries[&rm.method];
        let _ = writeln!(
            out,
            "| {} | {:.3} | {:.3} | {:.3} | {:.3} | {:.0} | {:.0} | {} |",
            rm.method,
            s.mean_smd,
            s.max_smd,
            s.mean_ks,
            s.max_ks,
            s.ess,
            s.ess_pct,
            if rm.feasible { "yes".to_string() } else { rm.reasons.join("; ") }
        );
    }
    let _ = writeln!(out, "\nRecommendation: {}.", b.recommendation.verdict);
    let _ = writeln!(out, "Chosen method: **{}**{}.\n", b.choice.chosen, if b.choice.overrides_recommendation { " (analyst override)" } else { "" });

    let e = &r.effect.estimate;
    let _ = writeln!(out, "## 5. Treatment effect\n");
    let model = match e.model {
        EffectModel::DoublyRobust => "doubly robust weighted regression",
        EffectModel::WeightedMeans => "weighted difference in means",
    };
    let _ = writeln!(
        out,
        "{} ({model}, {} weights): **{:.3}** (95% CI {:.3} to {:.3}), SE {:.3}, p = {:.4}, n = {}, ESS = {:.0}.\n",
        e.estimand, e.method_id, e.estimate, e.ci_low, e.ci_high, e.se, e.p_value, e.n, e.ess
    );
    if let Some(stamp) = &r.effect.stamp {
        let _ = writeln!(out, "Stamp: {stamp}.\n");
    }

    let _ = writeln!(out, "## 6. Sensitivity to unobserved confounding\n");
    match &r.sensitivity {
        None => {
            let _ = writeln!(out, "{SENSITIVITY_MISSING_NOTE}\n");
        }
        Some(s) => {
            let _ = writeln!(out, "{}\n", s.procedure);
            let _ = writeln!(
                out,
                "Grid {} x {} (rho_y x es_t), {} replications per cell, {} infeasible cells.",
                s.grid_shape.0, s.grid_shape.1, s.replications, s.infeasible_cells
            );
            if let Some((lo, hi)) = s.effect_range {
                let _ = writeln!(out, "Adjusted effects range from {lo:.3} to {hi:.3}.");
            }
            match &s.anchor {
                Some(a) => {
                    let _ = writeln!(
                        out,
                        "Null-confounder cell: {:.3} vs original {:.3} (MC se {:.3}, {}).",
                        a.effect,
                        a.original,
                        a.mc_se,
                        if a.within_two_se { "consistent" } else { "outside 2 MC se" }
                    );
                }
                None => {
                    let _ = writeln!(out, "Grid has no null-confounder cell; anchor check skipped.");
                }
            }
            let _ = writeln!(
                out,
                "{} of {} observed confounders fall in the p > 0.05 region; very sensitive: {}.\n",
                s.points_in_nonsignificant_region,
                s.points.len(),
                if s.very_sensitive { "yes" } else { "no" }
            );
            let _ = writeln!(out, "{}\n", s.heuristic_note);
        }
    }

    if !r.notes.is_empty() {
        let _ = writeln!(out, "## Notes\n");
        for n in &r.notes {
            let _ = writeln!(out, "- {n}");
        }
    }
    out
}
