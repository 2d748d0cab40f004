use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    Lower,
    Upper,
    Both,
}

/// A trim cut-off: an absolute value, or a sample quantile in `[0, 1]`
/// resolved against the dataset the rule is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrimBound {
    Value(f64),
    Quantile(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimRule {
    pub covariate: String,
    #[serde(default)]
    pub lower: Option<TrimBound>,
    #[serde(default)]
    pub upper: Option<TrimBound>,
    pub tail: Tail,
}

impl TrimRule {
    pub fn upper(covariate: &str, bound: TrimBound) -> Self {
        Self {
            covariate: covariate.into(),
            lower: None,
            upper: Some(bound),
            tail: Tail::Upper,
        }
    }

    pub fn lower(covariate: &str, bound: TrimBound) -> Self {
        Self {
            covariate: covariate.into(),
            lower: Some(bound),
            upper: None,
            tail: Tail::Lower,
        }
    }

    /// Rewrites quantile bounds as the values they resolve to on `d`.
    pub fn resolve(&self, d: &Dataset) -> Result<TrimRule> {
        let x = rule_values(d, &self.covariate)?;
        let fix = |b: Option<TrimBound>| -> Result<Option<TrimBound>> {
            Ok(match b {
                Some(TrimBound::Quantile(q)) => {
                    if !(0.0..=1.0).contains(&q) {
                        return Err(Error::invalid(
                            "dataset",
                            format!("trim quantile {q} outside [0, 1]"),
                        ));
                    }
                    Some(TrimBound::Value(stats::quantile(x, q)))
                }
                other => other,
            })
        };
        let (lower, upper) = match self.tail {
            Tail::Lower => (self.lower, None),
            Tail::Upper => (None, self.upper),
            Tail::Both => (self.lower, self.upper),
        };
        let missing = match self.tail {
            Tail::Lower => lower.is_none(),
            Tail::Upper => upper.is_none(),
            Tail::Both => lower.is_none() || upper.is_none(),
        };
        if missing {
            return Err(Error::invalid(
                "dataset",
                format!(
                    "trim rule on `{}` lacks a bound for tail {:?}",
                    self.covariate, self.tail
                ),
            ));
        }
        let resolved = TrimRule {
            covariate: self.covariate.clone(),
            lower: fix(lower)?,
            upper: fix(upper)?,
            tail: self.tail,
        };
        if let (Some(TrimBound::Value(lo)), Some(TrimBound::Value(hi))) =
            (resolved.lower, resolved.upper)
        {
            if lo >= hi {
                return Err(Error::invalid(
                    "dataset",
                    format!(
                        "trim rule on `{}`: lower bound {lo} not below upper bound {hi}",
                        self.covariate
                    ),
                ));
            }
        }
        Ok(resolved)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrimOutcome {
    pub dataset: Dataset,
    pub removed_row_ids: Vec<u64>,
    /// The rules with quantile bounds resolved to values.
    pub resolved_rules: Vec<TrimRule>,
}

fn rule_values<'a>(d: &'a Dataset, name: &str) -> Result<&'a [f64]> {
    let c = d
        .confounders()?
        .iter()
        .find(|c| c.name == name)
        .ok_or_else(|| Error::Data(format!("trim rule references unknown confounder `{name}`")))?;
    c.numeric()
        .ok_or_else(|| Error::Data(format!("cannot trim categorical confounder `{name}`")))
}

/// Removes every row that violates any rule from the whole dataset.
///
/// Quantile bounds are resolved on the input dataset before any row is removed,
/// so all rules see the same sample.
pub fn apply_trim(d: &Dataset, rules: &[TrimRule]) -> Result<TrimOutcome> {
    let resolved = rules
        .iter()
        .map(|r| r.resolve(d))
        .collect::<Result<Vec<_>>>()?;
    let mut keep = vec![true; d.n_rows()];
    for rule in &resolved {
        let x = rule_values(d, &rule.covariate)?;
        for (k, v) in keep.iter_mut().zip(x) {
            if let Some(TrimBound::Value(lo)) = rule.lower {
                if *v < lo {
                    *k = false;
                }
            }
            if let Some(TrimBound::Value(hi)) = rule.upper {
                if *v > hi {
                    *k = false;
                }
            }
        }
    }
    let t = d.treatment()?;
    let n1 = keep.iter().zip(t).filter(|(k, ti)| **k && **ti == 1.0).count();
    let n0 = keep.iter().zip(t).filter(|(k, ti)| **k && **ti == 0.0).count();
    if n1 < 2 || n0 < 2 {
        return Err(Error::Data(format!(
            "trim would leave {n1} treated and {n0} control rows; each group needs at least 2"
        )));
    }
    let removed_row_ids = d
        .row_ids()
        .iter()
        .zip(&keep)
        .filter(|(_, k)| !**k)
        .map(|(r, _)| *r)
        .collect();
    Ok(TrimOutcome {
        dataset: d.select_rows(&keep),
        removed_row_ids,
        resolved_rules: resolved,
    })
}
