use serde::{Deserialize, Serialize};

use super::{ConfounderValues, Dataset, Group};
use crate::dataset::Tail;
use crate::error::{Error, Result};
use crate::stats;

/// Per-group descriptive statistics of one balance feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSummary {
    pub covariate: String,
    pub group: Group,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    /// Set when the group has a single observation (sd reported as 0).
    pub degenerate: bool,
}

/// Summaries for every balance feature, treated group first.
pub fn summarize(d: &Dataset) -> Result<Vec<CovariateSummary>> {
    let t = d.treatment()?;
    let mut out = Vec::new();
    for f in d.balance_features()? {
        for group in [Group::Treated, Group::Control] {
            let flag = if group == Group::Treated { 1.0 } else { 0.0 };
            let mut vals: Vec<f64> = f
                .values
                .iter()
                .zip(t)
                .filter(|(_, ti)| **ti == flag)
                .map(|(v, _)| *v)
                .collect();
            vals.sort_by(f64::total_cmp);
            out.push(CovariateSummary {
                covariate: f.name.clone(),
                group,
                n: vals.len(),
                mean: stats::mean(&vals),
                sd: stats::sd(&vals),
                median: stats::quantile_sorted(&vals, 0.5),
                min: vals[0],
                max: vals[vals.len() - 1],
                degenerate: vals.len() < 2,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OverlapHistogram {
    /// Shared equal-width bins spanning the pooled range.
    Bins {
        edges: Vec<f64>,
        treated: Vec<usize>,
        control: Vec<usize>,
    },
    /// Per-level counts for binary and categorical confounders.
    Levels {
        levels: Vec<String>,
        treated: Vec<usize>,
        control: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OverlapFlag {
    /// `group`'s support extends past the other group's in `tail` by `excess`
    /// (more than one bin width).
    TailExcess { group: Group, tail: Tail, excess: f64 },
    /// `level` has no representative in `missing_in`.
    LevelMissing { level: String, missing_in: Group },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapEntry {
    pub confounder: String,
    pub histogram: OverlapHistogram,
    pub treated_range: (f64, f64),
    pub control_range: (f64, f64),
    pub non_overlap: bool,
    pub flags: Vec<OverlapFlag>,
}

/// Equal-width histogram of `x` on `bins` bins over `[lo, hi]`.
pub(crate) fn bin_counts(x: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<usize> {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0; bins];
    for v in x {
        let k = if width > 0.0 {
            (((v - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize
        } else {
            0
        };
        counts[k] += 1;
    }
    counts
}

fn range(x: &[f64]) -> (f64, f64) {
    x.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)))
}

/// Overlap diagnostics per confounder. Flags are diagnostic only.
pub fn overlap_report(d: &Dataset, bins: usize) -> Result<Vec<OverlapEntry>> {
    if bins < 2 {
        return Err(Error::invalid("dataset", "overlap report needs at least 2 bins"));
    }
    let t = d.treatment()?;
    let split = |v: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (x, ti) in v.iter().zip(t) {
            if *ti == 1.0 {
                a.push(*x)
            } else {
                b.push(*x)
            }
        }
        (a, b)
    };
    let mut out = Vec::new();
    for c in d.confounders()? {
        let entry = match &c.values {
            ConfounderValues::Continuous(v) => {
                let (tr, co) = split(v);
                let (lo, hi) = range(v);
                let width = (hi - lo) / bins as f64;
                let edges = (0..=bins).map(|k| lo + width * k as f64).collect();
                let tr_range = range(&tr);
                let co_range = range(&co);
                let mut flags = Vec::new();
                let mut check = |group: Group, tail: Tail, excess: f64| {
                    if excess > width {
                        flags.push(OverlapFlag::TailExcess { group, tail, excess });
                    }
                };
                check(Group::Treated, Tail::Upper, tr_range.1 - co_range.1);
                check(Group::Control, Tail::Upper, co_range.1 - tr_range.1);
                check(Group::Treated, Tail::Lower, co_range.0 - tr_range.0);
                check(Group::Control, Tail::Lower, tr_range.0 - co_range.0);
                OverlapEntry {
                    confounder: c.name.clone(),
                    histogram: OverlapHistogram::Bins {
                        edges,
                        treated: bin_counts(&tr, lo, hi, bins),
                        control: bin_counts(&co, lo, hi, bins),
                    },
                    treated_range: tr_range,
                    control_range: co_range,
                    non_overlap: !flags.is_empty(),
                    flags,
                }
            }
            ConfounderValues::Binary { values, levels } => {
                let codes: Vec<usize> = values.iter().map(|v| *v as usize).collect();
                level_entry(&c.name, levels.to_vec(), &codes, t)
            }
            ConfounderValues::Categorical { levels, codes } => {
                level_entry(&c.name, levels.clone(), codes, t)
            }
        };
        out.push(entry);
    }
    Ok(out)
}

fn level_entry(name: &str, levels: Vec<String>, codes: &[usize], t: &[f64]) -> OverlapEntry {
    let mut treated = vec![0; levels.len()];
    let mut control = vec![0; levels.len()];
    for (k, ti) in codes.iter().zip(t) {
        if *ti == 1.0 {
            treated[*k] += 1
        } else {
            control[*k] += 1
        }
    }
    let mut flags = Vec::new();
    for (l, level) in levels.iter().enumerate() {
        if treated[l] == 0 && control[l] > 0 {
            flags.push(OverlapFlag::LevelMissing {
                level: level.clone(),
                missing_in: Group::Treated,
            });
        }
        if control[l] == 0 && treated[l] > 0 {
            flags.push(OverlapFlag::LevelMissing {
                level: level.clone(),
                missing_in: Group::Control,
            });
        }
    }
    let code_range = |g: f64| {
        let v: Vec<f64> = codes
            .iter()
            .zip(t)
            .filter(|(_, ti)| **ti == g)
            .map(|(k, _)| *k as f64)
            .collect();
        range(&v)
    };
    OverlapEntry {
        confounder: name.to_string(),
        treated_range: code_range(1.0),
        control_range: code_range(0.0),
        histogram: OverlapHistogram::Levels {
            levels,
            treated,
            control,
        },
        non_overlap: !flags.is_empty(),
        flags,
    }
}
