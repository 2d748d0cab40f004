//! Estimands and the propensity-score to weight transforms.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::summary_bins;
use crate::error::{Error, Result};

pub const DEFAULT_CLIP_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimand {
    ATE,
    ATT,
    ATC,
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimand::ATE => "ATE",
            Estimand::ATT => "ATT",
            Estimand::ATC => "ATC",
        })
    }
}

impl FromStr for Estimand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ATE" => Ok(Estimand::ATE),
            "ATT" => Ok(Estimand::ATT),
            "ATC" => Ok(Estimand::ATC),
            _ => Err(Error::invalid("weights", format!("unknown estimand `{s}`"))),
        }
    }
}

/// Propensity scores strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityScores {
    values: Vec<f64>,
    clipped: usize,
}

impl PropensityScores {
    /// Wraps scores that must already be strictly interior.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(p) = values.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::invalid(
                "weights",
                format!("propensity score {p} not strictly inside (0, 1); clip upstream"),
            ));
        }
        Ok(Self { values, clipped: 0 })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of entries moved by [`clip_ps`].
    pub fn clipped(&self) -> usize {
        self.clipped
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Maps raw probabilities into `[eps, 1 - eps]`.
pub fn clip_ps(raw: &[f64], eps: f64) -> Result<PropensityScores> {
    if !(eps > 0.0 && eps <= 0.01) {
        return Err(Error::invalid("weights", format!("clip eps {eps} not in (0, 0.01]")));
    }
    let mut clipped = 0;
    let values = raw
        .iter()
        .map(|&p| {
            let p = if p.is_nan() { 0.5 } else { p };
            let c = p.clamp(eps, 1.0 - eps);
            if c != p {
                clipped += 1;
            }
            c
        })
        .collect();
    Ok(PropensityScores { values, clipped })
}

/// Fit metadata carried alongside a weight vector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub iterations: usize,
    pub converged: bool,
    /// Scores moved by clipping, for score-based methods.
    pub clipped: usize,
    /// Boosting iteration the weights were taken from.
    #[serde(default)]
    pub selected_iteration: Option<usize>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub method_id: String,
    pub estimand: Estimand,
    pub weights: Vec<f64>,
    pub provenance: Provenance,
}

impl WeightSet {
    /// Uniform weights; the unweighted baseline.
    pub fn uniform(n: usize, estimand: Estimand) -> Self {
        Self {
            method_id: "Unweighted".into(),
            estimand,
            weights: vec![1.0; n],
            provenance: Provenance {
                converged: true,
                ..Provenance::default()
            },
        }
    }

    /// Checks non-negativity and a positive mass in each group.
    pub fn validate(&self, t: &[f64]) -> Result<()> {
        if self.weights.len() != t.len() {
            return Err(Error::invalid(
                "weights",
                format!("{} weights for {} rows", self.weights.len(), t.len()),
            ));
        }
        if let Some(w) = self.weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::invalid("weights", format!("invalid weight {w}")));
        }
        for g in [1.0, 0.0] {
            if !self.weights.iter().zip(t).any(|(w, ti)| *ti == g && *w > 0.0) {
                return Err(Error::degenerate("weights", "a treatment group has zero total weight"));
            }
        }
        Ok(())
    }
}

/// Applies the estimand's weight formula to each unit.
pub fn weight_for(p: f64, treated: bool, e: Estimand) -> f64 {
    match (e, treated) {
        (Estimand::ATE, true) => 1.0 / p,
        (Estimand::ATE, false) => 1.0 / (1.0 - p),
        (Estimand::ATT, true) => 1.0,
        (Estimand::ATT, false) => p / (1.0 - p),
        (Estimand::ATC, true) => (1.0 - p) / p,
        (Estimand::ATC, false) => 1.0,
    }
}

pub fn ps_to_weights(ps: &PropensityScores, t: &[f64], e: Estimand) -> Result<WeightSet> {
    if ps.len() != t.len() {
        return Err(Error::invalid(
            "weights",
            format!("{} scores for {} treatment values", ps.len(), t.len()),
        ));
    }
    if let Some(p) = ps.values.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(Error::invalid(
            "weights",
            format!("propensity score {p} not strictly inside (0, 1); clip upstream"),
        ));
    }
    let weights = ps
        .values
        .iter()
        .zip(t)
        .map(|(p, ti)| weight_for(*p, *ti == 1.0, e))
        .collect();
    Ok(WeightSet {
        method_id: String::new(),
        estimand: e,
        weights,
        provenance: Provenance {
            converged: true,
            clipped: ps.clipped,
            ..Provenance::default()
        },
    })
}

/// Rescales weights to mean 1 within each treatment group.
pub fn normalize_weights(w: &WeightSet, t: &[f64]) -> WeightSet {
    let mut out = w.clone();
    for g in [1.0, 0.0] {
        let (sum, count) = w
            .weights
            .iter()
            .zip(t)
            .filter(|(_, ti)| **ti == g)
            .fold((0.0, 0usize), |(s, c), (wi, _)| (s + wi, c + 1));
        if sum > 0.0 {
            let f = count as f64 / sum;
            for (wi, ti) in out.weights.iter_mut().zip(t) {
                if *ti == g {
                    *wi *= f;
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsOverlap {
    pub edges: Vec<f64>,
    pub treated: Vec<usize>,
    pub control: Vec<usize>,
    pub treated_range: (f64, f64),
    pub control_range: (f64, f64),
    /// No bin holds mass from both groups.
    pub disjoint: bool,
}

/// Shared-bin histograms of the scores per group.
pub fn ps_overlap_summary(ps: &PropensityScores, t: &[f64], bins: usize) -> Result<PsOverlap> {
    if ps.len() != t.len() {
        return Err(Error::invalid("weights", "score and treatment lengths differ"));
    }
    if bins < 1 {
        return Err(Error::invalid("weights", "need at least one bin"));
    }
    let (tr, co): (Vec<(f64, f64)>, Vec<(f64, f64)>) = ps
        .values
        .iter()
        .zip(t)
        .map(|(p, ti)| (*p, *ti))
        .partition(|(_, ti)| *ti == 1.0);
    let tr: Vec<f64> = tr.into_iter().map(|(p, _)| p).collect();
    let co: Vec<f64> = co.into_iter().map(|(p, _)| p).collect();
    let range = |x: &[f64]| {
        x.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)))
    };
    let (lo, hi) = range(&ps.values);
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|k| lo + width * k as f64).collect();
    let treated = summary_bins(&tr, lo, hi, bins);
    let control = summary_bins(&co, lo, hi, bins);
    let disjoint = !treated.iter().zip(&control).any(|(a, b)| *a > 0 && *b > 0);
    Ok(PsOverlap {
        edges,
        treated_range: range(&tr),
        control_range: range(&co),
        treated,
        control,
        disjoint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ps(v: &[f64]) -> PropensityScores {
        PropensityScores::new(v.to_vec()).unwrap()
    }

    #[test]
    fn ate_half() {
        let w = ps_to_weights(&ps(&[0.5]), &[1.0], Estimand::ATE).unwrap();
        assert_eq!(w.weights, vec![2.0]);
    }

    #[test]
    fn att_values() {
        let w = ps_to_weights(&ps(&[0.8, 0.8]), &[1.0, 0.0], Estimand::ATT).unwrap();
        assert_eq!(w.weights[0], 1.0);
        assert!((w.weights[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_scores_rejected() {
        let raw = PropensityScores {
            values: vec![1.0],
            clipped: 0,
        };
        assert!(ps_to_weights(&raw, &[1.0], Estimand::ATE).is_err());
        assert!(PropensityScores::new(vec![0.0]).is_err());
    }

    #[test]
    fn clipping() {
        let c = clip_ps(&[0.5, 1.0, 0.0], 1e-6).unwrap();
        assert_eq!(c.values(), &[0.5, 1.0 - 1e-6, 1e-6]);
        assert_eq!(c.clipped(), 2);
        let interior: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert_eq!(clip_ps(&interior, 1e-6).unwrap().clipped(), 0);
        assert!(clip_ps(&[0.5], 0.1).is_err());
    }

    #[test]
    fn normalization_examples() {
        let t = [1.0, 1.0, 0.0, 0.0];
        let mk = |w: Vec<f64>| WeightSet {
            method_id: "m".into(),
            estimand: Estimand::ATE,
            weights: w,
            provenance: Provenance::default(),
        };
        assert_eq!(normalize_weights(&mk(vec![2., 2., 1., 3.]), &t).weights, vec![1., 1., 0.5, 1.5]);
        let unit = mk(vec![1., 1., 0.5, 1.5]);
        assert_eq!(normalize_weights(&unit, &t).weights, unit.weights);
    }

    #[test]
    fn ps_overlap_cases() {
        let c = ps_overlap_summary(&ps(&[0.5; 4]), &[1., 1., 0., 0.], 10).unwrap();
        assert_eq!(c.treated[0], 2);
        assert_eq!(c.treated, c.control);
        assert!(!c.disjoint);

        let sep = ps_overlap_summary(&ps(&[0.95, 0.97, 0.02, 0.05]), &[1., 1., 0., 0.], 10).unwrap();
        assert!(sep.disjoint);
    }

    #[test]
    fn interleaved_scores_not_disjoint() {
        // oracle: sorted alternating scores put both groups in every 2-wide bin
        let v: Vec<f64> = (0..40).map(|i| 0.1 + 0.02 * i as f64).collect();
        let t: Vec<f64> = (0..40).map(|i| (i % 2) as f64).collect();
        let r = ps_overlap_summary(&ps(&v), &t, 10).unwrap();
        assert!(!r.disjoint);
        assert!(r.treated.iter().zip(&r.control).all(|(a, b)| *a > 0 && *b > 0));
    }

    proptest! {
        #[test]
        fn ate_weights_at_least_one(p in 1e-6f64..(1.0 - 1e-6), treated in any::<bool>()) {
            prop_assert!(weight_for(p, treated, Estimand::ATE) >= 1.0);
        }

        #[test]
        fn label_swap_maps_att_to_atc(p in 1e-6f64..(1.0 - 1e-6), treated in any::<bool>()) {
            let att = weight_for(p, treated, Estimand::ATT);
            let atc = weight_for(1.0 - p, !treated, Estimand::ATC);
            prop_assert!((att - atc).abs() <= 1e-12 * att.max(1.0));
        }

        #[test]
        fn clip_then_weight_is_total(raw in proptest::collection::vec(0.0f64..=1.0, 1..30)) {
            let t: Vec<f64> = (0..raw.len()).map(|i| (i % 2) as f64).collect();
            let c = clip_ps(&raw, DEFAULT_CLIP_EPS).unwrap();
            for e in [Estimand::ATE, Estimand::ATT, Estimand::ATC] {
                let w = ps_to_weights(&c, &t, e).unwrap();
                prop_assert!(w.weights.iter().all(|x| x.is_finite() && *x > 0.0));
            }
        }
    }
}
