//! Balance metrics (SMD, weighted KS, ESS), balance tables and method
//! recommendation.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{BalanceFeature, Dataset};
use crate::error::{Error, Result};
use crate::weights::{Estimand, WeightSet};

pub const BALANCE_THRESHOLD: f64 = 0.1;
/// KS and SMD values closer than this are ranked as ties.
pub const TIE_RESOLUTION: f64 = 0.005;

pub fn weighted_mean(x: &[f64], w: &[f64]) -> Result<f64> {
    let sw: f64 = w.iter().sum();
    if sw <= 0.0 {
        return Err(Error::degenerate("balance", "weights sum to zero"));
    }
    Ok(x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw)
}

/// Weighted standard deviation with the reliability-weights correction
/// `sum(w) / (sum(w)^2 - sum(w^2))`.
pub fn weighted_sd(x: &[f64], w: &[f64]) -> Result<f64> {
    let sw: f64 = w.iter().sum();
    let sw2: f64 = w.iter().map(|v| v * v).sum();
    let denom = sw * sw - sw2;
    // relative guard: (sum w)^2 / sum w^2 <= 1 means ESS <= 1
    if sw <= 0.0 || denom <= 1e-12 * sw * sw {
        return Err(Error::degenerate("balance", "ESS <= 1, weighted sd undefined"));
    }
    let m = weighted_mean(x, w)?;
    let ss: f64 = x.iter().zip(w).map(|(a, b)| b * (a - m).powi(2)).sum();
    Ok((sw / denom * ss).sqrt())
}

pub fn ess(w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    let sw2: f64 = w.iter().map(|v| v * v).sum();
    if sw2 == 0.0 {
        0.0
    } else {
        sw * sw / sw2
    }
}

/// ESS over the units the estimand reweights, and that set's size.
pub fn ess_for_estimand(w: &[f64], t: &[f64], e: Estimand) -> (f64, usize) {
    let pick = |g: f64| -> Vec<f64> {
        w.iter().zip(t).filter(|(_, ti)| **ti == g).map(|(x, _)| *x).collect()
    };
    let sel = match e {
        Estimand::ATE => w.to_vec(),
        Estimand::ATT => pick(0.0),
        Estimand::ATC => pick(1.0),
    };
    (ess(&sel), sel.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SmdDenominator {
    /// Weighted group sds as in the usual weighted SMD definition.
    #[default]
    Weighted,
    /// Unweighted group sds, fixed across methods.
    UnweightedPooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmdDetail {
    /// Treated minus control, standardized.
    pub signed: f64,
    pub degenerate: bool,
}

fn split(x: &[f64], t: &[f64], w: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let (mut x1, mut w1, mut x0, mut w0) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for ((xi, ti), wi) in x.iter().zip(t).zip(w) {
        if *ti == 1.0 {
            x1.push(*xi);
            w1.push(*wi);
        } else {
            x0.push(*xi);
            w0.push(*wi);
        }
    }
    (x1, w1, x0, w0)
}

/// Combines group sds according to the estimand.
fn scale(sd1: f64, sd0: f64, e: Estimand) -> f64 {
    match e {
        Estimand::ATE => ((sd1 * sd1 + sd0 * sd0) / 2.0).sqrt(),
        Estimand::ATT => sd1,
        Estimand::ATC => sd0,
    }
}

pub fn smd_detail(
    x: &[f64],
    t: &[f64],
    w: &[f64],
    e: Estimand,
    denominator: SmdDenominator,
) -> Result<SmdDetail> {
    let (x1, w1, x0, w0) = split(x, t, w);
    if x1.is_empty() || x0.is_empty() {
        return Err(Error::degenerate("balance", "SMD needs both groups"));
    }
    let diff = weighted_mean(&x1, &w1)? - weighted_mean(&x0, &w0)?;
    let (sd1, sd0) = match denominator {
        SmdDenominator::Weighted => (weighted_sd(&x1, &w1)?, weighted_sd(&x0, &w0)?),
        SmdDenominator::UnweightedPooled => {
            (crate::stats::sd(&x1), crate::stats::sd(&x0))
        }
    };
    let s = scale(sd1, sd0, e);
    if s > 0.0 {
        return Ok(SmdDetail {
            signed: diff / s,
            degenerate: false,
        });
    }
    if diff.abs() <= 1e-12 * (1.0 + x.iter().fold(0.0f64, |a, v| a.max(v.abs()))) {
        return Ok(SmdDetail {
            signed: 0.0,
            degenerate: true,
        });
    }
    // Zero within-group spread but different means: fall back to the
    // unweighted sd of the pooled sample.
    let pooled = crate::stats::sd(x);
    Ok(SmdDetail {
        signed: diff / pooled,
        degenerate: true,
    })
}

/// Absolute standardized mean difference.
pub fn smd(x: &[f64], t: &[f64], w: &[f64], e: Estimand) -> Result<f64> {
    Ok(smd_detail(x, t, w, e, SmdDenominator::Weighted)?.signed.abs())
}

/// SMD from stored group moments (used for published-table fixtures).
pub fn smd_from_moments(mean_t: f64, sd_t: f64, mean_c: f64, sd_c: f64, e: Estimand) -> f64 {
    let s = scale(sd_t, sd_c, e);
    if s == 0.0 {
        0.0
    } else {
        ((mean_t - mean_c) / s).abs()
    }
}

/// Two-sample KS statistic between the weighted empirical CDFs of the groups.
pub fn weighted_ks(x: &[f64], t: &[f64], w: &[f64]) -> Result<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    ks_presorted(&order, x, t, w)
}

/// KS with a precomputed ascending order of `x`.
pub(crate) fn ks_presorted(order: &[usize], x: &[f64], t: &[f64], w: &[f64]) -> Result<f64> {
    let (mut s1, mut s0) = (0.0, 0.0);
    for (wi, ti) in w.iter().zip(t) {
        if *ti == 1.0 {
            s1 += wi
        } else {
            s0 += wi
        }
    }
    if s1 <= 0.0 || s0 <= 0.0 {
        return Err(Error::degenerate("balance", "KS needs positive weight in both groups"));
    }
    let (mut c1, mut c0, mut best) = (0.0f64, 0.0f64, 0.0f64);
    let mut k = 0;
    while k < order.len() {
        let v = x[order[k]];
        while k < order.len() && x[order[k]] == v {
            let i = order[k];
            if t[i] == 1.0 {
                c1 += w[i]
            } else {
                c0 += w[i]
            }
            k += 1;
        }
        best = best.max((c1 / s1 - c0 / s0).abs());
    }
    Ok(best.min(1.0))
}

/// Balance of one feature under one weighting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureBalance {
    pub smd: f64,
    pub ks: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub covariate: String,
    pub unweighted: FeatureBalance,
    pub by_method: BTreeMap<String, FeatureBalance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceSummary {
    pub mean_smd: f64,
    pub max_smd: f64,
    pub mean_ks: f64,
    pub max_ks: f64,
    pub ess: f64,
    /// ESS as a percentage of the reweighted set's size.
    pub ess_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub estimand: Estimand,
    pub rows: Vec<BalanceRow>,
    pub unweighted: BalanceSummary,
    pub summaries: BTreeMap<String, BalanceSummary>,
}

/// Precomputed per-feature sort orders so repeated evaluations avoid sorting.
pub(crate) struct BalanceEvaluator<'a> {
    features: Vec<(&'a [f64], Vec<usize>)>,
    t: &'a [f64],
    estimand: Estimand,
    denominator: SmdDenominator,
}

impl<'a> BalanceEvaluator<'a> {
    pub(crate) fn new(
        features: Vec<&'a [f64]>,
        t: &'a [f64],
        estimand: Estimand,
        denominator: SmdDenominator,
    ) -> Self {
        let features = features
            .into_iter()
            .map(|x| {
                let mut order: Vec<usize> = (0..x.len()).collect();
                order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
                (x, order)
            })
            .collect();
        Self {
            features,
            t,
            estimand,
            denominator,
        }
    }

    pub(crate) fn per_feature(&self, w: &[f64]) -> Result<Vec<FeatureBalance>> {
        self.features
            .iter()
            .map(|(x, order)| {
                Ok(FeatureBalance {
                    smd: smd_detail(x, self.t, w, self.estimand, self.denominator)?
                        .signed
                        .abs(),
                    ks: ks_presorted(order, x, self.t, w)?,
                })
            })
            .collect()
    }

    pub(crate) fn summary(&self, w: &[f64]) -> Result<(Vec<FeatureBalance>, BalanceSummary)> {
        let rows = self.per_feature(w)?;
        let summary = summarize_rows(&rows, w, self.t, self.estimand);
        Ok((rows, summary))
    }
}

fn summarize_rows(rows: &[FeatureBalance], w: &[f64], t: &[f64], e: Estimand) -> BalanceSummary {
    let k = rows.len().max(1) as f64;
    let (ess, size) = ess_for_estimand(w, t, e);
    BalanceSummary {
        mean_smd: rows.iter().map(|r| r.smd).sum::<f64>() / k,
        max_smd: rows.iter().map(|r| r.smd).fold(0.0, f64::max),
        mean_ks: rows.iter().map(|r| r.ks).sum::<f64>() / k,
        max_ks: rows.iter().map(|r| r.ks).fold(0.0, f64::max),
        ess,
        ess_pct: 100.0 * ess / size as f64,
    }
}

/// Per-covariate and per-method balance, including the unweighted baseline.
pub fn balance_table(
    d: &Dataset,
    weight_sets: &BTreeMap<String, WeightSet>,
    e: Estimand,
    denominator: SmdDenominator,
) -> Result<BalanceReport> {
    let t = d.treatment()?;
    let features: Vec<BalanceFeature> = d.balance_features()?;
    for (id, ws) in weight_sets {
        if ws.weights.len() != t.len() {
            return Err(Error::invalid(
                "balance",
                format!("weight set `{id}` has {} weights for {} rows", ws.weights.len(), t.len()),
            ));
        }
    }
    let eval = BalanceEvaluator::new(
        features.iter().map(|f| f.values.as_slice()).collect(),
        t,
        e,
        denominator,
    );
    let uniform = vec![1.0; t.len()];
    let (base_rows, unweighted) = eval.summary(&uniform)?;
    let per_method: Vec<(String, Vec<FeatureBalance>, BalanceSummary)> = weight_sets
        .par_iter()
        .map(|(id, ws)| {
            let (rows, s) = eval.summary(&ws.weights)?;
            Ok((id.clone(), rows, s))
        })
        .collect::<Result<_>>()?;
    let rows = features
        .iter()
        .enumerate()
        .map(|(j, f)| BalanceRow {
            covariate: f.name.clone(),
            unweighted: base_rows[j],
            by_method: per_method
                .iter()
                .map(|(id, r, _)| (id.clone(), r[j]))
                .collect(),
        })
        .collect();
    let summaries = per_method.into_iter().map(|(id, _, s)| (id, s)).collect();
    Ok(BalanceReport {
        estimand: e,
        rows,
        unweighted,
        summaries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedMethod {
    pub method: String,
    pub feasible: bool,
    pub max_ks: f64,
    pub max_smd: f64,
    pub ess: f64,
    /// Why the method misses the threshold, empty when feasible.
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub threshold: f64,
    pub ranking: Vec<RankedMethod>,
    pub recommended: Option<String>,
    pub verdict: String,
}

fn bucket(x: f64) -> i64 {
    (x / TIE_RESOLUTION).round() as i64
}

/// Ranks methods by (lowest max KS, largest ESS, lowest max SMD) with KS and
/// SMD compared at [`TIE_RESOLUTION`]. Only methods with both max SMD and max
/// KS at or below `threshold` are eligible for recommendation.
pub fn recommend_method(
    summaries: &BTreeMap<String, BalanceSummary>,
    threshold: f64,
) -> Recommendation {
    let mut ranking: Vec<RankedMethod> = summaries
        .iter()
        .map(|(id, s)| {
            let mut reasons = Vec::new();
            if s.max_smd > threshold {
                reasons.push(format!("max SMD {:.2} > {threshold}", s.max_smd));
            }
            if s.max_ks > threshold {
                reasons.push(format!("max KS {:.2} > {threshold}", s.max_ks));
            }
            RankedMethod {
                method: id.clone(),
                feasible: reasons.is_empty(),
                max_ks: s.max_ks,
                max_smd: s.max_smd,
                ess: s.ess,
                reasons,
            }
        })
        .collect();
    ranking.sort_by(|a, b| {
        b.feasible
            .cmp(&a.feasible)
            .then(bucket(a.max_ks).cmp(&bucket(b.max_ks)))
            .then(b.ess.partial_cmp(&a.ess).unwrap_or(Ordering::Equal))
            .then(bucket(a.max_smd).cmp(&bucket(b.max_smd)))
            .then(a.method.cmp(&b.method))
    });
    let recommended = ranking.first().filter(|m| m.feasible).map(|m| m.method.clone());
    let verdict = match &recommended {
        Some(m) => format!("{m}: lowest max KS with the largest ESS among methods meeting the {threshold} threshold"),
        None => "none — associational analysis only".to_string(),
    };
    Recommendation {
        threshold,
        ranking,
        recommended,
        verdict,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn weighted_mean_examples() {
        assert_eq!(weighted_mean(&[1., 3.], &[1., 1.]).unwrap(), 2.0);
        assert_eq!(weighted_mean(&[1., 3.], &[3., 1.]).unwrap(), 1.5);
        assert!(weighted_mean(&[1., 3.], &[0., 0.]).is_err());
    }

    #[test]
    fn weighted_sd_examples() {
        assert!((weighted_sd(&[1., 2., 3.], &[1., 1., 1.]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(weighted_sd(&[4., 4., 4.], &[1., 2., 3.]).unwrap(), 0.0);
        assert!(weighted_sd(&[1., 2., 3.], &[0., 5., 0.]).is_err());
    }

    #[test]
    fn smd_examples() {
        let x = [1., 2., 3., 2., 3., 4.];
        let t = [1., 1., 1., 0., 0., 0.];
        let w = [1.0; 6];
        assert!((smd(&x, &t, &w, Estimand::ATE).unwrap() - 1.0).abs() < 1e-12);
        let same = [1., 2., 3., 1., 2., 3.];
        assert_eq!(smd(&same, &t, &w, Estimand::ATE).unwrap(), 0.0);
    }

    #[test]
    fn constant_covariate_smd_zero() {
        let d = smd_detail(&[2.; 4], &[1., 1., 0., 0.], &[1.; 4], Estimand::ATE, SmdDenominator::Weighted)
            .unwrap();
        assert_eq!(d.signed, 0.0);
        assert!(d.degenerate);
    }

    #[test]
    fn ks_examples() {
        let w = [1.0; 4];
        assert_eq!(weighted_ks(&[1., 2., 1., 2.], &[1., 1., 0., 0.], &w).unwrap(), 0.0);
        assert_eq!(weighted_ks(&[0., 0., 1., 1.], &[1., 1., 0., 0.], &w).unwrap(), 1.0);
        assert_eq!(weighted_ks(&[1., 2., 1., 3.], &[1., 1., 0., 0.], &w).unwrap(), 0.5);
    }

    #[test]
    fn ess_examples() {
        assert_eq!(ess(&[1., 1., 1., 1.]), 4.0);
        assert_eq!(ess(&[2., 2.]), 2.0);
        assert!((ess(&[1., 3.]) - 1.6).abs() < 1e-15);
    }

    #[test]
    fn single_feasible_method_is_recommended() {
        let mut m = BTreeMap::new();
        let s = |max_smd, max_ks, ess| BalanceSummary {
            mean_smd: max_smd / 2.0,
            max_smd,
            mean_ks: max_ks / 2.0,
            max_ks,
            ess,
            ess_pct: 50.0,
        };
        m.insert("A".to_string(), s(0.2, 0.05, 900.0));
        m.insert("B".to_string(), s(0.05, 0.08, 100.0));
        let r = recommend_method(&m, BALANCE_THRESHOLD);
        assert_eq!(r.recommended.as_deref(), Some("B"));
        assert!(!r.ranking[1].feasible);
    }

    #[test]
    fn ess_breaks_ks_ties() {
        let mut m = BTreeMap::new();
        let s = |ess| BalanceSummary {
            mean_smd: 0.01,
            max_smd: 0.02,
            mean_ks: 0.01,
            max_ks: 0.03,
            ess,
            ess_pct: 50.0,
        };
        m.insert("low".to_string(), s(700.0));
        m.insert("high".to_string(), s(800.0));
        assert_eq!(recommend_method(&m, 0.1).recommended.as_deref(), Some("high"));
    }

    #[test]
    fn nothing_feasible_is_associational() {
        let mut m = BTreeMap::new();
        m.insert(
            "LR".to_string(),
            BalanceSummary {
                mean_smd: 0.2,
                max_smd: 0.3,
                mean_ks: 0.1,
                max_ks: 0.2,
                ess: 10.0,
                ess_pct: 10.0,
            },
        );
        let r = recommend_method(&m, 0.1);
        assert!(r.recommended.is_none());
        assert!(r.verdict.contains("associational"));
        assert_eq!(r.ranking.len(), 1);
    }

    /// Classical two-sample KS by evaluating both ECDFs at every pooled point.
    fn brute_ks(a: &[f64], b: &[f64]) -> f64 {
        let cdf = |s: &[f64], z: f64| s.iter().filter(|v| **v <= z).count() as f64 / s.len() as f64;
        a.iter()
            .chain(b)
            .map(|z| (cdf(a, *z) - cdf(b, *z)).abs())
            .fold(0.0, f64::max)
    }

    fn grouped(
        max: usize,
    ) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1..=max / 2, 1..=max / 2).prop_flat_map(|(n1, n0)| {
            (
                proptest::collection::vec((0i32..6).prop_map(f64::from), n1),
                proptest::collection::vec((0i32..6).prop_map(f64::from), n0),
            )
        })
    }

    proptest! {
        #[test]
        fn uniform_ks_matches_brute_force((a, b) in grouped(12)) {
            let x: Vec<f64> = a.iter().chain(&b).copied().collect();
            let t: Vec<f64> = a.iter().map(|_| 1.0).chain(b.iter().map(|_| 0.0)).collect();
            let w = vec![1.0; x.len()];
            let got = weighted_ks(&x, &t, &w).unwrap();
            prop_assert!((got - brute_ks(&a, &b)).abs() < 1e-12);
        }

        #[test]
        fn ks_monotone_invariant(
            (a, b) in grouped(16),
            w in proptest::collection::vec(0.1f64..5.0, 16),
        ) {
            let x: Vec<f64> = a.iter().chain(&b).copied().collect();
            let t: Vec<f64> = a.iter().map(|_| 1.0).chain(b.iter().map(|_| 0.0)).collect();
            let w = &w[..x.len()];
            let fx: Vec<f64> = x.iter().map(|v| (v * 0.7).exp() + v.powi(3)).collect();
            prop_assert_eq!(weighted_ks(&x, &t, w).unwrap(), weighted_ks(&fx, &t, w).unwrap());
        }

        #[test]
        fn smd_affine_invariant(
            x in proptest::collection::vec(-5.0f64..5.0, 8..30),
            wseed in proptest::collection::vec(0.2f64..3.0, 30),
            a in prop_oneof![-4.0f64..-0.25, 0.25f64..4.0],
            b in -10.0f64..10.0,
        ) {
            let n = x.len();
            let t: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
            let w = &wseed[..n];
            let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            for e in [Estimand::ATE, Estimand::ATT, Estimand::ATC] {
                let s1 = smd(&x, &t, w, e).unwrap();
                let s2 = smd(&y, &t, w, e).unwrap();
                prop_assert!((s1 - s2).abs() < 1e-10 * (1.0 + s1));
            }
        }

        #[test]
        fn ess_bounds_and_homogeneity(
            w in proptest::collection::vec(0.01f64..10.0, 1..50),
            c in 0.01f64..100.0,
        ) {
            let e = ess(&w);
            prop_assert!(e > 0.0 && e <= w.len() as f64 * (1.0 + 1e-12));
            let scaled: Vec<f64> = w.iter().map(|v| v * c).collect();
            prop_assert!((ess(&scaled) - e).abs() < 1e-9 * e);
        }
    }
}
