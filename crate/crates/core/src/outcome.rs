//! Treatment-effect estimation with chosen weights: the weighted difference
//! in means and a doubly robust weighted regression.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::balance::{ess_for_estimand, weighted_mean, weighted_sd};
use crate::dataset::{design_matrix, Dataset};
use crate::error::{Error, Result};
use crate::linalg;
use crate::stats;
use crate::weights::{Estimand, WeightSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectModel {
    WeightedMeans,
    DoublyRobust,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub estimand: Estimand,
    pub method_id: String,
    pub n: usize,
    pub ess: f64,
    pub model: EffectModel,
    /// Reference-distribution degrees of freedom; `None` for the normal.
    pub df: Option<f64>,
    /// Confounders adjusted for in the outcome regression.
    pub covariates: Vec<String>,
}

impl EffectEstimate {
    /// Checks the interval brackets the estimate and the p-value is a probability.
    pub fn validate(&self) -> Result<()> {
        if !(self.ci_low <= self.estimate && self.estimate <= self.ci_high) {
            return Err(Error::invalid(
                "outcome",
                format!("interval ({}, {}) excludes estimate {}", self.ci_low, self.ci_high, self.estimate),
            ));
        }
        if !(0.0..=1.0).contains(&self.p_value) {
            return Err(Error::invalid("outcome", format!("p-value {} outside [0, 1]", self.p_value)));
        }
        Ok(())
    }
}

fn group(y: &[f64], t: &[f64], w: &[f64], g: f64) -> (Vec<f64>, Vec<f64>) {
    y.iter()
        .zip(t)
        .zip(w)
        .filter(|((_, ti), _)| **ti == g)
        .map(|((yi, _), wi)| (*yi, *wi))
        .unzip()
}

/// Weighted contrast of group means. The standard error combines each
/// group's weighted variance with its effective sample size; the interval
/// and p-value use the normal approximation.
pub fn weighted_means_effect(y: &[f64], t: &[f64], w: &WeightSet) -> Result<EffectEstimate> {
    if y.len() != t.len() || w.weights.len() != t.len() {
        return Err(Error::invalid("outcome", "outcome, treatment and weights differ in length"));
    }
    w.validate(t)?;
    let (y1, w1) = group(y, t, &w.weights, 1.0);
    let (y0, w0) = group(y, t, &w.weights, 0.0);
    let m1 = weighted_mean(&y1, &w1)?;
    let m0 = weighted_mean(&y0, &w0)?;
    let estimate = m1 - m0;
    let var = |yy: &[f64], ww: &[f64]| -> Result<f64> {
        let s = weighted_sd(yy, ww)?;
        Ok(s * s / crate::balance::ess(ww))
    };
    let se = (var(&y1, &w1)? + var(&y0, &w0)?).sqrt();
    let z = stats::normal_quantile(0.975);
    let p_value = if se > 0.0 {
        stats::normal_two_sided_p(estimate / se)
    } else if estimate == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(EffectEstimate {
        estimate,
        se,
        ci_low: estimate - z * se,
        ci_high: estimate + z * se,
        p_value,
        estimand: w.estimand,
        method_id: w.method_id.clone(),
        n: t.len(),
        ess: ess_for_estimand(&w.weights, t, w.estimand).0,
        model: EffectModel::WeightedMeans,
        df: None,
        covariates: Vec::new(),
    })
}

/// Weighted least squares fit with HC1 sandwich covariance.
pub(crate) struct WlsFit {
    pub beta: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub df: f64,
}

pub(crate) fn wls_hc1(x: &DMatrix<f64>, names: &[String], y: &[f64], w: &[f64]) -> Result<WlsFit> {
    let (n, p) = x.shape();
    if n <= p {
        return Err(Error::degenerate("outcome", format!("{n} rows for {p} regression parameters")));
    }
    let collinear = linalg::collinear_columns(x, names, 1e-9);
    if !collinear.is_empty() {
        return Err(Error::RankDeficient {
            context: "outcome",
            columns: collinear,
        });
    }
    let mut xw = x.clone();
    for (mut row, wi) in xw.row_iter_mut().zip(w) {
        row *= *wi;
    }
    let xtwx = x.tr_mul(&xw);
    let bread = linalg::inverse_spd(&xtwx).ok_or_else(|| Error::RankDeficient {
        context: "outcome",
        columns: names.to_vec(),
    })?;
    let yv = DVector::from_column_slice(y);
    let beta = &bread * xw.tr_mul(&yv);
    let resid = &yv - x * &beta;
    // meat = sum w^2 e^2 x x'
    let mut xs = x.clone();
    for (i, mut row) in xs.row_iter_mut().enumerate() {
        row *= w[i] * resid[i];
    }
    let meat = xs.tr_mul(&xs);
    let df = (n - p) as f64;
    let cov = (&bread * meat * &bread) * (n as f64 / df);
    Ok(WlsFit { beta, cov, df })
}

/// Regression of Y on an intercept, T and the design columns of the chosen
/// confounders (all of them by default), weighted by `w`. Inference uses an
/// HC1 sandwich that treats the weights as fixed and a t reference with
/// n - p degrees of freedom.
pub fn doubly_robust_effect(
    d: &Dataset,
    w: &WeightSet,
    covariate_subset: Option<&[String]>,
) -> Result<EffectEstimate> {
    let t = d.treatment()?;
    let y = d.outcome()?;
    w.validate(t)?;
    let all: Vec<String> = d.confounders()?.iter().map(|c| c.name.clone()).collect();
    let covariates = match covariate_subset {
        None => all.clone(),
        Some(sub) => {
            if let Some(bad) = sub.iter().find(|s| !all.contains(s)) {
                return Err(Error::invalid("outcome", format!("`{bad}` is not a confounder")));
            }
            all.iter().filter(|c| sub.contains(c)).cloned().collect()
        }
    };
    let (xm, xnames) = if covariates.is_empty() {
        (DMatrix::zeros(t.len(), 0), Vec::new())
    } else {
        design_matrix(d, 1)?.subset_sources(&covariates).model_matrix()
    };
    let n = t.len();
    let mut x = DMatrix::from_element(n, xm.ncols() + 2, 1.0);
    x.column_mut(1).copy_from_slice(t);
    x.view_mut((0, 2), (n, xm.ncols())).copy_from(&xm);
    let mut names = vec!["(intercept)".to_string(), d.treatment_column()?.to_string()];
    names.extend(xnames);
    let fit = wls_hc1(&x, &names, y, &w.weights)?;
    let estimate = fit.beta[1];
    let se = fit.cov[(1, 1)].max(0.0).sqrt();
    let q = stats::t_quantile(0.975, fit.df);
    let p_value = if se > 0.0 {
        stats::t_two_sided_p(estimate / se, fit.df)
    } else if estimate == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(EffectEstimate {
        estimate,
        se,
        ci_low: estimate - q * se,
        ci_high: estimate + q * se,
        p_value,
        estimand: w.estimand,
        method_id: w.method_id.clone(),
        n,
        ess: ess_for_estimand(&w.weights, t, w.estimand).0,
        model: EffectModel::DoublyRobust,
        df: Some(fit.df),
        covariates,
    })
}
