//! Maximum-likelihood logistic regression by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::DesignMatrix;
use crate::error::{Error, Result};
use crate::linalg;
use crate::weights::{clip_ps, PropensityScores, DEFAULT_CLIP_EPS};

/// Linear predictors beyond this magnitude with a still-falling deviance
/// indicate (quasi-)separation.
const SEPARATION_ETA: f64 = 30.0;
const SCORE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub clip_eps: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            clip_eps: DEFAULT_CLIP_EPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    /// Intercept first, then one coefficient per model column.
    pub coefficients: Vec<f64>,
    pub names: Vec<String>,
    pub converged: bool,
    pub separated: bool,
    pub iterations: usize,
    pub deviance: f64,
    /// Largest absolute log-likelihood gradient component at the returned β.
    pub max_score: f64,
}

pub(crate) fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^eta) without overflow.
pub(crate) fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

/// Binomial log-likelihood `sum t*eta - log(1 + e^eta)`.
pub fn log_likelihood(x: &DMatrix<f64>, t: &[f64], beta: &[f64]) -> f64 {
    let eta = x * DVector::from_column_slice(beta);
    eta.iter().zip(t).map(|(e, ti)| ti * e - softplus(*e)).sum()
}

/// Fits the score model on the design's model columns plus an intercept.
pub fn fit_logistic_irls(
    x: &DesignMatrix,
    t: &[f64],
    cfg: &LogisticConfig,
) -> Result<(LogisticFit, PropensityScores)> {
    let (m, names) = x.model_matrix();
    fit_logistic_matrix(&m, &names, t, cfg)
}

/// IRLS on an explicit matrix (no intercept column; one is added).
pub fn fit_logistic_matrix(
    x: &DMatrix<f64>,
    names: &[String],
    t: &[f64],
    cfg: &LogisticConfig,
) -> Result<(LogisticFit, PropensityScores)> {
    if cfg.max_iter == 0 {
        return Err(Error::invalid("logistic", "max_iter must be at least 1"));
    }
    let xi = linalg::with_intercept(x);
    let mut all_names = vec!["(intercept)".to_string()];
    all_names.extend(names.iter().cloned());
    let collinear = linalg::collinear_columns(&xi, &all_names, 1e-9);
    if !collinear.is_empty() {
        return Err(Error::RankDeficient {
            context: "logistic",
            columns: collinear,
        });
    }
    let n = xi.nrows();
    let p = xi.ncols();
    let ty = DVector::from_column_slice(t);
    let tbar = t.iter().sum::<f64>() / n as f64;
    let mut beta = DVector::zeros(p);
    beta[0] = (tbar / (1.0 - tbar)).ln();

    let deviance = |eta: &DVector<f64>| -> f64 {
        -2.0 * eta
            .iter()
            .zip(t)
            .map(|(e, ti)| ti * e - softplus(*e))
            .sum::<f64>()
    };

    let mut eta = &xi * &beta;
    let mut dev = deviance(&eta);
    let mut converged = false;
    let mut separated = false;
    let mut iterations = 0;
    let mut max_score = f64::INFINITY;
    for iter in 1..=cfg.max_iter {
        iterations = iter;
        let probs = eta.map(sigmoid);
        let score = xi.tr_mul(&(&ty - &probs));
        let wdiag = probs.map(|q| (q * (1.0 - q)).max(1e-12));
        let mut xw = xi.clone();
        for (mut row, w) in xw.row_iter_mut().zip(wdiag.iter()) {
            row *= *w;
        }
        let info = xi.tr_mul(&xw);
        let Some(step) = linalg::solve_symmetric(&info, &score) else {
            return Err(Error::RankDeficient {
                context: "logistic",
                columns: all_names.clone(),
            });
        };
        let mut scale = 1.0;
        let mut new_beta = &beta + &step;
        let mut new_eta = &xi * &new_beta;
        let mut new_dev = deviance(&new_eta);
        let mut halvings = 0;
        while !(new_dev <= dev + 1e-12 * dev.abs().max(1.0)) && halvings < 30 {
            scale *= 0.5;
            new_beta = &beta + &step * scale;
            new_eta = &xi * &new_beta;
            new_dev = deviance(&new_eta);
            halvings += 1;
        }
        let improvement = dev - new_dev;
        beta = new_beta;
        eta = new_eta;
        dev = new_dev;
        let probs = eta.map(sigmoid);
        max_score = xi.tr_mul(&(&ty - &probs)).amax();
        if eta.amax() > SEPARATION_ETA && improvement > cfg.tol {
            separated = true;
            break;
        }
        if improvement.abs() < cfg.tol && max_score < SCORE_TOL {
            converged = true;
            break;
        }
        if halvings == 30 {
            break;
        }
    }
    let raw: Vec<f64> = eta.iter().map(|e| sigmoid(*e)).collect();
    let ps = clip_ps(&raw, cfg.clip_eps)?;
    Ok((
        LogisticFit {
            coefficients: beta.iter().copied().collect(),
            names: all_names,
            converged,
            separated,
            iterations,
            deviance: dev,
            max_score,
        },
        ps,
    ))
}
