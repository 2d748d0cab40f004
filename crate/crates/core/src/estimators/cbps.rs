//! Just-identified covariate balancing propensity scores.
//!
//! The balance conditions for each estimand are the stationarity conditions
//! of a strictly convex function of the logistic coefficients, so the solve
//! is a damped Newton iteration on that function:
//!
//! * ATE: `sum_T (e^-eta - eta) + sum_C (e^eta + eta)`
//! * ATT: `sum_C e^eta - sum_T eta`
//! * ATC: `sum_T e^-eta + sum_C eta`
//!
//! At the optimum the inverse-probability weighted sums of every design column
//! (intercept included) agree across groups, which makes the Hájek-weighted
//! means equal.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::logistic::sigmoid;
use crate::dataset::DesignMatrix;
use crate::error::{Error, Result};
use crate::linalg;
use crate::weights::{clip_ps, Estimand, PropensityScores, DEFAULT_CLIP_EPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CbpsConfig {
    /// Convergence threshold on the largest moment condition, scaled by 1/n.
    pub tol: f64,
    pub max_iter: usize,
    pub clip_eps: f64,
}

impl Default for CbpsConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            clip_eps: DEFAULT_CLIP_EPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbpsFit {
    pub coefficients: Vec<f64>,
    pub names: Vec<String>,
    pub moment_order: usize,
    /// Max-abs moment condition divided by n.
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

struct Objective<'a> {
    x: &'a DMatrix<f64>,
    t: &'a [f64],
    e: Estimand,
}

impl Objective<'_> {
    fn value(&self, eta: &DVector<f64>) -> f64 {
        eta.iter()
            .zip(self.t)
            .map(|(h, ti)| match (self.e, *ti == 1.0) {
                (Estimand::ATE, true) => (-h).exp() - h,
                (Estimand::ATE, false) => h.exp() + h,
                (Estimand::ATT, true) => -h,
                (Estimand::ATT, false) => h.exp(),
                (Estimand::ATC, true) => (-h).exp(),
                (Estimand::ATC, false) => *h,
            })
            .sum()
    }

    /// Per-unit first and second derivatives with respect to eta.
    fn derivs(&self, h: f64, treated: bool) -> (f64, f64) {
        match (self.e, treated) {
            (Estimand::ATE, true) => (-(-h).exp() - 1.0, (-h).exp()),
            (Estimand::ATE, false) => (h.exp() + 1.0, h.exp()),
            (Estimand::ATT, true) => (-1.0, 0.0),
            (Estimand::ATT, false) => (h.exp(), h.exp()),
            (Estimand::ATC, true) => (-(-h).exp(), (-h).exp()),
            (Estimand::ATC, false) => (1.0, 0.0),
        }
    }

    fn gradient_hessian(&self, eta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.x.nrows();
        let mut d1 = DVector::zeros(n);
        let mut xw = self.x.clone();
        for i in 0..n {
            let (g, h) = self.derivs(eta[i], self.t[i] == 1.0);
            d1[i] = g;
            xw.row_mut(i).scale_mut(h);
        }
        (self.x.tr_mul(&d1), self.x.tr_mul(&xw))
    }
}

pub fn fit_cbps(
    x: &DesignMatrix,
    t: &[f64],
    e: Estimand,
    cfg: &CbpsConfig,
) -> Result<(CbpsFit, PropensityScores)> {
    let method = format!("CBPS#{}", x.expansion_order());
    let (m, names) = x.model_matrix();
    let xi = linalg::with_intercept(&m);
    let mut all_names = vec!["(intercept)".to_string()];
    all_names.extend(names);
    let collinear = linalg::collinear_columns(&xi, &all_names, 1e-9);
    if !collinear.is_empty() {
        return Err(Error::RankDeficient {
            context: "cbps",
            columns: collinear,
        });
    }
    let n = xi.nrows() as f64;
    let n1 = t.iter().filter(|v| **v == 1.0).count() as f64;
    let obj = Objective { x: &xi, t, e };
    let mut beta = DVector::zeros(xi.ncols());
    beta[0] = (n1 / (n - n1)).ln();
    let mut eta = &xi * &beta;
    let mut f = obj.value(&eta);
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    for iter in 1..=cfg.max_iter {
        iterations = iter;
        let (g, h) = obj.gradient_hessian(&eta);
        residual = g.amax() / n;
        if residual < cfg.tol {
            converged = true;
            break;
        }
        let Some(dir) = linalg::solve_symmetric(&h, &(-&g)) else {
            break;
        };
        let slope = g.dot(&dir);
        // below the objective's rounding error only the full step is meaningful
        let tiny = -slope <= 1e-13 * (1.0 + f.abs());
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let cand = &beta + &dir * step;
            let cand_eta = &xi * &cand;
            let fc = obj.value(&cand_eta);
            if fc.is_finite() && (tiny || fc <= f + 1e-4 * step * slope) {
                beta = cand;
                eta = cand_eta;
                f = fc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            let (g, _) = obj.gradient_hessian(&eta);
            residual = g.amax() / n;
            converged = residual < cfg.tol;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            method,
            iterations,
            residual,
        });
    }
    let raw: Vec<f64> = eta.iter().map(|h| sigmoid(*h)).collect();
    let ps = clip_ps(&raw, cfg.clip_eps)?;
    Ok((
        CbpsFit {
            coefficients: beta.iter().copied().collect(),
            names: all_names,
            moment_order: x.expansion_order(),
            residual_norm: residual,
            converged,
            iterations,
        },
        ps,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balance::weighted_mean;
    use crate::dataset::{design_matrix, Confounder, ConfounderValues, Dataset};
    use crate::weights::ps_to_weights;

    fn dataset(t: Vec<f64>, x: Vec<f64>) -> Dataset {
        let n = t.len();
        Dataset::from_parts(
            t,
            vec![0.0; n],
            vec![Confounder {
                name: "x".into(),
                values: ConfounderValues::Continuous(x),
            }],
        )
        .unwrap()
    }

    fn hajek_gap(x: &[f64], t: &[f64], w: &[f64]) -> f64 {
        let (mut a, mut wa, mut b, mut wb) = (vec![], vec![], vec![], vec![]);
        for i in 0..x.len() {
            if t[i] == 1.0 {
                a.push(x[i]);
                wa.push(w[i]);
            } else {
                b.push(x[i]);
                wb.push(w[i]);
            }
        }
        weighted_mean(&a, &wa).unwrap() - weighted_mean(&b, &wb).unwrap()
    }

    #[test]
    fn balanced_data_gives_null_coefficients() {
        // treated copy the control values twice: equal means, p = 2/3
        let base = [0.3, -1.2, 2.0, 0.7, -0.4, 1.1];
        let mut x = base.to_vec();
        x.extend(base);
        x.extend(base);
        let t: Vec<f64> = (0..18).map(|i| f64::from(u8::from(i >= 6))).collect();
        let d = dataset(t.clone(), x);
        let dm = design_matrix(&d, 1).unwrap();
        for e in [Estimand::ATE, Estimand::ATT, Estimand::ATC] {
            let (fit, ps) = fit_cbps(&dm, &t, e, &CbpsConfig::default()).unwrap();
            assert!((fit.coefficients[0] - 2f64.ln()).abs() < 1e-8, "{e}");
            assert!(fit.coefficients[1].abs() < 1e-8);
            let w = ps_to_weights(&ps, &t, e).unwrap();
            assert!(hajek_gap(&dm.column(0), &t, &w.weights).abs() < 1e-6);
        }
    }

    #[test]
    fn confounded_data_exactly_balanced() {
        let n = 200;
        let x: Vec<f64> = (0..n).map(|i| ((i * 7919) % 101) as f64 / 25.0 - 2.0).collect();
        let t: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, v)| f64::from(u8::from(((i * 31) % 17) as f64 / 17.0 < sigmoid(0.8 * v))))
            .collect();
        let d = dataset(t.clone(), x);
        for order in 1..=2 {
            let dm = design_matrix(&d, order).unwrap();
            for e in [Estimand::ATE, Estimand::ATT, Estimand::ATC] {
                let (fit, ps) = fit_cbps(&dm, &t, e, &CbpsConfig::default()).unwrap();
                assert!(fit.residual_norm < 1e-6);
                let w = ps_to_weights(&ps, &t, e).unwrap();
                for j in 0..dm.features().len() {
                    assert!(hajek_gap(&dm.column(j), &t, &w.weights).abs() < 1e-6);
                }
            }
        }
    }
}
