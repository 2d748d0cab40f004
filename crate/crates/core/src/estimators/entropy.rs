//! Entropy balancing: maximum-entropy weights subject to exact moment
//! constraints, solved through the convex dual.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{DesignMatrix, Group};
use crate::error::{Error, Result};
use crate::linalg;
use crate::weights::{Estimand, Provenance, WeightSet};

const POLISH_STEPS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EntropyConfig {
    /// Convergence threshold on the largest constraint violation.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

/// One dual solve reweighting `group` toward the target means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EbSolve {
    pub group: Group,
    /// Constraint columns actually imposed (constant columns already at
    /// their target are dropped).
    pub constraints: Vec<String>,
    /// Dual parameters on the sd-scaled constraint columns.
    pub lambda: Vec<f64>,
    pub iterations: usize,
    pub max_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EbFit {
    pub moment_order: usize,
    pub solves: Vec<EbSolve>,
    pub converged: bool,
    pub max_violation: f64,
}

/// Dual objective `log sum_i exp(-lambda' c_i)` with its derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    /// Normalized tilting weights `pi_i`.
    pub probs: DVector<f64>,
}

pub fn entropy_dual(c: &DMatrix<f64>, lambda: &DVector<f64>) -> DualEval {
    let s = -(c * lambda);
    let smax = s.max();
    let e = s.map(|v| (v - smax).exp());
    let total = e.sum();
    let probs = e / total;
    let value = smax + total.ln();
    let mean = c.tr_mul(&probs);
    let mut cw = c.clone();
    for (mut row, p) in cw.row_iter_mut().zip(probs.iter()) {
        row *= *p;
    }
    let hessian = c.tr_mul(&cw) - &mean * mean.transpose();
    DualEval {
        value,
        gradient: -mean,
        hessian,
        probs,
    }
}

/// Weights for the units of one group whose weighted column means hit `target`.
/// Returns mean-one weights in the group's row order.
fn solve_group(
    x: &DMatrix<f64>,
    names: &[String],
    target: &[f64],
    group: Group,
    method: &str,
    cfg: &EntropyConfig,
) -> Result<(Vec<f64>, EbSolve)> {
    let n = x.nrows();
    let mut keep = Vec::new();
    let mut scales = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j);
        let (lo, hi) = (col.min(), col.max());
        let span = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
        if hi - lo <= span {
            if (target[j] - lo).abs() <= span.max(1e-12 * (1.0 + target[j].abs())) {
                continue;
            }
            return Err(Error::Infeasible {
                method: method.to_string(),
                constraint: format!("`{}` is constant in the {group} group", names[j]),
            });
        }
        if target[j] <= lo || target[j] >= hi {
            return Err(Error::Infeasible {
                method: method.to_string(),
                constraint: format!(
                    "`{}` target {:.6} not inside [{lo:.6}, {hi:.6}] of the {group} group",
                    names[j], target[j]
                ),
            });
        }
        keep.push(j);
        scales.push(crate::stats::sd(&col.iter().copied().collect::<Vec<_>>()));
    }
    let k = keep.len();
    let mut c = DMatrix::zeros(n, k);
    for (a, &j) in keep.iter().enumerate() {
        for i in 0..n {
            c[(i, a)] = (x[(i, j)] - target[j]) / scales[a];
        }
    }
    let constraints: Vec<String> = keep.iter().map(|&j| names[j].clone()).collect();
    let violation = |g: &DVector<f64>| -> f64 {
        g.iter()
            .zip(&scales)
            .map(|(v, s)| (v * s).abs())
            .fold(0.0, f64::max)
    };

    let mut lambda = DVector::zeros(k);
    let mut eval = entropy_dual(&c, &lambda);
    let mut iterations = 0;
    let mut max_violation = violation(&eval.gradient);
    while max_violation >= cfg.tol {
        if iterations == cfg.max_iter {
            return Err(Error::NonConvergence {
                method: method.to_string(),
                iterations,
                residual: max_violation,
            });
        }
        iterations += 1;
        let Some(dir) = linalg::solve_symmetric(&eval.hessian, &(-&eval.gradient)) else {
            return Err(Error::NonConvergence {
                method: method.to_string(),
                iterations,
                residual: max_violation,
            });
        };
        let slope = eval.gradient.dot(&dir);
        // Once the predicted decrease is below the rounding error of the
        // objective the line search cannot discriminate; Newton is then in
        // its quadratic regime and the full step is taken.
        let tiny = -slope <= 1e-13 * (1.0 + eval.value.abs());
        let mut step = 1.0;
        let mut next = None;
        for _ in 0..=50 {
            let cand = &lambda + &dir * step;
            let ce = entropy_dual(&c, &cand);
            if ce.value.is_finite() && (tiny || ce.value <= eval.value + 1e-4 * step * slope) {
                next = Some((cand, ce));
                break;
            }
            step *= 0.5;
        }
        let Some((l, e)) = next else {
            return Err(Error::NonConvergence {
                method: method.to_string(),
                iterations,
                residual: max_violation,
            });
        };
        lambda = l;
        eval = e;
        max_violation = violation(&eval.gradient);
    }
    // Polish down to rounding level: raw higher moments are large multiples
    // of the orthogonal columns, so residuals near `tol` still show there.
    for _ in 0..POLISH_STEPS {
        let Some(dir) = linalg::solve_symmetric(&eval.hessian, &(-&eval.gradient)) else {
            break;
        };
        let cand = &lambda + dir;
        let ce = entropy_dual(&c, &cand);
        let v = violation(&ce.gradient);
        if !(v < 0.5 * max_violation) {
            break;
        }
        lambda = cand;
        eval = ce;
        max_violation = v;
    }
    let weights = eval.probs.iter().map(|p| p * n as f64).collect();
    Ok((
        weights,
        EbSolve {
            group,
            constraints,
            lambda: lambda.iter().copied().collect(),
            iterations,
            max_violation,
        },
    ))
}

fn rows_of(m: &DMatrix<f64>, t: &[f64], g: f64) -> (Vec<usize>, DMatrix<f64>) {
    let idx: Vec<usize> = (0..t.len()).filter(|&i| t[i] == g).collect();
    let sub = m.select_rows(idx.iter());
    (idx, sub)
}

fn column_means(m: &DMatrix<f64>) -> Vec<f64> {
    m.column_iter().map(|c| c.mean()).collect()
}

/// Reweights the estimand's reweighted group(s) so the weighted means of the
/// design's model columns equal the target group's means. For ATE each group
/// is solved separately toward the full-sample means.
pub fn fit_entropy_balancing(
    x: &DesignMatrix,
    t: &[f64],
    e: Estimand,
    cfg: &EntropyConfig,
) -> Result<(EbFit, WeightSet)> {
    let method = format!("EB#{}", x.expansion_order());
    let (m, names) = x.model_matrix();
    if m.nrows() != t.len() {
        return Err(Error::invalid("entropy", "design and treatment lengths differ"));
    }
    let (idx1, m1) = rows_of(&m, t, 1.0);
    let (idx0, m0) = rows_of(&m, t, 0.0);
    if idx1.is_empty() || idx0.is_empty() {
        return Err(Error::degenerate("entropy", "one treatment group is empty"));
    }
    let plan: Vec<(Group, &[usize], &DMatrix<f64>, Vec<f64>)> = match e {
        Estimand::ATT => vec![(Group::Control, &idx0, &m0, column_means(&m1))],
        Estimand::ATC => vec![(Group::Treated, &idx1, &m1, column_means(&m0))],
        Estimand::ATE => {
            let full = column_means(&m);
            vec![
                (Group::Treated, &idx1, &m1, full.clone()),
                (Group::Control, &idx0, &m0, full),
            ]
        }
    };
    let mut weights = vec![1.0; t.len()];
    let mut solves = Vec::new();
    for (group, idx, sub, target) in plan {
        let (w, solve) = solve_group(sub, &names, &target, group, &method, cfg)?;
        for (&i, wi) in idx.iter().zip(w) {
            weights[i] = wi;
        }
        solves.push(solve);
    }
    let max_violation = solves.iter().map(|s| s.max_violation).fold(0.0, f64::max);
    let iterations = solves.iter().map(|s| s.iterations).sum();
    Ok((
        EbFit {
            moment_order: x.expansion_order(),
            solves,
            converged: true,
            max_violation,
        },
        WeightSet {
            method_id: method,
            estimand: e,
            weights,
            provenance: Provenance {
                iterations,
                converged: true,
                ..Provenance::default()
            },
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{design_matrix, Confounder, ConfounderValues, Dataset};

    fn design(t: &[f64], x: &[f64], order: usize) -> DesignMatrix {
        let d = Dataset::from_parts(
            t.to_vec(),
            vec![0.0; t.len()],
            vec![Confounder {
                name: "x".into(),
                values: ConfounderValues::Continuous(x.to_vec()),
            }],
        )
        .unwrap();
        design_matrix(&d, order).unwrap()
    }

    fn control_mean(x: &[f64], t: &[f64], w: &[f64]) -> f64 {
        let (mut s, mut sw) = (0.0, 0.0);
        for i in 0..x.len() {
            if t[i] == 0.0 {
                s += w[i] * x[i];
                sw += w[i];
            }
        }
        s / sw
    }

    #[test]
    fn satisfied_constraints_give_uniform_weights() {
        let t = [0., 0., 1., 1.];
        let x = [1., 3., 1.5, 2.5];
        let dm = design(&t, &x, 1);
        let (fit, ws) = fit_entropy_balancing(&dm, &t, Estimand::ATT, &EntropyConfig::default()).unwrap();
        assert!(ws.weights.iter().all(|w| (w - 1.0).abs() < 1e-12));
        assert!(fit.solves[0].lambda.iter().all(|l| l.abs() < 1e-12));
    }

    #[test]
    fn one_dimensional_tilt_matches_bisection() {
        let t = [0., 0., 0., 1., 1.];
        let x = [1., 2., 4., 1.5, 2.5];
        let dm = design(&t, &x, 1);
        let (_, ws) = fit_entropy_balancing(&dm, &t, Estimand::ATT, &EntropyConfig::default()).unwrap();
        assert!((control_mean(&x, &t, &ws.weights) - 2.0).abs() < 1e-8);

        // oracle: mean under exp(-l x) tilt is decreasing in l
        let xc = [1.0f64, 2.0, 4.0];
        let tilted = |l: f64| {
            let e: Vec<f64> = xc.iter().map(|v| (-l * v).exp()).collect();
            xc.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() / e.iter().sum::<f64>()
        };
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if tilted(mid) > 2.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let l = 0.5 * (lo + hi);
        let e: Vec<f64> = xc.iter().map(|v| (-l * v).exp()).collect();
        let s: f64 = e.iter().sum();
        for (k, i) in [0, 1, 2].iter().enumerate() {
            assert!((ws.weights[*i] - 3.0 * e[k] / s).abs() < 1e-7);
        }
    }

    #[test]
    fn target_outside_hull_is_infeasible() {
        let t = [0., 0., 0., 1., 1.];
        let x = [1., 2., 4., 5., 5.];
        let dm = design(&t, &x, 1);
        let err = fit_entropy_balancing(&dm, &t, Estimand::ATT, &EntropyConfig::default()).unwrap_err();
        assert!(err.to_string().contains("convex hull"));
        match err {
            Error::Infeasible { method, constraint } => {
                assert_eq!(method, "EB#1");
                assert!(constraint.contains("not inside") && constraint.contains("`x`"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn higher_moments_balanced_for_every_estimand() {
        let n = 120;
        let x: Vec<f64> = (0..n).map(|i| ((i * 37) % 61) as f64 / 10.0).collect();
        let t: Vec<f64> = (0..n).map(|i| f64::from(u8::from((i * 13) % 10 < 3 + usize::from(x[i] > 3.0) * 4))).collect();
        for order in 1..=3 {
            let dm = design(&t, &x, order);
            for e in [Estimand::ATE, Estimand::ATT, Estimand::ATC] {
                let (fit, ws) = fit_entropy_balancing(&dm, &t, e, &EntropyConfig::default()).unwrap();
                assert!(fit.max_violation < 1e-8);
                let target = |p: i32, g: Option<f64>| {
                    let v: Vec<f64> = x.iter().zip(&t).filter(|(_, ti)| g.is_none_or(|g| **ti == g)).map(|(a, _)| a.powi(p)).collect();
                    v.iter().sum::<f64>() / v.len() as f64
                };
                let wmean = |p: i32, g: f64| {
                    let (mut s, mut sw) = (0.0, 0.0);
                    for i in 0..n {
                        if t[i] == g {
                            s += ws.weights[i] * x[i].powi(p);
                            sw += ws.weights[i];
                        }
                    }
                    s / sw
                };
                for p in 1..=order as i32 {
                    let (a, b) = match e {
                        Estimand::ATT => (wmean(p, 0.0), target(p, Some(1.0))),
                        Estimand::ATC => (wmean(p, 1.0), target(p, Some(0.0))),
                        Estimand::ATE => (wmean(p, 1.0) - wmean(p, 0.0), 0.0),
                    };
                    assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()), "{e} order {order} moment {p}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn dual_derivatives_match_finite_differences() {
        let c = DMatrix::from_row_slice(4, 2, &[0.5, -1.0, -0.3, 0.2, 1.1, 0.7, -1.3, 0.1]);
        let lambda = DVector::from_vec(vec![0.4, -0.6]);
        let ev = entropy_dual(&c, &lambda);
        let h = 1e-5;
        for j in 0..2 {
            let mut up = lambda.clone();
            up[j] += h;
            let mut dn = lambda.clone();
            dn[j] -= h;
            let (eu, ed) = (entropy_dual(&c, &up), entropy_dual(&c, &dn));
            assert!(((eu.value - ed.value) / (2.0 * h) - ev.gradient[j]).abs() < 1e-8);
            for k in 0..2 {
                let fd = (eu.gradient[k] - ed.gradient[k]) / (2.0 * h);
                assert!((fd - ev.hessian[(k, j)]).abs() < 1e-8);
            }
        }
    }
}
