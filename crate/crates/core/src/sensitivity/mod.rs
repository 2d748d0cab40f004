//! Sensitivity of the effect estimate to a hypothetical unobserved
//! confounder `U`.
//!
//! For each grid cell `(es_t, rho_y)` a synthetic confounder is built as
//! `U = a*T + b*e + c*eps`, where `e` are the standardized residuals of Y on
//! [1, T, X] and `eps` is standard normal noise made orthogonal, within each
//! treatment group, to [1, X, Y]. With `c^2 = 1 - b^2 * v` (v the average
//! within-group variance of `e`) the average within-group variance of `U`
//! is 1, so `a` is exactly the standardized mean difference of `U`, and `b`
//! is solved so that `corr(U, Y) = rho_y`. `U` is appended to the
//! confounders, weights are re-estimated and the doubly robust effect is
//! refitted; effect and p-value are averaged over replications.

mod contour;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use contour::{isolines, nice_levels, Isoline};

use crate::balance::{smd_detail, SmdDenominator};
use crate::dataset::{design_matrix, Dataset};
use crate::error::{Error, Result};
use crate::estimators::{fit_logistic_irls, fit_method, EstimatorConfig, LogisticConfig, MethodId};
use crate::job::{self, Progress};
use crate::outcome::{doubly_robust_effect, EffectEstimate};
use crate::stats;
use crate::weights::{ps_to_weights, Estimand, WeightSet};

/// Name of the appended hypothetical confounder.
pub const HYPOTHETICAL: &str = "__unobserved_U";
pub const SIGNIFICANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Axis {
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.min.is_finite() && self.max.is_finite() && self.step.is_finite()) {
            return Err(Error::invalid("sensitivity", "axis bounds must be finite"));
        }
        if self.step <= 0.0 || self.max < self.min {
            return Err(Error::invalid("sensitivity", "axis needs step > 0 and max >= min"));
        }
        let k = ((self.max - self.min) / self.step + 1e-9).floor() as usize;
        // snap to the step lattice so 0 is represented exactly
        Ok((0..=k)
            .map(|i| {
                let v = self.min + i as f64 * self.step;
                (v / self.step).round() * self.step
            })
            .map(|v| if v.abs() < 1e-12 { 0.0 } else { v })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReweightMethod {
    /// Refit the chosen method with `U` appended.
    SameAsChosen,
    /// Tilt the chosen weights by the ratio of logistic-regression weights
    /// with and without `U`.
    FastLogistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensitivityConfig {
    pub es_t: Axis,
    pub rho_y: Axis,
    pub replications: usize,
    pub seed: u64,
    pub reweight_method: ReweightMethod,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            es_t: Axis { min: -0.6, max: 0.6, step: 0.05 },
            rho_y: Axis { min: 0.0, max: 0.6, step: 0.05 },
            replications: 20,
            seed: 20240101,
            reweight_method: ReweightMethod::FastLogistic,
        }
    }
}

impl SensitivityConfig {
    pub fn validate(&self) -> Result<()> {
        self.es_t.values()?;
        let rho = self.rho_y.values()?;
        if rho.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::invalid("sensitivity", "rho_y must lie in [0, 1]"));
        }
        if self.replications == 0 {
            return Err(Error::invalid("sensitivity", "replications must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedConfounderPoint {
    pub name: String,
    /// Signed unweighted SMD of the feature between treated and control.
    pub es_t: f64,
    /// Absolute Pearson correlation with the outcome.
    pub rho_y: f64,
}

/// Reference points for the contour plot: each balance feature's association
/// with treatment and outcome, categorical confounders per level.
pub fn observed_points(d: &Dataset) -> Result<Vec<ObservedConfounderPoint>> {
    let t = d.treatment()?;
    let y = d.outcome()?;
    let ones = vec![1.0; t.len()];
    d.balance_features()?
        .into_iter()
        .map(|f| {
            let es = smd_detail(&f.values, t, &ones, Estimand::ATE, SmdDenominator::UnweightedPooled)?.signed;
            Ok(ObservedConfounderPoint {
                name: f.name,
                es_t: es,
                rho_y: stats::pearson(&f.values, y).abs(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub es_t: f64,
    pub rho_y: f64,
    pub feasible: bool,
    pub effect: Option<f64>,
    pub p_value: Option<f64>,
    /// Monte-Carlo standard error of the mean effect.
    pub effect_mc_se: Option<f64>,
    /// Reps whose refit failed and were left out of the averages.
    pub failed_reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityGrid {
    pub es_t: Vec<f64>,
    pub rho_y: Vec<f64>,
    /// `effect[i][j]` at `rho_y[i]`, `es_t[j]`; `None` where infeasible.
    pub effect: Vec<Vec<Option<f64>>>,
    pub p_value: Vec<Vec<Option<f64>>>,
    pub cells: Vec<CellResult>,
    pub original_estimate: f64,
    pub original_p: f64,
}

impl SensitivityGrid {
    pub fn infeasible_mask(&self) -> Vec<Vec<bool>> {
        self.effect.iter().map(|r| r.iter().map(Option::is_none).collect()).collect()
    }

    /// Cell whose coordinates are nearest to `(es_t, rho_y)`.
    pub fn nearest(&self, es_t: f64, rho_y: f64) -> (usize, usize) {
        let closest = |axis: &[f64], v: f64| {
            (0..axis.len())
                .min_by(|&a, &b| (axis[a] - v).abs().total_cmp(&(axis[b] - v).abs()))
                .unwrap_or(0)
        };
        (closest(&self.rho_y, rho_y), closest(&self.es_t, es_t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorCheck {
    pub effect: f64,
    pub mc_se: f64,
    pub original: f64,
    pub within_two_se: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityResult {
    pub config: SensitivityConfig,
    pub grid: SensitivityGrid,
    pub points: Vec<ObservedConfounderPoint>,
    pub effect_isolines: Vec<Isoline>,
    pub p_isoline: Isoline,
    /// Heuristic: at least half of the observed points fall in cells whose
    /// mean p-value exceeds 0.05.
    pub very_sensitive: bool,
    pub points_in_nonsignificant_region: usize,
    /// `None` when the grid has no cell at (0, 0).
    pub anchor: Option<AnchorCheck>,
    pub procedure: String,
}

pub const PROCEDURE: &str = "Hypothetical confounder U = a*T + b*e + c*eps, with e the standardized \
residuals of the outcome on treatment and the observed confounders and eps standard normal noise \
orthogonal to the observed confounders and the outcome within each treatment group. a sets the \
standardized mean difference of U between groups, b sets the correlation of U with the outcome, \
and c keeps the within-group variance of U at 1. For each grid cell U is appended to the \
confounders, the weights are re-estimated, the doubly robust effect is refitted, and effect and \
p-value are averaged over replications. The very-sensitive flag is a reporting heuristic.";

/// Everything the cell simulation needs that does not depend on the cell.
pub struct SensitivityContext<'a> {
    d: &'a Dataset,
    chosen: &'a WeightSet,
    covariates: Vec<String>,
    estimator: &'a EstimatorConfig,
    reweight: ReweightMethod,
    seed: u64,
    replications: usize,
    t: Vec<f64>,
    resid: Vec<f64>,
    /// Within-group orthogonalization basis [1, X, Y] per group.
    groups: [GroupBasis; 2],
    v_bar: f64,
    cov_ty: f64,
    cov_ey: f64,
    var_t: f64,
    var_e: f64,
    var_y: f64,
    lr_base: Option<Vec<f64>>,
}

struct GroupBasis {
    rows: Vec<usize>,
    /// Orthonormal columns spanning [1, X, Y] on the group's rows.
    q: DMatrix<f64>,
}

fn orthonormal_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for j in 0..m.ncols() {
        let mut v = m.column(j).into_owned();
        let n0 = v.norm();
        for _ in 0..2 {
            for q in &cols {
                let p = q.dot(&v);
                v.axpy(-p, q, 1.0);
            }
        }
        let nv = v.norm();
        if n0 > 0.0 && nv > 1e-10 * n0 {
            cols.push(v / nv);
        }
    }
    DMatrix::from_columns(&cols)
}

fn cov(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (stats::mean(a), stats::mean(b));
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64
}

fn lr_weights(d: &Dataset, e: Estimand) -> Result<Vec<f64>> {
    let x = design_matrix(d, 1)?;
    let (_, ps) = fit_logistic_irls(&x, d.treatment()?, &LogisticConfig::default())?;
    Ok(ps_to_weights(&ps, d.treatment()?, e)?.weights)
}

impl<'a> SensitivityContext<'a> {
    pub fn new(
        d: &'a Dataset,
        chosen: &'a WeightSet,
        chosen_effect: &EffectEstimate,
        estimator: &'a EstimatorConfig,
        cfg: &SensitivityConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let t = d.treatment()?.to_vec();
        let y = d.outcome()?.to_vec();
        let n = t.len();
        chosen.validate(&t)?;
        let (xm, _) = design_matrix(d, 1)?.model_matrix();
        // standardized residuals of Y on [1, T, X]
        let mut a = DMatrix::from_element(n, xm.ncols() + 2, 1.0);
        a.column_mut(1).copy_from_slice(&t);
        a.view_mut((0, 2), (n, xm.ncols())).copy_from(&xm);
        let q = orthonormal_basis(&a);
        let yv = DVector::from_column_slice(&y);
        let r = &yv - &q * q.tr_mul(&yv);
        let sd_r = stats::sd(r.as_slice());
        if sd_r <= 1e-12 * (1.0 + stats::sd(&y)) {
            return Err(Error::degenerate("sensitivity", "outcome is fitted exactly by treatment and confounders"));
        }
        let resid: Vec<f64> = r.iter().map(|v| v / sd_r).collect();

        let mut group_var = [0.0; 2];
        let groups = [0.0, 1.0].map(|g| {
            let rows: Vec<usize> = (0..n).filter(|&i| t[i] == g).collect();
            let mut m = DMatrix::from_element(rows.len(), xm.ncols() + 2, 1.0);
            for (k, &i) in rows.iter().enumerate() {
                for j in 0..xm.ncols() {
                    m[(k, j + 1)] = xm[(i, j)];
                }
                m[(k, xm.ncols() + 1)] = y[i];
            }
            GroupBasis { q: orthonormal_basis(&m), rows }
        });
        for (g, basis) in groups.iter().enumerate() {
            if basis.rows.len() <= basis.q.ncols() + 1 {
                return Err(Error::degenerate("sensitivity", "too few rows in a treatment group for the noise construction"));
            }
            let eg: Vec<f64> = basis.rows.iter().map(|&i| resid[i]).collect();
            let s = stats::sd(&eg);
            group_var[g] = s * s;
        }
        let lr_base = match cfg.reweight_method {
            ReweightMethod::FastLogistic => Some(lr_weights(d, chosen.estimand)?),
            ReweightMethod::SameAsChosen => {
                chosen.method_id.parse::<MethodId>()?;
                None
            }
        };
        Ok(Self {
            d,
            chosen,
            covariates: chosen_effect.covariates.clone(),
            estimator,
            reweight: cfg.reweight_method,
            seed: cfg.seed,
            replications: cfg.replications,
            v_bar: 0.5 * (group_var[0] + group_var[1]),
            cov_ty: cov(&t, &y),
            cov_ey: cov(&resid, &y),
            var_t: cov(&t, &t),
            var_e: cov(&resid, &resid),
            var_y: cov(&y, &y),
            t,
            resid,
            groups,
            lr_base,
        })
    }

    /// `corr(U, Y)` as a function of `b` for a fixed `a`. Exact because the
    /// noise is orthogonal to T, e and Y and has unit within-group variance.
    fn corr(&self, a: f64, b: f64) -> f64 {
        let c2 = (1.0 - b * b * self.v_bar).max(0.0);
        let n = self.t.len() as f64;
        // eps has within-group variance 1 with mean 0 per group
        let var_eps = (n - 2.0) / (n - 1.0);
        let var_u = a * a * self.var_t + b * b * self.var_e + c2 * var_eps;
        (a * self.cov_ty + b * self.cov_ey) / (var_u * self.var_y).sqrt()
    }

    /// Solves `corr(U, Y) = rho_y` for the root `b` closest to 0.
    pub fn solve_b(&self, es_t: f64, rho_y: f64) -> Option<f64> {
        let bmax = 1.0 / self.v_bar.sqrt();
        let g = |b: f64| self.corr(es_t, b) - rho_y;
        if g(0.0) == 0.0 {
            return Some(0.0);
        }
        const STEPS: usize = 400;
        let mut roots = Vec::new();
        for dir in [1.0, -1.0] {
            let mut prev = (0.0, g(0.0));
            for k in 1..=STEPS {
                let b = dir * bmax * k as f64 / STEPS as f64;
                let gb = g(b);
                if gb == 0.0 || (gb > 0.0) != (prev.1 > 0.0) {
                    let (mut lo, mut hi) = (prev.0, b);
                    let glo = prev.1;
                    for _ in 0..100 {
                        let mid = 0.5 * (lo + hi);
                        if (g(mid) > 0.0) == (glo > 0.0) {
                            lo = mid
                        } else {
                            hi = mid
                        }
                    }
                    roots.push(0.5 * (lo + hi));
                    break;
                }
                prev = (b, gb);
            }
        }
        roots.into_iter().min_by(|a, b| a.abs().total_cmp(&b.abs()))
    }

    /// Draws the hypothetical confounder for one replication.
    pub fn draw_u(&self, es_t: f64, b: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let n = self.t.len();
        let c = (1.0 - b * b * self.v_bar).max(0.0).sqrt();
        let mut u = vec![0.0; n];
        for basis in &self.groups {
            let z: Vec<f64> = basis.rows.iter().map(|_| StandardNormal.sample(rng)).collect();
            let zv = DVector::from_vec(z);
            let eps = &zv - &basis.q * basis.q.tr_mul(&zv);
            let s = stats::sd(eps.as_slice());
            for (k, &i) in basis.rows.iter().enumerate() {
                u[i] = es_t * self.t[i] + b * self.resid[i] + c * eps[k] / s;
            }
        }
        u
    }

    fn reweight(&self, du: &Dataset) -> Result<WeightSet> {
        match (self.reweight, &self.lr_base) {
            (ReweightMethod::FastLogistic, Some(base)) => {
                let with_u = lr_weights(du, self.chosen.estimand)?;
                let mut ws = self.chosen.clone();
                for ((w, a), b) in ws.weights.iter_mut().zip(&with_u).zip(base) {
                    *w *= a / b;
                }
                Ok(ws)
            }
            _ => {
                let method: MethodId = self.chosen.method_id.parse()?;
                fit_method(du, method, self.chosen.estimand, self.estimator)
            }
        }
    }

    fn rep(&self, es_t: f64, b: f64, cell: usize, rep: usize) -> Result<EffectEstimate> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((cell as u64) << 32) | rep as u64);
        let u = self.draw_u(es_t, b, &mut rng);
        let du = self.d.with_continuous_confounder(HYPOTHETICAL, u)?;
        let w = self.reweight(&du)?;
        let mut covs = self.covariates.clone();
        covs.push(HYPOTHETICAL.to_string());
        doubly_robust_effect(&du, &w, Some(&covs))
    }

    /// Mean adjusted effect and p-value over the replications of one cell.
    pub fn simulate_cell(&self, es_t: f64, rho_y: f64, cell: usize) -> CellResult {
        let empty = |feasible, failed_reps| CellResult {
            es_t,
            rho_y,
            feasible,
            effect: None,
            p_value: None,
            effect_mc_se: None,
            failed_reps,
        };
        let Some(b) = self.solve_b(es_t, rho_y) else {
            return empty(false, 0);
        };
        let (mut effects, mut ps, mut failed) = (Vec::new(), Vec::new(), 0);
        for r in 0..self.replications {
            match self.rep(es_t, b, cell, r) {
                Ok(e) => {
                    effects.push(e.estimate);
                    ps.push(e.p_value);
                }
                Err(_) => failed += 1,
            }
        }
        if effects.is_empty() {
            return empty(true, failed);
        }
        let mc_se = if effects.len() > 1 {
            stats::sd(&effects) / (effects.len() as f64).sqrt()
        } else {
            0.0
        };
        CellResult {
            es_t,
            rho_y,
            feasible: true,
            effect: Some(stats::mean(&effects)),
            p_value: Some(stats::mean(&ps)),
            effect_mc_se: Some(mc_se),
            failed_reps: failed,
        }
    }
}

/// Convenience wrapper for a single cell.
pub fn simulate_cell(
    d: &Dataset,
    chosen: &WeightSet,
    chosen_effect: &EffectEstimate,
    estimator: &EstimatorConfig,
    cfg: &SensitivityConfig,
    es_t: f64,
    rho_y: f64,
) -> Result<CellResult> {
    let ctx = SensitivityContext::new(d, chosen, chosen_effect, estimator, cfg)?;
    Ok(ctx.simulate_cell(es_t, rho_y, 0))
}

/// Sweeps the whole grid (cells in parallel, each with its own random
/// streams) and assembles the contour payload.
pub fn ov_analysis(
    d: &Dataset,
    chosen: &WeightSet,
    chosen_effect: &EffectEstimate,
    estimator: &EstimatorConfig,
    cfg: &SensitivityConfig,
    progress: Option<&Progress>,
) -> Result<SensitivityResult> {
    let ctx = SensitivityContext::new(d, chosen, chosen_effect, estimator, cfg)?;
    let xs = cfg.es_t.values()?;
    let ys = cfg.rho_y.values()?;
    if let Some(p) = progress {
        p.set_total(xs.len() * ys.len());
    }
    let coords: Vec<(usize, usize)> = (0..ys.len()).flat_map(|i| (0..xs.len()).map(move |j| (i, j))).collect();
    let cells: Vec<CellResult> = coords
        .par_iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            job::checkpoint(progress)?;
            let c = ctx.simulate_cell(xs[j], ys[i], k);
            job::tick(progress);
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let mut effect = vec![vec![None; xs.len()]; ys.len()];
    let mut p_value = vec![vec![None; xs.len()]; ys.len()];
    for (&(i, j), c) in coords.iter().zip(&cells) {
        effect[i][j] = c.effect;
        p_value[i][j] = c.p_value;
    }
    let grid = SensitivityGrid {
        es_t: xs.clone(),
        rho_y: ys.clone(),
        effect,
        p_value,
        cells,
        original_estimate: chosen_effect.estimate,
        original_p: chosen_effect.p_value,
    };
    let points = observed_points(d)?;
    let (lo, hi) = grid
        .effect
        .iter()
        .flatten()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let effect_isolines = isolines(&xs, &ys, &grid.effect, &nice_levels(lo, hi, 8));
    let p_isoline = isolines(&xs, &ys, &grid.p_value, &[SIGNIFICANCE]).remove(0);
    let in_region = points
        .iter()
        .filter(|p| {
            let (i, j) = grid.nearest(p.es_t, p.rho_y);
            grid.p_value[i][j].is_some_and(|v| v > SIGNIFICANCE)
        })
        .count();
    let very_sensitive = !points.is_empty() && 2 * in_region >= points.len();
    let anchor = anchor_check(&grid);
    Ok(SensitivityResult {
        config: cfg.clone(),
        grid,
        points,
        effect_isolines,
        p_isoline,
        very_sensitive,
        points_in_nonsignificant_region: in_region,
        anchor,
        procedure: PROCEDURE.to_string(),
    })
}

fn anchor_check(grid: &SensitivityGrid) -> Option<AnchorCheck> {
    let j = grid.es_t.iter().position(|v| *v == 0.0)?;
    let i = grid.rho_y.iter().position(|v| *v == 0.0)?;
    let cell = grid.cells.iter().find(|c| c.es_t == grid.es_t[j] && c.rho_y == grid.rho_y[i])?;
    let (effect, mc_se) = (cell.effect?, cell.effect_mc_se?);
    let original = grid.original_estimate;
    Some(AnchorCheck {
        effect,
        mc_se,
        original,
        within_two_se: (effect - original).abs() <= 2.0 * mc_se + 1e-9 * (1.0 + original.abs()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Confounder, ConfounderValues};
    use crate::estimators::MethodId;
    use crate::synth;

    #[test]
    fn axis_snaps_to_lattice() {
        let v = Axis { min: -0.6, max: 0.6, step: 0.05 }.values().unwrap();
        assert_eq!(v.len(), 25);
        assert_eq!(v[12], 0.0);
        assert!(Axis { min: 0.0, max: 1.0, step: 0.0 }.values().is_err());
    }

    #[test]
    fn observed_points_hand_example() {
        let t = vec![0., 0., 0., 1., 1., 1.];
        let y = vec![1., 2., 3., 4., 5., 9.];
        let x = vec![1., 2., 3., 2., 3., 4.];
        let d = Dataset::from_parts(
            t,
            y.clone(),
            vec![
                Confounder { name: "x".into(), values: ConfounderValues::Continuous(x) },
                Confounder { name: "same".into(), values: ConfounderValues::Continuous(y) },
            ],
        )
        .unwrap();
        let pts = observed_points(&d).unwrap();
        // both groups have sd 1, means differ by 1
        assert!((pts[0].es_t - 1.0).abs() < 1e-12);
        // r(x, y): hand computed from deviations
        let (xd, yd) = ([-1.5, -0.5, 0.5, -0.5, 0.5, 1.5], [-3.0, -2.0, -1.0, 0.0, 1.0, 5.0]);
        let sxy: f64 = xd.iter().zip(&yd).map(|(a, b)| a * b).sum();
        let r = sxy / (xd.iter().map(|a| a * a).sum::<f64>() * yd.iter().map(|a| a * a).sum::<f64>()).sqrt();
        assert!((pts[0].rho_y - r).abs() < 1e-12);
        assert!((pts[1].rho_y - 1.0).abs() < 1e-12);
    }

    fn setup(n: usize, seed: u64) -> (Dataset, WeightSet, EffectEstimate) {
        let d = synth::generate(&synth::Design::confounded(n, 1.0, seed)).unwrap();
        let w = fit_method(&d, MethodId::Lr, Estimand::ATE, &EstimatorConfig::default()).unwrap();
        let e = doubly_robust_effect(&d, &w, None).unwrap();
        (d, w, e)
    }

    #[test]
    fn constructed_confounder_hits_targets() {
        let (d, w, e) = setup(600, 3);
        let est = EstimatorConfig::default();
        let ctx = SensitivityContext::new(&d, &w, &e, &est, &SensitivityConfig::default()).unwrap();
        let (es, rho) = (0.3, 0.35);
        let b = ctx.solve_b(es, rho).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = ctx.draw_u(es, b, &mut rng);
        let t = d.treatment().unwrap();
        let ones = vec![1.0; t.len()];
        let smd = smd_detail(&u, t, &ones, Estimand::ATE, SmdDenominator::UnweightedPooled).unwrap().signed;
        assert!((smd - es).abs() < 1e-9, "smd {smd}");
        assert!((stats::pearson(&u, d.outcome().unwrap()) - rho).abs() < 1e-9);
    }

    #[test]
    fn small_grid_is_deterministic() {
        let (d, w, e) = setup(300, 5);
        let cfg = SensitivityConfig {
            es_t: Axis { min: -0.2, max: 0.2, step: 0.2 },
            rho_y: Axis { min: 0.0, max: 0.4, step: 0.2 },
            replications: 2,
            ..SensitivityConfig::default()
        };
        let est = EstimatorConfig::default();
        let a = ov_analysis(&d, &w, &e, &est, &cfg, None).unwrap();
        let b = ov_analysis(&d, &w, &e, &est, &cfg, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.grid.cells.len(), 9);
        assert!(a.anchor.is_some());
    }

    #[test]
    fn no_anchor_without_zero() {
        let (d, w, e) = setup(300, 6);
        let cfg = SensitivityConfig {
            es_t: Axis { min: 0.1, max: 0.3, step: 0.2 },
            rho_y: Axis { min: 0.0, max: 0.2, step: 0.2 },
            replications: 1,
            ..SensitivityConfig::default()
        };
        let r = ov_analysis(&d, &w, &e, &EstimatorConfig::default(), &cfg, None).unwrap();
        assert!(r.anchor.is_none());
    }

    #[test]
    fn same_as_chosen_refits_method() {
        let (d, w, e) = setup(300, 7);
        let cfg = SensitivityConfig {
            reweight_method: ReweightMethod::SameAsChosen,
            replications: 2,
            ..SensitivityConfig::default()
        };
        let est = EstimatorConfig::default();
        let fast = simulate_cell(&d, &w, &e, &est, &SensitivityConfig { replications: 2, ..SensitivityConfig::default() }, 0.2, 0.2).unwrap();
        let same = simulate_cell(&d, &w, &e, &est, &cfg, 0.2, 0.2).unwrap();
        // for LR the ratio tilt is the refit itself
        assert!((fast.effect.unwrap() - same.effect.unwrap()).abs() < 1e-8);
    }
}
