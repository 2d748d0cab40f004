//! Gradient boosted propensity scores with balance-based stopping.
//!
//! Boosting maximizes the Bernoulli log-likelihood of `g(x)` stagewise with
//! shallow least-squares trees fitted to `t - sigmoid(g)`. Instead of
//! cross-validating the number of trees, the iteration is chosen by the
//! balance its weights achieve: mean SMD (`GBM_ES`) or max KS (`GBM_KS`).

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::logistic::{sigmoid, softplus};
use crate::balance::{BalanceEvaluator, SmdDenominator};
use crate::dataset::DesignMatrix;
use crate::error::{Error, Result};
use crate::job::{self, Progress};
use crate::weights::{clip_ps, ps_to_weights, Estimand, PropensityScores, DEFAULT_CLIP_EPS};

const MIN_NODE_SIZE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StopRule {
    /// Mean absolute SMD across features.
    EsMean,
    /// Max KS across features.
    KsMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbmParams {
    pub max_trees: usize,
    pub depth: usize,
    pub shrinkage: f64,
    pub bag_fraction: f64,
    pub eval_every: usize,
    pub clip_eps: f64,
}

impl Default for GbmParams {
    fn default() -> Self {
        Self {
            max_trees: 3000,
            depth: 3,
            shrinkage: 0.01,
            bag_fraction: 0.5,
            eval_every: 10,
            clip_eps: DEFAULT_CLIP_EPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        feature: usize,
        /// Rows with `x <= threshold` go left.
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Regression tree stored as a flat node list with the root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if x[(row, feature)] <= threshold { left } else { right },
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub mean_smd: f64,
    pub max_smd: f64,
    pub mean_ks: f64,
    pub max_ks: f64,
    /// Full-sample Bernoulli deviance.
    pub deviance: f64,
}

impl TracePoint {
    fn metric(&self, rule: StopRule) -> f64 {
        match rule {
            StopRule::EsMean => self.mean_smd,
            StopRule::KsMax => self.max_ks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmFit {
    pub init: f64,
    pub trees: Vec<Tree>,
    pub params: GbmParams,
    pub stop_rule: StopRule,
    pub selected_iteration: usize,
    pub trace: Vec<TracePoint>,
    pub seed: u64,
}

impl GbmFit {
    /// Linear predictor after the first `iterations` trees.
    pub fn predict_eta(&self, x: &DMatrix<f64>, iterations: usize) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| {
                self.init
                    + self.trees[..iterations.min(self.trees.len())]
                        .iter()
                        .map(|tr| tr.predict(x, i))
                        .sum::<f64>()
            })
            .collect()
    }
}

/// One boosting run evaluated under both stop rules.
#[derive(Debug, Clone)]
pub struct GbmRun {
    init: f64,
    trees: Vec<Tree>,
    params: GbmParams,
    trace: Vec<TracePoint>,
    seed: u64,
    best: [(usize, Vec<f64>); 2],
}

impl GbmRun {
    pub fn trace(&self) -> &[TracePoint] {
        &self.trace
    }

    pub fn select(&self, rule: StopRule) -> Result<(GbmFit, PropensityScores)> {
        let (iteration, eta) = &self.best[rule as usize];
        let raw: Vec<f64> = eta.iter().map(|h| sigmoid(*h)).collect();
        let ps = clip_ps(&raw, self.params.clip_eps)?;
        Ok((
            GbmFit {
                init: self.init,
                trees: self.trees.clone(),
                params: self.params.clone(),
                stop_rule: rule,
                selected_iteration: *iteration,
                trace: self.trace.clone(),
                seed: self.seed,
            },
            ps,
        ))
    }
}

fn deviance(eta: &[f64], t: &[f64]) -> f64 {
    -2.0 * eta
        .iter()
        .zip(t)
        .map(|(h, ti)| ti * h - softplus(*h))
        .sum::<f64>()
}

struct NodeStats {
    sum: f64,
    count: usize,
}

/// Grows one least-squares tree level by level over the bagged rows.
fn grow_tree(
    x: &DMatrix<f64>,
    orders: &[Vec<usize>],
    in_bag: &[bool],
    resid: &[f64],
    hess: &[f64],
    depth: usize,
    shrinkage: f64,
) -> Tree {
    let n = x.nrows();
    // node index per row, usize::MAX for out-of-bag rows
    let mut node_of: Vec<usize> = (0..n).map(|i| if in_bag[i] { 0 } else { usize::MAX }).collect();
    let mut nodes = vec![TreeNode::Leaf { value: 0.0 }];
    let mut frontier = vec![0usize];
    for _ in 0..depth {
        // stats for every frontier node
        let slot_of = |node: usize| frontier.iter().position(|&f| f == node);
        let mut totals: Vec<NodeStats> = frontier.iter().map(|_| NodeStats { sum: 0.0, count: 0 }).collect();
        let mut slot_row = vec![usize::MAX; n];
        for i in 0..n {
            if node_of[i] != usize::MAX {
                if let Some(s) = slot_of(node_of[i]) {
                    slot_row[i] = s;
                    totals[s].sum += resid[i];
                    totals[s].count += 1;
                }
            }
        }
        // best (gain, feature, threshold) per slot
        let mut best: Vec<Option<(f64, usize, f64)>> = vec![None; frontier.len()];
        for (f, order) in orders.iter().enumerate() {
            let mut left: Vec<NodeStats> = frontier.iter().map(|_| NodeStats { sum: 0.0, count: 0 }).collect();
            let mut last: Vec<f64> = vec![f64::NAN; frontier.len()];
            for &i in order {
                let s = slot_row[i];
                if s == usize::MAX {
                    continue;
                }
                let v = x[(i, f)];
                let (ln, tn) = (&left[s], &totals[s]);
                if !last[s].is_nan()
                    && v > last[s]
                    && ln.count >= MIN_NODE_SIZE
                    && tn.count - ln.count >= MIN_NODE_SIZE
                {
                    let rn = (tn.count - ln.count) as f64;
                    let rs = tn.sum - ln.sum;
                    let gain = ln.sum * ln.sum / ln.count as f64 + rs * rs / rn
                        - tn.sum * tn.sum / tn.count as f64;
                    if best[s].is_none_or(|b| gain > b.0) {
                        best[s] = Some((gain, f, 0.5 * (last[s] + v)));
                    }
                }
                left[s].sum += resid[i];
                left[s].count += 1;
                last[s] = v;
            }
        }
        let mut next = Vec::new();
        for (s, &node) in frontier.iter().enumerate() {
            if let Some((gain, feature, threshold)) = best[s] {
                if gain > 1e-12 {
                    let l = nodes.len();
                    nodes.push(TreeNode::Leaf { value: 0.0 });
                    nodes.push(TreeNode::Leaf { value: 0.0 });
                    nodes[node] = TreeNode::Split {
                        feature,
                        threshold,
                        left: l,
                        right: l + 1,
                    };
                    next.push(l);
                    next.push(l + 1);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        for i in 0..n {
            if node_of[i] == usize::MAX {
                continue;
            }
            if let TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } = nodes[node_of[i]]
            {
                node_of[i] = if x[(i, feature)] <= threshold { left } else { right };
            }
        }
        frontier = next;
    }
    // Newton step per leaf
    let mut num = vec![0.0; nodes.len()];
    let mut den = vec![0.0; nodes.len()];
    for i in 0..n {
        if node_of[i] != usize::MAX {
            num[node_of[i]] += resid[i];
            den[node_of[i]] += hess[i];
        }
    }
    for (k, node) in nodes.iter_mut().enumerate() {
        if let TreeNode::Leaf { value } = node {
            *value = if den[k] > 1e-12 { shrinkage * num[k] / den[k] } else { 0.0 };
        }
    }
    Tree { nodes }
}

/// Runs boosting once and records the best iteration under each stop rule.
/// `progress` is ticked once per tree; its total is left to the caller.
/// Balance is evaluated on every design column with the same SMD and KS code
/// as the balance tables.
pub fn boost(
    x: &DesignMatrix,
    t: &[f64],
    e: Estimand,
    params: &GbmParams,
    seed: u64,
    progress: Option<&Progress>,
) -> Result<GbmRun> {
    if params.eval_every == 0 || params.max_trees < params.eval_every {
        return Err(Error::invalid("gbm", "max_trees must be at least eval_every (and eval_every > 0)"));
    }
    if params.depth == 0 {
        return Err(Error::invalid("gbm", "tree depth must be at least 1"));
    }
    if !(params.shrinkage > 0.0 && params.shrinkage <= 1.0) {
        return Err(Error::invalid("gbm", "shrinkage must be in (0, 1]"));
    }
    if !(params.bag_fraction > 0.0 && params.bag_fraction <= 1.0) {
        return Err(Error::invalid("gbm", "bag_fraction must be in (0, 1]"));
    }
    let m = x.matrix();
    let n = m.nrows();
    if n != t.len() {
        return Err(Error::invalid("gbm", "design and treatment lengths differ"));
    }
    let tbar = t.iter().sum::<f64>() / n as f64;
    if !(tbar > 0.0 && tbar < 1.0) {
        return Err(Error::degenerate("gbm", "one treatment group is empty"));
    }
    let init = (tbar / (1.0 - tbar)).ln();
    let cols: Vec<Vec<f64>> = (0..m.ncols()).map(|j| x.column(j)).collect();
    let orders: Vec<Vec<usize>> = cols
        .iter()
        .map(|c| {
            let mut o: Vec<usize> = (0..n).collect();
            o.sort_by(|&a, &b| c[a].total_cmp(&c[b]));
            o
        })
        .collect();
    let evaluator = BalanceEvaluator::new(
        cols.iter().map(|c| c.as_slice()).collect(),
        t,
        e,
        SmdDenominator::Weighted,
    );
    let evaluate = |eta: &[f64], iteration: usize| -> Result<TracePoint> {
        let raw: Vec<f64> = eta.iter().map(|h| sigmoid(*h)).collect();
        let ps = clip_ps(&raw, params.clip_eps)?;
        let w = ps_to_weights(&ps, t, e)?;
        let (_, s) = evaluator.summary(&w.weights)?;
        Ok(TracePoint {
            iteration,
            mean_smd: s.mean_smd,
            max_smd: s.max_smd,
            mean_ks: s.mean_ks,
            max_ks: s.max_ks,
            deviance: deviance(eta, t),
        })
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_bag = ((params.bag_fraction * n as f64).round() as usize).clamp(1, n);
    let mut eta = vec![init; n];
    let first = evaluate(&eta, 0)?;
    let mut trace = vec![first];
    let mut best = [(0usize, eta.clone()), (0usize, eta.clone())];
    let mut best_metric = [first.metric(StopRule::EsMean), first.metric(StopRule::KsMax)];
    let mut trees = Vec::with_capacity(params.max_trees);
    let mut in_bag = vec![n_bag == n; n];
    let mut resid = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for iter in 1..=params.max_trees {
        job::checkpoint(progress)?;
        if n_bag < n {
            in_bag.iter_mut().for_each(|b| *b = false);
            for i in rand::seq::index::sample(&mut rng, n, n_bag) {
                in_bag[i] = true;
            }
        }
        for i in 0..n {
            let p = sigmoid(eta[i]);
            resid[i] = t[i] - p;
            hess[i] = p * (1.0 - p);
        }
        let tree = grow_tree(m, &orders, &in_bag, &resid, &hess, params.depth, params.shrinkage);
        for (i, h) in eta.iter_mut().enumerate() {
            *h += tree.predict(m, i);
        }
        trees.push(tree);
        if iter % params.eval_every == 0 {
            let point = evaluate(&eta, iter)?;
            for rule in [StopRule::EsMean, StopRule::KsMax] {
                let k = rule as usize;
                if point.metric(rule) < best_metric[k] {
                    best_metric[k] = point.metric(rule);
                    best[k] = (iter, eta.clone());
                }
            }
            trace.push(point);
        }
        job::tick(progress);
    }
    Ok(GbmRun {
        init,
        trees,
        params: params.clone(),
        trace,
        seed,
        best,
    })
}

pub fn fit_gbm(
    x: &DesignMatrix,
    t: &[f64],
    e: Estimand,
    stop_rule: StopRule,
    params: &GbmParams,
    seed: u64,
) -> Result<(GbmFit, PropensityScores)> {
    boost(x, t, e, params, seed, None)?.select(stop_rule)
}
