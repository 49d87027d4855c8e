//! Gradient boosted propensity model.
//!
//! Shallow regression trees are fit to the Bernoulli deviance gradient
//! `T − p` of the log-likelihood `Σ T g(X) − log(1 + exp(g(X)))`, with
//! Newton leaf values `Σ(T − p) / Σ p(1 − p)` and shrinkage. Every
//! `eval_stride` trees the ATT weights are scored by a balance criterion and
//! the best-scoring iteration is returned.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::balance::{ks_with_order, smd, sort_order};
use crate::error::{Error, Result};
use crate::linalg::{expit, log1p_exp};
use crate::types::{EstimatorId, WeightSet};
use crate::weights::ps_to_att_weights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GbmCriterion {
    MeanSmd,
    MaxKs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbmConfig {
    pub max_trees: usize,
    pub shrinkage: f64,
    pub tree_depth: usize,
    pub eval_stride: usize,
    pub criterion: GbmCriterion,
    pub min_node_size: usize,
    pub clip_weights: bool,
    /// Candidate split points per feature. Features with at most this many
    /// distinct values are split exactly; others at quantile cut points.
    pub max_bins: usize,
}

impl Default for GbmConfig {
    fn default() -> Self {
        GbmConfig {
            max_trees: 3000,
            shrinkage: 0.01,
            tree_depth: 3,
            eval_stride: 100,
            criterion: GbmCriterion::MeanSmd,
            min_node_size: 10,
            clip_weights: true,
            max_bins: 256,
        }
    }
}

impl GbmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(Error::Config(format!("shrinkage {} outside (0, 1]", self.shrinkage)));
        }
        if self.tree_depth == 0 {
            return Err(Error::Config("tree depth must be at least 1".into()));
        }
        if self.eval_stride == 0 || self.max_trees % self.eval_stride != 0 {
            return Err(Error::Config(format!(
                "eval stride {} must divide max trees {}",
                self.eval_stride, self.max_trees
            )));
        }
        if !(2..=usize::from(u16::MAX)).contains(&self.max_bins) {
            return Err(Error::Config(format!("max bins {} outside [2, 65535]", self.max_bins)));
        }
        if self.min_node_size == 0 {
            return Err(Error::Config("min node size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbmFit {
    pub weights: WeightSet,
    /// `(trees, criterion)` at every evaluated iteration, including 0.
    pub trace: Vec<(usize, f64)>,
    /// Mean Bernoulli deviance after each number of trees `0..=max_trees`.
    pub deviance: Vec<f64>,
    pub best_iteration: usize,
}

pub fn fit_gbm(x: &DMatrix<f64>, treatment: &[u8], cfg: &GbmConfig) -> Result<GbmFit> {
    cfg.validate()?;
    let n = x.nrows();
    let p = x.ncols();
    if treatment.len() != n {
        return Err(Error::InvalidInput("treatment length differs from n".into()));
    }
    let n_treated = treatment.iter().filter(|&&t| t == 1).count();
    if n_treated < 2 || n - n_treated < 2 {
        return Err(Error::InvalidInput("need at least two treated and two control units".into()));
    }

    let columns: Vec<Vec<f64>> = (0..p).map(|c| x.column(c).iter().copied().collect()).collect();
    let orders: Vec<Vec<usize>> = columns.iter().map(|c| sort_order(c)).collect();
    let features: Vec<BinnedFeature> =
        columns.iter().zip(&orders).map(|(c, o)| BinnedFeature::new(c, o, cfg.max_bins)).collect();
    let table = BinTable::new(&features, n);
    let y: Vec<f64> = treatment.iter().map(|&t| f64::from(t)).collect();
    let rate = n_treated as f64 / n as f64;
    let mut g = vec![(rate / (1.0 - rate)).ln(); n];

    let estimator = match cfg.criterion {
        GbmCriterion::MeanSmd => EstimatorId::GbmEs,
        GbmCriterion::MaxKs => EstimatorId::GbmKs,
    };
    let score = |g: &[f64]| -> f64 {
        let ps: Vec<f64> = g.iter().map(|&v| expit(v)).collect();
        let Ok(ws) = ps_to_att_weights(&ps, treatment, cfg.clip_weights) else {
            return f64::INFINITY;
        };
        criterion(cfg.criterion, &columns, &orders, treatment, &ws.weights)
    };

    let mut trace = vec![(0, score(&g))];
    let mut best = (0usize, trace[0].1, g.clone());
    let mut deviance = Vec::with_capacity(cfg.max_trees + 1);
    let mut builder = TreeBuilder::new(n, cfg);
    let mut residual = vec![0.0; n];
    let mut hess = vec![0.0; n];

    for tree in 1..=cfg.max_trees {
        // The deviance of the current fit comes for free with the residuals.
        let mut ll = 0.0;
        for i in 0..n {
            let e = (-g[i].abs()).exp();
            let pi = if g[i] >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
            residual[i] = y[i] - pi;
            hess[i] = pi * (1.0 - pi);
            // log(1 + exp(±g)) with the sign that gives the unit's own class
            let z = if y[i] == 1.0 { -g[i] } else { g[i] };
            ll -= z.max(0.0) + e.ln_1p();
        }
        deviance.push(-2.0 * ll / n as f64);
        builder.grow(&table, &features, &residual);
        let leaf_values = builder.leaf_values(&residual, &hess);
        for i in 0..n {
            g[i] += cfg.shrinkage * leaf_values[builder.node_of[i]];
        }
        if tree % cfg.eval_stride == 0 {
            let s = score(&g);
            trace.push((tree, s));
            if s < best.1 {
                best = (tree, s, g.clone());
            }
        }
    }

    deviance.push(mean_deviance(&y, &g));

    let ps: Vec<f64> = best.2.iter().map(|&v| expit(v)).collect();
    let mut weights = ps_to_att_weights(&ps, treatment, cfg.clip_weights)?;
    weights.estimator = estimator;
    weights.iterations = best.0;
    weights.note(format!("selected {} trees", best.0));
    Ok(GbmFit {
        weights,
        trace,
        deviance,
        best_iteration: best.0,
    })
}

fn criterion(
    kind: GbmCriterion,
    columns: &[Vec<f64>],
    orders: &[Vec<usize>],
    treatment: &[u8],
    weights: &[f64],
) -> f64 {
    match kind {
        GbmCriterion::MeanSmd => {
            let vals: Vec<f64> = columns.iter().filter_map(|c| smd(c, treatment, weights)).collect();
            if vals.is_empty() {
                0.0
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        }
        GbmCriterion::MaxKs => columns
            .iter()
            .zip(orders)
            .map(|(c, o)| ks_with_order(c, o, treatment, weights))
            .fold(0.0, f64::max),
    }
}

fn mean_deviance(y: &[f64], g: &[f64]) -> f64 {
    let ll: f64 = y.iter().zip(g).map(|(&t, &v)| t * v - log1p_exp(v)).sum();
    -2.0 * ll / y.len() as f64
}

/// A feature mapped to ordered bins; bin `b` holds values up to the `b`-th
/// cut point.
struct BinnedFeature {
    bins: Vec<u16>,
    n_bins: usize,
}

impl BinnedFeature {
    fn new(values: &[f64], order: &[usize], max_bins: usize) -> Self {
        let n = values.len();
        let mut uppers: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        uppers.dedup();
        if uppers.len() > max_bins {
            uppers = (1..=max_bins).map(|b| values[order[(b * n).div_ceil(max_bins) - 1]]).collect();
            uppers.dedup();
        }
        let bins = values.iter().map(|&v| uppers.partition_point(|&u| u < v) as u16).collect();
        BinnedFeature { bins, n_bins: uppers.len() }
    }
}

#[derive(Debug, Clone, Copy)]
struct Split {
    gain: f64,
    feature: usize,
    bin: u16,
}

/// Row-major bin codes with per-feature offsets into a node histogram.
struct BinTable {
    codes: Vec<u32>,
    p: usize,
    offsets: Vec<usize>,
    n_bins: Vec<usize>,
    width: usize,
}

impl BinTable {
    fn new(features: &[BinnedFeature], n: usize) -> Self {
        let p = features.len();
        let mut offsets = Vec::with_capacity(p);
        let mut width = 0;
        for f in features {
            offsets.push(width);
            width += f.n_bins;
        }
        let mut codes = vec![0u32; n * p];
        for (f, feat) in features.iter().enumerate() {
            for (i, &b) in feat.bins.iter().enumerate() {
                codes[i * p + f] = (offsets[f] + usize::from(b)) as u32;
            }
        }
        BinTable {
            codes,
            p,
            offsets,
            n_bins: features.iter().map(|f| f.n_bins).collect(),
            width,
        }
    }
}

/// Level-wise builder of one depth-limited least-squares regression tree
/// on binned features. `node_of[i]` is the leaf holding unit `i` after
/// `grow`.
struct TreeBuilder {
    node_of: Vec<usize>,
    depth: usize,
    min_node: usize,
    n_leaves: usize,
    pool: Vec<Hist>,
}

/// Per-node histogram of unit counts and residual sums over all bins.
#[derive(Clone)]
struct Hist {
    n: Vec<u32>,
    s: Vec<f64>,
}

impl TreeBuilder {
    fn new(n: usize, cfg: &GbmConfig) -> Self {
        TreeBuilder {
            node_of: vec![0; n],
            depth: cfg.tree_depth,
            min_node: cfg.min_node_size,
            n_leaves: 1,
            pool: Vec::new(),
        }
    }

    fn grow(&mut self, table: &BinTable, features: &[BinnedFeature], r: &[f64]) {
        self.node_of.iter_mut().for_each(|v| *v = 0);
        self.n_leaves = 1;
        let min = self.min_node;
        let w = table.width;
        let p = table.p;
        // Per node: histogram (when needed), count, total, may-split flag.
        let mut hists: Vec<Option<Hist>> = vec![None];
        let mut count = vec![self.node_of.len()];
        let mut total = vec![r.iter().sum::<f64>()];
        let mut open = vec![true];
        // Nodes whose histogram is accumulated directly this level; the
        // rest are derived from their parent by subtraction.
        let mut direct = vec![true];
        let mut sibling: Vec<Option<usize>> = vec![None];

        for _ in 0..self.depth {
            let k = self.n_leaves;
            for a in 0..k {
                open[a] = open[a] && count[a] >= 2 * min;
            }
            if !open.iter().any(|&o| o) {
                break;
            }
            let need: Vec<bool> =
                (0..k).map(|a| direct[a] && (open[a] || sibling[a].is_some_and(|b| open[b]))).collect();
            for a in 0..k {
                if need[a] {
                    if let Some(h) = hists[a].take() {
                        self.pool.push(h);
                    }
                    let mut h = self.pool.pop().unwrap_or_else(|| Hist { n: Vec::new(), s: Vec::new() });
                    h.n.clear();
                    h.n.resize(w, 0);
                    h.s.clear();
                    h.s.resize(w, 0.0);
                    hists[a] = Some(h);
                }
            }
            for (i, (&a, &ri)) in self.node_of.iter().zip(r).enumerate() {
                if !need[a] {
                    continue;
                }
                let h = hists[a].as_mut().expect("direct node has a histogram");
                for &code in &table.codes[i * p..(i + 1) * p] {
                    h.n[code as usize] += 1;
                    h.s[code as usize] += ri;
                }
            }
            for a in 0..k {
                if open[a] && !direct[a] {
                    // `hists[a]` still holds the parent histogram.
                    let sib = sibling[a].expect("derived node has a sibling");
                    let (parent, other) = if a < sib {
                        let (lo, hi) = hists.split_at_mut(sib);
                        (lo[a].as_mut(), hi[0].as_ref())
                    } else {
                        let (lo, hi) = hists.split_at_mut(a);
                        (hi[0].as_mut(), lo[sib].as_ref())
                    };
                    let (parent, other) = (parent.expect("parent histogram"), other.expect("sibling histogram"));
                    for j in 0..w {
                        parent.n[j] -= other.n[j];
                        parent.s[j] -= other.s[j];
                    }
                }
            }

            let mut best: Vec<Option<Split>> = vec![None; k];
            for a in (0..k).filter(|&a| open[a]) {
                let h = hists[a].as_ref().expect("open node has a histogram");
                let parent = total[a] * total[a] / count[a] as f64;
                for f in 0..p {
                    let (off, nb) = (table.offsets[f], table.n_bins[f]);
                    let (mut nl, mut sl) = (0usize, 0.0);
                    for b in 0..nb.saturating_sub(1) {
                        let c = h.n[off + b] as usize;
                        if c == 0 {
                            continue;
                        }
                        nl += c;
                        sl += h.s[off + b];
                        let nr = count[a] - nl;
                        if nr < min {
                            break;
                        }
                        if nl < min {
                            continue;
                        }
                        let sr = total[a] - sl;
                        let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - parent;
                        if best[a].map_or(gain > 1e-300, |s| gain > s.gain) {
                            best[a] = Some(Split { gain, feature: f, bin: b as u16 });
                        }
                    }
                }
            }

            // Split nodes keep their id for the left child; the right child
            // gets a fresh id.
            let mut right_id = vec![usize::MAX; k];
            let mut next = k;
            for a in 0..k {
                if best[a].is_some() {
                    right_id[a] = next;
                    next += 1;
                } else {
                    // no admissible split now means none deeper either
                    open[a] = false;
                }
            }
            if next == k {
                break;
            }
            count.resize(next, 0);
            total.resize(next, 0.0);
            for a in 0..k {
                if best[a].is_some() {
                    count[a] = 0;
                    total[a] = 0.0;
                }
            }
            for (i, node) in self.node_of.iter_mut().enumerate() {
                if let Some(s) = best[*node] {
                    if features[s.feature].bins[i] > s.bin {
                        *node = right_id[*node];
                    }
                    count[*node] += 1;
                    total[*node] += r[i];
                }
            }
            open.resize(next, true);
            direct.resize(next, false);
            sibling.resize(next, None);
            hists.resize(next, None);
            for a in 0..k {
                if best[a].is_none() {
                    continue;
                }
                let b = right_id[a];
                open[b] = true;
                sibling[a] = Some(b);
                sibling[b] = Some(a);
                // Accumulate the smaller child; the larger is parent − smaller.
                let left_small = count[a] <= count[b];
                direct[a] = left_small;
                direct[b] = !left_small;
                if left_small {
                    hists[b] = hists[a].take();
                }
            }
            self.n_leaves = next;
        }
        self.pool.extend(hists.into_iter().flatten());
    }

    fn leaf_values(&self, r: &[f64], h: &[f64]) -> Vec<f64> {
        let mut num = vec![0.0; self.n_leaves];
        let mut den = vec![0.0; self.n_leaves];
        for (i, &a) in self.node_of.iter().enumerate() {
            num[a] += r[i];
            den[a] += h[i];
        }
        num.iter()
            .zip(&den)
            .map(|(&s, &d)| if d > 1e-12 { s / d } else { 0.0 })
            .collect()
    }
}
