//! Regression trees over query features with a fitted ratio vector per
//! leaf.
//!
//! Growth follows CART: each node exhaustively enumerates (dimension,
//! threshold) splits and keeps the best strictly-improving one. Two
//! split criteria are supported: `min_cn` scores a split by the
//! sample-weighted sum of each child's minimized surrogate (so the
//! zero-split tree scores exactly the global surrogate optimum), and
//! `mse` scores by the summed squared error of the click quantile `z`
//! around child means. Every node also carries its own fitted ratio
//! vector so that cost-complexity pruning can collapse any subtree.
//!
//! Pruning is minimal cost-complexity: the weakest-link alpha sequence
//! of nested subtrees, scored by 5-fold cross-validated held-out
//! surrogate cost, selected with the 0.5-SE rule.

use serde::{Deserialize, Serialize};

use crate::ecdf::{compute_z, per_impression_cost, EmpiricalCdf};
use crate::error::{Error, Result};
use crate::log::{Impression, SearchLog};
use crate::optim::{optimize_ratio, OptimizerConfig};
use crate::partition::RatioVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitCriterion {
    MinCn,
    Mse,
}

impl std::str::FromStr for SplitCriterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<SplitCriterion> {
        match s {
            "min_cn" | "min-cn" => Ok(SplitCriterion::MinCn),
            "mse" => Ok(SplitCriterion::Mse),
            other => Err(Error::InvalidConfig(format!("unknown split criterion {other:?}"))),
        }
    }
}

/// Which features an impression contributes to the tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureOptions {
    /// Pass through the impression's own (opaque) feature vector.
    pub use_opaque: bool,
    /// Append the 25/50/75% order statistics of the facet values.
    pub use_quartiles: bool,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        FeatureOptions { use_opaque: true, use_quartiles: false }
    }
}

/// Assemble the feature vector of one impression.
///
/// The quartile convention is the `floor(q*n) + 1`-th smallest value
/// (1-based, capped at `n`): for values (100,200,300,400) the quartiles
/// are (200, 300, 400), and a single value is its own three quartiles.
pub fn extract_features(impression: &Impression, options: &FeatureOptions) -> Vec<f64> {
    let mut features = Vec::new();
    if options.use_opaque {
        if let Some(extra) = &impression.features {
            features.extend_from_slice(extra);
        }
    }
    if options.use_quartiles {
        let mut values = impression.facet_values();
        assert!(!values.is_empty(), "quartile features need at least one valued entity");
        values.sort_by(f64::total_cmp);
        let n = values.len();
        for q in [0.25, 0.5, 0.75] {
            let idx = ((q * n as f64).floor() as usize + 1).min(n);
            features.push(values[idx - 1]);
        }
    }
    features
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub criterion: SplitCriterion,
    pub min_leaf: usize,
    pub max_depth: usize,
    pub optimizer: OptimizerConfig,
    pub features: FeatureOptions,
    pub cv_folds: usize,
    pub se_factor: f64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            criterion: SplitCriterion::Mse,
            min_leaf: 20,
            max_depth: 6,
            // bounded restarts keep the per-node fits affordable
            optimizer: OptimizerConfig { restarts: 3, max_evals_per_restart: 600, ..Default::default() },
            features: FeatureOptions::default(),
            cv_folds: 5,
            se_factor: 0.5,
        }
    }
}

/// A tree node. Internal nodes keep their own fitted ratios so pruning
/// can collapse them into leaves without refitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Internal {
        feature: usize,
        threshold: f64,
        ratios: RatioVector,
        cn: f64,
        count: usize,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        ratios: RatioVector,
        cn: f64,
        count: usize,
    },
}

impl Node {
    fn count(&self) -> usize {
        match self {
            Node::Internal { count, .. } | Node::Leaf { count, .. } => *count,
        }
    }

    fn as_leaf(&self) -> Node {
        match self {
            Node::Leaf { .. } => self.clone(),
            Node::Internal { ratios, cn, count, .. } => Node::Leaf {
                ratios: ratios.clone(),
                cn: *cn,
                count: *count,
            },
        }
    }

    fn n_leaves(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::Internal { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn route(&self, features: &[f64]) -> &RatioVector {
        match self {
            Node::Leaf { ratios, .. } => ratios,
            Node::Internal { feature, threshold, left, right, .. } => {
                if features[*feature] > *threshold {
                    right.route(features)
                } else {
                    left.route(features)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioTree {
    pub root: Node,
    pub criterion: SplitCriterion,
    pub k: usize,
    pub feature_dim: usize,
    pub config: TreeConfig,
}

impl RatioTree {
    /// Route a feature vector to its leaf's ratio vector.
    pub fn predict_ratio(&self, features: &[f64]) -> Result<&RatioVector> {
        if features.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                got: features.len(),
            });
        }
        Ok(self.root.route(features))
    }

    /// Convenience wrapper extracting the features itself.
    pub fn predict_for(&self, impression: &Impression) -> Result<&RatioVector> {
        self.predict_ratio(&extract_features(impression, &self.config.features))
    }

    pub fn n_leaves(&self) -> usize {
        self.root.n_leaves()
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidConfig(format!("serializing tree: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<RatioTree> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse { line: 0, msg: e.to_string() })
    }
}

// ── training samples ────────────────────────────────────────────────

#[derive(Debug, Clone)]
struct Sample {
    features: Vec<f64>,
    z: f64,
    size: usize,
    ts: i64,
}

fn build_samples(train: &SearchLog, options: &FeatureOptions) -> Result<Vec<Sample>> {
    if train.is_empty() {
        return Err(Error::EmptyLog);
    }
    let mut samples = Vec::with_capacity(train.len());
    for imp in &train.impressions {
        samples.push(Sample {
            features: extract_features(imp, options),
            z: compute_z(imp)?,
            size: imp.valued_entities().count(),
            ts: imp.ts,
        });
    }
    let dim = samples[0].features.len();
    if let Some(bad) = samples.iter().find(|s| s.features.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: bad.features.len() });
    }
    Ok(samples)
}

fn fit_ratios(samples: &[Sample], idx: &[usize], k: usize, opt: &OptimizerConfig) -> Result<(RatioVector, f64)> {
    if k == 1 {
        return Ok((RatioVector::new(Vec::new())?, 1.0));
    }
    let sizes: Vec<usize> = idx.iter().map(|&i| samples[i].size).collect();
    let zs: Vec<f64> = idx.iter().map(|&i| samples[i].z).collect();
    let cdf = EmpiricalCdf::from_parts(&sizes, &zs)?;
    let fit = optimize_ratio(&cdf, k, opt)?;
    Ok((fit.ratios, fit.cn))
}

// ── growth ──────────────────────────────────────────────────────────

struct Grower<'a> {
    samples: &'a [Sample],
    k: usize,
    config: &'a TreeConfig,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    score: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

impl Grower<'_> {
    fn grow(&self, idx: &[usize], depth: usize) -> Result<Node> {
        let (ratios, cn) = fit_ratios(self.samples, idx, self.k, &self.config.optimizer)?;
        let count = idx.len();
        let leaf = Node::Leaf { ratios: ratios.clone(), cn, count };
        if depth >= self.config.max_depth || count < 2 * self.config.min_leaf {
            return Ok(leaf);
        }

        let node_score = match self.config.criterion {
            SplitCriterion::MinCn => cn,
            SplitCriterion::Mse => sse(self.samples, idx),
        };
        let Some(split) = self.best_split(idx)? else {
            return Ok(leaf);
        };
        if split.score >= node_score - 1e-12 {
            return Ok(leaf); // only strictly improving splits are kept
        }

        let left = self.grow(&split.left, depth + 1)?;
        let right = self.grow(&split.right, depth + 1)?;
        Ok(Node::Internal {
            feature: split.feature,
            threshold: split.threshold,
            ratios,
            cn,
            count,
            left: Box::new(left),
            right: Box::new(right),
        })
    }

    fn best_split(&self, idx: &[usize]) -> Result<Option<SplitChoice>> {
        let dim = self.samples[idx[0]].features.len();
        let mut best: Option<SplitChoice> = None;
        for feature in 0..dim {
            let mut order = idx.to_vec();
            order.sort_by(|&a, &b| {
                self.samples[a].features[feature].total_cmp(&self.samples[b].features[feature])
            });
            match self.config.criterion {
                SplitCriterion::Mse => self.scan_mse(feature, &order, &mut best),
                SplitCriterion::MinCn => self.scan_min_cn(feature, &order, &mut best)?,
            }
        }
        Ok(best)
    }

    /// Valid split positions: both children at least `min_leaf` and the
    /// feature value actually changes across the boundary.
    fn positions(&self, feature: usize, order: &[usize]) -> Vec<usize> {
        let n = order.len();
        (self.config.min_leaf..=n - self.config.min_leaf)
            .filter(|&p| {
                p < n && {
                    let lo = self.samples[order[p - 1]].features[feature];
                    let hi = self.samples[order[p]].features[feature];
                    lo < hi
                }
            })
            .collect()
    }

    fn scan_mse(&self, feature: usize, order: &[usize], best: &mut Option<SplitChoice>) {
        let n = order.len();
        let mut prefix_sum = Vec::with_capacity(n + 1);
        let mut prefix_sq = Vec::with_capacity(n + 1);
        prefix_sum.push(0.0);
        prefix_sq.push(0.0);
        for &i in order {
            prefix_sum.push(prefix_sum.last().unwrap() + self.samples[i].z);
            prefix_sq.push(prefix_sq.last().unwrap() + self.samples[i].z * self.samples[i].z);
        }
        let total_sum = prefix_sum[n];
        let total_sq = prefix_sq[n];
        for p in self.positions(feature, order) {
            let (sl, ql) = (prefix_sum[p], prefix_sq[p]);
            let (sr, qr) = (total_sum - sl, total_sq - ql);
            let score = (ql - sl * sl / p as f64) + (qr - sr * sr / (n - p) as f64);
            if best.as_ref().is_none_or(|b| score < b.score) {
                *best = Some(SplitChoice {
                    feature,
                    threshold: self.midpoint(feature, order, p),
                    score,
                    left: order[..p].to_vec(),
                    right: order[p..].to_vec(),
                });
            }
        }
    }

    fn scan_min_cn(&self, feature: usize, order: &[usize], best: &mut Option<SplitChoice>) -> Result<()> {
        for p in self.positions(feature, order) {
            let left = &order[..p];
            let right = &order[p..];
            let (_, cn_left) = fit_ratios(self.samples, left, self.k, &self.config.optimizer)?;
            let (_, cn_right) = fit_ratios(self.samples, right, self.k, &self.config.optimizer)?;
            let n = order.len() as f64;
            let score = (left.len() as f64 * cn_left + right.len() as f64 * cn_right) / n;
            if best.as_ref().is_none_or(|b| score < b.score) {
                *best = Some(SplitChoice {
                    feature,
                    threshold: self.midpoint(feature, order, p),
                    score,
                    left: left.to_vec(),
                    right: right.to_vec(),
                });
            }
        }
        Ok(())
    }

    fn midpoint(&self, feature: usize, order: &[usize], p: usize) -> f64 {
        let lo = self.samples[order[p - 1]].features[feature];
        let hi = self.samples[order[p]].features[feature];
        (lo + hi) / 2.0
    }
}

fn sse(samples: &[Sample], idx: &[usize]) -> f64 {
    let n = idx.len() as f64;
    let sum: f64 = idx.iter().map(|&i| samples[i].z).sum();
    let sq: f64 = idx.iter().map(|&i| samples[i].z * samples[i].z).sum();
    sq - sum * sum / n
}

/// Grow a ratio tree on a training log.
pub fn fit_tree(train: &SearchLog, k: usize, config: &TreeConfig) -> Result<RatioTree> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let samples = build_samples(train, &config.features)?;
    let feature_dim = samples[0].features.len();
    let grower = Grower { samples: &samples, k, config };
    let idx: Vec<usize> = (0..samples.len()).collect();
    let root = grower.grow(&idx, 0)?;
    Ok(RatioTree {
        root,
        criterion: config.criterion,
        k,
        feature_dim,
        config: config.clone(),
    })
}

// ── cost-complexity pruning ─────────────────────────────────────────

/// Subtree training loss: sample-fraction-weighted leaf surrogate.
fn subtree_loss(node: &Node, n_total: f64) -> f64 {
    match node {
        Node::Leaf { cn, count, .. } => *count as f64 / n_total * cn,
        Node::Internal { left, right, .. } => subtree_loss(left, n_total) + subtree_loss(right, n_total),
    }
}

fn loss_as_leaf(node: &Node, n_total: f64) -> f64 {
    match node {
        Node::Leaf { cn, count, .. } | Node::Internal { cn, count, .. } => *count as f64 / n_total * cn,
    }
}

/// Weakest-link value over all internal nodes:
/// `g(t) = (R(t) - R(T_t)) / (|leaves(T_t)| - 1)`.
fn weakest_g(node: &Node, n_total: f64) -> Option<f64> {
    match node {
        Node::Leaf { .. } => None,
        Node::Internal { left, right, .. } => {
            let own = (loss_as_leaf(node, n_total) - subtree_loss(node, n_total))
                / (node.n_leaves() as f64 - 1.0);
            [weakest_g(left, n_total), weakest_g(right, n_total)]
                .into_iter()
                .flatten()
                .chain(std::iter::once(own))
                .min_by(f64::total_cmp)
        }
    }
}

/// Collapse every internal node whose link value is at most `g_star`.
fn collapse_links(node: &Node, g_star: f64, n_total: f64) -> Node {
    match node {
        Node::Leaf { .. } => node.clone(),
        Node::Internal { feature, threshold, ratios, cn, count, left, right } => {
            let own = (loss_as_leaf(node, n_total) - subtree_loss(node, n_total))
                / (node.n_leaves() as f64 - 1.0);
            if own <= g_star {
                node.as_leaf()
            } else {
                Node::Internal {
                    feature: *feature,
                    threshold: *threshold,
                    ratios: ratios.clone(),
                    cn: *cn,
                    count: *count,
                    left: Box::new(collapse_links(left, g_star, n_total)),
                    right: Box::new(collapse_links(right, g_star, n_total)),
                }
            }
        }
    }
}

/// The nested weakest-link sequence, from the full tree down to the
/// bare root, with the alpha at which each subtree becomes optimal.
fn alpha_sequence(root: &Node) -> Vec<(f64, Node)> {
    let n_total = root.count() as f64;
    let mut sequence = vec![(f64::NEG_INFINITY, root.clone())];
    let mut current = root.clone();
    while let Some(g) = weakest_g(&current, n_total) {
        let slack = 1e-15 + g.abs() * 1e-12;
        current = collapse_links(&current, g + slack, n_total);
        sequence.push((g, current.clone()));
    }
    sequence
}

/// Prune a grown tree at penalty `alpha`: collapse weakest links while
/// their value does not exceed the penalty.
fn prune_at(root: &Node, alpha: f64) -> Node {
    let n_total = root.count() as f64;
    let mut current = root.clone();
    while let Some(g) = weakest_g(&current, n_total) {
        if g > alpha {
            break;
        }
        let slack = 1e-15 + g.abs() * 1e-12;
        current = collapse_links(&current, g + slack, n_total);
    }
    current
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneReport {
    /// Alpha at which each nested subtree becomes cost-complexity optimal.
    pub alphas: Vec<f64>,
    /// Leaf counts per nested subtree.
    pub n_leaves: Vec<usize>,
    /// Cross-validated held-out surrogate per subtree.
    pub cv_scores: Vec<f64>,
    pub cv_min: f64,
    pub se_at_min: f64,
    /// Index of the selected subtree in the sequence.
    pub selected: usize,
}

fn heldout_cost(node: &Node, samples: &[Sample], idx: &[usize]) -> f64 {
    idx.iter()
        .map(|&i| per_impression_cost(node.route(&samples[i].features), samples[i].z))
        .sum()
}

/// Minimal cost-complexity pruning with cross-validated selection.
pub fn prune_tree(tree: &RatioTree, train: &SearchLog) -> Result<(RatioTree, PruneReport)> {
    let samples = build_samples(train, &tree.config.features)?;
    let sequence = alpha_sequence(&tree.root);
    let n = samples.len();

    if sequence.len() == 1 || tree.config.cv_folds < 2 || n < 2 * tree.config.cv_folds {
        let report = PruneReport {
            alphas: sequence.iter().map(|(a, _)| *a).collect(),
            n_leaves: sequence.iter().map(|(_, t)| t.n_leaves()).collect(),
            cv_scores: Vec::new(),
            cv_min: f64::NAN,
            se_at_min: f64::NAN,
            selected: 0,
        };
        return Ok((tree.clone(), report));
    }

    // representative penalty inside each subtree's optimality interval
    let clamped: Vec<f64> = sequence.iter().map(|(a, _)| a.max(0.0)).collect();
    let mut targets = Vec::with_capacity(sequence.len());
    for m in 0..sequence.len() {
        let lo = clamped[m];
        let target = if m + 1 < sequence.len() {
            let hi = clamped[m + 1];
            if lo > 0.0 {
                (lo * hi).sqrt()
            } else {
                hi / 2.0
            }
        } else {
            clamped[m] * 2.0 + 1.0
        };
        targets.push(target);
    }

    // folds are contiguous in timestamp order, echoing the temporal split
    let folds = tree.config.cv_folds;
    let mut by_time: Vec<usize> = (0..n).collect();
    by_time.sort_by_key(|&i| samples[i].ts);
    let fold_of = |position: usize| position * folds / n;

    let mut fold_scores = vec![vec![0.0f64; sequence.len()]; folds];
    let mut fold_sizes = vec![0usize; folds];
    for fold in 0..folds {
        let heldout: Vec<usize> = by_time
            .iter()
            .enumerate()
            .filter(|(pos, _)| fold_of(*pos) == fold)
            .map(|(_, &i)| i)
            .collect();
        let kept: Vec<usize> = by_time
            .iter()
            .enumerate()
            .filter(|(pos, _)| fold_of(*pos) != fold)
            .map(|(_, &i)| i)
            .collect();
        fold_sizes[fold] = heldout.len();

        let kept_imps: Vec<Impression> = kept.iter().map(|&i| train.impressions[i].clone()).collect();
        let fold_log = SearchLog::new(kept_imps)?;
        let fold_tree = fit_tree(&fold_log, tree.k, &tree.config)?;
        for (m, &target) in targets.iter().enumerate() {
            let pruned = prune_at(&fold_tree.root, target);
            fold_scores[fold][m] = heldout_cost(&pruned, &samples, &heldout);
        }
    }

    let cv_scores: Vec<f64> = (0..sequence.len())
        .map(|m| (0..folds).map(|f| fold_scores[f][m]).sum::<f64>() / n as f64)
        .collect();
    let best = cv_scores
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(m, _)| m)
        .unwrap();
    let fold_means: Vec<f64> = (0..folds)
        .map(|f| fold_scores[f][best] / fold_sizes[f].max(1) as f64)
        .collect();
    let se = (crate::stats::sample_variance(&fold_means) / folds as f64).sqrt();

    // 0.5-SE rule: the smallest subtree within half a standard error
    let threshold = cv_scores[best] + tree.config.se_factor * se;
    let selected = (0..sequence.len())
        .rev()
        .find(|&m| cv_scores[m] <= threshold)
        .unwrap_or(best);

    let report = PruneReport {
        alphas: sequence.iter().map(|(a, _)| *a).collect(),
        n_leaves: sequence.iter().map(|(_, t)| t.n_leaves()).collect(),
        cv_scores,
        cv_min: fold_scores.iter().map(|f| f[best]).sum::<f64>() / n as f64,
        se_at_min: se,
        selected,
    };
    let pruned = RatioTree {
        root: sequence[selected].1.clone(),
        criterion: tree.criterion,
        k: tree.k,
        feature_dim: tree.feature_dim,
        config: tree.config.clone(),
    };
    Ok((pruned, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log::Entity;
    use crate::synth::{generate_synthetic, CdfShape, ClusterSpec, EntityCount, SynthConfig};
    use rand::{Rng, SeedableRng};

    fn impression(qid: &str, values: &[f64], clicked: usize, features: Vec<f64>, ts: i64) -> Impression {
        Impression {
            query_id: qid.into(),
            ts,
            entities: values
                .iter()
                .enumerate()
                .map(|(i, &v)| Entity {
                    id: format!("{qid}-e{}", i + 1),
                    value: Some(v),
                    rank: i as u32 + 1,
                })
                .collect(),
            clicked: format!("{qid}-e{}", clicked + 1),
            features: Some(features),
        }
    }

    #[test]
    fn quartiles_follow_the_order_statistic_convention() {
        let imp = impression("q", &[100.0, 200.0, 300.0, 400.0], 0, vec![], 0);
        let opts = FeatureOptions { use_opaque: false, use_quartiles: true };
        assert_eq!(extract_features(&imp, &opts), vec![200.0, 300.0, 400.0]);
    }

    #[test]
    fn opaque_features_pass_through() {
        let imp = impression("q", &[5.0], 0, vec![0.1, 0.2], 0);
        let opts = FeatureOptions { use_opaque: true, use_quartiles: false };
        assert_eq!(extract_features(&imp, &opts), vec![0.1, 0.2]);
    }

    #[test]
    fn degenerate_quartiles_repeat_the_single_value() {
        let imp = impression("q", &[42.0], 0, vec![], 0);
        let opts = FeatureOptions { use_opaque: false, use_quartiles: true };
        assert_eq!(extract_features(&imp, &opts), vec![42.0, 42.0, 42.0]);
    }

    /// Two feature-separable clusters with clicks at opposite ends of
    /// the quantile scale.
    fn clustered_log(n: usize, seed: u64) -> SearchLog {
        let cfg = SynthConfig {
            n_queries: n,
            entities_per_query: EntityCount::Fixed { n: 30 },
            value_cdf: CdfShape::Linear,
            click_position_bias: 0.0,
            seed,
            value_range: (10.0, 1010.0),
            catalog_size: None,
            clusters: Some(vec![
                ClusterSpec {
                    weight: 1.0,
                    value_cdf: CdfShape::Piecewise {
                        points: vec![(0.0, 0.0), (0.2, 0.85), (1.0, 1.0)],
                    },
                    feature_center: vec![0.0],
                    feature_noise: 0.2,
                },
                ClusterSpec {
                    weight: 1.0,
                    value_cdf: CdfShape::Piecewise {
                        points: vec![(0.0, 0.0), (0.8, 0.15), (1.0, 1.0)],
                    },
                    feature_center: vec![1.0],
                    feature_noise: 0.2,
                },
            ]),
        };
        generate_synthetic(&cfg).unwrap()
    }

    /// Feature-independent noise: one cluster, a pure noise feature.
    fn noise_log(n: usize, seed: u64) -> SearchLog {
        let cfg = SynthConfig {
            n_queries: n,
            entities_per_query: EntityCount::Fixed { n: 30 },
            value_cdf: CdfShape::Linear,
            click_position_bias: 0.0,
            seed,
            value_range: (10.0, 1010.0),
            catalog_size: None,
            clusters: Some(vec![ClusterSpec {
                weight: 1.0,
                value_cdf: CdfShape::Concave,
                feature_center: vec![0.5],
                feature_noise: 0.5,
            }]),
        };
        generate_synthetic(&cfg).unwrap()
    }

    fn quick_config(criterion: SplitCriterion) -> TreeConfig {
        TreeConfig {
            criterion,
            min_leaf: 10,
            max_depth: 4,
            optimizer: OptimizerConfig { restarts: 2, max_evals_per_restart: 300, ..Default::default() },
            features: FeatureOptions { use_opaque: true, use_quartiles: false },
            cv_folds: 5,
            se_factor: 0.5,
        }
    }

    #[test]
    fn identical_z_grows_a_single_leaf() {
        // every click is on the maximum value: z = 1 everywhere
        let imps: Vec<Impression> = (0..60)
            .map(|i| {
                impression(
                    &format!("q{i}"),
                    &[10.0, 20.0, 30.0],
                    2,
                    vec![i as f64 % 7.0],
                    i as i64,
                )
            })
            .collect();
        let log = SearchLog::new(imps).unwrap();
        for criterion in [SplitCriterion::Mse, SplitCriterion::MinCn] {
            let tree = fit_tree(&log, 2, &quick_config(criterion)).unwrap();
            assert_eq!(tree.n_leaves(), 1, "{criterion:?}");
        }
    }

    #[test]
    fn both_criteria_choose_the_binary_separator() {
        // one binary feature perfectly separating a z=0.2 cluster from a
        // z=0.8 cluster: the only candidate split, chosen by both criteria
        let values: Vec<f64> = (1..=30).map(|j| j as f64 * 10.0).collect();
        let imps: Vec<Impression> = (0..160)
            .map(|i| {
                let low_cluster = i % 2 == 0;
                let clicked = if low_cluster { 5 } else { 23 }; // z = 6/30 or 24/30
                let feature = if low_cluster { 0.0 } else { 1.0 };
                impression(&format!("q{i}"), &values, clicked, vec![feature], i as i64)
            })
            .collect();
        let log = SearchLog::new(imps).unwrap();
        for criterion in [SplitCriterion::Mse, SplitCriterion::MinCn] {
            let tree = fit_tree(&log, 2, &quick_config(criterion)).unwrap();
            match &tree.root {
                Node::Internal { feature, threshold, left, right, .. } => {
                    assert_eq!(*feature, 0, "{criterion:?}");
                    assert_eq!(*threshold, 0.5, "{criterion:?}");
                    // children are pure, so nothing splits further
                    assert!(matches!(**left, Node::Leaf { .. }), "{criterion:?}");
                    assert!(matches!(**right, Node::Leaf { .. }), "{criterion:?}");
                }
                Node::Leaf { .. } => panic!("{criterion:?}: expected a root split"),
            }
        }
    }

    #[test]
    fn mse_finds_the_cluster_boundary_under_feature_noise() {
        let log = clustered_log(300, 7);
        let mut config = quick_config(SplitCriterion::Mse);
        config.min_leaf = 40;
        config.max_depth = 1;
        let tree = fit_tree(&log, 3, &config).unwrap();
        match &tree.root {
            Node::Internal { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert!((0.2..=0.8).contains(threshold), "threshold {threshold}");
            }
            Node::Leaf { .. } => panic!("expected a root split"),
        }
    }

    #[test]
    fn zero_split_tree_reproduces_the_global_ratio_fit() {
        let log = noise_log(150, 3);
        let mut config = quick_config(SplitCriterion::Mse);
        config.max_depth = 0;
        let tree = fit_tree(&log, 3, &config).unwrap();
        assert_eq!(tree.n_leaves(), 1);

        let cdf = crate::ecdf::cache_cdf(&log).unwrap();
        let direct = optimize_ratio(&cdf, 3, &config.optimizer).unwrap();
        match &tree.root {
            Node::Leaf { ratios, cn, .. } => {
                assert_eq!(ratios.ratios(), direct.ratios.ratios());
                assert_eq!(*cn, direct.cn);
            }
            Node::Internal { .. } => unreachable!(),
        }
    }

    #[test]
    fn pruning_collapses_noise_fits() {
        let mut collapsed = 0;
        for seed in 0..3 {
            let log = noise_log(250, 100 + seed);
            let tree = fit_tree(&log, 3, &quick_config(SplitCriterion::Mse)).unwrap();
            let (pruned, _) = prune_tree(&tree, &log).unwrap();
            if pruned.n_leaves() == 1 {
                collapsed += 1;
            }
        }
        assert!(collapsed >= 2, "only {collapsed}/3 noise trees collapsed");
    }

    #[test]
    fn pruning_keeps_the_separating_split_on_clustered_data() {
        let log = clustered_log(400, 11);
        let tree = fit_tree(&log, 3, &quick_config(SplitCriterion::Mse)).unwrap();
        let (pruned, report) = prune_tree(&tree, &log).unwrap();
        assert!(pruned.n_leaves() >= 2, "report: {report:?}");
        match &pruned.root {
            Node::Internal { feature, .. } => assert_eq!(*feature, 0),
            Node::Leaf { .. } => panic!("root split pruned away"),
        }
        // the alpha sequence bottoms out in a two-leaf tree before the root
        assert!(report.n_leaves.contains(&2), "sequence: {:?}", report.n_leaves);
        assert_eq!(*report.n_leaves.last().unwrap(), 1);
    }

    #[test]
    fn single_leaf_tree_is_unchanged_by_pruning() {
        let log = noise_log(80, 5);
        let mut config = quick_config(SplitCriterion::Mse);
        config.max_depth = 0;
        let tree = fit_tree(&log, 2, &config).unwrap();
        let (pruned, report) = prune_tree(&tree, &log).unwrap();
        assert_eq!(pruned, tree);
        assert_eq!(report.selected, 0);
    }

    #[test]
    fn prediction_routes_by_threshold() {
        let log = clustered_log(300, 9);
        let mut config = quick_config(SplitCriterion::Mse);
        config.max_depth = 1;
        config.min_leaf = 40;
        let tree = fit_tree(&log, 3, &config).unwrap();
        let (feature, threshold) = match &tree.root {
            Node::Internal { feature, threshold, .. } => (*feature, *threshold),
            Node::Leaf { .. } => panic!("expected a split"),
        };
        assert_eq!(feature, 0);
        let left = tree.predict_ratio(&[threshold - 0.01]).unwrap().clone();
        let right = tree.predict_ratio(&[threshold + 0.01]).unwrap().clone();
        assert_ne!(left.ratios(), right.ratios());

        // training round-trip: each sample lands on its own leaf's fit
        for imp in &log.impressions {
            let predicted = tree.predict_for(imp).unwrap();
            let expected = if imp.features.as_ref().unwrap()[0] > threshold { &right } else { &left };
            assert_eq!(predicted.ratios(), expected.ratios());
        }
    }

    #[test]
    fn dimension_mismatch_is_detected() {
        let log = noise_log(80, 6);
        let tree = fit_tree(&log, 2, &quick_config(SplitCriterion::Mse)).unwrap();
        assert!(matches!(
            tree.predict_ratio(&[0.5, 0.5]),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn tree_roundtrips_through_disk() {
        let log = clustered_log(200, 13);
        let tree = fit_tree(&log, 2, &quick_config(SplitCriterion::Mse)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tree.json");
        tree.save(&path).unwrap();
        assert_eq!(RatioTree::load(&path).unwrap(), tree);
    }

    #[test]
    fn accepted_splits_strictly_decrease_weighted_surrogate() {
        let log = clustered_log(300, 21);
        let mut config = quick_config(SplitCriterion::MinCn);
        config.min_leaf = 30;
        config.max_depth = 3;
        let tree = fit_tree(&log, 3, &config).unwrap();

        fn check(node: &Node, n_total: f64) {
            if let Node::Internal { left, right, .. } = node {
                let parent = loss_as_leaf(node, n_total);
                let children = loss_as_leaf(left, n_total) + loss_as_leaf(right, n_total);
                assert!(children < parent + 1e-12);
                check(left, n_total);
                check(right, n_total);
            }
        }
        check(&tree.root, tree.root.count() as f64);
    }

    #[test]
    fn random_features_route_deterministically() {
        let log = clustered_log(250, 17);
        let tree = fit_tree(&log, 3, &quick_config(SplitCriterion::Mse)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let x = vec![rng.random_range(-1.0f64..2.0)];
            let a = tree.predict_ratio(&x).unwrap().ratios().to_vec();
            let b = tree.predict_ratio(&x).unwrap().ratios().to_vec();
            assert_eq!(a, b);
        }
    }
}
