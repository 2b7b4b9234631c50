//! Gradient-boosted regression trees, from scratch, for the L2 objective.
//!
//! Exact greedy split search over sorted values (no histogram binning) and
//! leaf-wise (best-first) growth capped by both `max_leaves` and `max_depth`.
//! Each round fits one tree to the current residuals; leaf values are mean
//! residuals, applied at `learning_rate`. Everything is deterministic: split
//! ties prefer the lower feature index, then the lower threshold; equal-gain
//! leaves split in creation order; parallel split evaluation preserves
//! feature order. Total-gain feature importance accumulates the gain of every
//! accepted split.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureVector81;

/// Magic string identifying the model file format and its version.
pub const MODEL_MAGIC: &str = "CGMODEL1";

#[derive(Debug, Error)]
pub enum GbtError {
    #[error("empty dataset")]
    Empty,
    #[error("need at least {required} samples (2 x min_samples_leaf), got {n}")]
    TooFewSamples { n: usize, required: usize },
    #[error("feature width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("feature width must be at least 1")]
    ZeroWidth,
    #[error("target {index} is {value}, outside [0, 1]")]
    BadTarget { index: usize, value: f64 },
    #[error("targets length {targets} does not match {rows} rows")]
    TargetCount { targets: usize, rows: usize },
    #[error("invalid params: {0}")]
    BadParams(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad model magic {found:?}, expected {MODEL_MAGIC:?}")]
    BadMagic { found: String },
    #[error("malformed model: {0}")]
    Malformed(String),
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub max_leaves: usize,
    pub min_samples_leaf: usize,
    /// Reserved for subsampling extensions; recorded in model files. The
    /// exact-greedy trainer itself is deterministic and never draws from it.
    pub seed: u64,
}

impl Default for GbtParams {
    /// 600 rounds at learning rate 0.01, depth <= 5, <= 8 leaves.
    fn default() -> Self {
        GbtParams {
            n_rounds: 600,
            learning_rate: 0.01,
            max_depth: 5,
            max_leaves: 8,
            min_samples_leaf: 5,
            seed: 0,
        }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<(), GbtError> {
        if self.n_rounds == 0 || self.max_depth == 0 || self.max_leaves == 0 {
            return Err(GbtError::BadParams(
                "n_rounds, max_depth, and max_leaves must be at least 1".to_string(),
            ));
        }
        if self.min_samples_leaf == 0 {
            return Err(GbtError::BadParams(
                "min_samples_leaf must be at least 1".to_string(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(GbtError::BadParams(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// A row-major matrix of feature rows, all the same width.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    width: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(width: usize) -> Self {
        FeatureMatrix {
            width,
            data: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<(), GbtError> {
        if row.len() != self.width {
            return Err(GbtError::WidthMismatch {
                expected: self.width,
                got: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn from_vectors(vectors: &[FeatureVector81]) -> Self {
        let mut m = FeatureMatrix::new(crate::features::FEATURE_COUNT);
        for v in vectors {
            m.push_row(v.as_slice()).expect("fixed width");
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_rows(&self) -> usize {
        self.data.len().checked_div(self.width).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }
}

/// One tree node; `Split` routes `x[feature] <= threshold` to `left`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// A binary regression tree with the root at node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    /// Routes `x` to a leaf and returns its (unscaled) value.
    pub fn output(&self, x: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }
}

/// A fitted ensemble. Prediction is
/// `base_score + learning_rate * sum of tree outputs`, clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GbtModel {
    params: GbtParams,
    n_features: usize,
    base_score: f64,
    feature_gain: Vec<f64>,
    trees: Vec<RegressionTree>,
}

/// On-disk JSON layout of a model.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    magic: String,
    params: GbtParams,
    n_features: usize,
    base_score: f64,
    feature_gain: Vec<f64>,
    trees: Vec<RegressionTree>,
}

/// Per-round training diagnostics from [`fit_with_report`].
#[derive(Debug, Clone)]
pub struct FitReport {
    /// Training MSE after each round's update; monotonically non-increasing.
    pub round_mse: Vec<f64>,
    /// The trainer's final per-sample scores, bit-identical to
    /// [`GbtModel::predict_raw`] on the training rows.
    pub final_scores: Vec<f64>,
}

/// Best L2 split of one feature column.
///
/// `column` holds `(value, sample id)` sorted ascending by value; `residuals`
/// is indexed by sample id. Candidate thresholds are midpoints between
/// consecutive distinct values; a candidate is kept only if both sides hold
/// at least `min_samples_leaf` samples. Gain is
/// `S_L^2/n_L + S_R^2/n_R - S_P^2/n_P` with `S` the residual sums. Returns
/// `(threshold, gain)` of the maximum positive gain, ties preferring the
/// lower threshold, or `None` when no split has positive gain.
pub fn best_split(
    column: &[(f64, u32)],
    residuals: &[f64],
    min_samples_leaf: usize,
) -> Option<(f64, f64)> {
    let n = column.len();
    if n < 2 * min_samples_leaf {
        return None;
    }
    let total: f64 = column.iter().map(|&(_, id)| residuals[id as usize]).sum();
    let parent = total * total / n as f64;

    let mut best: Option<(f64, f64)> = None;
    let mut left_sum = 0.0f64;
    for i in 1..n {
        left_sum += residuals[column[i - 1].1 as usize];
        if column[i - 1].0 == column[i].0 {
            continue;
        }
        let n_left = i;
        let n_right = n - i;
        if n_left < min_samples_leaf || n_right < min_samples_leaf {
            continue;
        }
        let right_sum = total - left_sum;
        let gain = left_sum * left_sum / n_left as f64
            + right_sum * right_sum / n_right as f64
            - parent;
        if gain > 0.0 && best.is_none_or(|(_, g)| gain > g) {
            best = Some(((column[i - 1].0 + column[i].0) / 2.0, gain));
        }
    }
    best
}

struct LeafState {
    node_slot: usize,
    depth: usize,
    /// Member sample ids, ascending (sums over members are order-stable).
    ids: Vec<u32>,
    best: Option<(usize, f64, f64)>, // (feature, threshold, gain)
}

/// Best split over all features for one leaf: features are evaluated in
/// parallel but reduced in index order, so ties resolve to the lower feature
/// index no matter the thread count.
fn best_for_leaf(
    matrix: &FeatureMatrix,
    residuals: &[f64],
    ids: &[u32],
    min_samples_leaf: usize,
) -> Option<(usize, f64, f64)> {
    let per_feature: Vec<Option<(f64, f64)>> = (0..matrix.width())
        .into_par_iter()
        .map(|feature| {
            let mut column: Vec<(f64, u32)> = ids
                .iter()
                .map(|&id| (matrix.row(id as usize)[feature], id))
                .collect();
            column.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            best_split(&column, residuals, min_samples_leaf)
        })
        .collect();
    let mut best: Option<(usize, f64, f64)> = None;
    for (feature, candidate) in per_feature.into_iter().enumerate() {
        if let Some((threshold, gain)) = candidate {
            if best.is_none_or(|(_, _, g)| gain > g) {
                best = Some((feature, threshold, gain));
            }
        }
    }
    best
}

fn mean_residual(ids: &[u32], residuals: &[f64]) -> f64 {
    let sum: f64 = ids.iter().map(|&id| residuals[id as usize]).sum();
    sum / ids.len() as f64
}

fn validate_training_input(
    matrix: &FeatureMatrix,
    targets: &[f64],
    params: &GbtParams,
) -> Result<(), GbtError> {
    params.validate()?;
    if matrix.width() == 0 {
        return Err(GbtError::ZeroWidth);
    }
    let n = matrix.n_rows();
    if n == 0 {
        return Err(GbtError::Empty);
    }
    if targets.len() != n {
        return Err(GbtError::TargetCount {
            targets: targets.len(),
            rows: n,
        });
    }
    if n < 2 * params.min_samples_leaf {
        return Err(GbtError::TooFewSamples {
            n,
            required: 2 * params.min_samples_leaf,
        });
    }
    for (index, &value) in targets.iter().enumerate() {
        if !value.is_finite() || !(0.0..=1.0).contains(&value) {
            return Err(GbtError::BadTarget { index, value });
        }
    }
    for i in 0..n {
        for &v in matrix.row(i) {
            if !v.is_finite() {
                return Err(GbtError::Malformed(format!(
                    "non-finite feature value {v} in row {i}"
                )));
            }
        }
    }
    Ok(())
}

/// Fits an ensemble; see the module docs for the algorithm.
pub fn fit(matrix: &FeatureMatrix, targets: &[f64], params: &GbtParams) -> Result<GbtModel, GbtError> {
    fit_with_report(matrix, targets, params).map(|(model, _)| model)
}

/// Like [`fit`], also returning per-round training MSE and final scores.
pub fn fit_with_report(
    matrix: &FeatureMatrix,
    targets: &[f64],
    params: &GbtParams,
) -> Result<(GbtModel, FitReport), GbtError> {
    validate_training_input(matrix, targets, params)?;
    let n = matrix.n_rows();
    let base_score = targets.iter().sum::<f64>() / n as f64;

    let mut scores = vec![base_score; n];
    let mut residuals = vec![0.0f64; n];
    let mut feature_gain = vec![0.0f64; matrix.width()];
    let mut trees = Vec::with_capacity(params.n_rounds);
    let mut round_mse = Vec::with_capacity(params.n_rounds);
    // Reused per round: which leaf's value applies to each sample.
    let mut sample_value = vec![0.0f64; n];

    for _round in 0..params.n_rounds {
        for i in 0..n {
            residuals[i] = targets[i] - scores[i];
        }

        let mut nodes = vec![TreeNode::Leaf { value: 0.0 }];
        let all_ids: Vec<u32> = (0..n as u32).collect();
        let root_best = best_for_leaf(matrix, &residuals, &all_ids, params.min_samples_leaf);
        let mut leaves = vec![LeafState {
            node_slot: 0,
            depth: 0,
            ids: all_ids,
            best: root_best,
        }];

        while leaves.len() < params.max_leaves {
            // Earliest-created leaf wins gain ties (strict > during the scan).
            let mut chosen: Option<(usize, f64)> = None;
            for (li, leaf) in leaves.iter().enumerate() {
                if leaf.depth >= params.max_depth {
                    continue;
                }
                if let Some((_, _, gain)) = leaf.best {
                    if chosen.is_none_or(|(_, g)| gain > g) {
                        chosen = Some((li, gain));
                    }
                }
            }
            let Some((li, _)) = chosen else { break };

            let leaf = leaves.remove(li);
            let (feature, threshold, gain) = leaf.best.expect("chosen leaf has a split");
            feature_gain[feature] += gain;

            let mut left_ids = Vec::new();
            let mut right_ids = Vec::new();
            for &id in &leaf.ids {
                if matrix.row(id as usize)[feature] <= threshold {
                    left_ids.push(id);
                } else {
                    right_ids.push(id);
                }
            }
            let left_slot = nodes.len();
            nodes.push(TreeNode::Leaf { value: 0.0 });
            let right_slot = nodes.len();
            nodes.push(TreeNode::Leaf { value: 0.0 });
            nodes[leaf.node_slot] = TreeNode::Split {
                feature,
                threshold,
                left: left_slot,
                right: right_slot,
            };

            let depth = leaf.depth + 1;
            let left_best = if depth < params.max_depth {
                best_for_leaf(matrix, &residuals, &left_ids, params.min_samples_leaf)
            } else {
                None
            };
            let right_best = if depth < params.max_depth {
                best_for_leaf(matrix, &residuals, &right_ids, params.min_samples_leaf)
            } else {
                None
            };
            leaves.push(LeafState {
                node_slot: left_slot,
                depth,
                ids: left_ids,
                best: left_best,
            });
            leaves.push(LeafState {
                node_slot: right_slot,
                depth,
                ids: right_ids,
                best: right_best,
            });
        }

        for leaf in &leaves {
            let value = mean_residual(&leaf.ids, &residuals);
            nodes[leaf.node_slot] = TreeNode::Leaf { value };
            for &id in &leaf.ids {
                sample_value[id as usize] = value;
            }
        }
        for i in 0..n {
            scores[i] += params.learning_rate * sample_value[i];
        }
        let mse = scores
            .iter()
            .zip(targets)
            .map(|(&s, &t)| (t - s) * (t - s))
            .sum::<f64>()
            / n as f64;
        round_mse.push(mse);
        trees.push(RegressionTree { nodes });
    }

    Ok((
        GbtModel {
            params: params.clone(),
            n_features: matrix.width(),
            base_score,
            feature_gain,
            trees,
        },
        FitReport {
            round_mse,
            final_scores: scores,
        },
    ))
}

impl GbtModel {
    /// A degenerate ensemble with no trees: predicts `base_score` everywhere.
    pub fn constant(params: GbtParams, n_features: usize, base_score: f64) -> Result<Self, GbtError> {
        params.validate()?;
        if n_features == 0 {
            return Err(GbtError::ZeroWidth);
        }
        Ok(GbtModel {
            params,
            n_features,
            base_score,
            feature_gain: vec![0.0; n_features],
            trees: Vec::new(),
        })
    }

    pub fn params(&self) -> &GbtParams {
        &self.params
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn base_score(&self) -> f64 {
        self.base_score
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn feature_gain(&self) -> &[f64] {
        &self.feature_gain
    }

    /// Raw ensemble output (no clamping); accumulates exactly as the trainer
    /// updated its scores, so training rows reproduce the final scores
    /// bit-for-bit.
    pub fn predict_raw(&self, x: &[f64]) -> Result<f64, GbtError> {
        if x.len() != self.n_features {
            return Err(GbtError::WidthMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let mut score = self.base_score;
        for tree in &self.trees {
            score += self.params.learning_rate * tree.output(x);
        }
        Ok(score)
    }

    /// Prediction clamped to `[0, 1]`.
    pub fn predict(&self, x: &[f64]) -> Result<f64, GbtError> {
        Ok(self.predict_raw(x)?.clamp(0.0, 1.0))
    }

    /// Total-gain importance: `(feature index, accumulated gain)` sorted
    /// descending by gain, ties by ascending index.
    pub fn feature_importance(&self) -> Vec<(usize, f64)> {
        let mut ranked: Vec<(usize, f64)> = self.feature_gain.iter().copied().enumerate().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
    }

    /// Writes the model as versioned JSON; round-trips exactly.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GbtError> {
        let file = ModelFile {
            magic: MODEL_MAGIC.to_string(),
            params: self.params.clone(),
            n_features: self.n_features,
            base_score: self.base_score,
            feature_gain: self.feature_gain.clone(),
            trees: self.trees.clone(),
        };
        let writer = BufWriter::new(File::create(path)?);
        serde_json::to_writer(writer, &file)?;
        Ok(())
    }

    /// Reads a model written by [`GbtModel::save`], validating magic and
    /// structure.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GbtError> {
        let reader = BufReader::new(File::open(path)?);
        let file: ModelFile = serde_json::from_reader(reader)?;
        if file.magic != MODEL_MAGIC {
            return Err(GbtError::BadMagic { found: file.magic });
        }
        file.params.validate()?;
        if file.n_features == 0 {
            return Err(GbtError::ZeroWidth);
        }
        if file.feature_gain.len() != file.n_features {
            return Err(GbtError::Malformed(format!(
                "feature_gain has {} entries for {} features",
                file.feature_gain.len(),
                file.n_features
            )));
        }
        for (ti, tree) in file.trees.iter().enumerate() {
            if tree.nodes.is_empty() {
                return Err(GbtError::Malformed(format!("tree {ti} has no nodes")));
            }
            for node in &tree.nodes {
                if let TreeNode::Split {
                    feature,
                    left,
                    right,
                    ..
                } = node
                {
                    if *feature >= file.n_features {
                        return Err(GbtError::Malformed(format!(
                            "tree {ti} splits on feature {feature} of {}",
                            file.n_features
                        )));
                    }
                    if *left >= tree.nodes.len() || *right >= tree.nodes.len() {
                        return Err(GbtError::Malformed(format!(
                            "tree {ti} has a child index out of range"
                        )));
                    }
                }
            }
        }
        Ok(GbtModel {
            params: file.params,
            n_features: file.n_features,
            base_score: file.base_score,
            feature_gain: file.feature_gain,
            trees: file.trees,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column_of(values: &[f64]) -> Vec<(f64, u32)> {
        let mut c: Vec<(f64, u32)> = values.iter().copied().zip(0u32..).collect();
        c.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        c
    }

    fn matrix_of(rows: &[&[f64]]) -> FeatureMatrix {
        let mut m = FeatureMatrix::new(rows[0].len());
        for r in rows {
            m.push_row(r).unwrap();
        }
        m
    }

    #[test]
    fn best_split_known_case() {
        let column = column_of(&[1.0, 2.0, 3.0, 4.0]);
        let residuals = [-1.0, -1.0, 1.0, 1.0];
        let (threshold, gain) = best_split(&column, &residuals, 1).unwrap();
        assert_eq!(threshold, 2.5);
        assert_eq!(gain, 4.0);
    }

    #[test]
    fn best_split_constant_residuals_is_none() {
        let column = column_of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(best_split(&column, &[0.7; 4], 1), None);
    }

    #[test]
    fn best_split_never_separates_equal_values() {
        // Values [1, 1, 2]: the only candidate threshold is 1.5.
        let column = column_of(&[1.0, 1.0, 2.0]);
        let residuals = [-1.0, 1.0, 5.0];
        let (threshold, _) = best_split(&column, &residuals, 1).unwrap();
        assert_eq!(threshold, 1.5);
    }

    #[test]
    fn best_split_honors_min_samples_leaf() {
        let column = column_of(&[1.0, 2.0, 3.0, 4.0]);
        let residuals = [-1.0, -1.0, 1.0, 1.0];
        // min_leaf 2 still allows the middle split...
        assert!(best_split(&column, &residuals, 2).is_some());
        // ...but 3 allows none, and fewer than 2*min_leaf samples short-circuits.
        assert_eq!(best_split(&column, &residuals, 3), None);
    }

    fn tiny_params(rounds: usize, lr: f64, depth: usize, leaves: usize, min_leaf: usize) -> GbtParams {
        GbtParams {
            n_rounds: rounds,
            learning_rate: lr,
            max_depth: depth,
            max_leaves: leaves,
            min_samples_leaf: min_leaf,
            seed: 0,
        }
    }

    #[test]
    fn fit_constant_targets_predicts_constant() {
        let matrix = matrix_of(&[&[0.0], &[1.0], &[2.0], &[3.0]]);
        let targets = [0.4; 4];
        let model = fit(&matrix, &targets, &tiny_params(3, 0.5, 2, 4, 1)).unwrap();
        assert_eq!(model.base_score(), 0.4);
        assert!(model.feature_gain().iter().all(|&g| g == 0.0));
        for x in [[-5.0], [0.0], [99.0]] {
            assert_eq!(model.predict(&x).unwrap(), 0.4);
        }
        // Trees are still emitted each round (single-leaf, zero value).
        assert_eq!(model.trees().len(), 3);
        assert!(model.trees().iter().all(|t| t.n_leaves() == 1));
    }

    #[test]
    fn fit_single_split_is_exact() {
        let matrix = matrix_of(&[&[0.0], &[1.0], &[0.0], &[1.0]]);
        let targets = [0.0, 1.0, 0.0, 1.0];
        let params = tiny_params(1, 1.0, 1, 2, 1);
        let (model, report) = fit_with_report(&matrix, &targets, &params).unwrap();
        assert_eq!(model.predict(&[0.0]).unwrap(), 0.0);
        assert_eq!(model.predict(&[1.0]).unwrap(), 1.0);
        assert_eq!(report.round_mse, vec![0.0]);
        // All gain on the only feature: 1/2 + 1/2 - 0 = 1.
        assert_eq!(model.feature_gain(), &[1.0]);
        let importance = model.feature_importance();
        assert_eq!(importance, vec![(0, 1.0)]);
    }

    #[test]
    fn predictions_reproduce_final_scores() {
        let matrix = matrix_of(&[
            &[0.1, 5.0],
            &[0.4, 4.0],
            &[0.2, 3.0],
            &[0.9, 2.0],
            &[0.7, 1.0],
            &[0.6, 0.0],
        ]);
        let targets = [0.1, 0.35, 0.2, 0.9, 0.75, 0.6];
        let params = tiny_params(20, 0.3, 3, 4, 1);
        let (model, report) = fit_with_report(&matrix, &targets, &params).unwrap();
        for i in 0..matrix.n_rows() {
            let raw = model.predict_raw(matrix.row(i)).unwrap();
            assert_eq!(raw.to_bits(), report.final_scores[i].to_bits(), "row {i}");
            let clamped = model.predict(matrix.row(i)).unwrap();
            assert_eq!(clamped, raw.clamp(0.0, 1.0));
        }
    }

    #[test]
    fn training_mse_never_increases() {
        let matrix = matrix_of(&[
            &[0.0], &[1.0], &[2.0], &[3.0], &[4.0], &[5.0], &[6.0], &[7.0],
        ]);
        let targets = [0.05, 0.2, 0.1, 0.45, 0.5, 0.8, 0.65, 0.9];
        let (_, report) = fit_with_report(&matrix, &targets, &tiny_params(50, 0.2, 3, 4, 1)).unwrap();
        for w in report.round_mse.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "MSE increased: {w:?}");
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let matrix = matrix_of(&[
            &[0.3, 1.0, 0.0],
            &[0.1, 2.0, 1.0],
            &[0.9, 0.5, 0.0],
            &[0.5, 1.5, 1.0],
            &[0.2, 0.1, 0.0],
            &[0.8, 2.5, 1.0],
        ]);
        let targets = [0.2, 0.3, 0.8, 0.5, 0.1, 0.9];
        let params = tiny_params(10, 0.1, 3, 4, 1);
        let a = fit(&matrix, &targets, &params).unwrap();
        let b = fit(&matrix, &targets, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn monotone_feature_transform_preserves_routing() {
        let matrix = matrix_of(&[
            &[0.3, 1.0],
            &[0.1, 2.0],
            &[0.9, 0.5],
            &[0.5, 1.5],
            &[0.2, 0.1],
            &[0.8, 2.5],
        ]);
        // Scale feature 0 by 4 (exact in floating point, strictly monotone).
        let mut scaled = FeatureMatrix::new(2);
        for i in 0..matrix.n_rows() {
            let r = matrix.row(i);
            scaled.push_row(&[r[0] * 4.0, r[1]]).unwrap();
        }
        let targets = [0.2, 0.3, 0.8, 0.5, 0.1, 0.9];
        let params = tiny_params(12, 0.25, 3, 4, 1);
        let a = fit(&matrix, &targets, &params).unwrap();
        let b = fit(&scaled, &targets, &params).unwrap();
        for i in 0..matrix.n_rows() {
            assert_eq!(
                a.predict_raw(matrix.row(i)).unwrap().to_bits(),
                b.predict_raw(scaled.row(i)).unwrap().to_bits(),
            );
        }
    }

    #[test]
    fn unused_feature_does_not_affect_prediction() {
        // Feature 1 is constant, so no tree can split on it.
        let matrix = matrix_of(&[
            &[0.0, 7.0],
            &[1.0, 7.0],
            &[0.0, 7.0],
            &[1.0, 7.0],
        ]);
        let targets = [0.1, 0.9, 0.1, 0.9];
        let model = fit(&matrix, &targets, &tiny_params(5, 0.5, 2, 2, 1)).unwrap();
        assert_eq!(model.feature_gain()[1], 0.0);
        let a = model.predict(&[0.0, 7.0]).unwrap();
        let b = model.predict(&[0.0, -123.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn importance_sums_match_accumulated_gain() {
        let matrix = matrix_of(&[
            &[0.3, 1.0],
            &[0.1, 2.0],
            &[0.9, 0.5],
            &[0.5, 1.5],
            &[0.2, 0.1],
            &[0.8, 2.5],
        ]);
        let targets = [0.2, 0.3, 0.8, 0.5, 0.1, 0.9];
        let model = fit(&matrix, &targets, &tiny_params(8, 0.3, 2, 3, 1)).unwrap();
        let ranked = model.feature_importance();
        let from_rank: f64 = ranked.iter().map(|&(_, g)| g).sum();
        let from_gain: f64 = model.feature_gain().iter().sum();
        assert_eq!(from_rank, from_gain);
        assert!(ranked.windows(2).all(|w| w[0].1 >= w[1].1));
        assert!(model.feature_gain().iter().all(|&g| g >= 0.0));
    }

    #[test]
    fn leaf_and_depth_caps_hold() {
        let n = 64;
        let mut matrix = FeatureMatrix::new(3);
        let mut targets = Vec::new();
        for i in 0..n {
            let x = i as f64 / (n - 1) as f64;
            matrix
                .push_row(&[x, (i % 7) as f64, ((i * 13) % 5) as f64])
                .unwrap();
            targets.push(((x * 9.0).sin() * 0.5 + 0.5).clamp(0.0, 1.0));
        }
        let params = tiny_params(5, 0.5, 2, 4, 1);
        let model = fit(&matrix, &targets, &params).unwrap();
        for tree in model.trees() {
            assert!(tree.n_leaves() <= params.max_leaves);
            // Depth check: walk every path.
            fn depth(nodes: &[TreeNode], at: usize) -> usize {
                match &nodes[at] {
                    TreeNode::Leaf { .. } => 0,
                    TreeNode::Split { left, right, .. } => {
                        1 + depth(nodes, *left).max(depth(nodes, *right))
                    }
                }
            }
            assert!(depth(&tree.nodes, 0) <= params.max_depth);
        }
    }

    #[test]
    fn fit_rejects_bad_input() {
        let empty = FeatureMatrix::new(2);
        assert!(matches!(
            fit(&empty, &[], &GbtParams::default()).unwrap_err(),
            GbtError::Empty
        ));

        let matrix = matrix_of(&[&[0.0], &[1.0]]);
        assert!(matches!(
            fit(&matrix, &[0.5, 2.0], &tiny_params(1, 0.1, 1, 2, 1)).unwrap_err(),
            GbtError::BadTarget { index: 1, .. }
        ));
        assert!(matches!(
            fit(&matrix, &[0.5], &tiny_params(1, 0.1, 1, 2, 1)).unwrap_err(),
            GbtError::TargetCount { .. }
        ));
        // Default min_samples_leaf = 5 requires at least 10 rows.
        assert!(matches!(
            fit(&matrix, &[0.5, 0.5], &GbtParams::default()).unwrap_err(),
            GbtError::TooFewSamples { n: 2, required: 10 }
        ));
        let p = GbtParams {
            learning_rate: 0.0,
            ..GbtParams::default()
        };
        assert!(matches!(
            fit(&matrix, &[0.5, 0.5], &p).unwrap_err(),
            GbtError::BadParams(_)
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let matrix = matrix_of(&[
            &[0.3, 1.0],
            &[0.1, 2.0],
            &[0.9, 0.5],
            &[0.5, 1.5],
            &[0.2, 0.1],
            &[0.8, 2.5],
        ]);
        let targets = [0.2, 0.3, 0.8, 0.5, 0.1, 0.9];
        let model = fit(&matrix, &targets, &tiny_params(7, 0.3, 3, 4, 1)).unwrap();
        model.save(&path).unwrap();
        let back = GbtModel::load(&path).unwrap();
        assert_eq!(back, model);
        for i in 0..matrix.n_rows() {
            assert_eq!(
                model.predict_raw(matrix.row(i)).unwrap().to_bits(),
                back.predict_raw(matrix.row(i)).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn empty_ensemble_constructs_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = GbtModel::constant(GbtParams::default(), 81, 0.25).unwrap();
        assert_eq!(model.predict(&vec![0.0; 81]).unwrap(), 0.25);
        assert!(model.feature_importance().iter().all(|&(_, g)| g == 0.0));
        model.save(&path).unwrap();
        assert_eq!(GbtModel::load(&path).unwrap(), model);
    }

    #[test]
    fn load_rejects_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");

        std::fs::write(&path, "{not json").unwrap();
        assert!(matches!(GbtModel::load(&path).unwrap_err(), GbtError::Json(_)));

        let model = GbtModel::constant(GbtParams::default(), 2, 0.5).unwrap();
        model.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replace(MODEL_MAGIC, "CGMODEL9")).unwrap();
        match GbtModel::load(&path).unwrap_err() {
            GbtError::BadMagic { found } => assert_eq!(found, "CGMODEL9"),
            other => panic!("unexpected error {other:?}"),
        }

        // Child index out of range.
        let bad = r#"{"magic":"CGMODEL1","params":{"n_rounds":1,"learning_rate":0.1,"max_depth":1,"max_leaves":2,"min_samples_leaf":1,"seed":0},"n_features":1,"base_score":0.0,"feature_gain":[0.0],"trees":[{"nodes":[{"type":"split","feature":0,"threshold":0.5,"left":5,"right":6}]}]}"#;
        std::fs::write(&path, bad).unwrap();
        assert!(matches!(
            GbtModel::load(&path).unwrap_err(),
            GbtError::Malformed(_)
        ));
    }
}
