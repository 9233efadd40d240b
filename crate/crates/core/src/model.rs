//! Classifier training and evaluation: a native gradient-boosted tree
//! ensemble with logistic loss, a logistic-regression baseline, the
//! robot-positive evaluation metrics, ANOVA-F and chi-square feature
//! scores, and time-ordered splits with learning curves.

use std::io::{self, BufRead, Write};

use serde::Serialize;
use thiserror::Error;

use crate::dataset::{imputed_row, LabeledDataset};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("train fraction must be in (0, 1)")]
    InvalidFraction,
    #[error("training data contains a single class")]
    SingleClassInput,
    #[error("expected {expected} features, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("prediction and truth lengths differ ({preds} vs {truth})")]
    LengthMismatch { preds: usize, truth: usize },
    #[error("feature {0} has negative values; chi-square needs non-negative features")]
    NegativeFeature(String),
}

// ---------------------------------------------------------------------------
// Time-ordered split

/// Stable-sort rows by start timestamp and cut off the first
/// ceil(train_frac * N) rows as the training set.
pub fn time_ordered_split(
    ds: &LabeledDataset,
    train_frac: f64,
) -> Result<(LabeledDataset, LabeledDataset), ModelError> {
    if ds.rows.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(ModelError::InvalidFraction);
    }
    let mut rows = ds.rows.clone();
    rows.sort_by_key(|r| r.start_timestamp);
    let n_train = ((train_frac * rows.len() as f64).ceil() as usize).clamp(1, rows.len());
    let test = rows.split_off(n_train);
    Ok((
        LabeledDataset {
            feature_names: ds.feature_names.clone(),
            rows,
        },
        LabeledDataset {
            feature_names: ds.feature_names.clone(),
            rows: test,
        },
    ))
}

/// [`time_ordered_split`] over raw feature-table rows, for stages that keep
/// the full table (with ids and provenance) rather than a numeric dataset.
pub fn split_rows(
    rows: &[crate::dataset::FeatureRow],
    train_frac: f64,
) -> Result<(Vec<crate::dataset::FeatureRow>, Vec<crate::dataset::FeatureRow>), ModelError> {
    if rows.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(ModelError::InvalidFraction);
    }
    let mut rows = rows.to_vec();
    rows.sort_by_key(|r| r.start_timestamp);
    let n_train = ((train_frac * rows.len() as f64).ceil() as usize).clamp(1, rows.len());
    let test = rows.split_off(n_train);
    Ok((rows, test))
}

// ---------------------------------------------------------------------------
// Metrics

/// Confusion counts and the derived scores, with robot as the positive
/// class. Every ratio with a zero denominator is defined as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub balanced_accuracy: f64,
    pub g_mean: f64,
}

fn ratio(num: usize, denom: usize) -> f64 {
    if denom == 0 {
        0.0
    } else {
        num as f64 / denom as f64
    }
}

pub fn evaluate(preds: &[bool], truth: &[bool]) -> Result<Metrics, ModelError> {
    if preds.len() != truth.len() || preds.is_empty() {
        return Err(ModelError::LengthMismatch {
            preds: preds.len(),
            truth: truth.len(),
        });
    }
    let mut tp = 0;
    let mut fp = 0;
    let mut tn = 0;
    let mut fn_ = 0;
    for (&p, &t) in preds.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_); // = TPR
    let tnr = ratio(tn, tn + fp);
    let f_measure = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Metrics {
        tp,
        fp,
        tn,
        fn_,
        precision,
        recall,
        f_measure,
        balanced_accuracy: (recall + tnr) / 2.0,
        g_mean: (recall * tnr).sqrt(),
    })
}

impl Metrics {
    /// Human-readable key=value lines.
    pub fn render(&self) -> String {
        format!(
            "tp={} fp={} tn={} fn={}\nprecision={:.4}\nrecall={:.4}\nf_measure={:.4}\nbalanced_accuracy={:.4}\ng_mean={:.4}",
            self.tp,
            self.fp,
            self.tn,
            self.fn_,
            self.precision,
            self.recall,
            self.f_measure,
            self.balanced_accuracy,
            self.g_mean
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

// ---------------------------------------------------------------------------
// Gradient-boosted trees

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbdtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            n_trees: 200,
            max_depth: 3,
            learning_rate: 0.1,
            min_leaf: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        /// Index of the child taking values < threshold.
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Regression tree stored as a preorder node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn output(&self, x: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[*feature] < *threshold { *left } else { *right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GBDTModel {
    pub params: GbdtParams,
    /// Prior log-odds of the robot class on the training set.
    pub base_score: f64,
    pub trees: Vec<RegressionTree>,
    pub feature_names: Vec<String>,
}

/// Per-stage training log-loss, starting with the tree-less model.
#[derive(Debug, Clone, Default)]
pub struct BoostTrace {
    pub log_loss: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn mean_log_loss(scores: &[f64], y: &[bool]) -> f64 {
    let n = scores.len() as f64;
    scores
        .iter()
        .zip(y)
        .map(|(&f, &t)| {
            let p = sigmoid(f).clamp(1e-12, 1.0 - 1e-12);
            if t {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / n
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl<'a> TreeBuilder<'a> {
    /// Best axis-aligned split by squared-error reduction on the gradients.
    /// Ties go to the lower feature index, then the lower threshold, so
    /// training is deterministic.
    fn find_split(&self, rows: &[usize]) -> Option<BestSplit> {
        let n_features = self.x[rows[0]].len();
        let total_sum: f64 = rows.iter().map(|&i| self.grad[i]).sum();
        let total_sq: f64 = rows.iter().map(|&i| self.grad[i] * self.grad[i]).sum();
        let parent_sse = total_sq - total_sum * total_sum / rows.len() as f64;

        let mut best: Option<BestSplit> = None;
        let mut order: Vec<usize> = Vec::with_capacity(rows.len());
        for feature in 0..n_features {
            order.clear();
            order.extend_from_slice(rows);
            order.sort_by(|&a, &b| self.x[a][feature].total_cmp(&self.x[b][feature]));

            let mut left_sum = 0.0;
            let mut left_sq = 0.0;
            for (pos, &i) in order.iter().enumerate().take(order.len() - 1) {
                let g = self.grad[i];
                left_sum += g;
                left_sq += g * g;
                let here = self.x[i][feature];
                let next = self.x[order[pos + 1]][feature];
                if here == next {
                    continue; // not a boundary between distinct values
                }
                let n_left = pos + 1;
                let n_right = order.len() - n_left;
                if n_left < self.min_leaf || n_right < self.min_leaf {
                    continue;
                }
                let right_sum = total_sum - left_sum;
                let right_sq = total_sq - left_sq;
                let sse = (left_sq - left_sum * left_sum / n_left as f64)
                    + (right_sq - right_sum * right_sum / n_right as f64);
                let gain = parent_sse - sse;
                let threshold = here / 2.0 + next / 2.0;
                let better = match &best {
                    None => gain > 1e-12,
                    Some(b) => {
                        gain > b.gain + 1e-12
                            || ((gain - b.gain).abs() <= 1e-12
                                && (feature, threshold) < (b.feature, b.threshold))
                    }
                };
                if better {
                    best = Some(BestSplit {
                        feature,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }

    /// Newton leaf value: sum of gradients over sum of hessians.
    fn leaf_value(&self, rows: &[usize]) -> f64 {
        let g: f64 = rows.iter().map(|&i| self.grad[i]).sum();
        let h: f64 = rows.iter().map(|&i| self.hess[i]).sum();
        if h < 1e-12 {
            0.0
        } else {
            g / h
        }
    }

    fn build(&mut self, rows: &[usize], depth: usize) -> usize {
        if depth < self.max_depth && rows.len() >= 2 * self.min_leaf {
            if let Some(split) = self.find_split(rows) {
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                    .iter()
                    .partition(|&&i| self.x[i][split.feature] < split.threshold);
                let at = self.nodes.len();
                self.nodes.push(Node::Leaf { value: 0.0 }); // placeholder
                let left = self.build(&left_rows, depth + 1);
                let right = self.build(&right_rows, depth + 1);
                self.nodes[at] = Node::Split {
                    feature: split.feature,
                    threshold: split.threshold,
                    left,
                    right,
                };
                return at;
            }
        }
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: self.leaf_value(rows),
        });
        at
    }
}

pub fn train_gbdt(train: &LabeledDataset, params: &GbdtParams) -> Result<GBDTModel, ModelError> {
    train_gbdt_traced(train, params).map(|(m, _)| m)
}

pub fn train_gbdt_traced(
    train: &LabeledDataset,
    params: &GbdtParams,
) -> Result<(GBDTModel, BoostTrace), ModelError> {
    let x = train.imputed_features();
    let y = train.labels();
    if x.len() < 2 {
        return Err(ModelError::EmptyDataset);
    }
    let positives = y.iter().filter(|&&t| t).count();
    if positives == 0 || positives == y.len() {
        return Err(ModelError::SingleClassInput);
    }

    let prior = positives as f64 / y.len() as f64;
    let base_score = (prior / (1.0 - prior)).ln();
    let mut scores = vec![base_score; y.len()];
    let mut trace = BoostTrace::default();
    trace.log_loss.push(mean_log_loss(&scores, &y));

    let mut trees = Vec::with_capacity(params.n_trees);
    let all_rows: Vec<usize> = (0..y.len()).collect();
    let mut grad = vec![0.0f64; y.len()];
    let mut hess = vec![0.0f64; y.len()];
    for _ in 0..params.n_trees {
        for i in 0..y.len() {
            let p = sigmoid(scores[i]);
            grad[i] = (y[i] as u8 as f64) - p;
            hess[i] = p * (1.0 - p);
        }
        let mut builder = TreeBuilder {
            x: &x,
            grad: &grad,
            hess: &hess,
            max_depth: params.max_depth,
            min_leaf: params.min_leaf,
            nodes: Vec::new(),
        };
        builder.build(&all_rows, 0);
        let tree = RegressionTree {
            nodes: builder.nodes,
        };
        for (i, row) in x.iter().enumerate() {
            scores[i] += params.learning_rate * tree.output(row);
        }
        trees.push(tree);
        trace.log_loss.push(mean_log_loss(&scores, &y));
    }

    Ok((
        GBDTModel {
            params: *params,
            base_score,
            trees,
            feature_names: train.feature_names.clone(),
        },
        trace,
    ))
}

impl GBDTModel {
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, ModelError> {
        if x.len() != self.feature_names.len() {
            return Err(ModelError::DimensionMismatch {
                expected: self.feature_names.len(),
                found: x.len(),
            });
        }
        let raw: f64 = self.base_score
            + self.params.learning_rate
                * self.trees.iter().map(|t| t.output(x)).sum::<f64>();
        Ok(sigmoid(raw))
    }

    /// Probability at or above 0.5 is a robot.
    pub fn predict_label(&self, x: &[f64]) -> Result<bool, ModelError> {
        Ok(self.predict_proba(x)? >= 0.5)
    }

    pub fn predict_dataset(&self, ds: &LabeledDataset) -> Result<Vec<bool>, ModelError> {
        ds.rows
            .iter()
            .map(|r| self.predict_label(&imputed_row(r)))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Feature scores

/// One-way two-group ANOVA F per feature, sorted by descending score.
/// A feature constant overall or within the class split scores 0 when both
/// numerator and denominator vanish.
pub fn anova_f_scores(ds: &LabeledDataset) -> Result<Vec<(String, f64)>, ModelError> {
    let x = ds.imputed_features();
    let y = ds.labels();
    let positives = y.iter().filter(|&&t| t).count();
    if positives == 0 || positives == y.len() {
        return Err(ModelError::SingleClassInput);
    }
    let n = y.len() as f64;
    let scored = ds
        .feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let (mut sum_r, mut sum_h) = (0.0, 0.0);
            for (row, &robot) in x.iter().zip(&y) {
                if robot {
                    sum_r += row[j];
                } else {
                    sum_h += row[j];
                }
            }
            let n_r = positives as f64;
            let n_h = n - n_r;
            let mean_r = sum_r / n_r;
            let mean_h = sum_h / n_h;
            let grand = (sum_r + sum_h) / n;
            let ss_between = n_r * (mean_r - grand).powi(2) + n_h * (mean_h - grand).powi(2);
            let ss_within: f64 = x
                .iter()
                .zip(&y)
                .map(|(row, &robot)| {
                    let mean = if robot { mean_r } else { mean_h };
                    (row[j] - mean).powi(2)
                })
                .sum();
            // df_between = 1, df_within = n - 2
            let ms_between = ss_between;
            let ms_within = ss_within / (n - 2.0);
            let f = if ms_within == 0.0 {
                if ms_between == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                ms_between / ms_within
            };
            (name.clone(), f)
        })
        .collect();
    Ok(sort_scores(scored, &ds.feature_names))
}

/// Frequency-style chi-square of each non-negative feature against the
/// class: per-class observed sums versus sums expected from the class
/// proportions.
pub fn chi2_scores(ds: &LabeledDataset) -> Result<Vec<(String, f64)>, ModelError> {
    let x = ds.imputed_features();
    let y = ds.labels();
    let n = y.len() as f64;
    let n_r = y.iter().filter(|&&t| t).count() as f64;
    let pi_r = n_r / n;
    let scored: Result<Vec<(String, f64)>, ModelError> = ds
        .feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let (mut obs_r, mut obs_h) = (0.0, 0.0);
            for (row, &robot) in x.iter().zip(&y) {
                if row[j] < 0.0 {
                    return Err(ModelError::NegativeFeature(name.clone()));
                }
                if robot {
                    obs_r += row[j];
                } else {
                    obs_h += row[j];
                }
            }
            let total = obs_r + obs_h;
            let exp_r = pi_r * total;
            let exp_h = (1.0 - pi_r) * total;
            let mut chi2 = 0.0;
            for (obs, exp) in [(obs_r, exp_r), (obs_h, exp_h)] {
                if exp > 0.0 {
                    chi2 += (obs - exp).powi(2) / exp;
                }
            }
            Ok((name.clone(), chi2))
        })
        .collect();
    Ok(sort_scores(scored?, &ds.feature_names))
}

/// Descending by score; ties keep the dataset's feature order.
fn sort_scores(mut scored: Vec<(String, f64)>, names: &[String]) -> Vec<(String, f64)> {
    let index = |name: &str| names.iter().position(|n| n == name).unwrap_or(usize::MAX);
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| index(&a.0).cmp(&index(&b.0)))
    });
    scored
}

pub fn render_scores(scores: &[(String, f64)]) -> String {
    let mut out = String::new();
    for (name, score) in scores {
        out.push_str(&format!("{name}\t{score}\n"));
    }
    out
}

// ---------------------------------------------------------------------------
// Learning curve

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub train_rows: usize,
    pub train_ba: f64,
    pub test_ba: f64,
}

/// Train on growing time-ordered prefixes of the training set and report
/// balanced accuracy on each prefix and on the fixed test set. Prefixes
/// containing a single class are skipped with a warning.
pub fn learning_curve(
    train: &LabeledDataset,
    test: &LabeledDataset,
    params: &GbdtParams,
    fractions: &[f64],
) -> Result<(Vec<CurvePoint>, Vec<String>), ModelError> {
    if train.rows.is_empty() || test.rows.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut sorted = train.clone();
    sorted.rows.sort_by_key(|r| r.start_timestamp);

    let mut points = Vec::new();
    let mut warnings = Vec::new();
    for &fraction in fractions {
        if !(fraction > 0.0 && fraction <= 1.0) {
            warnings.push(format!("fraction {fraction} outside (0, 1]; skipped"));
            continue;
        }
        let count = ((fraction * sorted.rows.len() as f64).ceil() as usize)
            .clamp(1, sorted.rows.len());
        let subset = LabeledDataset {
            feature_names: sorted.feature_names.clone(),
            rows: sorted.rows[..count].to_vec(),
        };
        let model = match train_gbdt(&subset, params) {
            Ok(m) => m,
            Err(ModelError::SingleClassInput) | Err(ModelError::EmptyDataset) => {
                warnings.push(format!(
                    "fraction {fraction} ({count} rows) holds a single class; skipped"
                ));
                continue;
            }
            Err(e) => return Err(e),
        };
        let train_ba = evaluate(&model.predict_dataset(&subset)?, &subset.labels())?
            .balanced_accuracy;
        let test_ba = evaluate(&model.predict_dataset(test)?, &test.labels())?.balanced_accuracy;
        points.push(CurvePoint {
            fraction,
            train_rows: count,
            train_ba,
            test_ba,
        });
    }
    Ok((points, warnings))
}

pub fn default_fractions() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

// ---------------------------------------------------------------------------
// Logistic-regression baseline

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    pub feature_names: Vec<String>,
    /// Per-feature standardization applied before the linear map.
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRegParams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for LogRegParams {
    fn default() -> Self {
        LogRegParams {
            epochs: 300,
            learning_rate: 0.5,
            l2: 1e-4,
        }
    }
}

/// Full-batch gradient descent on standardized features.
pub fn train_logreg(
    train: &LabeledDataset,
    params: &LogRegParams,
) -> Result<LogRegModel, ModelError> {
    let x = train.imputed_features();
    let y = train.labels();
    if x.len() < 2 {
        return Err(ModelError::EmptyDataset);
    }
    let positives = y.iter().filter(|&&t| t).count();
    if positives == 0 || positives == y.len() {
        return Err(ModelError::SingleClassInput);
    }
    let n = x.len() as f64;
    let d = train.feature_names.len();

    let mut means = vec![0.0; d];
    for row in &x {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n;
    }
    let mut stds = vec![0.0; d];
    for row in &x {
        for (s, (v, m)) in stds.iter_mut().zip(row.iter().zip(&means)) {
            *s += (v - m).powi(2);
        }
    }
    for s in &mut stds {
        *s = (*s / n).sqrt();
        if *s < 1e-12 {
            *s = 1.0; // constant feature: leave it centered at zero
        }
    }

    let z: Vec<Vec<f64>> = x
        .iter()
        .map(|row| {
            row.iter()
                .zip(means.iter().zip(&stds))
                .map(|(v, (m, s))| (v - m) / s)
                .collect()
        })
        .collect();

    let mut weights = vec![0.0f64; d];
    let mut bias = 0.0f64;
    for _ in 0..params.epochs {
        let mut grad_w = vec![0.0f64; d];
        let mut grad_b = 0.0f64;
        for (row, &t) in z.iter().zip(&y) {
            let p = sigmoid(bias + row.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>());
            let err = p - (t as u8 as f64);
            for (g, v) in grad_w.iter_mut().zip(row) {
                *g += err * v;
            }
            grad_b += err;
        }
        for (w, g) in weights.iter_mut().zip(&grad_w) {
            *w -= params.learning_rate * (g / n + params.l2 * *w);
        }
        bias -= params.learning_rate * grad_b / n;
    }

    Ok(LogRegModel {
        feature_names: train.feature_names.clone(),
        means,
        stds,
        weights,
        bias,
    })
}

impl LogRegModel {
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, ModelError> {
        if x.len() != self.feature_names.len() {
            return Err(ModelError::DimensionMismatch {
                expected: self.feature_names.len(),
                found: x.len(),
            });
        }
        let z = x
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .zip(&self.weights)
            .map(|((v, (m, s)), w)| w * (v - m) / s)
            .sum::<f64>()
            + self.bias;
        Ok(sigmoid(z))
    }

    pub fn predict_label(&self, x: &[f64]) -> Result<bool, ModelError> {
        Ok(self.predict_proba(x)? >= 0.5)
    }

    pub fn predict_dataset(&self, ds: &LabeledDataset) -> Result<Vec<bool>, ModelError> {
        ds.rows
            .iter()
            .map(|r| self.predict_label(&imputed_row(r)))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Model persistence

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("model I/O: {0}")]
    Io(#[from] io::Error),
    #[error("model file line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Write the ensemble in the versioned text layout (see README).
pub fn save_gbdt<W: Write>(model: &GBDTModel, mut w: W) -> Result<(), ModelIoError> {
    writeln!(w, "botsense-gbdt v1")?;
    writeln!(w, "learning_rate {}", model.params.learning_rate)?;
    writeln!(w, "base_score {}", model.base_score)?;
    writeln!(w, "n_trees {}", model.trees.len())?;
    writeln!(w, "max_depth {}", model.params.max_depth)?;
    writeln!(w, "min_leaf {}", model.params.min_leaf)?;
    writeln!(w, "seed {}", model.params.seed)?;
    writeln!(w, "features {}", model.feature_names.len())?;
    for name in &model.feature_names {
        writeln!(w, "{name}")?;
    }
    for (i, tree) in model.trees.iter().enumerate() {
        writeln!(w, "tree {i} {}", tree.nodes.len())?;
        for node in &tree.nodes {
            match node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => writeln!(w, "split {feature} {threshold} {left} {right}")?,
                Node::Leaf { value } => writeln!(w, "leaf {value}")?,
            }
        }
    }
    Ok(())
}

pub fn load_gbdt<R: BufRead>(reader: R) -> Result<GBDTModel, ModelIoError> {
    let mut lines = reader.lines().enumerate();
    let mut next = || -> Result<(usize, String), ModelIoError> {
        match lines.next() {
            Some((idx, Ok(line))) => Ok((idx + 1, line)),
            Some((_, Err(e))) => Err(ModelIoError::Io(e)),
            None => Err(ModelIoError::Parse {
                line: 0,
                reason: "unexpected end of file".into(),
            }),
        }
    };

    let (line_no, header) = next()?;
    if header != "botsense-gbdt v1" {
        return Err(ModelIoError::Parse {
            line: line_no,
            reason: format!("unrecognized header {header:?}"),
        });
    }

    fn field<T: std::str::FromStr>(pair: (usize, String), name: &str) -> Result<T, ModelIoError> {
        let (line, text) = pair;
        let value = text
            .strip_prefix(name)
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| ModelIoError::Parse {
                line,
                reason: format!("expected `{name} <value>`"),
            })?;
        value.parse().map_err(|_| ModelIoError::Parse {
            line,
            reason: format!("invalid {name} value {value:?}"),
        })
    }

    let learning_rate: f64 = field(next()?, "learning_rate")?;
    let base_score: f64 = field(next()?, "base_score")?;
    let n_trees: usize = field(next()?, "n_trees")?;
    let max_depth: usize = field(next()?, "max_depth")?;
    let min_leaf: usize = field(next()?, "min_leaf")?;
    let seed: u64 = field(next()?, "seed")?;
    let n_features: usize = field(next()?, "features")?;

    let mut feature_names = Vec::with_capacity(n_features);
    for _ in 0..n_features {
        feature_names.push(next()?.1);
    }

    let mut trees = Vec::with_capacity(n_trees);
    for expect in 0..n_trees {
        let (line_no, head) = next()?;
        let parts: Vec<&str> = head.split(' ').collect();
        let ok = parts.len() == 3 && parts[0] == "tree" && parts[1] == expect.to_string();
        let node_count: usize = if ok {
            parts[2].parse().map_err(|_| ModelIoError::Parse {
                line: line_no,
                reason: "invalid node count".into(),
            })?
        } else {
            return Err(ModelIoError::Parse {
                line: line_no,
                reason: format!("expected `tree {expect} <nodes>`"),
            });
        };
        let mut nodes = Vec::with_capacity(node_count);
        for _ in 0..node_count {
            let (line_no, text) = next()?;
            let parts: Vec<&str> = text.split(' ').collect();
            let node = match parts.as_slice() {
                ["split", f, t, l, r] => {
                    let feature: usize = f.parse().map_err(|_| bad_node(line_no))?;
                    if feature >= n_features {
                        return Err(ModelIoError::Parse {
                            line: line_no,
                            reason: format!("feature index {feature} out of range"),
                        });
                    }
                    Node::Split {
                        feature,
                        threshold: t.parse().map_err(|_| bad_node(line_no))?,
                        left: l.parse().map_err(|_| bad_node(line_no))?,
                        right: r.parse().map_err(|_| bad_node(line_no))?,
                    }
                }
                ["leaf", v] => Node::Leaf {
                    value: v.parse().map_err(|_| bad_node(line_no))?,
                },
                _ => return Err(bad_node(line_no)),
            };
            nodes.push(node);
        }
        for node in &nodes {
            if let Node::Split { left, right, .. } = node {
                if *left >= nodes.len() || *right >= nodes.len() {
                    return Err(ModelIoError::Parse {
                        line: 0,
                        reason: "child index out of range".into(),
                    });
                }
            }
        }
        trees.push(RegressionTree { nodes });
    }

    Ok(GBDTModel {
        params: GbdtParams {
            n_trees,
            max_depth,
            learning_rate,
            min_leaf,
            seed,
        },
        base_score,
        trees,
        feature_names,
    })
}

fn bad_node(line: usize) -> ModelIoError {
    ModelIoError::Parse {
        line,
        reason: "expected `split <feature> <threshold> <left> <right>` or `leaf <value>`".into(),
    }
}

/// Write the logistic-regression baseline in the same text style as the GBDT.
pub fn save_logreg<W: Write>(model: &LogRegModel, mut w: W) -> Result<(), ModelIoError> {
    let join = |v: &[f64]| {
        v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
    };
    writeln!(w, "botsense-logreg v1")?;
    writeln!(w, "features {}", model.feature_names.len())?;
    for name in &model.feature_names {
        writeln!(w, "{name}")?;
    }
    writeln!(w, "means {}", join(&model.means))?;
    writeln!(w, "stds {}", join(&model.stds))?;
    writeln!(w, "weights {}", join(&model.weights))?;
    writeln!(w, "bias {}", model.bias)?;
    Ok(())
}

pub fn load_logreg<R: BufRead>(reader: R) -> Result<LogRegModel, ModelIoError> {
    let mut lines = reader.lines().enumerate();
    let mut next = || -> Result<(usize, String), ModelIoError> {
        match lines.next() {
            Some((idx, Ok(line))) => Ok((idx + 1, line)),
            Some((_, Err(e))) => Err(ModelIoError::Io(e)),
            None => Err(ModelIoError::Parse {
                line: 0,
                reason: "unexpected end of file".into(),
            }),
        }
    };

    let (line_no, header) = next()?;
    if header != "botsense-logreg v1" {
        return Err(ModelIoError::Parse {
            line: line_no,
            reason: format!("unrecognized header {header:?}"),
        });
    }

    let (line_no, text) = next()?;
    let n_features: usize = text
        .strip_prefix("features ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| ModelIoError::Parse {
            line: line_no,
            reason: "expected `features <count>`".into(),
        })?;
    let mut feature_names = Vec::with_capacity(n_features);
    for _ in 0..n_features {
        feature_names.push(next()?.1);
    }

    let mut vector = |name: &str| -> Result<Vec<f64>, ModelIoError> {
        let (line_no, text) = next()?;
        let rest = text.strip_prefix(name).and_then(|r| r.strip_prefix(' ')).ok_or_else(|| {
            ModelIoError::Parse {
                line: line_no,
                reason: format!("expected `{name} <values>`"),
            }
        })?;
        let values: Vec<f64> = rest
            .split(' ')
            .map(|v| v.parse())
            .collect::<Result<_, _>>()
            .map_err(|_| ModelIoError::Parse {
                line: line_no,
                reason: format!("invalid {name} values"),
            })?;
        if values.len() != n_features {
            return Err(ModelIoError::Parse {
                line: line_no,
                reason: format!("{name} has {} values, expected {n_features}", values.len()),
            });
        }
        Ok(values)
    };

    let means = vector("means")?;
    let stds = vector("stds")?;
    let weights = vector("weights")?;
    let (line_no, text) = next()?;
    let bias: f64 = text
        .strip_prefix("bias ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| ModelIoError::Parse {
            line: line_no,
            reason: "expected `bias <value>`".into(),
        })?;

    Ok(LogRegModel {
        feature_names,
        means,
        stds,
        weights,
        bias,
    })
}
