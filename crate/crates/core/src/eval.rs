//! Erasure metrics: AUC-based similarity for multi-attribute tasks,
//! confusion-matrix distances for multinomial tasks, parameter distances,
//! per-split reports and the ε sweep.
//!
//! The three normalized ratios (`γ`, `δ` and the parameter distance) return
//! `0.5` when both of their distance terms are zero.

use std::collections::HashSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::erasure::{ssse_update, ErasureRequest, GradientSource};
use crate::error::{Error, Result};
use crate::fisher::InverseFisher;
use crate::models::{
    full_gradient, predict_proba, sample_nll, sample_proba, Dataset, LabelRef, LossConfig,
    ModelParams, TaskKind,
};
use crate::scalar::{distance, norm2, Scalar};

/// The four id sets used by the metrics: `D\S`, `S`, `T\T_a` and `T_a`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSet {
    lko_train: Vec<u64>,
    removed: Vec<u64>,
    lko_test: Vec<u64>,
    removed_test: Vec<u64>,
}

impl SplitSet {
    /// Ids are stored sorted. The sets must be pairwise disjoint and `removed`
    /// non-empty.
    pub fn new(
        lko_train: Vec<u64>,
        removed: Vec<u64>,
        lko_test: Vec<u64>,
        removed_test: Vec<u64>,
    ) -> Result<Self> {
        if removed.is_empty() {
            return Err(Error::invalid("removed set is empty"));
        }
        let mut seen = HashSet::new();
        for (name, set) in [
            ("lko_train", &lko_train),
            ("removed", &removed),
            ("lko_test", &lko_test),
            ("removed_test", &removed_test),
        ] {
            for id in set {
                if !seen.insert(*id) {
                    return Err(Error::invalid(format!(
                        "sample id {id} appears twice (second time in {name})"
                    )));
                }
            }
        }
        let sorted = |mut v: Vec<u64>| {
            v.sort_unstable();
            v
        };
        Ok(Self {
            lko_train: sorted(lko_train),
            removed: sorted(removed),
            lko_test: sorted(lko_test),
            removed_test: sorted(removed_test),
        })
    }

    pub fn lko_train(&self) -> &[u64] {
        &self.lko_train
    }

    pub fn removed(&self) -> &[u64] {
        &self.removed
    }

    pub fn lko_test(&self) -> &[u64] {
        &self.lko_test
    }

    pub fn removed_test(&self) -> &[u64] {
        &self.removed_test
    }
}

/// `a / (a + b)`, or `0.5` when both are zero.
fn tie_ratio(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.5
    } else {
        a / (a + b)
    }
}

/// ROC AUC as the Mann-Whitney statistic: the share of (positive, negative)
/// pairs ranked correctly, ties counting one half. Returns `0` when the
/// labels hold only one class.
pub fn roc_auc<T: Scalar>(scores: &[T], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::invalid(format!("AUC label {bad} is not 0 or 1")));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Ok(0.0);
    }
    let mut order: Vec<(f64, u8)> = scores
        .iter()
        .zip(labels)
        .map(|(s, &y)| (s.as_f64(), y))
        .collect();
    if order.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::numeric("NaN score in AUC input", None));
    }
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    // sum of mid-ranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && order[j].0 == order[i].0 {
            j += 1;
        }
        let mid = (i + j + 1) as f64 / 2.0;
        let tied_pos = order[i..j].iter().filter(|(_, y)| *y == 1).count();
        rank_sum += mid * tied_pos as f64;
        i = j;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

fn require_task<T: Scalar>(
    params: &ModelParams<T>,
    samples: &Dataset<T>,
    want: TaskKind,
) -> Result<()> {
    params.shape().check_dataset(samples)?;
    if samples.task_kind() != want {
        return Err(Error::invalid(format!(
            "metric needs a {want:?} task, got {:?}",
            samples.task_kind()
        )));
    }
    Ok(())
}

/// One AUC per attribute, scoring each sample by its predicted probability.
pub fn attribute_aucs<T: Scalar>(params: &ModelParams<T>, samples: &Dataset<T>) -> Result<Vec<f64>> {
    require_task(params, samples, TaskKind::MultiAttribute)?;
    let probs = predict_proba(params, samples.features())?;
    let outputs = samples.labels().outputs();
    (0..outputs)
        .map(|a| {
            let scores: Vec<T> = (0..samples.len()).map(|i| probs[(i, a)]).collect();
            let labels: Vec<u8> = (0..samples.len())
                .map(|i| match samples.label(i) {
                    LabelRef::Binary(ys) => ys[a],
                    LabelRef::Class(_) => unreachable!("task checked above"),
                })
                .collect();
            roc_auc(&scores, &labels)
        })
        .collect()
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `Σ_a |AUC_a(θ₁) - AUC_a(θ₂)|` on `samples`.
pub fn performance_similarity<T: Scalar>(
    theta1: &ModelParams<T>,
    theta2: &ModelParams<T>,
    samples: &Dataset<T>,
) -> Result<f64> {
    Ok(l1(
        &attribute_aucs(theta1, samples)?,
        &attribute_aucs(theta2, samples)?,
    ))
}

/// `γ = D(θ̂, θ⋆) / (D(θ̂, θ⋆) + D(θ̂, θ_retrain))` on the removed samples;
/// `1` means θ̂ behaves like the retrained model.
pub fn similarity_ratio<T: Scalar>(
    theta_hat: &ModelParams<T>,
    theta_star: &ModelParams<T>,
    theta_retrain: &ModelParams<T>,
    removed: &Dataset<T>,
) -> Result<f64> {
    let hat = attribute_aucs(theta_hat, removed)?;
    let star = attribute_aucs(theta_star, removed)?;
    let retrain = attribute_aucs(theta_retrain, removed)?;
    Ok(tie_ratio(l1(&hat, &star), l1(&hat, &retrain)))
}

/// Square count matrix; entry `(i, j)` counts samples of class `i`
/// predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_predictions(classes: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::invalid("truth and predictions differ in length"));
        }
        let mut counts = vec![0u64; classes * classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(Error::invalid(format!(
                    "class index out of range for {classes} classes"
                )));
            }
            counts[t * classes + p] += 1;
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    /// Entrywise ℓ1 distance.
    pub fn l1_distance(&self, other: &Self) -> Result<u64> {
        if self.classes != other.classes {
            return Err(Error::invalid("confusion matrices of different sizes"));
        }
        Ok(self
            .counts
            .iter()
            .zip(&other.counts)
            .map(|(a, b)| a.abs_diff(*b))
            .sum())
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Predicted class per sample.
pub fn predict_classes<T: Scalar>(params: &ModelParams<T>, samples: &Dataset<T>) -> Result<Vec<usize>> {
    require_task(params, samples, TaskKind::Multinomial)?;
    let probs = predict_proba(params, samples.features())?;
    Ok((0..samples.len()).map(|i| argmax(probs.row(i))).collect())
}

pub fn confusion_matrix<T: Scalar>(
    params: &ModelParams<T>,
    samples: &Dataset<T>,
) -> Result<ConfusionMatrix> {
    let predicted = predict_classes(params, samples)?;
    let truth: Vec<usize> = (0..samples.len())
        .map(|i| match samples.label(i) {
            LabelRef::Class(c) => c,
            LabelRef::Binary(_) => unreachable!("task checked above"),
        })
        .collect();
    ConfusionMatrix::from_predictions(samples.labels().outputs(), &truth, &predicted)
}

/// `Σ_ij |m_ij(θ₁) - m_ij(θ₂)|` on `samples`.
pub fn confusion_distance<T: Scalar>(
    theta1: &ModelParams<T>,
    theta2: &ModelParams<T>,
    samples: &Dataset<T>,
) -> Result<u64> {
    confusion_matrix(theta1, samples)?.l1_distance(&confusion_matrix(theta2, samples)?)
}

/// `δ = S(θ̂, θ_retrain) / (S(θ̂, θ⋆) + S(θ̂, θ_retrain))` on the removed
/// samples; `0` means θ̂ behaves like the retrained model.
pub fn normalized_confusion_distance<T: Scalar>(
    theta_hat: &ModelParams<T>,
    theta_star: &ModelParams<T>,
    theta_retrain: &ModelParams<T>,
    removed: &Dataset<T>,
) -> Result<f64> {
    let hat = confusion_matrix(theta_hat, removed)?;
    let to_star = hat.l1_distance(&confusion_matrix(theta_star, removed)?)?;
    let to_retrain = hat.l1_distance(&confusion_matrix(theta_retrain, removed)?)?;
    Ok(tie_ratio(to_retrain as f64, to_star as f64))
}

fn check_same_shape<T: Scalar>(a: &ModelParams<T>, b: &ModelParams<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "models have different shapes: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `‖θ̂ - θ_retrain‖ / (‖θ̂ - θ⋆‖ + ‖θ̂ - θ_retrain‖)`.
pub fn normalized_param_distance<T: Scalar>(
    theta_hat: &ModelParams<T>,
    theta_star: &ModelParams<T>,
    theta_retrain: &ModelParams<T>,
) -> Result<f64> {
    check_same_shape(theta_hat, theta_star)?;
    check_same_shape(theta_hat, theta_retrain)?;
    let to_retrain = distance(theta_hat.values(), theta_retrain.values()).as_f64();
    let to_star = distance(theta_hat.values(), theta_star.values()).as_f64();
    Ok(tie_ratio(to_retrain, to_star))
}

/// Share of correct predictions. For multi-attribute tasks every
/// (sample, attribute) pair counts once, predicting positive at `p ≥ 0.5`.
pub fn accuracy<T: Scalar>(params: &ModelParams<T>, samples: &Dataset<T>) -> Result<f64> {
    params.shape().check_dataset(samples)?;
    let half = T::of_f64(0.5);
    let mut correct = 0usize;
    let mut total = 0usize;
    for i in 0..samples.len() {
        let p = sample_proba(params, samples.x(i));
        match samples.label(i) {
            LabelRef::Class(c) => {
                correct += usize::from(argmax(&p) == c);
                total += 1;
            }
            LabelRef::Binary(ys) => {
                for (pa, &y) in p.iter().zip(ys) {
                    correct += usize::from((*pa >= half) == (y == 1));
                    total += 1;
                }
            }
        }
    }
    Ok(correct as f64 / total as f64)
}

fn mean_nll<T: Scalar>(params: &ModelParams<T>, samples: &Dataset<T>) -> f64 {
    let total: f64 = (0..samples.len())
        .map(|i| sample_nll(params, samples.x(i), samples.label(i)).as_f64())
        .sum();
    total / samples.len() as f64
}

/// A square grid over a rectangle of the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    /// Points per axis, at least 2.
    pub resolution: usize,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo < hi;
        if !ok(self.x_range) || !ok(self.y_range) || self.resolution < 2 {
            return Err(Error::invalid(format!("bad grid {self:?}")));
        }
        Ok(())
    }

    /// Row-major points, `y` outer and `x` inner.
    pub fn points(&self) -> Vec<[f64; 2]> {
        let step = |(lo, hi): (f64, f64), k: usize| {
            lo + (hi - lo) * k as f64 / (self.resolution - 1) as f64
        };
        let mut out = Vec::with_capacity(self.resolution * self.resolution);
        for j in 0..self.resolution {
            for i in 0..self.resolution {
                out.push([step(self.x_range, i), step(self.y_range, j)]);
            }
        }
        out
    }
}

/// Predicted label at `x`: the class index for multinomial models and a bit
/// mask of attributes with `p ≥ 0.5` otherwise.
pub fn decision<T: Scalar>(params: &ModelParams<T>, x: &[T]) -> Vec<usize> {
    let p = sample_proba(params, x);
    match params.shape().task_kind() {
        TaskKind::Multinomial => vec![argmax(&p)],
        TaskKind::MultiAttribute => {
            let half = T::of_f64(0.5);
            p.iter().map(|v| usize::from(*v >= half)).collect()
        }
    }
}

/// Fraction of grid points where the two models predict differently.
pub fn boundary_disagreement<T: Scalar>(
    theta_a: &ModelParams<T>,
    theta_b: &ModelParams<T>,
    grid: &GridSpec,
) -> Result<f64> {
    check_same_shape(theta_a, theta_b)?;
    if theta_a.shape().input_dim() != 2 {
        return Err(Error::invalid("boundary grids need two input features"));
    }
    grid.validate()?;
    let points = grid.points();
    let differ = points
        .iter()
        .filter(|p| {
            let x = [T::of_f64(p[0]), T::of_f64(p[1])];
            decision(theta_a, &x) != decision(theta_b, &x)
        })
        .count();
    Ok(differ as f64 / points.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitMetrics {
    pub samples: usize,
    pub accuracy: f64,
    /// Mean negative log-likelihood, without the L2 term.
    pub loss: f64,
}

/// Metrics of one candidate model. Splits without samples are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub epsilon: f64,
    pub lko_train: SplitMetrics,
    pub removed: SplitMetrics,
    pub lko_test: Option<SplitMetrics>,
    pub removed_test: Option<SplitMetrics>,
    /// Per-attribute AUC on the whole test set (multi-attribute tasks).
    pub auc_per_attribute: Option<Vec<f64>>,
    /// Confusion matrix on the removed samples (multinomial tasks).
    pub confusion_removed: Option<ConfusionMatrix>,
    /// Confusion matrix on the removed test samples (multinomial tasks).
    pub confusion_removed_test: Option<ConfusionMatrix>,
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
    pub param_dist_normalized: f64,
    /// Norm of the regularized objective's gradient on `D\S`.
    pub grad_norm_lko: f64,
}

/// Datasets and reference models shared by every evaluation of one removal.
#[derive(Debug, Clone)]
pub struct Evaluator<T> {
    train: Dataset<T>,
    splits: SplitSet,
    loss: LossConfig<T>,
    theta_star: ModelParams<T>,
    theta_retrain: ModelParams<T>,
    lko_train: Dataset<T>,
    removed: Dataset<T>,
    lko_test: Option<Dataset<T>>,
    removed_test: Option<Dataset<T>>,
    test: Dataset<T>,
}

impl<T: Scalar> Evaluator<T> {
    pub fn new(
        train: &Dataset<T>,
        test: &Dataset<T>,
        splits: &SplitSet,
        loss: &LossConfig<T>,
        theta_star: &ModelParams<T>,
        theta_retrain: &ModelParams<T>,
    ) -> Result<Self> {
        check_same_shape(theta_star, theta_retrain)?;
        theta_star.shape().check_dataset(train)?;
        theta_star.shape().check_dataset(test)?;
        let optional = |ids: &[u64]| -> Result<Option<Dataset<T>>> {
            if ids.is_empty() {
                Ok(None)
            } else {
                test.select_ids(ids).map(Some)
            }
        };
        Ok(Self {
            train: train.clone(),
            splits: splits.clone(),
            loss: *loss,
            theta_star: theta_star.clone(),
            theta_retrain: theta_retrain.clone(),
            lko_train: train.select_ids(splits.lko_train())?,
            removed: train.select_ids(splits.removed())?,
            lko_test: optional(splits.lko_test())?,
            removed_test: optional(splits.removed_test())?,
            test: test.clone(),
        })
    }

    pub fn train(&self) -> &Dataset<T> {
        &self.train
    }

    pub fn splits(&self) -> &SplitSet {
        &self.splits
    }

    pub fn loss_config(&self) -> &LossConfig<T> {
        &self.loss
    }

    pub fn theta_star(&self) -> &ModelParams<T> {
        &self.theta_star
    }

    pub fn theta_retrain(&self) -> &ModelParams<T> {
        &self.theta_retrain
    }

    pub fn task_kind(&self) -> TaskKind {
        self.train.task_kind()
    }

    /// Full report for `theta_hat`, tagged with `epsilon`.
    pub fn evaluate(&self, theta_hat: &ModelParams<T>, epsilon: f64) -> Result<EvalReport> {
        check_same_shape(theta_hat, &self.theta_star)?;
        let split = |ds: &Dataset<T>| -> Result<SplitMetrics> {
            Ok(SplitMetrics {
                samples: ds.len(),
                accuracy: accuracy(theta_hat, ds)?,
                loss: mean_nll(theta_hat, ds),
            })
        };
        let lko_test = self.lko_test.as_ref().map(split).transpose()?;
        let removed_test = self.removed_test.as_ref().map(split).transpose()?;
        let grad = full_gradient(theta_hat, &self.lko_train, &self.loss)?;
        let mut report = EvalReport {
            epsilon,
            lko_train: split(&self.lko_train)?,
            removed: split(&self.removed)?,
            lko_test,
            removed_test,
            auc_per_attribute: None,
            confusion_removed: None,
            confusion_removed_test: None,
            gamma: None,
            delta: None,
            param_dist_normalized: normalized_param_distance(
                theta_hat,
                &self.theta_star,
                &self.theta_retrain,
            )?,
            grad_norm_lko: norm2(&grad).as_f64(),
        };
        match self.task_kind() {
            TaskKind::MultiAttribute => {
                report.auc_per_attribute = Some(attribute_aucs(theta_hat, &self.test)?);
                report.gamma = Some(similarity_ratio(
                    theta_hat,
                    &self.theta_star,
                    &self.theta_retrain,
                    &self.removed,
                )?);
            }
            TaskKind::Multinomial => {
                report.confusion_removed = Some(confusion_matrix(theta_hat, &self.removed)?);
                report.confusion_removed_test = self
                    .removed_test
                    .as_ref()
                    .map(|ds| confusion_matrix(theta_hat, ds))
                    .transpose()?;
                report.delta = Some(normalized_confusion_distance(
                    theta_hat,
                    &self.theta_star,
                    &self.theta_retrain,
                    &self.removed,
                )?);
            }
        }
        Ok(report)
    }
}

/// How the sweep picks its ε.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Largest `γ` (multi-attribute tasks).
    MaxGamma,
    /// Smallest `δ` (multinomial tasks).
    MinDelta,
}

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Self::MaxGamma => "max_gamma",
            Self::MinDelta => "min_delta",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "max_gamma" => Some(Self::MaxGamma),
            "min_delta" => Some(Self::MinDelta),
            _ => None,
        }
    }

    pub fn default_for(task: TaskKind) -> Self {
        match task {
            TaskKind::MultiAttribute => Self::MaxGamma,
            TaskKind::Multinomial => Self::MinDelta,
        }
    }

    fn check(self, task: TaskKind) -> Result<()> {
        if Self::default_for(task) != self {
            return Err(Error::invalid(format!(
                "criterion {} does not apply to a {task:?} task",
                self.name()
            )));
        }
        Ok(())
    }

    /// Score where larger is better.
    fn score(self, report: &EvalReport) -> f64 {
        match self {
            Self::MaxGamma => report.gamma.unwrap_or(f64::NEG_INFINITY),
            Self::MinDelta => -report.delta.unwrap_or(f64::INFINITY),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub criterion: Criterion,
    pub best_epsilon: f64,
    pub best_index: usize,
    /// One report per grid point, in grid order.
    pub records: Vec<EvalReport>,
}

impl SweepResult {
    pub fn best(&self) -> &EvalReport {
        &self.records[self.best_index]
    }
}

/// Check that `grid` is non-empty, finite, non-negative and strictly
/// increasing.
pub fn validate_grid<T: Scalar>(grid: &[T]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("epsilon grid is empty"));
    }
    if grid.iter().any(|e| !e.is_finite() || *e < T::zero()) {
        return Err(Error::invalid("epsilon grid values must be finite and >= 0"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("epsilon grid must be strictly increasing"));
    }
    Ok(())
}

/// Index of the best report; ties go to the earliest (lowest ε).
pub fn select_best(criterion: Criterion, records: &[EvalReport]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in records.iter().enumerate() {
        let s = criterion.score(r);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Apply the SSSE update at every ε of `grid` and evaluate each result.
pub fn epsilon_sweep<T: Scalar>(
    evaluator: &Evaluator<T>,
    finv: &InverseFisher<T>,
    grid: &[T],
    criterion: Criterion,
    source: GradientSource,
) -> Result<SweepResult> {
    validate_grid(grid)?;
    criterion.check(evaluator.task_kind())?;
    let records = grid
        .par_iter()
        .map(|&eps| {
            let req = ErasureRequest {
                removed_ids: evaluator.splits().removed().to_vec(),
                epsilon: eps,
                gradient_source: source,
            };
            let theta = ssse_update(
                evaluator.theta_star(),
                finv,
                evaluator.train(),
                evaluator.loss_config(),
                &req,
            )?;
            evaluator.evaluate(&theta, eps.as_f64())
        })
        .collect::<Result<Vec<_>>>()?;
    let best_index = select_best(criterion, &records).expect("grid is non-empty");
    Ok(SweepResult {
        criterion,
        best_epsilon: records[best_index].epsilon,
        best_index,
        records,
    })
}

/// Pretty-printed JSON for a sweep.
pub fn sweep_json(sweep: &SweepResult) -> String {
    let mut s = serde_json::to_string_pretty(sweep).expect("reports serialize");
    s.push('\n');
    s
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const SWEEP_CSV_HEADER: &str = "epsilon,gamma,delta,param_dist,grad_norm_lko,\
acc_lko_train,acc_removed,acc_lko_test,acc_removed_test,\
loss_lko_train,loss_removed,loss_lko_test,loss_removed_test";

/// Flat CSV, one row per grid point.
pub fn sweep_csv(sweep: &SweepResult) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in &sweep.records {
        let acc = |m: &Option<SplitMetrics>| opt(m.as_ref().map(|m| m.accuracy));
        let loss = |m: &Option<SplitMetrics>| opt(m.as_ref().map(|m| m.loss));
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.epsilon,
            opt(r.gamma),
            opt(r.delta),
            r.param_dist_normalized,
            r.grad_norm_lko,
            r.lko_train.accuracy,
            r.removed.accuracy,
            acc(&r.lko_test),
            acc(&r.removed_test),
            r.lko_train.loss,
            r.removed.loss,
            loss(&r.lko_test),
            loss(&r.removed_test),
        );
    }
    out
}
