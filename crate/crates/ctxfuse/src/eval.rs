//! Prediction–ground-truth matching and report computation: per-class
//! precision/recall, scene-clustered confusion matrix, and PR curves.
//!
//! Matching is greedy and label-agnostic: predictions take ground-truth
//! boxes in descending score order, each claiming the highest-IoU unmatched
//! box at or above the threshold. Label correctness is scored afterwards,
//! so classification confusions stay separable from localization misses.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Dataset, DetectionRecord, ImageRecord, ObjectLabel, SceneLabel};
use crate::stats::{compute_cluster_key, SceneClusterKey, SplitFilter};

/// Confusion-matrix pseudo-class for unmatched predictions and unmatched
/// ground truth.
pub const BACKGROUND: &str = "background";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("IoU threshold must be in [0, 1], got {0}")]
    InvalidIouThreshold(f64),
    #[error("threshold list must not be empty")]
    EmptyThresholds,
    #[error("prediction references image {pred:?} but ground truth is {truth:?}")]
    ImageMismatch { pred: String, truth: String },
}

/// One-to-one pairing between predictions and ground-truth boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// (prediction index, ground-truth index, IoU), indices into the inputs.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_predictions: Vec<usize>,
    pub unmatched_ground_truth: Vec<usize>,
}

/// Greedy label-agnostic matching for one image.
pub fn match_image(
    predictions: &[DetectionRecord],
    truth: &ImageRecord,
    iou_threshold: f64,
) -> Result<MatchResult, EvalError> {
    if !(iou_threshold.is_finite() && (0.0..=1.0).contains(&iou_threshold)) {
        return Err(EvalError::InvalidIouThreshold(iou_threshold));
    }
    for pred in predictions {
        if pred.image_id != truth.image_id {
            return Err(EvalError::ImageMismatch {
                pred: pred.image_id.clone(),
                truth: truth.image_id.clone(),
            });
        }
    }

    // visit predictions by descending score; ties by ascending box coords
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| {
        let pa = &predictions[a];
        let pb = &predictions[b];
        pb.top()
            .score
            .total_cmp(&pa.top().score)
            .then_with(|| pa.bbox.coord_cmp(&pb.bbox))
            .then_with(|| pa.top().label.cmp(&pb.top().label))
    });

    let mut gt_taken = vec![false; truth.objects.len()];
    let mut pairs = Vec::new();
    let mut unmatched_predictions = Vec::new();
    for &p in &order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in truth.objects.iter().enumerate() {
            if gt_taken[g] {
                continue;
            }
            let iou = predictions[p].bbox.iou(&gt.bbox);
            if iou < iou_threshold || iou <= 0.0 {
                continue;
            }
            best = match best {
                None => Some((g, iou)),
                Some((bg, biou)) => {
                    if iou > biou
                        || (iou == biou
                            && truth.objects[g]
                                .bbox
                                .coord_cmp(&truth.objects[bg].bbox)
                                .is_lt())
                    {
                        Some((g, iou))
                    } else {
                        Some((bg, biou))
                    }
                }
            };
        }
        match best {
            Some((g, iou)) => {
                gt_taken[g] = true;
                pairs.push((p, g, iou));
            }
            None => unmatched_predictions.push(p),
        }
    }
    pairs.sort_by_key(|&(p, _, _)| p);
    unmatched_predictions.sort_unstable();
    let unmatched_ground_truth = gt_taken
        .iter()
        .enumerate()
        .filter(|(_, taken)| !**taken)
        .map(|(g, _)| g)
        .collect();
    Ok(MatchResult {
        pairs,
        unmatched_predictions,
        unmatched_ground_truth,
    })
}

/// Per-class tally and derived rates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
}

impl ClassMetrics {
    fn finish(mut self) -> Self {
        self.precision = rate(self.true_positives, self.true_positives + self.false_positives);
        self.recall = rate(self.true_positives, self.true_positives + self.false_negatives);
        self
    }
}

fn rate(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassEntry {
    pub label: ObjectLabel,
    #[serde(flatten)]
    pub metrics: ClassMetrics,
}

/// Confusion-axis group: objects assigned to one scene by the cluster key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionGroup {
    /// `None` groups unassigned objects (and the background pseudo-class).
    pub scene: Option<SceneLabel>,
    pub members: Vec<String>,
}

/// The full evaluation artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub per_class: Vec<PerClassEntry>,
    pub total_precision: f64,
    pub total_recall: f64,
    /// Row/column labels in cluster-key order, `background` last.
    pub confusion_labels: Vec<String>,
    /// Scene-group spans along the confusion axes, for rendering separators.
    pub confusion_groups: Vec<ConfusionGroup>,
    /// `confusion[true][pred]` raw counts over `confusion_labels`.
    pub confusion: Vec<Vec<u64>>,
    pub pr_curve: Vec<PrPoint>,
}

/// Everything score() needs for one image.
#[derive(Debug, Clone)]
pub struct ImageEval<'a> {
    pub truth: &'a ImageRecord,
    pub predictions: Vec<DetectionRecord>,
    pub matches: MatchResult,
}

/// Aggregates per-image match results into the report. Matched pairs with
/// equal labels are true positives; matched pairs with different labels add
/// a false positive to the predicted class and a false negative to the true
/// class; unmatched predictions and ground truths go against `background`.
/// Confusion axes follow the cluster key: objects grouped by argmax scene
/// likelihood, dataset order within each group, background last.
pub fn score(
    images: &[ImageEval<'_>],
    dataset: &Dataset,
    cluster_key: &SceneClusterKey,
    iou_threshold: f64,
) -> EvalReport {
    let order = cluster_key.clustered_object_order();
    let mut confusion_labels: Vec<String> =
        order.iter().map(|l| l.as_str().to_owned()).collect();
    confusion_labels.push(BACKGROUND.to_owned());
    let index_of: BTreeMap<&str, usize> = confusion_labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let background = confusion_labels.len() - 1;

    let mut per_class: BTreeMap<&str, ClassMetrics> = dataset
        .object_classes
        .iter()
        .map(|l| (l.as_str(), ClassMetrics::default()))
        .collect();
    let mut confusion = vec![vec![0u64; confusion_labels.len()]; confusion_labels.len()];

    for image in images {
        for &(p, g, _) in &image.matches.pairs {
            let pred_label = &image.predictions[p].top().label;
            let true_label = &image.truth.objects[g].label;
            confusion[index_of[true_label.as_str()]][index_of[pred_label.as_str()]] += 1;
            if pred_label == true_label {
                per_class.get_mut(true_label.as_str()).unwrap().true_positives += 1;
            } else {
                per_class.get_mut(pred_label.as_str()).unwrap().false_positives += 1;
                per_class.get_mut(true_label.as_str()).unwrap().false_negatives += 1;
            }
        }
        for &p in &image.matches.unmatched_predictions {
            let pred_label = &image.predictions[p].top().label;
            per_class.get_mut(pred_label.as_str()).unwrap().false_positives += 1;
            confusion[background][index_of[pred_label.as_str()]] += 1;
        }
        for &g in &image.matches.unmatched_ground_truth {
            let true_label = &image.truth.objects[g].label;
            per_class.get_mut(true_label.as_str()).unwrap().false_negatives += 1;
            confusion[index_of[true_label.as_str()]][background] += 1;
        }
    }

    let per_class: Vec<PerClassEntry> = dataset
        .object_classes
        .iter()
        .map(|label| PerClassEntry {
            label: label.clone(),
            metrics: per_class[label.as_str()].finish(),
        })
        .collect();
    let tp: usize = per_class.iter().map(|e| e.metrics.true_positives).sum();
    let fp: usize = per_class.iter().map(|e| e.metrics.false_positives).sum();
    let fn_total: usize = per_class.iter().map(|e| e.metrics.false_negatives).sum();

    let mut confusion_groups: Vec<ConfusionGroup> = cluster_key
        .clustered_groups()
        .into_iter()
        .map(|(scene, members)| ConfusionGroup {
            scene,
            members: members.iter().map(|l| l.as_str().to_owned()).collect(),
        })
        .collect();
    confusion_groups.push(ConfusionGroup {
        scene: None,
        members: vec![BACKGROUND.to_owned()],
    });

    EvalReport {
        iou_threshold,
        per_class,
        total_precision: rate(tp, tp + fp),
        total_recall: rate(tp, tp + fn_total),
        confusion_labels,
        confusion_groups,
        confusion,
        pr_curve: Vec::new(),
    }
}

/// Recomputes match-and-score at each threshold over the predictions whose
/// final score survives it. Recall is non-increasing along a descending
/// grid because greedy matching is prefix-stable in score order.
pub fn pr_curve(
    dataset: &Dataset,
    predictions_by_image: &BTreeMap<&str, Vec<DetectionRecord>>,
    split: SplitFilter,
    cluster_key: &SceneClusterKey,
    iou_threshold: f64,
    thresholds: &[f64],
) -> Result<Vec<PrPoint>, EvalError> {
    if thresholds.is_empty() {
        return Err(EvalError::EmptyThresholds);
    }
    thresholds
        .iter()
        .map(|&t| {
            let images = match_split(dataset, predictions_by_image, split, iou_threshold, Some(t))?;
            let report = score(&images, dataset, cluster_key, iou_threshold);
            Ok(PrPoint {
                threshold: t,
                precision: report.total_precision,
                recall: report.total_recall,
            })
        })
        .collect()
}

fn match_split<'a>(
    dataset: &'a Dataset,
    predictions_by_image: &BTreeMap<&str, Vec<DetectionRecord>>,
    split: SplitFilter,
    iou_threshold: f64,
    score_threshold: Option<f64>,
) -> Result<Vec<ImageEval<'a>>, EvalError> {
    let selected: Vec<&ImageRecord> = dataset
        .images
        .iter()
        .filter(|i| split.selects(i.split))
        .collect();
    selected
        .par_iter()
        .map(|image| {
            let mut predictions = predictions_by_image
                .get(image.image_id.as_str())
                .cloned()
                .unwrap_or_default();
            if let Some(t) = score_threshold {
                predictions.retain(|p| p.top().score >= t);
            }
            let matches = match_image(&predictions, image, iou_threshold)?;
            Ok(ImageEval {
                truth: image,
                predictions,
                matches,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub iou_threshold: f64,
    /// Split evaluated against; defaults to the test split.
    pub split: SplitFilter,
    /// Score thresholds for the PR curve, visited in the given order.
    pub pr_thresholds: Vec<f64>,
    /// Split the cluster key is computed from.
    pub cluster_split: SplitFilter,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            iou_threshold: 0.5,
            split: SplitFilter::Test,
            pr_thresholds: default_threshold_grid(),
            cluster_split: SplitFilter::Train,
        }
    }
}

/// Evenly spaced 20-point grid descending from 0.95 to 0.
pub fn default_threshold_grid() -> Vec<f64> {
    (0..20).map(|i| (19 - i) as f64 * 0.05).collect()
}

/// Full pipeline: group predictions by image, match the selected split,
/// score, and sweep the PR grid.
pub fn evaluate(
    dataset: &Dataset,
    predictions: &[DetectionRecord],
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let mut by_image: BTreeMap<&str, Vec<DetectionRecord>> = BTreeMap::new();
    for pred in predictions {
        by_image
            .entry(pred.image_id.as_str())
            .or_default()
            .push(pred.clone());
    }
    let cluster_key = compute_cluster_key(dataset, options.cluster_split);
    let images = match_split(dataset, &by_image, options.split, options.iou_threshold, None)?;
    let mut report = score(&images, dataset, &cluster_key, options.iou_threshold);
    report.pr_curve = pr_curve(
        dataset,
        &by_image,
        options.split,
        &cluster_key,
        options.iou_threshold,
        &options.pr_thresholds,
    )?;
    Ok(report)
}
