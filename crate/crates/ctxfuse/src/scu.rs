//! Scene-context update: rescales each detection's candidate scores by the
//! object–scene co-occurrence and picks the label maximizing
//! `P(o|bb) * P(o|s)` over the retained candidates.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BoundingBox, Candidate, DetectionRecord, ObjectLabel, SceneLabel};
use crate::scene::ScenePrediction;
use crate::stats::CooccurrenceTable;

#[derive(Debug, Error)]
pub enum ScuError {
    #[error("scene {0:?} is not in the co-occurrence table")]
    UnknownScene(String),
    #[error("candidate label {0:?} is not in the co-occurrence table")]
    UnknownCandidate(String),
    #[error("detection for {image_id:?}: every candidate scored below the floor {floor}")]
    AllBelowFloor { image_id: String, floor: f64 },
    #[error("score floor must be non-negative and finite, got {0}")]
    InvalidFloor(f64),
    #[error("smoothing must be non-negative and finite, got {0}")]
    InvalidSmoothing(f64),
    #[error("no scene prediction for image {0:?}")]
    MissingScenePrediction(String),
}

#[derive(Debug, Clone, Copy)]
pub struct ScuOptions {
    /// Candidates scoring below this are dropped before the update.
    pub score_floor: f64,
    /// Laplace smoothing weight for `P(o|s)`; 0 keeps exact zeros.
    pub smoothing: f64,
}

impl Default for ScuOptions {
    fn default() -> Self {
        ScuOptions {
            score_floor: 1e-6,
            smoothing: 0.0,
        }
    }
}

impl ScuOptions {
    fn validate(&self) -> Result<(), ScuError> {
        if !self.score_floor.is_finite() || self.score_floor < 0.0 {
            return Err(ScuError::InvalidFloor(self.score_floor));
        }
        if !self.smoothing.is_finite() || self.smoothing < 0.0 {
            return Err(ScuError::InvalidSmoothing(self.smoothing));
        }
        Ok(())
    }
}

/// Outcome of rescoring one detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionResult {
    pub image_id: String,
    pub bbox: BoundingBox,
    pub original_label: ObjectLabel,
    pub original_score: f64,
    pub final_label: ObjectLabel,
    pub final_score: f64,
    pub fallback_used: bool,
    /// Raw `P(o|bb) * P(o|s)` per retained candidate, kept for audit.
    pub per_candidate_products: Vec<CandidateProduct>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateProduct {
    pub label: ObjectLabel,
    pub product: f64,
}

/// Index of the largest product, ties broken by ascending label. Returns
/// `None` when every product is zero. This is the literal argmax of the
/// update rule, shared by the batch path and the exhaustive oracle.
pub fn product_argmax(entries: &[(ObjectLabel, f64)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (label, product)) in entries.iter().enumerate() {
        if *product <= 0.0 {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let (b_label, b_product) = &entries[b];
                if *product > *b_product || (*product == *b_product && label < b_label) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

fn smoothed_prior(
    table: &CooccurrenceTable,
    object: usize,
    scene: usize,
    smoothing: f64,
) -> f64 {
    if smoothing == 0.0 {
        return table.cond(object, scene);
    }
    let count = table.pair_count(object, scene) as f64;
    let total = table.per_scene_detections()[scene] as f64;
    (count + smoothing) / (total + smoothing * table.objects().len() as f64)
}

/// Rescores one detection against the scene's co-occurrence column.
///
/// Candidates below the score floor are dropped. When every retained
/// product is zero the detector's original argmax is returned with
/// `fallback_used` set, so scene context never makes the result worse on
/// detections it cannot rank.
pub fn scu_update(
    detection: &DetectionRecord,
    scene: &SceneLabel,
    table: &CooccurrenceTable,
    options: &ScuOptions,
) -> Result<FusionResult, ScuError> {
    options.validate()?;
    let scene_idx = table
        .scene_index(scene)
        .ok_or_else(|| ScuError::UnknownScene(scene.as_str().to_owned()))?;

    let original = detection.top();
    let mut entries: Vec<(ObjectLabel, f64)> = Vec::with_capacity(detection.candidates.len());
    let mut retained_scores: Vec<f64> = Vec::with_capacity(detection.candidates.len());
    for cand in &detection.candidates {
        let obj_idx = table
            .object_index(&cand.label)
            .ok_or_else(|| ScuError::UnknownCandidate(cand.label.as_str().to_owned()))?;
        if cand.score < options.score_floor {
            continue;
        }
        let prior = smoothed_prior(table, obj_idx, scene_idx, options.smoothing);
        entries.push((cand.label.clone(), cand.score * prior));
        retained_scores.push(cand.score);
    }
    if entries.is_empty() {
        return Err(ScuError::AllBelowFloor {
            image_id: detection.image_id.clone(),
            floor: options.score_floor,
        });
    }

    let result = match product_argmax(&entries) {
        Some(winner) => {
            let total: f64 = entries.iter().map(|(_, p)| p).sum();
            FusionResult {
                image_id: detection.image_id.clone(),
                bbox: detection.bbox,
                original_label: original.label.clone(),
                original_score: original.score,
                final_label: entries[winner].0.clone(),
                final_score: entries[winner].1 / total,
                fallback_used: false,
                per_candidate_products: to_products(entries),
            }
        }
        None => FusionResult {
            image_id: detection.image_id.clone(),
            bbox: detection.bbox,
            original_label: original.label.clone(),
            original_score: original.score,
            final_label: original.label.clone(),
            final_score: original.score,
            fallback_used: true,
            per_candidate_products: to_products(entries),
        },
    };
    Ok(result)
}

fn to_products(entries: Vec<(ObjectLabel, f64)>) -> Vec<CandidateProduct> {
    entries
        .into_iter()
        .map(|(label, product)| CandidateProduct { label, product })
        .collect()
}

/// Per-batch counters reported next to the rescored detections.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScuSummary {
    pub total: usize,
    pub changed: usize,
    pub fallback: usize,
}

/// Applies [`scu_update`] to every detection, looking up each image's scene
/// prediction. Output order equals input order.
pub fn scu_update_batch(
    detections: &[DetectionRecord],
    scene_predictions: &[ScenePrediction],
    table: &CooccurrenceTable,
    options: &ScuOptions,
) -> Result<(Vec<FusionResult>, ScuSummary), ScuError> {
    options.validate()?;
    let by_image: BTreeMap<&str, &SceneLabel> = scene_predictions
        .iter()
        .map(|p| (p.image_id.as_str(), &p.scene))
        .collect();
    for det in detections {
        if !by_image.contains_key(det.image_id.as_str()) {
            return Err(ScuError::MissingScenePrediction(det.image_id.clone()));
        }
    }
    let results: Vec<FusionResult> = detections
        .par_iter()
        .map(|det| scu_update(det, by_image[det.image_id.as_str()], table, options))
        .collect::<Result<_, _>>()?;
    let summary = ScuSummary {
        total: results.len(),
        changed: results
            .iter()
            .filter(|r| r.final_label != r.original_label)
            .count(),
        fallback: results.iter().filter(|r| r.fallback_used).count(),
    };
    Ok((results, summary))
}

/// Converts fusion results back into detection records carrying the single
/// final label, for downstream evaluation.
pub fn results_to_detections(results: &[FusionResult], source: Option<&str>) -> Vec<DetectionRecord> {
    results
        .iter()
        .map(|r| DetectionRecord {
            image_id: r.image_id.clone(),
            bbox: r.bbox,
            source: source.map(str::to_owned),
            candidates: vec![Candidate {
                label: r.final_label.clone(),
                score: r.final_score,
            }],
        })
        .collect()
}
