//! Seeded synthetic data: datasets, scene predictions, and detector outputs
//! drawn from a configurable generative model, plus an exhaustive oracle for
//! the update rule. Everything is a pure function of the config, so desk-
//! scale experiments are reproducible byte for byte.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{evaluate, EvalOptions, EvalReport};
use crate::io::{self, IoError};
use crate::mnf::{run_mnf, SceneNetRegistry};
use crate::model::{
    BoundingBox, Candidate, Dataset, DetectionRecord, GroundTruthObject, ImageRecord,
    ObjectLabel, SceneLabel, Split,
};
use crate::scene::{ScenePrediction, SceneProvider};
use crate::scu::{product_argmax, results_to_detections, scu_update_batch, ScuOptions};
use crate::stats::{compute_table, CooccurrenceTable, SplitFilter, StatsError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("mnf pipeline requires per-scene detector accuracies in the config")]
    MissingSceneAccuracies,
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("pipeline failed: {0}")]
    Pipeline(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub label: SceneLabel,
    pub prior: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectsPerImage {
    /// Every image gets exactly this many objects.
    Fixed(usize),
    /// Poisson-distributed count with this mean.
    Mean(f64),
}

/// How the residual score mass spreads over wrong labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfusionSpread {
    Uniform,
    /// Biased towards labels that co-occur with the image's scene.
    WithinScene,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub scenes: Vec<SceneSpec>,
    pub objects: Vec<ObjectLabel>,
    /// Ground-truth `P(o|s)`, indexed `[object][scene]`, column-stochastic.
    pub cond_matrix: Vec<Vec<f64>>,
    pub images_per_split: SplitCounts,
    pub objects_per_image: ObjectsPerImage,
    /// Mean score mass placed on the true label.
    pub detector_accuracy: f64,
    pub confusion_spread: ConfusionSpread,
    /// Probability the simulated scene classifier reports the true scene.
    pub scene_classifier_accuracy: f64,
    pub seed: u64,
    /// Concentration of the Dirichlet perturbation around the target score
    /// vector; larger means candidate lists hug the target more tightly.
    #[serde(default = "default_concentration")]
    pub score_concentration: f64,
    /// Candidates scoring below this are not emitted (the argmax always is).
    #[serde(default = "default_emit_floor")]
    pub emit_floor: f64,
    /// Per-scene detector accuracies for simulated MNF sources.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mnf_scene_accuracy: Option<BTreeMap<SceneLabel, f64>>,
}

fn default_concentration() -> f64 {
    6.0
}

fn default_emit_floor() -> f64 {
    0.01
}

impl SimConfig {
    /// Shipped demo config: three scenes with disjoint object supports,
    /// a noisy detector at accuracy 0.6, and a perfect scene classifier.
    pub fn default_demo() -> Self {
        let scenes = ["scene_a", "scene_b", "scene_c"];
        let objects: Vec<ObjectLabel> = scenes
            .iter()
            .flat_map(|s| (1..=3).map(move |i| ObjectLabel::new(format!("{s}_obj{i}")).unwrap()))
            .collect();
        // column s supports objects 3s..3s+3 with in-scene mix 0.5/0.3/0.2
        let cond_matrix: Vec<Vec<f64>> = (0..9)
            .map(|o| {
                (0..3)
                    .map(|s| {
                        if o / 3 == s {
                            [0.5, 0.3, 0.2][o % 3]
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        SimConfig {
            scenes: scenes
                .iter()
                .map(|s| SceneSpec {
                    label: SceneLabel::new(*s).unwrap(),
                    prior: 1.0 / 3.0,
                })
                .collect(),
            objects,
            cond_matrix,
            images_per_split: SplitCounts {
                train: 400,
                test: 700,
            },
            objects_per_image: ObjectsPerImage::Fixed(3),
            detector_accuracy: 0.6,
            confusion_spread: ConfusionSpread::Uniform,
            scene_classifier_accuracy: 1.0,
            seed: 42,
            score_concentration: default_concentration(),
            emit_floor: default_emit_floor(),
            mnf_scene_accuracy: None,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |msg: String| Err(SimError::InvalidConfig(msg));
        if self.scenes.is_empty() || self.objects.is_empty() {
            return fail("scenes and objects must be non-empty".into());
        }
        let prior_sum: f64 = self.scenes.iter().map(|s| s.prior).sum();
        if (prior_sum - 1.0).abs() > 1e-9 {
            return fail(format!("scene priors sum to {prior_sum}, expected 1"));
        }
        if self.scenes.iter().any(|s| s.prior < 0.0) {
            return fail("scene priors must be non-negative".into());
        }
        if self.cond_matrix.len() != self.objects.len()
            || self.cond_matrix.iter().any(|r| r.len() != self.scenes.len())
        {
            return fail("cond_matrix must be objects x scenes".into());
        }
        for s in 0..self.scenes.len() {
            let col: f64 = self.cond_matrix.iter().map(|r| r[s]).sum();
            if (col - 1.0).abs() > 1e-9 {
                return fail(format!(
                    "cond_matrix column {:?} sums to {col}, expected 1",
                    self.scenes[s].label.as_str()
                ));
            }
            if self.cond_matrix.iter().any(|r| r[s] < 0.0) {
                return fail("cond_matrix entries must be non-negative".into());
            }
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v) && v.is_finite();
        if !unit(self.detector_accuracy) {
            return fail(format!("detector_accuracy {} outside [0, 1]", self.detector_accuracy));
        }
        if !unit(self.scene_classifier_accuracy) {
            return fail(format!(
                "scene_classifier_accuracy {} outside [0, 1]",
                self.scene_classifier_accuracy
            ));
        }
        if !(self.score_concentration.is_finite() && self.score_concentration > 0.0) {
            return fail("score_concentration must be positive".into());
        }
        if !(self.emit_floor.is_finite() && (0.0..1.0).contains(&self.emit_floor)) {
            return fail("emit_floor must be in [0, 1)".into());
        }
        if let ObjectsPerImage::Mean(m) = self.objects_per_image {
            if !(m.is_finite() && m > 0.0) {
                return fail("objects_per_image mean must be positive".into());
            }
        }
        if let Some(map) = &self.mnf_scene_accuracy {
            for spec in &self.scenes {
                match map.get(&spec.label) {
                    Some(a) if unit(*a) => {}
                    Some(a) => return fail(format!("mnf accuracy {a} outside [0, 1]")),
                    None => {
                        return fail(format!(
                            "mnf_scene_accuracy missing scene {:?}",
                            spec.label.as_str()
                        ))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let config: SimConfig = io::read_json(path.as_ref())?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SimError> {
        io::write_json(self, path.as_ref())?;
        Ok(())
    }
}

/// Everything one generation pass produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub dataset: Dataset,
    /// Scene predictions for the test split.
    pub scene_predictions: Vec<ScenePrediction>,
    /// Simulated detector output for the test split.
    pub detections: Vec<DetectionRecord>,
    /// Per-scene specialist detections, present when the config carries
    /// per-scene accuracies.
    pub mnf_sources: Option<BTreeMap<SceneLabel, Vec<DetectionRecord>>>,
}

fn sample_weighted(rng: &mut ChaCha12Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return 0;
    }
    let draw = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if draw < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Non-overlapping grid slot for the k-th object of an image.
fn grid_box(slot: usize) -> BoundingBox {
    let col = (slot % 8) as f64;
    let row = (slot / 8) as f64;
    BoundingBox::new(col * 110.0, row * 110.0, 100.0, 100.0).expect("grid box is valid")
}

/// Target score vector for a detection of `true_obj` seen in scene `s`:
/// `accuracy` on the true label, the rest spread per the config.
fn target_scores(
    config: &SimConfig,
    true_obj: usize,
    scene: usize,
    accuracy: f64,
) -> Vec<f64> {
    let n = config.objects.len();
    let mut target = vec![0.0; n];
    target[true_obj] = accuracy;
    let residual = 1.0 - accuracy;
    if residual <= 0.0 || n == 1 {
        return target;
    }
    match config.confusion_spread {
        ConfusionSpread::Uniform => {
            let share = residual / (n - 1) as f64;
            for (o, t) in target.iter_mut().enumerate() {
                if o != true_obj {
                    *t = share;
                }
            }
        }
        ConfusionSpread::WithinScene => {
            let weights: Vec<f64> = (0..n)
                .map(|o| if o == true_obj { 0.0 } else { config.cond_matrix[o][scene] })
                .collect();
            let total: f64 = weights.iter().sum();
            if total > 0.0 {
                for (o, w) in weights.iter().enumerate() {
                    if *w > 0.0 {
                        target[o] = residual * w / total;
                    }
                }
            } else {
                let share = residual / (n - 1) as f64;
                for (o, t) in target.iter_mut().enumerate() {
                    if o != true_obj {
                        *t = share;
                    }
                }
            }
        }
    }
    target
}

/// Dirichlet-style draw around the target: each positive-target label gets
/// a Gamma(concentration * target) weight and the vector is normalized.
/// Zero-target labels stay at exactly zero.
fn sample_scores(rng: &mut ChaCha12Rng, target: &[f64], concentration: f64) -> Vec<f64> {
    let mut draws = vec![0.0; target.len()];
    let mut total = 0.0;
    for (o, &t) in target.iter().enumerate() {
        if t > 0.0 {
            let gamma = Gamma::new(concentration * t, 1.0).expect("positive shape");
            let g: f64 = gamma.sample(rng);
            draws[o] = g;
            total += g;
        }
    }
    if total <= 0.0 {
        return target.to_vec();
    }
    for d in &mut draws {
        *d /= total;
    }
    draws
}

/// Candidate list from a score vector: labels at or above the emit floor,
/// plus always the argmax. Scores sum to at most 1.
fn to_candidates(config: &SimConfig, scores: &[f64]) -> Vec<Candidate> {
    let argmax = scores
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(o, _)| o)
        .expect("non-empty score vector");
    let mut candidates: Vec<Candidate> = scores
        .iter()
        .enumerate()
        .filter(|(o, s)| **s >= config.emit_floor || *o == argmax)
        .map(|(o, s)| Candidate {
            label: config.objects[o].clone(),
            score: *s,
        })
        .collect();
    crate::model::sort_candidates(&mut candidates);
    candidates
}

fn detect_image(
    rng: &mut ChaCha12Rng,
    config: &SimConfig,
    image: &ImageRecord,
    truth: &[usize],
    scene: usize,
    accuracy: f64,
) -> Vec<DetectionRecord> {
    truth
        .iter()
        .enumerate()
        .map(|(slot, &true_obj)| {
            let target = target_scores(config, true_obj, scene, accuracy);
            let scores = sample_scores(rng, &target, config.score_concentration);
            DetectionRecord {
                image_id: image.image_id.clone(),
                bbox: grid_box(slot),
                source: None,
                candidates: to_candidates(config, &scores),
            }
        })
        .collect()
}

/// Samples a dataset, detector output for the test split, and scene
/// predictions, all fully determined by the config seed.
pub fn generate(config: &SimConfig) -> Result<SimOutput, SimError> {
    config.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let priors: Vec<f64> = config.scenes.iter().map(|s| s.prior).collect();

    // ground truth: images with scenes and object labels
    let mut images = Vec::new();
    let mut image_truth: Vec<(usize, Vec<usize>)> = Vec::new(); // (scene, objects)
    for (split, count, prefix) in [
        (Split::Train, config.images_per_split.train, "train"),
        (Split::Test, config.images_per_split.test, "test"),
    ] {
        for i in 0..count {
            let scene = sample_weighted(&mut rng, &priors);
            let column: Vec<f64> = config.cond_matrix.iter().map(|r| r[scene]).collect();
            let n_objects = match config.objects_per_image {
                ObjectsPerImage::Fixed(k) => k,
                ObjectsPerImage::Mean(mean) => {
                    let poisson = Poisson::new(mean).expect("positive mean");
                    poisson.sample(&mut rng) as usize
                }
            };
            let object_ids: Vec<usize> = (0..n_objects)
                .map(|_| sample_weighted(&mut rng, &column))
                .collect();
            images.push(ImageRecord {
                image_id: format!("{prefix}_{i:05}"),
                scene: config.scenes[scene].label.clone(),
                split,
                source_path: None,
                objects: object_ids
                    .iter()
                    .enumerate()
                    .map(|(slot, &o)| GroundTruthObject {
                        label: config.objects[o].clone(),
                        bbox: grid_box(slot),
                    })
                    .collect(),
            });
            image_truth.push((scene, object_ids));
        }
    }
    let dataset = Dataset::new(
        config.objects.clone(),
        config.scenes.iter().map(|s| s.label.clone()).collect(),
        images,
    )
    .map_err(|e| SimError::InvalidConfig(e.to_string()))?;

    let test_range = config.images_per_split.train..dataset.images.len();

    // detector output over the test split
    let mut detections = Vec::new();
    for idx in test_range.clone() {
        let image = &dataset.images[idx];
        let (scene, truth) = &image_truth[idx];
        detections.extend(detect_image(
            &mut rng,
            config,
            image,
            truth,
            *scene,
            config.detector_accuracy,
        ));
    }

    // scene predictions over the test split
    let mut scene_predictions = Vec::new();
    for idx in test_range.clone() {
        let image = &dataset.images[idx];
        let (scene, _) = &image_truth[idx];
        let correct = rng.random::<f64>() < config.scene_classifier_accuracy;
        let predicted = if correct || config.scenes.len() == 1 {
            *scene
        } else {
            let wrong = rng.random_range(0..config.scenes.len() - 1);
            if wrong >= *scene {
                wrong + 1
            } else {
                wrong
            }
        };
        scene_predictions.push(ScenePrediction {
            image_id: image.image_id.clone(),
            scene: config.scenes[predicted].label.clone(),
            confidence: 0.5 + 0.5 * rng.random::<f64>(),
        });
    }

    // per-scene specialist sources for MNF experiments
    let mnf_sources = match &config.mnf_scene_accuracy {
        None => None,
        Some(accuracies) => {
            let mut sources = BTreeMap::new();
            for spec in &config.scenes {
                let accuracy = accuracies[&spec.label];
                let mut records = Vec::new();
                for idx in test_range.clone() {
                    let image = &dataset.images[idx];
                    let (scene, truth) = &image_truth[idx];
                    records.extend(detect_image(
                        &mut rng, config, image, truth, *scene, accuracy,
                    ));
                }
                sources.insert(spec.label.clone(), records);
            }
            Some(sources)
        }
    };

    Ok(SimOutput {
        dataset,
        scene_predictions,
        detections,
        mnf_sources,
    })
}

/// The exact co-occurrence table implied by the config: `cond_matrix` as
/// given, marginals consistent with the scene priors at a nominal scale of
/// one million detections.
pub fn true_table(config: &SimConfig) -> Result<CooccurrenceTable, SimError> {
    config.validate()?;
    const SCALE: f64 = 1_000_000.0;
    let per_scene: Vec<usize> = config
        .scenes
        .iter()
        .map(|s| (s.prior * SCALE).round() as usize)
        .collect();
    let m: usize = per_scene.iter().sum();
    let object_prior: Vec<f64> = (0..config.objects.len())
        .map(|o| {
            (0..config.scenes.len())
                .map(|s| config.cond_matrix[o][s] * per_scene[s] as f64 / m as f64)
                .sum()
        })
        .collect();
    Ok(CooccurrenceTable::from_parts(
        config.objects.clone(),
        config.scenes.iter().map(|s| s.label.clone()).collect(),
        config.cond_matrix.clone(),
        object_prior,
        config.scenes.iter().map(|s| s.prior).collect(),
        m,
        m,
        per_scene,
    )?)
}

/// Exhaustive reference for the update rule: the argmax over every object
/// class of candidate score times the true `P(o|s)`, with labels absent
/// from the candidate list scored zero and ties broken by ascending label.
pub fn bayes_oracle(
    detection: &DetectionRecord,
    scene: &SceneLabel,
    config: &SimConfig,
) -> Result<ObjectLabel, SimError> {
    let scene_idx = config
        .scenes
        .iter()
        .position(|s| &s.label == scene)
        .ok_or_else(|| SimError::InvalidConfig(format!("unknown scene {:?}", scene.as_str())))?;
    let score_of: BTreeMap<&str, f64> = detection
        .candidates
        .iter()
        .map(|c| (c.label.as_str(), c.score))
        .collect();
    let entries: Vec<(ObjectLabel, f64)> = config
        .objects
        .iter()
        .enumerate()
        .map(|(o, label)| {
            let score = score_of.get(label.as_str()).copied().unwrap_or(0.0);
            (label.clone(), score * config.cond_matrix[o][scene_idx])
        })
        .collect();
    match product_argmax(&entries) {
        Some(winner) => Ok(entries[winner].0.clone()),
        // every product is zero: all labels tie, ascending label wins
        None => Ok(config
            .objects
            .iter()
            .min()
            .expect("validated config has objects")
            .clone()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Baseline,
    Scu,
    Mnf,
}

impl std::fmt::Display for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Pipeline::Baseline => f.write_str("baseline"),
            Pipeline::Scu => f.write_str("scu"),
            Pipeline::Mnf => f.write_str("mnf"),
        }
    }
}

/// Which co-occurrence table the scu pipeline rescoring uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableSource {
    /// Counted from the generated training split, like the real pipeline.
    TrainEstimate,
    /// The exact table implied by the config.
    TrueConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub pipeline: Pipeline,
    pub total_precision: f64,
    pub total_recall: f64,
    #[serde(skip)]
    pub report: EvalReport,
}

/// Runs generate -> (optional fusion) -> evaluate and reports totals.
pub fn experiment(
    config: &SimConfig,
    pipeline: Pipeline,
    table_source: TableSource,
) -> Result<ExperimentSummary, SimError> {
    let output = generate(config)?;
    let predictions = match pipeline {
        Pipeline::Baseline => output.detections.clone(),
        Pipeline::Scu => {
            let table = match table_source {
                TableSource::TrainEstimate => compute_table(&output.dataset, SplitFilter::Train),
                TableSource::TrueConfig => true_table(config)?,
            };
            let (results, _) = scu_update_batch(
                &output.detections,
                &output.scene_predictions,
                &table,
                &ScuOptions::default(),
            )
            .map_err(|e| SimError::Pipeline(e.to_string()))?;
            results_to_detections(&results, Some("scu"))
        }
        Pipeline::Mnf => {
            let sources = output
                .mnf_sources
                .as_ref()
                .ok_or(SimError::MissingSceneAccuracies)?;
            let mut registry = SceneNetRegistry::new();
            for (scene, records) in sources {
                registry.insert_scripted(scene.clone(), records.clone());
            }
            let provider = SceneProvider::File(
                output
                    .scene_predictions
                    .iter()
                    .map(|p| (p.image_id.clone(), p.clone()))
                    .collect(),
            );
            let (records, _) = run_mnf(&output.dataset, &provider, &registry)
                .map_err(|e| SimError::Pipeline(e.to_string()))?;
            records
        }
    };
    let report = evaluate(&output.dataset, &predictions, &EvalOptions::default())
        .map_err(|e| SimError::Pipeline(e.to_string()))?;
    Ok(ExperimentSummary {
        pipeline,
        total_precision: report.total_precision,
        total_recall: report.total_recall,
        report,
    })
}
