//! Object–scene co-occurrence statistics.
//!
//! Probabilities are exact count ratios computed in double precision:
//! `P(o)` over all ground-truth detections, `P(s)` over images, and
//! `P(o|s)` as detections of `o` within scene `s` divided by all detections
//! in `s`, where every detection inherits the scene label of its image.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, IoError};
use crate::model::{Dataset, ObjectLabel, SceneLabel, Split};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("alpha must be at least 1, got {0}")]
    InvalidAlpha(usize),
    #[error("no scene has at least {alpha} images in the training split")]
    NoSceneSurvives { alpha: usize },
    #[error("table shape mismatch: {0}")]
    Shape(String),
    #[error("table entry out of range: {0}")]
    Range(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Which images of a dataset an operation runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitFilter {
    Train,
    Test,
    All,
}

impl SplitFilter {
    pub fn selects(&self, split: Split) -> bool {
        match self {
            SplitFilter::Train => split == Split::Train,
            SplitFilter::Test => split == Split::Test,
            SplitFilter::All => true,
        }
    }
}

/// The co-occurrence table `P(o|s)` with its marginals and source counts.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceTable {
    objects: Vec<ObjectLabel>,
    scenes: Vec<SceneLabel>,
    /// `cond[object][scene] = P(o|s)`.
    cond: Vec<Vec<f64>>,
    object_prior: Vec<f64>,
    scene_prior: Vec<f64>,
    /// Total images `n` in the source split.
    image_count: usize,
    /// Total ground-truth detections `m` in the source split.
    detection_count: usize,
    /// Detections inherited by each scene; zero means an all-zero column.
    per_scene_detections: Vec<usize>,
}

impl CooccurrenceTable {
    /// Builds a table from explicit parts, validating shapes and ranges.
    /// Columns must be stochastic (sum to 1) wherever the scene has
    /// detections and all-zero where it has none.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        objects: Vec<ObjectLabel>,
        scenes: Vec<SceneLabel>,
        cond: Vec<Vec<f64>>,
        object_prior: Vec<f64>,
        scene_prior: Vec<f64>,
        image_count: usize,
        detection_count: usize,
        per_scene_detections: Vec<usize>,
    ) -> Result<Self, StatsError> {
        let table = CooccurrenceTable {
            objects,
            scenes,
            cond,
            object_prior,
            scene_prior,
            image_count,
            detection_count,
            per_scene_detections,
        };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<(), StatsError> {
        let n_obj = self.objects.len();
        let n_scene = self.scenes.len();
        if self.cond.len() != n_obj {
            return Err(StatsError::Shape(format!(
                "cond has {} rows, expected {}",
                self.cond.len(),
                n_obj
            )));
        }
        for (i, row) in self.cond.iter().enumerate() {
            if row.len() != n_scene {
                return Err(StatsError::Shape(format!(
                    "cond row {} has {} columns, expected {}",
                    i,
                    row.len(),
                    n_scene
                )));
            }
        }
        if self.object_prior.len() != n_obj
            || self.scene_prior.len() != n_scene
            || self.per_scene_detections.len() != n_scene
        {
            return Err(StatsError::Shape("marginal length mismatch".into()));
        }
        let prob = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        for row in &self.cond {
            if !row.iter().copied().all(prob) {
                return Err(StatsError::Range("cond entry outside [0, 1]".into()));
            }
        }
        if !self.object_prior.iter().copied().all(prob)
            || !self.scene_prior.iter().copied().all(prob)
        {
            return Err(StatsError::Range("prior outside [0, 1]".into()));
        }
        for (s, &count) in self.per_scene_detections.iter().enumerate() {
            let col_sum: f64 = self.cond.iter().map(|row| row[s]).sum();
            if count > 0 {
                if (col_sum - 1.0).abs() > 1e-9 {
                    return Err(StatsError::Range(format!(
                        "scene {:?} column sums to {col_sum}, expected 1",
                        self.scenes[s].as_str()
                    )));
                }
            } else if col_sum != 0.0 {
                return Err(StatsError::Range(format!(
                    "scene {:?} has no detections but a nonzero column",
                    self.scenes[s].as_str()
                )));
            }
        }
        if self.detection_count > 0 {
            let sum: f64 = self.object_prior.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(StatsError::Range(format!(
                    "object prior sums to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }

    pub fn objects(&self) -> &[ObjectLabel] {
        &self.objects
    }

    pub fn scenes(&self) -> &[SceneLabel] {
        &self.scenes
    }

    pub fn object_index(&self, label: &ObjectLabel) -> Option<usize> {
        self.objects.iter().position(|l| l == label)
    }

    pub fn scene_index(&self, label: &SceneLabel) -> Option<usize> {
        self.scenes.iter().position(|l| l == label)
    }

    /// `P(o|s)` by index.
    pub fn cond(&self, object: usize, scene: usize) -> f64 {
        self.cond[object][scene]
    }

    pub fn object_prior(&self, object: usize) -> f64 {
        self.object_prior[object]
    }

    pub fn scene_prior(&self, scene: usize) -> f64 {
        self.scene_prior[scene]
    }

    /// Total images `n` behind the table.
    pub fn image_count(&self) -> usize {
        self.image_count
    }

    /// Total detections `m` behind the table.
    pub fn detection_count(&self) -> usize {
        self.detection_count
    }

    pub fn per_scene_detections(&self) -> &[usize] {
        &self.per_scene_detections
    }

    /// Reconstructed integer count of object `o` in scene `s`.
    pub fn pair_count(&self, object: usize, scene: usize) -> u64 {
        (self.cond[object][scene] * self.per_scene_detections[scene] as f64).round() as u64
    }
}

/// Counts ground-truth detections over the selected split and derives the
/// probability measures. Scenes with zero detections keep an all-zero
/// column; an empty split yields a zero-count table.
pub fn compute_table(dataset: &Dataset, split: SplitFilter) -> CooccurrenceTable {
    let n_obj = dataset.object_classes.len();
    let n_scene = dataset.scene_classes.len();
    let obj_idx: BTreeMap<&str, usize> = dataset
        .object_classes
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let scene_idx: BTreeMap<&str, usize> = dataset
        .scene_classes
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();

    let mut pair_counts = vec![vec![0usize; n_scene]; n_obj];
    let mut object_counts = vec![0usize; n_obj];
    let mut scene_image_counts = vec![0usize; n_scene];
    let mut scene_detection_counts = vec![0usize; n_scene];
    let mut image_count = 0usize;
    let mut detection_count = 0usize;

    for image in dataset.images.iter().filter(|i| split.selects(i.split)) {
        image_count += 1;
        let s = scene_idx[image.scene.as_str()];
        scene_image_counts[s] += 1;
        for gt in &image.objects {
            let o = obj_idx[gt.label.as_str()];
            detection_count += 1;
            object_counts[o] += 1;
            scene_detection_counts[s] += 1;
            pair_counts[o][s] += 1;
        }
    }

    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let cond = (0..n_obj)
        .map(|o| {
            (0..n_scene)
                .map(|s| ratio(pair_counts[o][s], scene_detection_counts[s]))
                .collect()
        })
        .collect();
    let object_prior = object_counts
        .iter()
        .map(|&c| ratio(c, detection_count))
        .collect();
    let scene_prior = scene_image_counts
        .iter()
        .map(|&c| ratio(c, image_count))
        .collect();

    CooccurrenceTable {
        objects: dataset.object_classes.clone(),
        scenes: dataset.scene_classes.clone(),
        cond,
        object_prior,
        scene_prior,
        image_count,
        detection_count,
        per_scene_detections: scene_detection_counts,
    }
}

/// Drops scenes with fewer than `alpha` images in the training split.
/// Marginals are not renormalized; the surviving columns keep their exact
/// count ratios. Returns the filtered table and the retained scene list.
pub fn filter_scenes(
    table: &CooccurrenceTable,
    dataset: &Dataset,
    alpha: usize,
) -> Result<(CooccurrenceTable, Vec<SceneLabel>), StatsError> {
    if alpha < 1 {
        return Err(StatsError::InvalidAlpha(alpha));
    }
    let counts = scene_image_counts(dataset, SplitFilter::Train);
    let keep: Vec<usize> = table
        .scenes
        .iter()
        .enumerate()
        .filter(|(_, scene)| counts.get(scene.as_str()).copied().unwrap_or(0) >= alpha)
        .map(|(idx, _)| idx)
        .collect();
    if keep.is_empty() {
        return Err(StatsError::NoSceneSurvives { alpha });
    }
    let retained: Vec<SceneLabel> = keep.iter().map(|&s| table.scenes[s].clone()).collect();
    let filtered = CooccurrenceTable {
        objects: table.objects.clone(),
        scenes: retained.clone(),
        cond: table
            .cond
            .iter()
            .map(|row| keep.iter().map(|&s| row[s]).collect())
            .collect(),
        object_prior: table.object_prior.clone(),
        scene_prior: keep.iter().map(|&s| table.scene_prior[s]).collect(),
        image_count: table.image_count,
        detection_count: table.detection_count,
        per_scene_detections: keep.iter().map(|&s| table.per_scene_detections[s]).collect(),
    };
    Ok((filtered, retained))
}

/// Images per scene label over the selected split.
pub fn scene_image_counts(dataset: &Dataset, split: SplitFilter) -> BTreeMap<&str, usize> {
    let mut counts = BTreeMap::new();
    for image in dataset.images.iter().filter(|i| split.selects(i.split)) {
        *counts.entry(image.scene.as_str()).or_insert(0) += 1;
    }
    counts
}

/// Per-object scene likelihoods `P(s|o)` and the argmax scene assignment
/// used to cluster confusion-matrix keys. Objects without detections stay
/// unassigned.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneClusterKey {
    objects: Vec<ObjectLabel>,
    scenes: Vec<SceneLabel>,
    /// `likelihoods[object][scene] = P(s|o)`; all-zero row when unassigned.
    likelihoods: Vec<Vec<f64>>,
    /// Argmax scene per object, ties broken by scene order.
    assignment: Vec<Option<usize>>,
}

impl SceneClusterKey {
    pub fn objects(&self) -> &[ObjectLabel] {
        &self.objects
    }

    pub fn scenes(&self) -> &[SceneLabel] {
        &self.scenes
    }

    pub fn likelihood(&self, object: usize, scene: usize) -> f64 {
        self.likelihoods[object][scene]
    }

    pub fn assignment(&self, object: usize) -> Option<&SceneLabel> {
        self.assignment[object].map(|s| &self.scenes[s])
    }

    /// Objects grouped by assigned scene, scenes in dataset order and
    /// objects in dataset order within each group; unassigned objects come
    /// last under `None`.
    pub fn clustered_groups(&self) -> Vec<(Option<SceneLabel>, Vec<ObjectLabel>)> {
        let mut groups = Vec::new();
        for (s, scene) in self.scenes.iter().enumerate() {
            let members: Vec<ObjectLabel> = self
                .objects
                .iter()
                .enumerate()
                .filter(|(o, _)| self.assignment[*o] == Some(s))
                .map(|(_, l)| l.clone())
                .collect();
            if !members.is_empty() {
                groups.push((Some(scene.clone()), members));
            }
        }
        let unassigned: Vec<ObjectLabel> = self
            .objects
            .iter()
            .enumerate()
            .filter(|(o, _)| self.assignment[*o].is_none())
            .map(|(_, l)| l.clone())
            .collect();
        if !unassigned.is_empty() {
            groups.push((None, unassigned));
        }
        groups
    }

    /// Flat object ordering implied by [`Self::clustered_groups`].
    pub fn clustered_object_order(&self) -> Vec<ObjectLabel> {
        self.clustered_groups()
            .into_iter()
            .flat_map(|(_, members)| members)
            .collect()
    }
}

/// Computes `P(s|o)` from detection counts over the selected split and
/// assigns each detected object to its most likely scene.
pub fn compute_cluster_key(dataset: &Dataset, split: SplitFilter) -> SceneClusterKey {
    let table = compute_table(dataset, split);
    let n_obj = table.objects.len();
    let n_scene = table.scenes.len();
    let mut likelihoods = vec![vec![0.0; n_scene]; n_obj];
    let mut assignment = vec![None; n_obj];
    for o in 0..n_obj {
        let total: u64 = (0..n_scene).map(|s| table.pair_count(o, s)).sum();
        if total == 0 {
            continue;
        }
        let mut best = 0usize;
        for s in 0..n_scene {
            likelihoods[o][s] = table.pair_count(o, s) as f64 / total as f64;
            if likelihoods[o][s] > likelihoods[o][best] {
                best = s;
            }
        }
        assignment[o] = Some(best);
    }
    SceneClusterKey {
        objects: table.objects,
        scenes: table.scenes,
        likelihoods,
        assignment,
    }
}

#[derive(Serialize, Deserialize)]
struct TableCounts {
    n: usize,
    m: usize,
    per_scene: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    objects: Vec<ObjectLabel>,
    scenes: Vec<SceneLabel>,
    counts: TableCounts,
    cond: Vec<Vec<f64>>,
    object_prior: Vec<f64>,
    scene_prior: Vec<f64>,
}

fn table_file(table: &CooccurrenceTable) -> TableFile {
    TableFile {
        objects: table.objects.clone(),
        scenes: table.scenes.clone(),
        counts: TableCounts {
            n: table.image_count,
            m: table.detection_count,
            per_scene: table.per_scene_detections.clone(),
        },
        cond: table.cond.clone(),
        object_prior: table.object_prior.clone(),
        scene_prior: table.scene_prior.clone(),
    }
}

/// Writes the table as canonical JSON; `load_table(save_table(t)) == t`.
pub fn save_table(table: &CooccurrenceTable, path: impl AsRef<Path>) -> Result<(), StatsError> {
    io::write_json(&table_file(table), path.as_ref())?;
    Ok(())
}

/// The canonical JSON bytes [`save_table`] writes.
pub fn table_to_json_bytes(table: &CooccurrenceTable) -> Vec<u8> {
    io::to_json_bytes(&table_file(table))
}

pub fn load_table(path: impl AsRef<Path>) -> Result<CooccurrenceTable, StatsError> {
    let file: TableFile = io::read_json(path.as_ref())?;
    CooccurrenceTable::from_parts(
        file.objects,
        file.scenes,
        file.cond,
        file.object_prior,
        file.scene_prior,
        file.counts.n,
        file.counts.m,
        file.counts.per_scene,
    )
}

/// CSV export: one row per object, `P(o|s)` per scene column with three
/// decimal places.
pub fn table_to_csv(table: &CooccurrenceTable) -> String {
    let mut out = String::from("object");
    for scene in &table.scenes {
        out.push(',');
        out.push_str(scene.as_str());
    }
    out.push('\n');
    for (o, object) in table.objects.iter().enumerate() {
        out.push_str(object.as_str());
        for s in 0..table.scenes.len() {
            out.push_str(&format!(",{:.3}", table.cond[o][s]));
        }
        out.push('\n');
    }
    out
}

pub fn save_table_csv(table: &CooccurrenceTable, path: impl AsRef<Path>) -> Result<(), StatsError> {
    io::write_bytes(table_to_csv(table).as_bytes(), path.as_ref())?;
    Ok(())
}
