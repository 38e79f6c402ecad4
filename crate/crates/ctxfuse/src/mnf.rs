//! Multi-network fusion: partition training data by scene and route each
//! test image to the detection source registered for its predicted scene.
//!
//! Training the per-scene networks is external. The registry abstracts
//! "a trained scene network" as any source of per-image detections: a
//! detections file produced by an external model, or a scripted in-memory
//! table for tests and simulation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, IoError};
use crate::model::{Dataset, DetectionRecord, ImageRecord, SceneLabel, Split};
use crate::scene::{SceneError, ScenePrediction, SceneProvider};

/// Source tag attached to detections served by the fallback source.
pub const FALLBACK_SOURCE: &str = "__fallback__";

#[derive(Debug, Error)]
pub enum MnfError {
    #[error("no scene has at least {alpha} training images")]
    NoSceneSurvives { alpha: usize },
    #[error("alpha must be at least 1, got {0}")]
    InvalidAlpha(usize),
    #[error("dataset has no training images")]
    EmptyTrainSplit,
    #[error("registry references unknown scene {0:?}")]
    UnknownScene(String),
    #[error("scene {0:?} has no registered detection source and no fallback is configured")]
    Unrouted(String),
    #[error("scene manifest filenames collide for {0:?}")]
    FileNameCollision(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Result of partitioning the training split by scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub alpha: usize,
    pub retained_scenes: Vec<SceneLabel>,
    pub per_scene_manifest_paths: BTreeMap<SceneLabel, PathBuf>,
    pub excluded_scenes: Vec<ExcludedScene>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedScene {
    pub scene: SceneLabel,
    pub image_count: usize,
}

#[derive(Serialize)]
struct PartitionReport<'a> {
    alpha: usize,
    retained: Vec<RetainedEntry<'a>>,
    excluded: &'a [ExcludedScene],
}

#[derive(Serialize)]
struct RetainedEntry<'a> {
    scene: &'a SceneLabel,
    image_count: usize,
    manifest: String,
}

fn scene_file_stem(scene: &SceneLabel) -> String {
    scene
        .as_str()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

/// Writes one training manifest per retained scene into `out_dir`, plus a
/// `partition_report.json` naming excluded scenes. Each manifest keeps the
/// full class vocabularies and exactly the training images of its scene.
pub fn partition_train(
    dataset: &Dataset,
    alpha: usize,
    out_dir: impl AsRef<Path>,
) -> Result<PartitionSpec, MnfError> {
    if alpha < 1 {
        return Err(MnfError::InvalidAlpha(alpha));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|source| IoError::Write {
        path: out_dir.display().to_string(),
        source,
    })?;

    if dataset.split_images(Split::Train).next().is_none() {
        return Err(MnfError::EmptyTrainSplit);
    }

    let mut per_scene: BTreeMap<&str, Vec<&ImageRecord>> = BTreeMap::new();
    for image in dataset.split_images(Split::Train) {
        per_scene
            .entry(image.scene.as_str())
            .or_default()
            .push(image);
    }

    let mut retained_scenes = Vec::new();
    let mut excluded_scenes = Vec::new();
    for scene in &dataset.scene_classes {
        let count = per_scene.get(scene.as_str()).map_or(0, |v| v.len());
        if count >= alpha {
            retained_scenes.push(scene.clone());
        } else {
            excluded_scenes.push(ExcludedScene {
                scene: scene.clone(),
                image_count: count,
            });
        }
    }
    if retained_scenes.is_empty() {
        return Err(MnfError::NoSceneSurvives { alpha });
    }

    let mut manifest_paths = BTreeMap::new();
    let mut used_names = BTreeMap::new();
    let mut retained_entries = Vec::new();
    for scene in &retained_scenes {
        let stem = scene_file_stem(scene);
        if let Some(other) = used_names.insert(stem.clone(), scene.as_str()) {
            let _ = other;
            return Err(MnfError::FileNameCollision(stem));
        }
        let path = out_dir.join(format!("{stem}.manifest.json"));
        let images: Vec<ImageRecord> = per_scene[scene.as_str()]
            .iter()
            .map(|i| (*i).clone())
            .collect();
        let image_count = images.len();
        let manifest = Dataset {
            object_classes: dataset.object_classes.clone(),
            scene_classes: dataset.scene_classes.clone(),
            images,
        };
        io::save_manifest(&manifest, &path)?;
        retained_entries.push(RetainedEntry {
            scene,
            image_count,
            manifest: path.display().to_string(),
        });
        manifest_paths.insert(scene.clone(), path);
    }

    let report = PartitionReport {
        alpha,
        retained: retained_entries,
        excluded: &excluded_scenes,
    };
    io::write_json(&report, &out_dir.join("partition_report.json"))?;

    Ok(PartitionSpec {
        alpha,
        retained_scenes,
        per_scene_manifest_paths: manifest_paths,
        excluded_scenes,
    })
}

/// Detections indexed by image id; the in-memory form every source takes.
type SourceIndex = BTreeMap<String, Vec<DetectionRecord>>;

fn index_records(records: Vec<DetectionRecord>) -> SourceIndex {
    let mut index: SourceIndex = BTreeMap::new();
    for rec in records {
        index.entry(rec.image_id.clone()).or_default().push(rec);
    }
    index
}

/// Maps each retained scene to its detection source, with an optional
/// global fallback for scenes that have none.
pub struct SceneNetRegistry {
    entries: BTreeMap<SceneLabel, SourceIndex>,
    fallback: Option<SourceIndex>,
}

#[derive(Deserialize)]
struct RegistryFile {
    #[serde(default)]
    fallback: Option<String>,
    entries: BTreeMap<String, String>,
}

impl SceneNetRegistry {
    pub fn new() -> Self {
        SceneNetRegistry {
            entries: BTreeMap::new(),
            fallback: None,
        }
    }

    /// Reads a registry file and eagerly loads every referenced detections
    /// file, validating records against the dataset. Relative paths resolve
    /// against the registry file's directory.
    pub fn from_file(path: impl AsRef<Path>, dataset: &Dataset) -> Result<Self, MnfError> {
        let path = path.as_ref();
        let file: RegistryFile = io::read_json(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let mut registry = SceneNetRegistry::new();
        for (scene_name, source_path) in &file.entries {
            let scene = SceneLabel::new(scene_name.clone()).map_err(|_| {
                MnfError::UnknownScene(scene_name.clone())
            })?;
            if dataset.scene_index(&scene).is_none() {
                return Err(MnfError::UnknownScene(scene_name.clone()));
            }
            let records = io::load_detections(resolve(source_path), dataset)?;
            registry.entries.insert(scene, index_records(records));
        }
        if let Some(fb) = &file.fallback {
            let records = io::load_detections(resolve(fb), dataset)?;
            registry.fallback = Some(index_records(records));
        }
        Ok(registry)
    }

    /// Registers an in-memory source for a scene.
    pub fn insert_scripted(&mut self, scene: SceneLabel, records: Vec<DetectionRecord>) {
        self.entries.insert(scene, index_records(records));
    }

    pub fn set_fallback(&mut self, records: Vec<DetectionRecord>) {
        self.fallback = Some(index_records(records));
    }

    pub fn scenes(&self) -> impl Iterator<Item = &SceneLabel> {
        self.entries.keys()
    }

    pub fn has_fallback(&self) -> bool {
        self.fallback.is_some()
    }

    fn lookup(&self, scene: &SceneLabel) -> Option<(&SourceIndex, RouteTag)> {
        if let Some(index) = self.entries.get(scene) {
            Some((index, RouteTag::Scene))
        } else {
            self.fallback
                .as_ref()
                .map(|index| (index, RouteTag::Fallback))
        }
    }
}

impl Default for SceneNetRegistry {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RouteTag {
    Scene,
    Fallback,
}

/// Serves the detections for one image from the source registered for its
/// predicted scene, tagging each record with the source name. An image
/// missing from its source yields an empty list, not an error; a scene with
/// neither a source nor a fallback is an error here (the batch entry point
/// applies the zero-detection policy instead).
pub fn route(
    image: &ImageRecord,
    scene_pred: &ScenePrediction,
    registry: &SceneNetRegistry,
) -> Result<Vec<DetectionRecord>, MnfError> {
    match registry.lookup(&scene_pred.scene) {
        Some((index, tag)) => Ok(serve(index, tag, image, &scene_pred.scene)),
        None => Err(MnfError::Unrouted(scene_pred.scene.as_str().to_owned())),
    }
}

fn serve(
    index: &SourceIndex,
    tag: RouteTag,
    image: &ImageRecord,
    scene: &SceneLabel,
) -> Vec<DetectionRecord> {
    let source_name = match tag {
        RouteTag::Scene => scene.as_str().to_owned(),
        RouteTag::Fallback => FALLBACK_SOURCE.to_owned(),
    };
    index
        .get(&image.image_id)
        .map(|records| {
            records
                .iter()
                .map(|r| DetectionRecord {
                    source: Some(source_name.clone()),
                    ..r.clone()
                })
                .collect()
        })
        .unwrap_or_default()
}

/// Routing counters accumulated over a full evaluation pass.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MnfSummary {
    /// Images served per source name (scene or `__fallback__`).
    pub routed_images: BTreeMap<String, usize>,
    /// Images whose predicted scene had no source and no fallback existed.
    pub unrouted_images: usize,
    /// Routed images that their source had no records for.
    pub missing_from_source: usize,
}

/// Runs the evaluation phase over the test split: predicts each image's
/// scene, routes it, and concatenates the served detections in dataset
/// order. Images whose scene has no source and no fallback contribute zero
/// detections and are counted in the summary.
pub fn run_mnf(
    dataset: &Dataset,
    provider: &SceneProvider,
    registry: &SceneNetRegistry,
) -> Result<(Vec<DetectionRecord>, MnfSummary), MnfError> {
    let mut output = Vec::new();
    let mut summary = MnfSummary::default();
    for image in dataset.split_images(Split::Test) {
        let pred = provider.identify(image)?;
        match registry.lookup(&pred.scene) {
            Some((index, tag)) => {
                let records = serve(index, tag, image, &pred.scene);
                let source_name = match tag {
                    RouteTag::Scene => pred.scene.as_str().to_owned(),
                    RouteTag::Fallback => FALLBACK_SOURCE.to_owned(),
                };
                if records.is_empty() {
                    summary.missing_from_source += 1;
                }
                *summary.routed_images.entry(source_name).or_insert(0) += 1;
                output.extend(records);
            }
            None => {
                summary.unrouted_images += 1;
            }
        }
    }
    Ok((output, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoundingBox, Candidate, GroundTruthObject, ObjectLabel};
    use tempfile::TempDir;

    fn obj(name: &str) -> ObjectLabel {
        ObjectLabel::new(name).unwrap()
    }

    fn scene(name: &str) -> SceneLabel {
        SceneLabel::new(name).unwrap()
    }

    fn image(id: &str, sc: &str, split: Split, labels: &[&str]) -> ImageRecord {
        ImageRecord {
            image_id: id.into(),
            scene: scene(sc),
            split,
            source_path: None,
            objects: labels
                .iter()
                .map(|l| GroundTruthObject {
                    label: obj(l),
                    bbox: BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
                })
                .collect(),
        }
    }

    fn detection(id: &str, label: &str, score: f64) -> DetectionRecord {
        DetectionRecord {
            image_id: id.into(),
            bbox: BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
            source: None,
            candidates: vec![Candidate {
                label: obj(label),
                score,
            }],
        }
    }

    fn two_scene_dataset() -> Dataset {
        Dataset::new(
            vec![obj("x"), obj("y")],
            vec![scene("A"), scene("B")],
            vec![
                image("t1", "A", Split::Train, &["x"]),
                image("t2", "A", Split::Train, &["x"]),
                image("t3", "A", Split::Train, &["y"]),
                image("t4", "B", Split::Train, &["y"]),
                image("e1", "A", Split::Test, &["x"]),
                image("e2", "B", Split::Test, &["y"]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn partition_respects_alpha_threshold() {
        let dir = TempDir::new().unwrap();
        let ds = two_scene_dataset();
        let spec = partition_train(&ds, 2, dir.path()).unwrap();
        assert_eq!(spec.retained_scenes, vec![scene("A")]);
        assert_eq!(spec.excluded_scenes.len(), 1);
        assert_eq!(spec.excluded_scenes[0].scene, scene("B"));
        assert_eq!(spec.excluded_scenes[0].image_count, 1);

        let manifest = io::load_manifest(&spec.per_scene_manifest_paths[&scene("A")]).unwrap();
        assert_eq!(manifest.images.len(), 3);
        assert!(manifest.images.iter().all(|i| i.scene == scene("A")));
        assert!(dir.path().join("partition_report.json").exists());
    }

    #[test]
    fn partition_alpha_one_is_a_partition() {
        let dir = TempDir::new().unwrap();
        let ds = two_scene_dataset();
        let spec = partition_train(&ds, 1, dir.path()).unwrap();
        assert_eq!(spec.retained_scenes.len(), 2);
        let mut all_ids = Vec::new();
        for path in spec.per_scene_manifest_paths.values() {
            let manifest = io::load_manifest(path).unwrap();
            all_ids.extend(manifest.images.iter().map(|i| i.image_id.clone()));
        }
        all_ids.sort();
        let mut train_ids: Vec<String> = ds
            .split_images(Split::Train)
            .map(|i| i.image_id.clone())
            .collect();
        train_ids.sort();
        assert_eq!(all_ids, train_ids);
    }

    #[test]
    fn partition_errors_when_nothing_survives() {
        let dir = TempDir::new().unwrap();
        let ds = two_scene_dataset();
        assert!(matches!(
            partition_train(&ds, 100, dir.path()),
            Err(MnfError::NoSceneSurvives { alpha: 100 })
        ));
    }

    #[test]
    fn route_dispatches_by_scene_and_tags_source() {
        let mut registry = SceneNetRegistry::new();
        registry.insert_scripted(scene("A"), vec![detection("e1", "x", 0.8)]);
        let ds = two_scene_dataset();
        let img = ds.image("e1").unwrap();
        let pred = ScenePrediction {
            image_id: "e1".into(),
            scene: scene("A"),
            confidence: 1.0,
        };
        let records = route(img, &pred, &registry).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].source.as_deref(), Some("A"));
        assert_eq!(records[0].candidates[0].label.as_str(), "x");
    }

    #[test]
    fn route_uses_fallback_for_unregistered_scene() {
        let mut registry = SceneNetRegistry::new();
        registry.insert_scripted(scene("A"), vec![]);
        registry.set_fallback(vec![detection("e2", "y", 0.6)]);
        let ds = two_scene_dataset();
        let img = ds.image("e2").unwrap();
        let pred = ScenePrediction {
            image_id: "e2".into(),
            scene: scene("B"),
            confidence: 1.0,
        };
        let records = route(img, &pred, &registry).unwrap();
        assert_eq!(records[0].source.as_deref(), Some(FALLBACK_SOURCE));
    }

    #[test]
    fn route_errors_without_source_or_fallback() {
        let registry = SceneNetRegistry::new();
        let ds = two_scene_dataset();
        let img = ds.image("e1").unwrap();
        let pred = ScenePrediction {
            image_id: "e1".into(),
            scene: scene("A"),
            confidence: 1.0,
        };
        assert!(matches!(
            route(img, &pred, &registry),
            Err(MnfError::Unrouted(s)) if s == "A"
        ));
    }

    #[test]
    fn missing_image_yields_empty_not_error() {
        let mut registry = SceneNetRegistry::new();
        registry.insert_scripted(scene("A"), vec![]);
        let ds = two_scene_dataset();
        let img = ds.image("e1").unwrap();
        let pred = ScenePrediction {
            image_id: "e1".into(),
            scene: scene("A"),
            confidence: 1.0,
        };
        assert!(route(img, &pred, &registry).unwrap().is_empty());
    }

    #[test]
    fn run_mnf_preserves_image_order_and_counts() {
        let mut registry = SceneNetRegistry::new();
        registry.insert_scripted(scene("A"), vec![detection("e1", "x", 0.8)]);
        registry.insert_scripted(scene("B"), vec![detection("e2", "y", 0.7)]);
        let ds = two_scene_dataset();
        let (records, summary) =
            run_mnf(&ds, &SceneProvider::ground_truth(), &registry).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].image_id, "e1");
        assert_eq!(records[1].image_id, "e2");
        assert_eq!(summary.routed_images["A"], 1);
        assert_eq!(summary.routed_images["B"], 1);
        assert_eq!(summary.unrouted_images, 0);
    }

    #[test]
    fn run_mnf_counts_unrouted_images() {
        let mut registry = SceneNetRegistry::new();
        registry.insert_scripted(scene("A"), vec![detection("e1", "x", 0.8)]);
        let ds = two_scene_dataset();
        let (records, summary) =
            run_mnf(&ds, &SceneProvider::ground_truth(), &registry).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(summary.unrouted_images, 1);
    }

    #[test]
    fn provider_modes_with_identical_predictions_agree() {
        let dir = TempDir::new().unwrap();
        let ds = two_scene_dataset();
        let mut registry = SceneNetRegistry::new();
        registry.insert_scripted(scene("A"), vec![detection("e1", "x", 0.8)]);
        registry.insert_scripted(scene("B"), vec![detection("e2", "y", 0.7)]);

        let gt = SceneProvider::ground_truth();
        let preds: Vec<_> = ds
            .split_images(Split::Test)
            .map(|i| gt.identify(i).unwrap())
            .collect();
        let pred_path = dir.path().join("preds.json");
        crate::scene::save_scene_predictions(&preds, &pred_path).unwrap();
        let from_file = SceneProvider::from_prediction_file(&pred_path, &ds).unwrap();

        let (a, _) = run_mnf(&ds, &gt, &registry).unwrap();
        let (b, _) = run_mnf(&ds, &from_file, &registry).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn registry_file_round_trip_with_relative_paths() {
        let dir = TempDir::new().unwrap();
        let ds = two_scene_dataset();
        io::save_detections(&[detection("e1", "x", 0.8)], dir.path().join("a.json")).unwrap();
        io::save_detections(&[detection("e2", "y", 0.7)], dir.path().join("fb.json")).unwrap();
        std::fs::write(
            dir.path().join("registry.json"),
            r#"{"fallback":"fb.json","entries":{"A":"a.json"}}"#,
        )
        .unwrap();
        let registry =
            SceneNetRegistry::from_file(dir.path().join("registry.json"), &ds).unwrap();
        assert!(registry.has_fallback());
        let (records, summary) =
            run_mnf(&ds, &SceneProvider::ground_truth(), &registry).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[1].source.as_deref(), Some(FALLBACK_SOURCE));
        assert_eq!(summary.routed_images[FALLBACK_SOURCE], 1);
    }

    #[test]
    fn registry_rejects_unknown_scene() {
        let dir = TempDir::new().unwrap();
        let ds = two_scene_dataset();
        io::save_detections(&[], dir.path().join("z.json")).unwrap();
        std::fs::write(
            dir.path().join("registry.json"),
            r#"{"entries":{"Zoo":"z.json"}}"#,
        )
        .unwrap();
        assert!(matches!(
            SceneNetRegistry::from_file(dir.path().join("registry.json"), &ds),
            Err(MnfError::UnknownScene(s)) if s == "Zoo"
        ));
    }
}
