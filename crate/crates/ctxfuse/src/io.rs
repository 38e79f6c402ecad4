//! Canonical JSON persistence for manifests and detection files.
//!
//! Writes are byte-deterministic: struct fields serialize in declaration
//! order and floats use the shortest decimal form that parses back to the
//! same value, so `load(save(v)) == v` and equal values produce identical
//! bytes.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Dataset, DetectionRecord, ModelError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("failed to read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("invalid data in {path}: {source}")]
    Validation {
        path: String,
        source: ModelError,
    },
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| IoError::Parse {
        path: path.display().to_string(),
        source,
    })
}

pub(crate) fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), IoError> {
    let bytes = to_json_bytes(value);
    write_bytes(&bytes, path)
}

pub(crate) fn write_bytes(bytes: &[u8], path: &Path) -> Result<(), IoError> {
    let mut file = fs::File::create(path).map_err(|source| IoError::Write {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(bytes).map_err(|source| IoError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// Pretty-printed JSON with a trailing newline; deterministic for any value
/// whose maps have a fixed iteration order.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serialization cannot fail");
    bytes.push(b'\n');
    bytes
}

fn validation(path: &Path, source: ModelError) -> IoError {
    IoError::Validation {
        path: path.display().to_string(),
        source,
    }
}

/// Reads and validates a dataset manifest.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Dataset, IoError> {
    let path = path.as_ref();
    let raw: serde_json::Value = read_json(path)?;
    let ds: Dataset = serde_json::from_value(raw).map_err(|source| IoError::Parse {
        path: path.display().to_string(),
        source,
    })?;
    // Deserialization checks field shapes; re-run referential validation.
    Dataset::new(ds.object_classes, ds.scene_classes, ds.images)
        .map_err(|e| validation(path, e))
}

/// Writes a manifest; output is byte-identical for equal datasets.
pub fn save_manifest(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), IoError> {
    write_json(dataset, path.as_ref())
}

#[derive(Serialize, Deserialize)]
struct DetectionsFile {
    detections: Vec<DetectionRecord>,
}

/// Reads a detections file and validates every record against the dataset:
/// image ids must exist, candidate labels must be known object classes, and
/// candidate lists are re-sorted into canonical order.
pub fn load_detections(
    path: impl AsRef<Path>,
    dataset: &Dataset,
) -> Result<Vec<DetectionRecord>, IoError> {
    let path = path.as_ref();
    let ids: BTreeSet<&str> = dataset.images.iter().map(|i| i.image_id.as_str()).collect();
    let objects: BTreeSet<&str> = dataset
        .object_classes
        .iter()
        .map(|l| l.as_str())
        .collect();
    let file: DetectionsFile = read_json(path)?;
    file.detections
        .into_iter()
        .map(|rec| {
            if !ids.contains(rec.image_id.as_str()) {
                return Err(validation(
                    path,
                    ModelError::UnknownImageId(rec.image_id.clone()),
                ));
            }
            rec.validate(Some(&objects)).map_err(|e| validation(path, e))
        })
        .collect()
}

/// Like [`load_detections`] but validates candidate labels against an
/// explicit vocabulary and leaves image ids unchecked. Used where no
/// manifest is at hand, e.g. rescoring against a co-occurrence table.
pub fn load_detections_with_vocab(
    path: impl AsRef<Path>,
    object_vocab: &[impl AsRef<str>],
) -> Result<Vec<DetectionRecord>, IoError> {
    let path = path.as_ref();
    let objects: BTreeSet<&str> = object_vocab.iter().map(|l| l.as_ref()).collect();
    let file: DetectionsFile = read_json(path)?;
    file.detections
        .into_iter()
        .map(|rec| rec.validate(Some(&objects)).map_err(|e| validation(path, e)))
        .collect()
}

/// Writes a detections file; byte-deterministic for equal record lists.
pub fn save_detections(
    records: &[DetectionRecord],
    path: impl AsRef<Path>,
) -> Result<(), IoError> {
    write_json(
        &DetectionsFile {
            detections: records.to_vec(),
        },
        path.as_ref(),
    )
}

/// In-memory serialization of a detections list, for byte comparisons.
pub fn detections_to_bytes(records: &[DetectionRecord]) -> Vec<u8> {
    to_json_bytes(&DetectionsFile {
        detections: records.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        BoundingBox, Candidate, GroundTruthObject, ImageRecord, ObjectLabel, SceneLabel, Split,
    };
    use tempfile::tempdir;

    fn sample_dataset() -> Dataset {
        Dataset::new(
            vec![
                ObjectLabel::new("A").unwrap(),
                ObjectLabel::new("B").unwrap(),
            ],
            vec![SceneLabel::new("Kitchen").unwrap()],
            vec![ImageRecord {
                image_id: "img1".into(),
                scene: SceneLabel::new("Kitchen").unwrap(),
                split: Split::Train,
                source_path: None,
                objects: vec![GroundTruthObject {
                    label: ObjectLabel::new("A").unwrap(),
                    bbox: BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
                }],
            }],
        )
        .unwrap()
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.json");
        let ds = sample_dataset();
        save_manifest(&ds, &path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(ds, loaded);
        assert_eq!(loaded.image_count(), 1);
        assert_eq!(loaded.detection_count(), 1);
    }

    #[test]
    fn manifest_unknown_scene_names_offender() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(
            &path,
            r#"{"object_classes":[],"scene_classes":["Kitchen"],
                "images":[{"image_id":"i","scene":"Garage","split":"train","objects":[]}]}"#,
        )
        .unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("Garage"));
    }

    #[test]
    fn detections_resort_on_load() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.json");
        std::fs::write(
            &path,
            r#"{"detections":[{"image_id":"img1","bbox":[0,0,5,5],
                "candidates":[{"label":"A","score":0.3},{"label":"B","score":0.9}]}]}"#,
        )
        .unwrap();
        let recs = load_detections(&path, &sample_dataset()).unwrap();
        assert_eq!(recs[0].candidates[0].label.as_str(), "B");
        assert_eq!(recs[0].candidates[1].label.as_str(), "A");
    }

    #[test]
    fn detections_unknown_image_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.json");
        std::fs::write(
            &path,
            r#"{"detections":[{"image_id":"ghost","bbox":[0,0,5,5],
                "candidates":[{"label":"A","score":0.5}]}]}"#,
        )
        .unwrap();
        let err = load_detections(&path, &sample_dataset()).unwrap_err();
        assert!(err.to_string().contains("ghost"));
    }

    #[test]
    fn detections_duplicate_candidate_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.json");
        std::fs::write(
            &path,
            r#"{"detections":[{"image_id":"img1","bbox":[0,0,5,5],
                "candidates":[{"label":"A","score":0.5},{"label":"A","score":0.4}]}]}"#,
        )
        .unwrap();
        let err = load_detections(&path, &sample_dataset()).unwrap_err();
        assert!(err.to_string().contains("duplicate candidate"));
    }

    #[test]
    fn save_is_byte_deterministic_and_empty_list_is_valid() {
        let dir = tempdir().unwrap();
        let p1 = dir.path().join("a.json");
        let p2 = dir.path().join("b.json");
        let recs: Vec<DetectionRecord> = vec![DetectionRecord {
            image_id: "img1".into(),
            bbox: BoundingBox::new(0.0, 0.0, 5.0, 5.0).unwrap(),
            source: Some("yolo".into()),
            candidates: vec![Candidate {
                label: ObjectLabel::new("A").unwrap(),
                score: 0.5,
            }],
        }];
        save_detections(&recs, &p1).unwrap();
        save_detections(&recs, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        let empty = dir.path().join("empty.json");
        save_detections(&[], &empty).unwrap();
        let loaded = load_detections(&empty, &sample_dataset()).unwrap();
        assert!(loaded.is_empty());
    }
}
