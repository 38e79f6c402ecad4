//! Shared domain types: labels, boxes, images, detections, and the dataset
//! container that owns the label vocabularies.
//!
//! All values are immutable once validated and safe to share across threads.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("label name must be a non-empty token")]
    EmptyLabel,
    #[error("duplicate {kind} label {name:?} in class list")]
    DuplicateClass { kind: &'static str, name: String },
    #[error("duplicate image_id {0:?}")]
    DuplicateImageId(String),
    #[error("image {image_id:?} references unknown scene {scene:?}")]
    UnknownScene { image_id: String, scene: String },
    #[error("image {image_id:?} references unknown object label {label:?}")]
    UnknownObject { image_id: String, label: String },
    #[error("invalid bounding box [{x}, {y}, {w}, {h}]: {reason}")]
    InvalidBox {
        x: f64,
        y: f64,
        w: f64,
        h: f64,
        reason: &'static str,
    },
    #[error("invalid split {0:?}: expected \"train\" or \"test\"")]
    InvalidSplit(String),
    #[error("detection for {image_id:?}: candidate score {score} outside [0, 1]")]
    InvalidScore { image_id: String, score: f64 },
    #[error("detection references unknown image_id {0:?}")]
    UnknownImageId(String),
    #[error("detection for {image_id:?} has an empty candidate list")]
    EmptyCandidates { image_id: String },
    #[error("detection for {image_id:?} has duplicate candidate label {label:?}")]
    DuplicateCandidate { image_id: String, label: String },
    #[error("detection for {image_id:?} references unknown candidate label {label:?}")]
    UnknownCandidate { image_id: String, label: String },
}

fn validate_token(name: &str) -> Result<(), ModelError> {
    if name.trim().is_empty() {
        Err(ModelError::EmptyLabel)
    } else {
        Ok(())
    }
}

/// An object-class label. Comparison is exact and case-sensitive.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ObjectLabel(String);

/// A scene (background) label. Comparison is exact and case-sensitive.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SceneLabel(String);

macro_rules! label_impl {
    ($ty:ident) => {
        impl $ty {
            pub fn new(name: impl Into<String>) -> Result<Self, ModelError> {
                let name = name.into();
                validate_token(&name)?;
                Ok(Self(name))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl TryFrom<String> for $ty {
            type Error = ModelError;
            fn try_from(s: String) -> Result<Self, ModelError> {
                Self::new(s)
            }
        }

        impl From<$ty> for String {
            fn from(l: $ty) -> String {
                l.0
            }
        }

        impl AsRef<str> for $ty {
            fn as_ref(&self) -> &str {
                &self.0
            }
        }
    };
}

label_impl!(ObjectLabel);
label_impl!(SceneLabel);

/// Axis-aligned box in pixels, `[x, y, w, h]` with top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, ModelError> {
        let err = |reason| ModelError::InvalidBox { x, y, w, h, reason };
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(err("coordinates must be finite"));
        }
        if x < 0.0 || y < 0.0 {
            return Err(err("origin must be non-negative"));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(err("extent must be positive"));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Intersection-over-union with another box.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let x1 = self.x.max(other.x);
        let y1 = self.y.max(other.y);
        let x2 = (self.x + self.w).min(other.x + other.w);
        let y2 = (self.y + self.h).min(other.y + other.h);
        if x2 <= x1 || y2 <= y1 {
            return 0.0;
        }
        let inter = (x2 - x1) * (y2 - y1);
        inter / (self.area() + other.area() - inter)
    }

    /// Lexicographic (x, y, w, h) order, used for deterministic tie-breaking.
    pub fn coord_cmp(&self, other: &BoundingBox) -> std::cmp::Ordering {
        self.x
            .total_cmp(&other.x)
            .then(self.y.total_cmp(&other.y))
            .then(self.w.total_cmp(&other.w))
            .then(self.h.total_cmp(&other.h))
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = ModelError;
    fn try_from(v: [f64; 4]) -> Result<Self, ModelError> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> [f64; 4] {
        [b.x, b.y, b.w, b.h]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => f.write_str("train"),
            Split::Test => f.write_str("test"),
        }
    }
}

/// A ground-truth annotation: one object box in one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub label: ObjectLabel,
    pub bbox: BoundingBox,
}

/// One annotated image: identity, ground-truth scene, split membership, and
/// its ground-truth object boxes. `source_path` points at the pixel file when
/// one exists; only the histogram scene classifier ever reads it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub scene: SceneLabel,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_path: Option<String>,
    #[serde(default)]
    pub objects: Vec<GroundTruthObject>,
}

/// One potential label with the detector's score for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub label: ObjectLabel,
    pub score: f64,
}

/// One predicted box with its candidate list, sorted by descending score
/// (ties by ascending label so every downstream argmax is deterministic).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub bbox: BoundingBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub candidates: Vec<Candidate>,
}

impl DetectionRecord {
    /// Validates scores and duplicates, then sorts the candidate list into
    /// canonical order. `known` restricts candidate labels when provided.
    pub fn validate(
        mut self,
        known: Option<&BTreeSet<&str>>,
    ) -> Result<DetectionRecord, ModelError> {
        if self.candidates.is_empty() {
            return Err(ModelError::EmptyCandidates {
                image_id: self.image_id,
            });
        }
        let mut seen = BTreeSet::new();
        for cand in &self.candidates {
            if !(cand.score.is_finite() && (0.0..=1.0).contains(&cand.score)) {
                return Err(ModelError::InvalidScore {
                    image_id: self.image_id,
                    score: cand.score,
                });
            }
            if !seen.insert(cand.label.as_str()) {
                return Err(ModelError::DuplicateCandidate {
                    image_id: self.image_id,
                    label: cand.label.as_str().to_owned(),
                });
            }
            if let Some(known) = known {
                if !known.contains(cand.label.as_str()) {
                    return Err(ModelError::UnknownCandidate {
                        image_id: self.image_id,
                        label: cand.label.as_str().to_owned(),
                    });
                }
            }
        }
        sort_candidates(&mut self.candidates);
        Ok(self)
    }

    /// Highest-scored candidate (the detector's original argmax).
    pub fn top(&self) -> &Candidate {
        &self.candidates[0]
    }
}

/// Descending score, ties broken by ascending label.
pub fn sort_candidates(candidates: &mut [Candidate]) {
    candidates.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.label.cmp(&b.label))
    });
}

/// A full annotated dataset: ordered class vocabularies plus image records.
/// Counts (n images, m detections) are always derived, never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub object_classes: Vec<ObjectLabel>,
    pub scene_classes: Vec<SceneLabel>,
    pub images: Vec<ImageRecord>,
}

impl Dataset {
    pub fn new(
        object_classes: Vec<ObjectLabel>,
        scene_classes: Vec<SceneLabel>,
        images: Vec<ImageRecord>,
    ) -> Result<Dataset, ModelError> {
        let ds = Dataset {
            object_classes,
            scene_classes,
            images,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<(), ModelError> {
        let mut objects = BTreeSet::new();
        for label in &self.object_classes {
            if !objects.insert(label.as_str()) {
                return Err(ModelError::DuplicateClass {
                    kind: "object",
                    name: label.as_str().to_owned(),
                });
            }
        }
        let mut scenes = BTreeSet::new();
        for label in &self.scene_classes {
            if !scenes.insert(label.as_str()) {
                return Err(ModelError::DuplicateClass {
                    kind: "scene",
                    name: label.as_str().to_owned(),
                });
            }
        }
        let mut ids = BTreeSet::new();
        for image in &self.images {
            validate_token(&image.image_id)?;
            if !ids.insert(image.image_id.as_str()) {
                return Err(ModelError::DuplicateImageId(image.image_id.clone()));
            }
            if !scenes.contains(image.scene.as_str()) {
                return Err(ModelError::UnknownScene {
                    image_id: image.image_id.clone(),
                    scene: image.scene.as_str().to_owned(),
                });
            }
            for obj in &image.objects {
                if !objects.contains(obj.label.as_str()) {
                    return Err(ModelError::UnknownObject {
                        image_id: image.image_id.clone(),
                        label: obj.label.as_str().to_owned(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Number of images in the dataset.
    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    /// Total ground-truth detections `m` over all images.
    pub fn detection_count(&self) -> usize {
        self.images.iter().map(|i| i.objects.len()).sum()
    }

    pub fn object_index(&self, label: &ObjectLabel) -> Option<usize> {
        self.object_classes.iter().position(|l| l == label)
    }

    pub fn scene_index(&self, label: &SceneLabel) -> Option<usize> {
        self.scene_classes.iter().position(|l| l == label)
    }

    pub fn image(&self, image_id: &str) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.image_id == image_id)
    }

    /// Images in a split, in dataset order.
    pub fn split_images(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.images.iter().filter(move |i| i.split == split)
    }
}
