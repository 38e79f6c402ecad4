//! Scene label providers: the IdentifyScene step both algorithms call.
//!
//! Three modes cover the practical setups: ground truth (upper bound),
//! predictions produced by an external scene classifier and shipped as a
//! file, and a built-in RGB-histogram nearest-centroid classifier so the
//! whole pipeline stays runnable without any trained network.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, IoError};
use crate::model::{Dataset, ImageRecord, SceneLabel, Split};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("no scene prediction for image {0:?}")]
    MissingPrediction(String),
    #[error("prediction for {image_id:?} references unknown scene {scene:?}")]
    UnknownScene { image_id: String, scene: String },
    #[error("prediction for {image_id:?} has confidence {confidence} outside [0, 1]")]
    InvalidConfidence { image_id: String, confidence: f64 },
    #[error("image {0:?} has no source_path; pixels are required in histogram mode")]
    MissingPixels(String),
    #[error("failed to read pixels for image {image_id:?} from {path:?}: {reason}")]
    UnreadablePixels {
        image_id: String,
        path: String,
        reason: String,
    },
    #[error("scene {0:?} has no readable training images")]
    EmptyScene(String),
    #[error("histogram bins must be in 1..=32, got {0}")]
    InvalidBins(usize),
    #[error("classifier state lists {state} centroid(s) of length {len}, expected bins^3 = {expected}")]
    CorruptState {
        state: usize,
        len: usize,
        expected: usize,
    },
    #[error(transparent)]
    Io(#[from] IoError),
}

/// One scene prediction for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePrediction {
    pub image_id: String,
    pub scene: SceneLabel,
    pub confidence: f64,
}

#[derive(Serialize, Deserialize)]
struct PredictionFile {
    predictions: Vec<ScenePrediction>,
}

/// Reads a scene-prediction file and validates scenes against the dataset.
pub fn load_scene_predictions(
    path: impl AsRef<Path>,
    dataset: &Dataset,
) -> Result<Vec<ScenePrediction>, SceneError> {
    let file: PredictionFile = io::read_json(path.as_ref())?;
    for pred in &file.predictions {
        if dataset.scene_index(&pred.scene).is_none() {
            return Err(SceneError::UnknownScene {
                image_id: pred.image_id.clone(),
                scene: pred.scene.as_str().to_owned(),
            });
        }
        if !(pred.confidence.is_finite() && (0.0..=1.0).contains(&pred.confidence)) {
            return Err(SceneError::InvalidConfidence {
                image_id: pred.image_id.clone(),
                confidence: pred.confidence,
            });
        }
    }
    Ok(file.predictions)
}

pub fn save_scene_predictions(
    predictions: &[ScenePrediction],
    path: impl AsRef<Path>,
) -> Result<(), SceneError> {
    io::write_json(
        &PredictionFile {
            predictions: predictions.to_vec(),
        },
        path.as_ref(),
    )?;
    Ok(())
}

/// A configured scene source. Immutable once built; predictions for
/// different images may be computed concurrently.
pub enum SceneProvider {
    /// Pass the annotated scene through with confidence 1.
    GroundTruth,
    /// Look predictions up from a file keyed by image id.
    File(BTreeMap<String, ScenePrediction>),
    /// Classify pixels with a fitted histogram classifier.
    Histogram(HistogramClassifier),
}

impl SceneProvider {
    pub fn ground_truth() -> Self {
        SceneProvider::GroundTruth
    }

    pub fn from_prediction_file(
        path: impl AsRef<Path>,
        dataset: &Dataset,
    ) -> Result<Self, SceneError> {
        let preds = load_scene_predictions(path, dataset)?;
        Ok(SceneProvider::File(
            preds
                .into_iter()
                .map(|p| (p.image_id.clone(), p))
                .collect(),
        ))
    }

    pub fn from_classifier(classifier: HistogramClassifier) -> Self {
        SceneProvider::Histogram(classifier)
    }

    /// Supplies the scene label for one image.
    pub fn identify(&self, image: &ImageRecord) -> Result<ScenePrediction, SceneError> {
        match self {
            SceneProvider::GroundTruth => Ok(ScenePrediction {
                image_id: image.image_id.clone(),
                scene: image.scene.clone(),
                confidence: 1.0,
            }),
            SceneProvider::File(map) => map
                .get(&image.image_id)
                .cloned()
                .ok_or_else(|| SceneError::MissingPrediction(image.image_id.clone())),
            SceneProvider::Histogram(classifier) => classifier.predict(image),
        }
    }
}

/// Scene label prediction per `IdentifyScene`: exactly one scene from the
/// dataset vocabulary.
pub fn identify_scene(
    image: &ImageRecord,
    provider: &SceneProvider,
) -> Result<ScenePrediction, SceneError> {
    provider.identify(image)
}

/// Nearest-centroid classifier over L1-normalized RGB color histograms
/// (`bins` levels per channel, `bins^3` dimensions). Deliberately simple:
/// it stands in for a trained scene network so the toolkit runs end to end;
/// interface fidelity matters here, accuracy does not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramClassifier {
    bins: usize,
    scenes: Vec<SceneLabel>,
    centroids: Vec<Vec<f64>>,
}

impl HistogramClassifier {
    /// Fits one centroid per scene over the training images of the dataset.
    /// Every training image must have readable pixels and every scene needs
    /// at least one training image.
    pub fn fit(dataset: &Dataset, bins: usize) -> Result<Self, SceneError> {
        if !(1..=32).contains(&bins) {
            return Err(SceneError::InvalidBins(bins));
        }
        let dims = bins * bins * bins;
        let mut sums: Vec<Vec<f64>> = vec![vec![0.0; dims]; dataset.scene_classes.len()];
        let mut counts = vec![0usize; dataset.scene_classes.len()];
        for image in dataset.split_images(Split::Train) {
            let hist = image_histogram(image, bins)?;
            let s = dataset
                .scene_index(&image.scene)
                .expect("validated dataset");
            for (acc, v) in sums[s].iter_mut().zip(&hist) {
                *acc += v;
            }
            counts[s] += 1;
        }
        let mut centroids = Vec::with_capacity(sums.len());
        for (s, sum) in sums.into_iter().enumerate() {
            if counts[s] == 0 {
                return Err(SceneError::EmptyScene(
                    dataset.scene_classes[s].as_str().to_owned(),
                ));
            }
            centroids.push(sum.into_iter().map(|v| v / counts[s] as f64).collect());
        }
        Ok(HistogramClassifier {
            bins,
            scenes: dataset.scene_classes.clone(),
            centroids,
        })
    }

    /// Nearest centroid by L2 distance, ties broken by scene order.
    /// Confidence is the softmin of the distances.
    pub fn predict(&self, image: &ImageRecord) -> Result<ScenePrediction, SceneError> {
        let hist = image_histogram(image, self.bins)?;
        let distances: Vec<f64> = self
            .centroids
            .iter()
            .map(|c| {
                c.iter()
                    .zip(&hist)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let mut best = 0usize;
        for (s, d) in distances.iter().enumerate() {
            if *d < distances[best] {
                best = s;
            }
        }
        let denom: f64 = distances.iter().map(|d| (-d).exp()).sum();
        Ok(ScenePrediction {
            image_id: image.image_id.clone(),
            scene: self.scenes[best].clone(),
            confidence: (-distances[best]).exp() / denom,
        })
    }

    pub fn scenes(&self) -> &[SceneLabel] {
        &self.scenes
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SceneError> {
        io::write_json(self, path.as_ref())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        let state: HistogramClassifier = io::read_json(path.as_ref())?;
        if !(1..=32).contains(&state.bins) {
            return Err(SceneError::InvalidBins(state.bins));
        }
        let dims = state.bins.pow(3);
        if let Some(bad) = state.centroids.iter().find(|c| c.len() != dims) {
            return Err(SceneError::CorruptState {
                state: state.centroids.len(),
                len: bad.len(),
                expected: dims,
            });
        }
        if state.centroids.len() != state.scenes.len() {
            return Err(SceneError::CorruptState {
                state: state.centroids.len(),
                len: state.scenes.len(),
                expected: state.scenes.len(),
            });
        }
        Ok(state)
    }
}

fn image_histogram(image: &ImageRecord, bins: usize) -> Result<Vec<f64>, SceneError> {
    let path = image
        .source_path
        .as_deref()
        .ok_or_else(|| SceneError::MissingPixels(image.image_id.clone()))?;
    let pixels = image::open(path)
        .map_err(|e| SceneError::UnreadablePixels {
            image_id: image.image_id.clone(),
            path: path.to_owned(),
            reason: e.to_string(),
        })?
        .to_rgb8();
    let mut hist = vec![0.0f64; bins * bins * bins];
    let quant = |v: u8| (v as usize * bins) / 256;
    for pixel in pixels.pixels() {
        let idx = (quant(pixel.0[0]) * bins + quant(pixel.0[1])) * bins + quant(pixel.0[2]);
        hist[idx] += 1.0;
    }
    let total: f64 = hist.iter().sum();
    if total > 0.0 {
        for v in &mut hist {
            *v /= total;
        }
    }
    Ok(hist)
}
