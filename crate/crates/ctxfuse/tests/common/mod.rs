//! Shared fixture builders for the integration and acceptance suites.

#![allow(dead_code)]

use std::path::PathBuf;

use ctxfuse::model::{
    BoundingBox, Candidate, Dataset, DetectionRecord, GroundTruthObject, ImageRecord,
    ObjectLabel, SceneLabel, Split,
};

pub const GROCERIES_OBJECTS: [&str; 10] = [
    "Can Chowder",
    "Can Soymilk",
    "Can Tomatosoup",
    "Carton OJ",
    "Carton Soymilk",
    "Diet Coke",
    "HC Potroast",
    "Juicebox",
    "Rice Tuscan",
    "Rice Pilaf",
];

pub const GROCERIES_SCENES: [&str; 3] = ["Cupboard", "Counter", "Refrigerator"];

/// Per-scene detection counts whose ratios reproduce the published
/// co-occurrence percentages (object order as in `GROCERIES_OBJECTS`).
pub const GROCERIES_COUNTS: [[usize; 10]; 3] = [
    [110, 0, 138, 0, 0, 0, 111, 0, 88, 88],   // Cupboard, 535 detections
    [26, 6, 19, 6, 0, 13, 15, 11, 31, 27],    // Counter, 154 detections
    [0, 208, 0, 218, 243, 131, 30, 190, 0, 0], // Refrigerator, 1020 detections
];

pub fn obj(name: &str) -> ObjectLabel {
    ObjectLabel::new(name).unwrap()
}

pub fn scene(name: &str) -> SceneLabel {
    SceneLabel::new(name).unwrap()
}

pub fn bbox(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
    BoundingBox::new(x, y, w, h).unwrap()
}

/// Grid slot for the k-th object of an image; collision-free by layout.
pub fn slot_box(slot: usize) -> BoundingBox {
    bbox((slot % 8) as f64 * 110.0, (slot / 8) as f64 * 110.0, 100.0, 100.0)
}

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Builds the grocery-domain training fixture: ten objects over three
/// scenes, detection counts per `GROCERIES_COUNTS`, images holding
/// alternately two objects and one.
pub fn groceries_dataset() -> Dataset {
    let mut images = Vec::new();
    for (s, scene_name) in GROCERIES_SCENES.iter().enumerate() {
        let mut labels: Vec<&str> = Vec::new();
        for (o, object_name) in GROCERIES_OBJECTS.iter().enumerate() {
            labels.extend(std::iter::repeat_n(*object_name, GROCERIES_COUNTS[s][o]));
        }
        let prefix = scene_name.to_ascii_lowercase();
        let mut cursor = 0usize;
        let mut idx = 0usize;
        while cursor < labels.len() {
            let take = if idx.is_multiple_of(2) { 2 } else { 1 }.min(labels.len() - cursor);
            let objects = labels[cursor..cursor + take]
                .iter()
                .enumerate()
                .map(|(slot, label)| GroundTruthObject {
                    label: obj(label),
                    bbox: slot_box(slot),
                })
                .collect();
            images.push(ImageRecord {
                image_id: format!("{prefix}_{idx:04}"),
                scene: scene(scene_name),
                split: Split::Train,
                source_path: None,
                objects,
            });
            cursor += take;
            idx += 1;
        }
    }
    Dataset::new(
        GROCERIES_OBJECTS.iter().map(|n| obj(n)).collect(),
        GROCERIES_SCENES.iter().map(|n| scene(n)).collect(),
        images,
    )
    .unwrap()
}

/// Three test images with a hand-computable tally:
/// img1 true positive (A), img2 label confusion (A predicted as B),
/// img3 one true positive (B), one missed ground truth (C), and one
/// unmatched prediction (C off in empty space).
pub fn hand_tally_dataset() -> Dataset {
    let mk = |id: &str, objects: Vec<GroundTruthObject>| ImageRecord {
        image_id: id.into(),
        scene: scene("Room"),
        split: Split::Test,
        source_path: None,
        objects,
    };
    Dataset::new(
        vec![obj("A"), obj("B"), obj("C")],
        vec![scene("Room")],
        vec![
            mk(
                "img1",
                vec![GroundTruthObject {
                    label: obj("A"),
                    bbox: bbox(0.0, 0.0, 10.0, 10.0),
                }],
            ),
            mk(
                "img2",
                vec![GroundTruthObject {
                    label: obj("A"),
                    bbox: bbox(0.0, 0.0, 10.0, 10.0),
                }],
            ),
            mk(
                "img3",
                vec![
                    GroundTruthObject {
                        label: obj("B"),
                        bbox: bbox(0.0, 0.0, 10.0, 10.0),
                    },
                    GroundTruthObject {
                        label: obj("C"),
                        bbox: bbox(20.0, 20.0, 10.0, 10.0),
                    },
                ],
            ),
        ],
    )
    .unwrap()
}

pub fn hand_tally_detections() -> Vec<DetectionRecord> {
    let mk = |id: &str, label: &str, score: f64, b: BoundingBox| DetectionRecord {
        image_id: id.into(),
        bbox: b,
        source: None,
        candidates: vec![Candidate {
            label: obj(label),
            score,
        }],
    };
    vec![
        mk("img1", "A", 0.9, bbox(0.0, 0.0, 10.0, 10.0)),
        mk("img2", "B", 0.8, bbox(0.0, 0.0, 10.0, 10.0)),
        mk("img3", "B", 0.95, bbox(0.0, 0.0, 10.0, 10.0)),
        mk("img3", "C", 0.7, bbox(50.0, 50.0, 10.0, 10.0)),
    ]
}

use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// Small random dataset for differential tests: up to `max_scenes` scenes,
/// `max_objects` object classes, and `max_images` images with 0..=4 objects.
pub fn random_dataset(
    rng: &mut ChaCha12Rng,
    max_images: usize,
    max_scenes: usize,
    max_objects: usize,
) -> Dataset {
    let n_scenes = rng.random_range(1..=max_scenes);
    let n_objects = rng.random_range(1..=max_objects);
    let scenes: Vec<SceneLabel> = (0..n_scenes).map(|i| scene(&format!("s{i}"))).collect();
    let objects: Vec<ObjectLabel> = (0..n_objects).map(|i| obj(&format!("o{i}"))).collect();
    let n_images = rng.random_range(0..=max_images);
    let images = (0..n_images)
        .map(|i| {
            let n_obj = rng.random_range(0..=4);
            ImageRecord {
                image_id: format!("img{i}"),
                scene: scenes[rng.random_range(0..n_scenes)].clone(),
                split: if rng.random_bool(0.5) {
                    Split::Train
                } else {
                    Split::Test
                },
                source_path: None,
                objects: (0..n_obj)
                    .map(|slot| GroundTruthObject {
                        label: objects[rng.random_range(0..n_objects)].clone(),
                        bbox: slot_box(slot),
                    })
                    .collect(),
            }
        })
        .collect();
    Dataset::new(objects, scenes, images).unwrap()
}

pub struct BruteForceTable {
    pub object_prior: Vec<f64>,
    pub scene_prior: Vec<f64>,
    pub cond: Vec<Vec<f64>>,
    pub pair_counts: Vec<Vec<usize>>,
    pub n: usize,
    pub m: usize,
    pub per_scene: Vec<usize>,
}

/// Literal indicator counting over the raw annotations: one pass per
/// (label, item) pair, every indicator a string comparison on the ground
/// truth. Shares nothing with the library's counting path.
pub fn brute_force_table(
    dataset: &Dataset,
    split: ctxfuse::stats::SplitFilter,
) -> BruteForceTable {
    let images: Vec<_> = dataset
        .images
        .iter()
        .filter(|i| split.selects(i.split))
        .collect();
    // detections as (object label, inherited scene label) pairs
    let detections: Vec<(&str, &str)> = images
        .iter()
        .flat_map(|img| {
            img.objects
                .iter()
                .map(move |o| (o.label.as_str(), img.scene.as_str()))
        })
        .collect();
    let n = images.len();
    let m = detections.len();

    let indicator = |matches: bool| if matches { 1usize } else { 0 };

    let object_prior: Vec<f64> = dataset
        .object_classes
        .iter()
        .map(|o| {
            let total: usize = detections
                .iter()
                .map(|(o_gt, _)| indicator(*o_gt == o.as_str()))
                .sum();
            if m == 0 {
                0.0
            } else {
                total as f64 / m as f64
            }
        })
        .collect();

    let scene_prior: Vec<f64> = dataset
        .scene_classes
        .iter()
        .map(|s| {
            let total: usize = images
                .iter()
                .map(|img| indicator(img.scene.as_str() == s.as_str()))
                .sum();
            if n == 0 {
                0.0
            } else {
                total as f64 / n as f64
            }
        })
        .collect();

    let per_scene: Vec<usize> = dataset
        .scene_classes
        .iter()
        .map(|s| {
            detections
                .iter()
                .map(|(_, s_gt)| indicator(*s_gt == s.as_str()))
                .sum()
        })
        .collect();

    let mut cond = vec![vec![0.0; dataset.scene_classes.len()]; dataset.object_classes.len()];
    let mut pair_counts =
        vec![vec![0usize; dataset.scene_classes.len()]; dataset.object_classes.len()];
    for (oi, o) in dataset.object_classes.iter().enumerate() {
        for (si, s) in dataset.scene_classes.iter().enumerate() {
            let joint: usize = detections
                .iter()
                .map(|(o_gt, s_gt)| indicator(*o_gt == o.as_str() && *s_gt == s.as_str()))
                .sum();
            pair_counts[oi][si] = joint;
            if per_scene[si] > 0 {
                cond[oi][si] = joint as f64 / per_scene[si] as f64;
            }
        }
    }

    BruteForceTable {
        object_prior,
        scene_prior,
        cond,
        pair_counts,
        n,
        m,
        per_scene,
    }
}
