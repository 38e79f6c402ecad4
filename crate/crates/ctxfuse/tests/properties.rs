//! Property tests for the serialization, counting, and matching laws.

mod common;

use std::collections::BTreeSet;

use ctxfuse::eval::{evaluate, match_image, EvalOptions};
use ctxfuse::io;
use ctxfuse::model::{
    BoundingBox, Candidate, Dataset, DetectionRecord, GroundTruthObject, ImageRecord, Split,
};
use ctxfuse::stats::{compute_table, SplitFilter};
use proptest::prelude::*;

fn label_pool() -> Vec<&'static str> {
    vec!["apple", "bottle", "carton", "drum", "eel"]
}

fn scene_pool() -> Vec<&'static str> {
    vec!["north", "south", "west"]
}

fn arb_bbox() -> impl Strategy<Value = BoundingBox> {
    (0u32..100, 0u32..100, 1u32..50, 1u32..50).prop_map(|(x, y, w, h)| {
        BoundingBox::new(x as f64, y as f64, w as f64, h as f64).unwrap()
    })
}

fn arb_image(idx: usize) -> impl Strategy<Value = ImageRecord> {
    (
        0..scene_pool().len(),
        prop::bool::ANY,
        prop::collection::vec((0..label_pool().len(), arb_bbox()), 0..4),
    )
        .prop_map(move |(scene, train, objects)| ImageRecord {
            image_id: format!("img{idx}"),
            scene: common::scene(scene_pool()[scene]),
            split: if train { Split::Train } else { Split::Test },
            source_path: None,
            objects: objects
                .into_iter()
                .map(|(label, bbox)| GroundTruthObject {
                    label: common::obj(label_pool()[label]),
                    bbox,
                })
                .collect(),
        })
}

fn arb_dataset() -> impl Strategy<Value = Dataset> {
    prop::collection::vec(prop::num::u8::ANY, 0..8).prop_flat_map(|seeds| {
        let images: Vec<_> = seeds
            .iter()
            .enumerate()
            .map(|(i, _)| arb_image(i))
            .collect();
        images.prop_map(|images| {
            Dataset::new(
                label_pool().iter().map(|l| common::obj(l)).collect(),
                scene_pool().iter().map(|s| common::scene(s)).collect(),
                images,
            )
            .unwrap()
        })
    })
}

fn arb_detection(idx: usize) -> impl Strategy<Value = DetectionRecord> {
    (
        prop::collection::btree_set(0..label_pool().len(), 1..=label_pool().len()),
        arb_bbox(),
        prop::collection::vec(0u32..=1000, label_pool().len()),
    )
        .prop_map(move |(labels, bbox, scores)| {
            DetectionRecord {
                image_id: format!("img{idx}"),
                bbox,
                source: None,
                candidates: labels
                    .into_iter()
                    .enumerate()
                    .map(|(i, label)| Candidate {
                        label: common::obj(label_pool()[label]),
                        score: scores[i] as f64 / 1000.0,
                    })
                    .collect(),
            }
            .validate(None)
            .unwrap()
        })
}

proptest! {
    /// load(save(dataset)) is the identity and serialization is stable.
    #[test]
    fn manifest_round_trip(ds in arb_dataset()) {
        let bytes = io::to_json_bytes(&ds);
        let reparsed: Dataset = serde_json::from_slice(&bytes).unwrap();
        prop_assert_eq!(&reparsed, &ds);
        prop_assert_eq!(io::to_json_bytes(&reparsed), bytes);
    }

    /// Detections round-trip through their file schema, byte-stable.
    #[test]
    fn detections_round_trip(dets in prop::collection::vec(arb_detection(0), 0..6)) {
        let bytes = io::detections_to_bytes(&dets);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        io::save_detections(&dets, &path).unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), bytes.clone());
        let vocab: Vec<&str> = label_pool();
        let loaded = io::load_detections_with_vocab(&path, &vocab).unwrap();
        prop_assert_eq!(&loaded, &dets);
        prop_assert_eq!(io::detections_to_bytes(&loaded), bytes);
    }

    /// Candidate lists stay sorted and inside [0, 1] after validation.
    #[test]
    fn candidates_sorted_and_bounded(det in arb_detection(0)) {
        for pair in det.candidates.windows(2) {
            prop_assert!(pair[0].score >= pair[1].score);
            if pair[0].score == pair[1].score {
                prop_assert!(pair[0].label < pair[1].label);
            }
        }
        prop_assert!(det
            .candidates
            .iter()
            .all(|c| (0.0..=1.0).contains(&c.score)));
    }

    /// Permuting image order leaves the co-occurrence table unchanged.
    #[test]
    fn table_is_permutation_equivariant(ds in arb_dataset(), seed in 0u64..1000) {
        let baseline = compute_table(&ds, SplitFilter::All);
        let mut images = ds.images.clone();
        // Fisher-Yates with a splittable stream
        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        for i in (1..images.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            images.swap(i, (state as usize) % (i + 1));
        }
        let shuffled = Dataset::new(
            ds.object_classes.clone(),
            ds.scene_classes.clone(),
            images,
        )
        .unwrap();
        prop_assert_eq!(compute_table(&shuffled, SplitFilter::All), baseline);
    }

    /// Column-stochastic and count-consistency invariants hold on any input.
    #[test]
    fn table_invariants(ds in arb_dataset()) {
        let t = compute_table(&ds, SplitFilter::All);
        for s in 0..t.scenes().len() {
            let col: f64 = (0..t.objects().len()).map(|o| t.cond(o, s)).sum();
            if t.per_scene_detections()[s] > 0 {
                prop_assert!((col - 1.0).abs() <= 1e-9);
            } else {
                prop_assert_eq!(col, 0.0);
            }
        }
        let m: usize = t.per_scene_detections().iter().sum();
        prop_assert_eq!(m, t.detection_count());
        if m > 0 {
            for o in 0..t.objects().len() {
                let mixed: f64 = (0..t.scenes().len())
                    .map(|s| t.cond(o, s) * t.per_scene_detections()[s] as f64 / m as f64)
                    .sum();
                prop_assert!((mixed - t.object_prior(o)).abs() <= 1e-9);
            }
        }
    }

    /// No prediction or ground-truth box ever lands in two match pairs.
    #[test]
    fn matching_is_one_to_one(
        image in arb_image(0),
        dets in prop::collection::vec(arb_detection(0), 0..6),
    ) {
        let matches = match_image(&dets, &image, 0.5).unwrap();
        let preds: Vec<usize> = matches.pairs.iter().map(|&(p, _, _)| p).collect();
        let gts: Vec<usize> = matches.pairs.iter().map(|&(_, g, _)| g).collect();
        prop_assert_eq!(preds.iter().collect::<BTreeSet<_>>().len(), preds.len());
        prop_assert_eq!(gts.iter().collect::<BTreeSet<_>>().len(), gts.len());
        // partition: every prediction and gt is either paired or unmatched
        prop_assert_eq!(
            matches.pairs.len() + matches.unmatched_predictions.len(),
            dets.len()
        );
        prop_assert_eq!(
            matches.pairs.len() + matches.unmatched_ground_truth.len(),
            image.objects.len()
        );
        for &(_, _, iou) in &matches.pairs {
            prop_assert!(iou >= 0.5);
        }
    }

    /// tp + fn per class equals the class's ground-truth instance count,
    /// and recall is non-increasing along any descending threshold grid.
    #[test]
    fn eval_count_conservation_and_monotone_recall(
        ds in arb_dataset(),
        dets in prop::collection::vec((0usize..8, arb_detection(0)), 0..10),
    ) {
        let ids: Vec<&str> = ds.images.iter().map(|i| i.image_id.as_str()).collect();
        if ids.is_empty() {
            return Ok(());
        }
        let dets: Vec<DetectionRecord> = dets
            .into_iter()
            .map(|(pick, mut det)| {
                det.image_id = ids[pick % ids.len()].to_owned();
                det
            })
            .collect();
        let report = evaluate(
            &ds,
            &dets,
            &EvalOptions {
                split: SplitFilter::All,
                cluster_split: SplitFilter::All,
                ..EvalOptions::default()
            },
        )
        .unwrap();
        // conservation per class
        let mut gt_counts = std::collections::BTreeMap::new();
        for image in &ds.images {
            for object in &image.objects {
                *gt_counts.entry(object.label.as_str()).or_insert(0usize) += 1;
            }
        }
        for entry in &report.per_class {
            let expected = gt_counts.get(entry.label.as_str()).copied().unwrap_or(0);
            prop_assert_eq!(
                entry.metrics.true_positives + entry.metrics.false_negatives,
                expected
            );
        }
        // monotone recall over the default descending grid
        for window in report.pr_curve.windows(2) {
            prop_assert!(window[0].threshold > window[1].threshold);
            prop_assert!(window[0].recall <= window[1].recall + 1e-12);
        }
    }
}
