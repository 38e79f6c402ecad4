//! ctxfuse fuses scene context into object-detection outputs.
//!
//! The toolkit estimates object–scene co-occurrence statistics from
//! annotated data, rescores detector candidate lists with those statistics,
//! dispatches images to scene-specific detection sources, and evaluates the
//! result with precision/recall tables, PR curves, and scene-clustered
//! confusion matrices. A seeded simulator generates synthetic datasets and
//! detector outputs so every stage is verifiable without trained networks.

pub mod eval;
pub mod io;
pub mod mnf;
pub mod model;
pub mod render;
pub mod scene;
pub mod scu;
pub mod sim;
pub mod stats;

pub use eval::{evaluate, EvalOptions, EvalReport};
pub use io::{load_detections, load_manifest, save_detections, save_manifest};
pub use model::{
    BoundingBox, Candidate, Dataset, DetectionRecord, GroundTruthObject, ImageRecord,
    ObjectLabel, SceneLabel, Split,
};
pub use scene::{ScenePrediction, SceneProvider};
pub use scu::{scu_update, scu_update_batch, FusionResult, ScuOptions};
pub use stats::{compute_cluster_key, compute_table, filter_scenes, CooccurrenceTable, SplitFilter};
