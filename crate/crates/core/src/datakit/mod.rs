//! Dataset manifests, fold splitting, near-duplicate filtering and the
//! synthetic proxy generator.

pub mod dedup;
pub mod folds;
pub mod manifest;
pub mod synth;

pub use dedup::{keep_all, near_duplicate_filter, Cluster, DedupOutcome, EmbeddingVector};
pub use folds::{stratified_folds, FoldAssignment};
pub use manifest::{
    class_counts, load_manifest, save_manifest, AgeGroup, BodyPart, BodyPartBox, ClassCounts,
    ImageRecord, PersonBox, Sex, SplitAttributes,
};
pub use synth::{generate_synthetic_dataset, GeneratorConfig, SyntheticDataset};
