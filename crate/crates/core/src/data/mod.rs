//! Manifests, feature bags, neighborhood assembly, synthetic data and splits.

mod bag;
mod example;
mod manifest;
mod split;
mod synth;

pub use bag::{load_feature_bag, save_feature_bag, FeatureBag, FEATURE_MAGIC, FEATURE_VERSION};
pub use example::{
    assemble_example, load_volume_bags, neighborhood_positions, training_examples, TrainingExample,
};
pub use manifest::{
    load_manifest, load_manifest_resolved, manifest_to_string, parse_manifest, save_manifest,
    SliceRecord, VolumeManifest, MANIFEST_HEADER,
};
pub use split::{loocv_splits, Fold};
pub use synth::{
    generate_planted_volume, generate_synthetic, signal_count, ContextMode, PlantedSpec, SynthSpec,
    MANIFEST_NAME,
};
