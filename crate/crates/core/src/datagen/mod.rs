//! Toy dataset: procedural scenes, degraded variants, manifest I/O and
//! curation filters.

mod build;
mod curate;
mod manifest;
mod scene;

pub use build::{build_dataset, scene_id, DatasetConfig, DegradationSource};
pub use curate::{curate, iqa_filters, FilterSpec, Rejection, DEFAULT_FACE_AREA, IQA_THRESHOLDS};
pub use manifest::{
    read_specs, write_specs, Dataset, Manifest, ManifestRecord, Source, Split, Variant, MANIFEST_FILE,
    SPECS_FILE,
};
pub use scene::{draw_face, gen_scene, sample_layout, FaceLayout, SceneParams, MIN_SCENE};
