//! Volumes, glimpses, context records and the synthetic benchmark.

mod context;
mod glimpse;
mod manifest;
mod split;
mod synth;
#[allow(clippy::module_inception)]
mod volume;

pub use context::{
    cosine, impute_context, ContextRecord, Field, FieldKind, FieldValue, Imputation, Standardizer, ENCODED_DIM,
};
pub use glimpse::{
    clamp_location, extract_glimpse, glimpse_box, loc_to_voxel, voxel_to_loc, BoundingBox, GlimpseRecord, Location,
};
pub use manifest::{
    read_context_bank, write_context_bank, write_dataset, Manifest, ManifestEntry, CONTEXT_BANK_FILE, MANIFEST_FILE,
    MANIFEST_VERSION,
};
pub use split::{split_by_subject, split_counts, Split};
pub use synth::{
    derive_seed, generate_case, generate_dataset, generate_scan, octant, signal_center_voxels, LabeledCase,
    SyntheticConfig,
};
pub(crate) use volume::write_atomic;
pub use volume::{read_volume, write_volume, Volume3D, HEADER_LEN, MAGIC};
