//! Labeled micro-expression samples: data model, JSON-lines manifests,
//! a deterministic synthetic composite-dataset generator with
//! controllable pseudo-domain shift, and a content-hashed flow-map
//! cache. Real pre-cropped data can be used by hand-writing a manifest
//! over P5 frames.

mod cache;
mod error;
mod generate;
mod manifest;

pub use cache::{precompute_flows, CacheEntry, CacheIndex, FlowCache, CACHE_INDEX_VERSION};
pub use error::{DataError, Result};
pub use generate::{
    clean_profile, default_profiles, generate_attention_probe, generate_dataset, DomainProfile,
    GeneratorConfig,
};
pub use manifest::{
    load_manifest, Label, Manifest, ManifestMeta, MotionRegion, SampleRecord, NUM_CLASSES,
};

// Frame and flow-map I/O re-exported from the flow crate, which owns
// the file formats.
pub use flow_extraction::{read_flow_map, read_frame, write_flow_map, write_frame};
