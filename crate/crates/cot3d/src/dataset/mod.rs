//! Synthetic benchmark generation, record IO, splits, the remote-annotator
//! client, and the review sampler.

pub mod annotator;
pub mod records;
pub mod shapes;

pub use annotator::{AnnotatorClient, AnnotatorRequest, AnnotatorResponse, PartInfo};
pub use records::{
    audit_text_regeneration, build_dataset, build_dataset_with_points, read_records,
    sample_review_manifest, split_dataset, write_records, DatasetRecord, FormatMix, Split,
    SubsetKind, DEFAULT_POINTS,
};
pub use shapes::{generate_shape, Affordance, Part, ShapeFamily, ShapeSpec, SizeParams, Surface};
