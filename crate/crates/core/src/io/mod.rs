//! File formats, preprocessing and synthetic data.

mod export;
mod load;
mod pca;
mod synthetic;

pub use export::{
    export_document, export_hierarchy, hierarchy_from_json, hierarchy_to_dot, hierarchy_to_json,
    ExportFormat, ExportOptions, ExportedHierarchy, ExportedNode, DEFAULT_TOP_FEATURES,
};
pub use load::{load_dataset, parse_csv, parse_libsvm, Format, LoadOptions};
pub use pca::{pca_reduce, standardize};
pub use synthetic::{generate_synthetic, SyntheticSpec};
