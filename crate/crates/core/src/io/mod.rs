//! Files: models, datasets and walk results.

mod idx;
mod model;
mod record;
mod table;

pub use idx::{
    encode_idx_images, encode_idx_labels, load_idx_images, load_idx_labels, parse_idx_images,
    parse_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use model::{load_model, parse_model, save_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use record::{
    format_float, read_walk, write_walk, write_walk_csv, WalkRecord, WALK_MAGIC, WALK_VERSION,
};
pub use table::{load_csv_features, read_csv_features, FeatureTable, MinMax};
