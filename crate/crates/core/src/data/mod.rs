//! Dataset indexing in the MVTec layout, dihedral augmentation and synthetic textures.

pub mod augment;
pub mod index;
pub mod synth;

pub use augment::{augment, AugmentationPolicy, Transform};
pub use index::{scan_category, scan_dataset, DatasetIndex, Record, Split, GOOD};
pub use synth::{inject, make_synthetic_texture_set, render_texture, Injector, TextureKind, TextureSpec};
