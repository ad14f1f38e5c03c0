//! Labelled image collections: CSV manifests, seeded augmentation,
//! origin-aware splitting, and a synthetic lawn-scene generator whose labels
//! are exact pixel counts.

mod augment;
mod manifest;
mod split;
mod synth;

pub use augment::{augment_image, generate_augmented_dataset, AugmentParams, AugmentTransform};
pub use manifest::{load_manifest, save_manifest, Manifest, ManifestRecord, MANIFEST_HEADER};
pub use split::{allocate, split_dataset, SplitSpec, Splits};
pub use synth::{generate_synthetic_scene, render_scene, write_synthetic_dataset, PixelClass, Scene, SceneConfig};
