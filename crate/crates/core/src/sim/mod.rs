//! Synthetic multi-channel B1+ data: coil fields, phantoms, slicing,
//! augmentation and the dataset format.

pub mod augment;
pub mod biot_savart;
pub mod dataset;
pub mod phantom;

pub use augment::{augment_rotations, rotate_sample, DEFAULT_ANGLES};
pub use biot_savart::{b1_plus, biot_savart_field, circular_loop, field_at, CoilArray, Segment, WaveModel, MU0};
pub use dataset::{load_dataset, save_dataset, DatasetError, DatasetManifest, ManifestEntry, ReferenceMeta, ReferenceRecord};
pub use phantom::{generate_volume, scale_set, select_slices, slice_and_mask, PhantomSpec, SliceSelection, Volume};

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation spec: {0}")]
    Spec(String),
}
