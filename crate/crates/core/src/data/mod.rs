//! Dataset ingestion, augmentation and the synthetic face fixture.

pub mod augment;
pub mod manifest;
pub mod pts;
pub mod synthetic;
