//! Few-shot camouflaged instance segmentation toolkit.
//!
//! * [`autodiff`]: small reverse-mode tape used by every loss.
//! * [`roi`]: foreground/background split of RoI feature grids.
//! * [`triplet`], [`memory`], [`composite`]: the instance triplet loss,
//!   per-class memory banks with their contrastive loss, and the weighted
//!   training objective.
//! * [`dataset`]: COCO-style annotations and nested K-shot splits.
//! * [`mask`], [`metrics`]: mask rasterization/RLE and COCO-style AP/AR.
//! * [`trainer`]: synthetic end-to-end exercise of the losses.
//! * [`stats`]: dataset statistics reports.
//! * [`gradcheck`]: finite-difference verification of the loss gradients.

pub mod autodiff;
pub mod composite;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod mask;
pub mod memory;
pub mod metrics;
pub mod roi;
pub mod stats;
pub mod trainer;
pub mod triplet;

pub use error::{Error, Result};
