//! Two-stream consensus training for weakly-supervised temporal action
//! localization.
//!
//! Two stream models (RGB and optical flow) are trained from video-level
//! labels, then iteratively refined against a frame-level pseudo ground
//! truth built from their fused attention. Trained streams are turned into
//! scored action proposals and evaluated with mAP at IoU thresholds.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, plotting
//! and the command line live in the `tscn` companion crate.
#![no_std]

extern crate alloc;

pub mod basemodel;
pub mod consensus;
mod error;
pub mod evaluation;
pub mod localization;
pub mod losses;
pub mod numkit;
pub mod synthdata;

pub use error::{Error, Result};
