//! Wavelet-domain spread-spectrum watermarking with GRS and classical filter banks.

pub mod attacks;
pub mod csv_util;
pub mod detector;
pub mod dwt2d;
pub mod error;
pub mod filterbank;
pub mod fixtures;
pub mod harness;
pub mod image_io;
pub mod matrix;
pub mod metrics;
pub mod watermark;

pub use error::{Error, Result};
