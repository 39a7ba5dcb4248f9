//! Std companion to `pointmlp-core`: file formats, epoch records, and the
//! throughput benchmark behind the `pointmlp` binary.
//!
//! The core crate stays `no_std`-compatible; everything touching the
//! filesystem, wall clocks, or process state lives here.

pub mod bench;
pub mod formats;
pub mod records;
