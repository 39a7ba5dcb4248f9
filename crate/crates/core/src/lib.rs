//! Core engine for a residual-MLP point-cloud classifier.
//!
//! Everything needed to build, train, and evaluate the network lives here:
//! a small dense [`tensor`] type, a reverse-mode [`autodiff`] tape over a
//! closed set of operations, point-cloud [`geometry`] kernels (farthest-point
//! sampling, k-nearest-neighbour grouping, normalization, augmentation), the
//! [`model`] itself (grouping + geometric affine + residual MLP stages), a
//! synthetic [`data`] generator, and the [`train`] loop (SGD with Nesterov
//! momentum, cosine learning-rate schedule, accuracy metrics).
//!
//! The crate is `no_std`-compatible: it needs only `alloc` plus a float math
//! provider. With default features it uses `std`; for `no_std` targets build
//! with `--no-default-features --features libm`. File I/O, checkpoint and
//! dataset codecs, and the command-line driver live in the companion crate
//! `pointmlp-cli`.
//!
//! Determinism is a design contract throughout: every source of randomness
//! is an explicit [`rng::Xoshiro256StarStar`] argument, kernels accumulate
//! in a fixed order, and the optional `parallel` feature partitions work
//! owner-computes so results are bit-identical for any thread count.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(missing_docs)]
#![warn(clippy::undocumented_unsafe_blocks)]

extern crate alloc;

#[cfg(not(any(feature = "std", feature = "libm")))]
compile_error!("pointmlp-core requires either the `std` or the `libm` feature");

pub mod autodiff;
pub mod data;
pub mod geometry;
pub(crate) mod math;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use tensor::Tensor;
