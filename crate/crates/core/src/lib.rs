//! Predicting infrastructure-quality survey outcomes from multi-band
//! satellite patches.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense tensors and a reverse-mode autodiff tape.
//! * [`nn`]: residual classifiers, Xavier initialization, channel extension
//!   of pretrained checkpoints and the checkpoint file format.
//! * [`optim`]: masked multi-label binary cross-entropy, Adam, epoch loop.
//! * [`data`]: survey and raster ingestion, cropping/flipping/normalization,
//!   geocode-safe splits and a synthetic dataset generator.
//! * [`baselines`]: nightlights and OpenStreetMap logistic regressions,
//!   nearest-neighbour spatial interpolation and the cross-label oracle.
//! * [`metrics`]: confusion counts, precision/recall/F1/accuracy, AUROC,
//!   simple matching coefficient and pooled K-fold aggregation.
//! * [`experiment`]: configuration, run orchestration and exports behind the
//!   `infrasight` command line tool.

pub mod baselines;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod data;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use error::{Error, ErrorClass, Result};
pub use rng::RngState;
