//! Outlier-robust recurrent mixture density models for multivariate
//! time-series anomaly detection.
//!
//! A window of past frames is summarised by stacked GRU layers (optionally
//! over several temporal resolutions, each pooled by attention) and mapped to
//! a Student-t or Gaussian mixture over the next frame. The negative
//! log-likelihood of observed frames is both the training loss and the
//! anomaly score.
//!
//! Module map:
//!
//! | module | contents |
//! |--------|----------|
//! | [`density`] | log-densities, constrained transforms, analytic gradients |
//! | [`network`] | GRU, attention, conv streams, heads, forward/backward, checkpoints |
//! | [`training`] | windowing, Adam, initialization, training loop |
//! | [`scoring`] | anomaly scores, AUC/pAUC, ensembling, contamination, baselines |
//! | [`data`] | frame sequences, synthetic generator, scaling, file formats |
//! | [`pipeline`] | end-to-end experiment runs used by the CLI and acceptance tests |

pub mod data;
pub mod density;
mod error;
pub mod linalg;
pub mod network;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod scoring;
pub mod training;

pub use error::{Error, Result};
