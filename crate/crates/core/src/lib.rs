//! Contrastive counterfactual learning (CCL) for recommendation under exposure bias.
//!
//! The crate covers the whole experimental loop:
//!
//! * [`dataset`] loads Coat-style rating matrices and user/item/rating triples,
//!   binarizes ratings and tracks which pairs were exposed during training.
//! * [`exposure`] estimates propensity scores (naive Bayes, logistic regression)
//!   and square-root item popularity.
//! * [`model`] is the embedding + MLP scorer with hand-derived gradients,
//!   the rating losses (log, focal, IPS, SNIPS) and an Adam optimizer.
//! * [`ccl`] holds the three positive samplers and the in-batch contrastive loss.
//! * [`trainer`] runs the joint objective `L_rec + lambda * L_ccl` with early stopping.
//! * [`metrics`] evaluates on uniformly exposed test data (AUC, NDCG, Recall, MRR, ...).
//! * [`simulator`] generates confounded synthetic data with known ground truth.
//! * [`experiment`] ties everything into multi-seed runs and result tables.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ccl;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod exposure;
pub mod metrics;
pub mod model;
pub mod simulator;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
