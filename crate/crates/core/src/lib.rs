//! Semi-supervised latent-space shaping for image ensembles.
//!
//! Convolutional autoencoders (plain, variational and β-variational) are
//! trained on pseudo-labelled images with a reconstruction loss plus either a
//! differentiable soft-silhouette clustering loss or a margin contrastive
//! loss. The latent vectors of the hand-labelled subset are projected to 2D
//! with a UMAP-style optimizer and scored by their silhouette.

pub mod datasets;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod ndmath;
pub mod par;
pub mod projection;
pub mod pseudolabel;

pub use error::{Error, Result};
