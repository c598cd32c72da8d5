//! Sidewalk hazard detection with a convolutional variational autoencoder
//! and a one-class SVM.
//!
//! Frames are scored by how badly the autoencoder reconstructs them. Frames
//! that look anomalous have their latent mean vector normalized, reduced with
//! PCA and passed to a one-class SVM trained on known benign anomalies
//! (manhole covers, utility boxes). Anomalies the SVM does not recognize are
//! reported as hazards together with an error heatmap and bounding box.

pub mod dataio;
pub mod error;
pub mod evalkit;
pub mod latentprep;
pub mod nncore;
pub mod ocsvm;
pub mod pipeline;
pub mod vae;

pub use error::{Error, Result};
pub use nncore::{Real, Tensor};
