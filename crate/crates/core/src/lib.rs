//! Variational Bayes inference for latent-variable models.
//!
//! Two engines share one ensemble-accounting layer:
//!
//! * [`vbgmm`] — Gaussian mixtures with conjugate parameter posteriors,
//!   automatic component pruning, and a posterior over the number of
//!   components.
//! * [`vbbss`] — noisy linear blind source separation with a Normal mixing
//!   matrix posterior, per-instance Normal source posteriors under a
//!   Jensen-bounded logistic source prior, and a posterior over the number
//!   of sources.
//!
//! Both score every candidate structure by its converged free energy (a lower
//! bound on the log evidence whose KL term acts as the Occam factor) and
//! normalize the scores into a structure posterior. Predictive densities come
//! from refitting on the dataset augmented with the query point.

pub mod dataset;
pub mod datagen;
pub mod distributions;
pub mod ensemble;
pub mod error;
pub mod linalg;
pub mod special;
pub mod vbbss;
pub mod vbgmm;

pub use dataset::Dataset;
pub use ensemble::{
    bic_penalty, map_structure, predictive_log_density, structure_log_posterior,
    FreeEnergyReport, RefitConfig, StructureEntry, StructurePosterior, VariationalRefit,
};
pub use error::{Result, VbError};
