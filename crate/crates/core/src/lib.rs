//! Demixing of a data matrix into a low-rank part plus a dictionary-sparse
//! part, `M = L + DS`, where `S` is either entry-wise or column-wise sparse.
//!
//! The crate is organised bottom-up:
//!
//! - [`matcore`]: column-major matrices, norms, SVD, pseudo-inverse, projections
//! - [`prox`]: soft thresholding, singular value thresholding, block soft thresholding
//! - [`solver`]: accelerated proximal gradient with momentum and continuation
//! - [`diagnostics`]: incoherence measures and recovery-condition certificates
//! - [`dictlearn`]: alternating sparse coding / dictionary update
//! - [`baselines`]: pseudo-inverse RPCA / outlier pursuit and matched filters
//! - [`eval`]: ROC curves, AUC with curve flipping, λ sweeps
//! - [`dataio`]: cube (un)folding, normalization, binary formats, synthetic instances

pub mod baselines;
pub mod dataio;
pub mod diagnostics;
pub mod dictlearn;
pub mod error;
pub mod eval;
pub mod matcore;
pub mod prox;
pub mod solver;

pub use error::{Error, Result};
pub use matcore::{Mat, NormKind, SvdFactors};
pub use solver::{apg_demix, DemixConfig, DemixSolution, SparsityMode};
