//! Desk-scale conditional piano performance generation.
//!
//! The pipeline runs from a plain-text note list through an event-based
//! token codec into a relative-attention transformer autoencoder whose
//! encoder output is mean-aggregated into a single style vector. Melody
//! conditioning, latent interpolation and a distribution-overlap similarity
//! suite round out the toolkit.
//!
//! Entry points:
//! - [`notes`]: the `NoteSequence` data model and its text format
//! - [`codec`]: 388-token performance event vocabulary
//! - [`melody`]: monophonic melody extraction and the 92-token frame grid
//! - [`augment`]: pitch/time transforms and the perturbation grid
//! - [`tensor`]: reverse-mode autodiff engine and the Adam optimizer
//! - [`model`]: the transformer autoencoder itself
//! - [`train`] / [`sample`]: training loop, autoregressive sampling,
//!   latent interpolation
//! - [`metrics`]: windowed performance features, overlapping area,
//!   symmetric KL and IMQ/MMD similarity
//!
//! The `examples/` directory has one runnable program per capability; the
//! `etude` binary exposes the same operations as subcommands.

pub mod augment;
pub mod codec;
pub mod melody;
pub mod metrics;
pub mod model;
pub mod notes;
pub mod sample;
pub mod synth;
pub mod tensor;
pub mod train;

pub use notes::{Note, NoteSequence};
