//! Core library for human-in-the-loop search of a latent face space.
//!
//! * [`imagecore`]: Lanczos resampling, cropping, pixel correlation, PNG I/O.
//! * [`align`]: landmark Procrustes alignment of a portrait corpus.
//! * [`facespace`]: decoder contract, eigenface model, latent-space tools.
//! * [`evolve`]: rank-aggregated evolution-strategies search.
//! * [`turing`]: two-alternative forced-choice test design and analysis.

pub mod imagecore;
pub mod align;
pub mod facespace;
pub mod evolve;
pub mod turing;
