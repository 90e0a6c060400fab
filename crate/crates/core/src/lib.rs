//! Geometric deep learning toolkit for corner-kick analysis.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: dense reverse-mode differentiation and Adam.
//! - [`cornergraph`]: the corner-kick graph schema, D2 reflections and the
//!   line-delimited dataset format.
//! - [`gnn`]: GATv2 layers, frame averaging, group convolutions and the
//!   baseline layers used by the ablation ladder.
//! - [`heads`]: receiver, shot and generative decoders with their losses.
//! - [`synth`]: synthetic corners with deterministic label oracles.
//! - [`harness`]: training, metrics, ablations and generation probes.
//! - [`retrieval`]: latent team embeddings and nearest-neighbour search.
//! - [`checkpoint`]: text checkpoints for trained models.

pub mod autodiff;
pub mod checkpoint;
pub mod cornergraph;
pub mod gnn;
pub mod harness;
pub mod heads;
pub mod retrieval;
pub mod synth;
