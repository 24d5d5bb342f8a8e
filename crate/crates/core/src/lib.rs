//! Inductive spatiotemporal graph learning for regional demand.
//!
//! The crate estimates demand for regions that have no history (kriging) and
//! forecasts future demand for observed regions with one shared network. Each
//! region is specialized by a precomputed location encoding, and regions
//! exchange information over a proximity graph and an encoding-derived
//! functional graph.
//!
//! Module map:
//!
//! | Module | Contents |
//! |---|---|
//! | [`ingest`] | order aggregation, time covariates, chronological splits, `IDT1` files |
//! | [`graphs`] | proximity adjacency, shift operator, functional edges, training masks, `IGR1` files |
//! | [`encodings`] | encoding tables, probe, normalization, adapters, `IEMB` files |
//! | [`model`] | forward network, hand-written backward pass, `ICKP` checkpoints |
//! | [`training`] | joint masking-reconstruction loss, Adam, training loop |
//! | [`synth`] | GPVAR synthetic cities and the historical-average baseline |
//! | [`eval`] | metrics and the joint / transfer experiment drivers |

pub mod config;
pub mod dataset;
pub mod encodings;
pub mod error;
pub mod eval;
pub mod geo;
pub mod graphs;
pub mod ingest;
pub mod model;
pub mod nn;
pub mod real;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use real::Real;
