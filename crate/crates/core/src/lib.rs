//! Region-graph foundation model toolkit.
//!
//! The crate is organised as a pipeline:
//!
//! 1. [`synthgeo`] generates a seeded synthetic world (regions, per-source feature
//!    blocks, labels and time series) with known latent structure.
//! 2. [`features`] standardizes and clips feature blocks; [`graph`] builds the
//!    heterogeneous region graph (proximity, containment and similarity edges).
//! 3. [`sampling`] draws seed-anchored BFS subgraphs; [`pdfm`] trains the
//!    partitioned GraphSAGE autoencoder on them and exports embeddings.
//! 4. [`downstream`], [`baselines`] and [`bench`] evaluate embeddings on
//!    interpolation, extrapolation and super-resolution splits.
//! 5. [`forecast`] runs the base-forecaster + embedding adapter pipeline.
//!
//! [`pipeline`] ties the stages together behind fingerprinted artifacts and is what
//! the `geofm` binary drives.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the `parallel`
//! feature is enabled (the default) and plain iterators otherwise. Results never
//! depend on the number of worker threads.

pub mod baselines;
pub mod bench;
pub mod config;
pub mod downstream;
pub mod error;
pub mod features;
pub mod forecast;
pub mod graph;
pub mod io;
pub mod nn;
pub mod par;
pub mod pdfm;
pub mod pipeline;
pub mod rng;
pub mod sampling;
pub mod synthgeo;

pub use error::{Error, Result};
