//! Multidimensional urban poverty mapping from satellite tiles.
//!
//! Three small patch-transformer encoders learn complementary traits of a
//! tile (accessibility from POI distances, morphology from building
//! footprints, economic activity from nightlight with a backdoor adjustment
//! against bright non-residential patches). District features are mean-pooled
//! tile embeddings fed to a random forest.

pub mod backdoor;
pub mod cli;
pub mod district;
pub mod encoder;
pub mod evalreport;
pub mod error;
pub mod geoindex;
pub mod imagery;
pub mod ingest;
pub mod losses;
pub mod pipeline;
pub mod rng;
pub mod traitsets;
pub mod training;

pub use error::{Error, Result};
