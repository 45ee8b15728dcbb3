pub mod adsm;
pub mod config;
pub mod error;
pub mod geometry;
pub mod mcmc;
pub mod nmix;
pub mod reservoir;
pub mod rng;
pub mod stochastic;
pub mod sttm;
pub mod diagnostics;
pub mod ingestion;
pub mod simulator;
pub mod persist;
pub mod pipeline;
