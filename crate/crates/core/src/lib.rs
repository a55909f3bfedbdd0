pub mod cli;
pub mod hpl;
pub mod measure;
pub mod quantize;
pub mod rng;
pub mod sources;
