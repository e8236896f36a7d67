pub mod analysis;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod features;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod rng;
pub mod synthetic;
pub mod training;
