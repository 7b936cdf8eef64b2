pub mod error;
pub mod io;
pub mod linalg;
pub mod par;
pub mod rng;
pub mod models;
pub mod sampler;
pub mod embedding;
pub mod alignment;
pub mod asymptotics;
pub mod ustats;
