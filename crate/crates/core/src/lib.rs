pub mod netcore;
pub mod par;
pub mod rng;
pub mod env;
pub mod dataset;
pub mod diffusion;
pub mod trainer;
pub mod evalsuite;
