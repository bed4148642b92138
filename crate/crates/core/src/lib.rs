pub mod data;
pub mod envelope;
pub mod error;
pub mod factor;
pub mod gaussian;
pub mod gcerl;
pub mod hmc;
pub mod rank_hmc;
pub mod rng;
pub mod sinusoid;
pub mod truncnorm;

pub use error::{Error, Result};
