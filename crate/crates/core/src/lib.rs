pub mod bench;
pub mod data;
pub mod dpmmvn;
pub mod dpmpm;
pub mod error;
pub mod gain;
pub mod inference;
pub mod glm;
pub mod mice;
pub mod missingness;
pub mod rng;
pub mod stick;
pub mod tree;

pub use error::{Error, Result};
