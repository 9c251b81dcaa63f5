pub mod decode;
pub mod error;
pub mod eval;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod rl;
pub mod rng;
pub mod sft;
pub mod tokenizer;
pub mod world;

pub use error::{GenRecError, Result};
