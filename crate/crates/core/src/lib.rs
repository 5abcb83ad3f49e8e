pub mod dynamics;
pub mod error;
pub mod harness;
pub mod laws;
pub mod ldp;
pub mod model;
pub mod par;
pub mod poincare;
pub mod quad;
pub mod rng;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
