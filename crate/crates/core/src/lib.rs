pub mod agreement;
pub mod align;
pub mod beam;
pub mod corpus;
pub mod editor;
pub mod error;
pub mod generation;
pub mod metrics;
pub mod nn;
pub mod rationalizer;
pub mod sparsemap;

pub use error::{CoreError, Result};
