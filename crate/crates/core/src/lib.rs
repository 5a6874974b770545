pub mod bench;
pub mod bnc;
pub mod bounds;
pub mod conic;
pub mod cuts;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod model;

pub use error::{QpError, Result};
