pub mod checks;
pub mod data;
pub mod deform;
pub mod error;
pub mod gcn;
pub mod graph;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod tensor;
pub mod tube;

pub use error::{Error, Result};
