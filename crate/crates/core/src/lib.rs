pub mod cpg;
pub mod embedding;
pub mod graphormer;
pub mod error;
pub mod fingerprint;
pub mod io;
pub mod lattice;
pub mod lifting;
pub mod metrics;
pub mod pipeline;
pub mod risk;
pub mod ssckg;

pub use error::{Error, Result};
