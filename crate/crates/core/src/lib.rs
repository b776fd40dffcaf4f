//! Robust polynomial regression: model families and the fixed decoder,
//! classical estimators, synthetic contaminated data, benchmark sweeps and
//! dominant-motion utilities.

pub mod bench;
pub mod datagen;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod motion;
pub mod poly;

pub use error::{Error, Result};
pub use estimators::{Classical, FitReport, IrwlsConfig, RansacConfig, Regressor};
pub use poly::{CoefficientVector, DomainGrid, FixedDecoder, GridShape, ModelSpec, RangeField};
