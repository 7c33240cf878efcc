//! Sequential recommendation by missing-information imputation.
//!
//! Items are split into five field tokens (ID, categories, brand, title,
//! description) and a transformer over the resulting token grid is trained
//! to recover masked fields. Next-item prediction is the special case of
//! imputing the ID of an appended all-missing item.

mod error;
pub mod data;
pub mod eval;
pub mod masking;
pub mod model;
pub mod objective;
pub mod scalar;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
