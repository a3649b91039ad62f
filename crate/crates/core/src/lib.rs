//! Cost forecasting and price/allocation planning for perishable products.
//!
//! The crate is organised as a pipeline:
//!
//! - [`calendar`]: solar-term lookup and the hierarchical 10-bit term code
//! - [`pipeline`]: normalization, sliding windows, CSV ingestion, synthetic data
//! - [`neuralcore`]: reverse-mode tape, convolution/attention/dense layers, Adam
//! - [`forecaster`]: the two-branch TCN + attention cost model and its metrics
//! - [`intervals`]: contiguous-slice bootstrap ensembles for weekly sales bounds
//! - [`demand`]: per-product OLS demand curves
//! - [`mcdm`]: entropy weights and TOPSIS ranking
//! - [`gaopt`]: genetic search over joint price/allocation plans

pub mod calendar;
pub mod demand;
pub mod error;
pub mod forecaster;
pub mod gaopt;
pub mod intervals;
pub mod mcdm;
pub mod neuralcore;
pub mod pipeline;
pub mod seeding;

pub use error::{Error, Result};
