pub mod audit;
pub mod downstream;
pub mod error;
pub mod fair_td;
pub mod io;
pub mod logistic;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod simulate;
pub mod truth;

pub use error::{Error, Result};
