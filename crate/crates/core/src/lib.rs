pub mod artifact;
pub mod error;
pub mod gaze;
pub mod loss;
pub mod metrics;
pub mod pipeline;
pub mod pseudo;
pub mod salience;
pub mod sim;
pub mod tokens;
pub mod transitions;
pub mod weights;

pub use error::{Error, Result};
