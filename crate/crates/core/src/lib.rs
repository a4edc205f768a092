pub mod consistency;
pub mod error;
pub mod jet;
pub mod kalman;
pub mod math;
pub mod model;
pub mod mpc;
pub mod parallel;
pub mod pose;
pub mod qp;
pub mod sim;
pub mod stats;
pub mod thrust;
pub mod ukf;

pub use error::{Error, Result};
