//! Monte Carlo campaigns, the Kalman oracle and validation suites.

pub mod campaign;
pub mod kalman;
pub mod validate;

pub use campaign::{monte_carlo, rmse_from_logs, Arm, Campaign, RmseReport};
pub use kalman::{kalman_oracle, KalmanOracle};
pub use validate::{run_suite, Check, Report, Suite};
