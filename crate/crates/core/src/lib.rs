//! Identification of a randomly activated subset of users with AP-assigned
//! transmission schedules, K-user signature detection and successive
//! interference cancellation.
//!
//! * [`model`]: configuration types and the closed-form pmfs.
//! * [`scheduler`]: seeded, rateless slot schedules.
//! * [`contention`]: batch activation and integer-adder slot observations.
//! * [`decoder`]: the peeling / SIC resolution engine.
//! * [`estimator`]: online MAP estimate of the number of active users.
//! * [`evolution`]: asymptotic and-or tree analysis.
//! * [`harness`]: contention periods, Monte Carlo aggregation and sweeps.
//! * [`export`]: CSV / JSON-lines I/O.

pub mod contention;
pub mod decoder;
pub mod error;
pub mod estimator;
pub mod evolution;
pub mod export;
pub mod harness;
pub mod model;
pub mod scheduler;

pub use error::{Error, Result};
