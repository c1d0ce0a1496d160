//! Probability distributions over SO(3) (matrix Fisher, Bingham) with
//! closed-form entropy and cross-entropy, Monte-Carlo verification oracles,
//! and a small teacher-student semi-supervised rotation regressor.

pub mod bessel;
pub mod bingham;
pub mod error;
pub mod fisher;
pub mod losses;
pub mod oracle;
pub mod so3;
pub mod ssl;
pub mod verify;
pub mod viz;

pub use bingham::{BinghamParams, BirdalOutput};
pub use error::{Error, Result};
pub use fisher::{FisherParams, QuadratureConfig};
pub use losses::{FilterDecision, LossValue, UnsupervisedLoss};
pub use oracle::McEstimate;
pub use so3::{ProperSvd, Rotation, UnitQuaternion};
