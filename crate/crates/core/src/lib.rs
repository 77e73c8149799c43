pub mod dynamics;
pub mod error;
pub mod clips;
pub mod estimator;
pub mod fit;
pub mod imu;
pub mod io;
pub mod metrics;
pub mod optimizer;
pub mod qp;
pub mod rotation;
pub mod scalar;
pub mod skeleton;
pub mod weights;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Model32 = skeleton::Model<f32>;
pub type Model64 = skeleton::Model<f64>;
pub type KinematicTree32 = skeleton::KinematicTree<f32>;
pub type KinematicTree64 = skeleton::KinematicTree<f64>;
pub type MultiBody32 = dynamics::MultiBody<f32>;
pub type MultiBody64 = dynamics::MultiBody<f64>;
pub type Networks32 = estimator::Networks<f32>;
pub type Networks64 = estimator::Networks<f64>;
pub type Estimator32 = estimator::Estimator<f32>;
pub type Estimator64 = estimator::Estimator<f64>;
pub type MotionStatus32 = estimator::MotionStatus<f32>;
pub type MotionStatus64 = estimator::MotionStatus<f64>;
pub type ImuFrame32 = imu::ImuFrame<f32>;
pub type ImuFrame64 = imu::ImuFrame<f64>;
pub type Optimizer32 = optimizer::Optimizer<f32>;
pub type Optimizer64 = optimizer::Optimizer<f64>;
pub type QpProblem32 = qp::QpProblem<f32>;
pub type QpProblem64 = qp::QpProblem<f64>;
