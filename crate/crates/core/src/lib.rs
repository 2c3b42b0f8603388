pub mod cpg;
pub mod error;
pub mod kinematics;
pub mod leg;
pub mod pattern;
pub mod policy;
pub mod scalar;
pub mod metrics;
pub mod sim;
pub mod sweep;

pub use error::{Error, ErrorCategory, Result};

pub type GaitMatrixF64 = cpg::GaitMatrix<f64>;
pub type CpgState = cpg::OscillatorNetworkState<f64>;
pub type CpgConfigF64 = cpg::CpgConfig<f64>;
pub type Command = cpg::ModulationCommand<f64>;
pub type Style = pattern::StyleParams<f64>;
pub type Geometry = kinematics::LegGeometry<f64>;
pub type Joints = kinematics::JointAngles<f64>;
