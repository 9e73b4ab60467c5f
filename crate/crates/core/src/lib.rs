//! Simulation, control and analysis toolkit for a low-cost, low-inertia 6-DoF
//! bimanual arm driven by 1:10 quasi-direct-drive actuators.
//!
//! Modules, bottom up:
//! - [`model`]: robot and scene descriptions, built-in arm.
//! - [`kinematics`]: forward kinematics, Jacobians, parallelogram coupling.
//! - [`actuation`]: current/torque calibration maps, PD control, payload statics.
//! - [`sim`]: arm dynamics, free bodies, penalty contacts, domain randomisation.
//! - [`env`]: non-prehensile bump and card tasks, policies, CEM trainer.
//! - [`retarget`]: human elbow/wrist keypoints to joint trajectories.
//! - [`analysis`]: repeatability, ballistics, impact and speed metrics.
//! - [`cli`]: experiment runners behind the `armada` binary.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actuation;
pub mod analysis;
pub mod cli;
pub mod env;
pub mod kinematics;
pub mod model;
pub mod retarget;
pub mod rng;
pub mod sim;
