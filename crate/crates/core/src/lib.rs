//! Safety-filtered control for a differential-drive robot under parametric
//! model uncertainty.
//!
//! The crate provides:
//!
//! * a control-affine plant model and deterministic rollout machinery
//!   ([`dynamics`]),
//! * barrier functions with analytic Lie derivatives, relative-degree
//!   certification, pole-placement gains and higher-order barrier chains
//!   ([`barrier`]),
//! * a closed-form scalar quadratic-program safety filter ([`qp`]),
//! * an online regressor that learns the mismatch between the nominal and
//!   true barrier dynamics from rollout data ([`learner`], [`mlp`]),
//! * a goal-seeking nominal controller ([`control`]),
//! * scenario files and experiment orchestration ([`scenario`],
//!   [`experiments`]).
//!
//! The central loop: a nominal controller proposes a wheel-speed difference,
//! the filter projects it onto the half-line(s) implied by each barrier's
//! second-derivative condition, and the learner corrects those half-lines so
//! that a filter synthesized from an inaccurate model becomes safe for the
//! true plant.

pub mod barrier;
pub mod control;
pub mod dynamics;
pub mod experiments;
pub mod learner;
pub mod mlp;
pub mod qp;
pub mod scenario;

pub use barrier::{BarrierSpec, EcbfGain, HocbfChain, LieBundle};
pub use control::GoalSpec;
pub use dynamics::{RobotState, StopReason, SystemParams, TrajectoryLog};
pub use learner::{EstimatorModel, ReplayBuffer, TrainConfig, TransitionSample};
pub use qp::{FilterResult, HalfspaceConstraint};
pub use scenario::ScenarioConfig;
