//! Multi-modal deep Q-learning with binary and ternary spiking cross-attention.
//!
//! The crate is layered bottom-up:
//!
//! * [`tensor`]: dense tensors, reverse-mode autodiff, Adam.
//! * [`spike`]: rate encoding and leaky integrate-and-fire neurons.
//! * [`attention`]: dense, spiking (SSA) and temporal ternary (TTSA)
//!   cross-attention plus the cross-fusion layer.
//! * [`model`]: the multi-modal Q-network, the frame-stack baseline and
//!   checkpoints.
//! * [`sim`]: a deterministic highway / roundabout driving simulator.
//! * [`dqn`]: replay, exploration schedule, TD loss, training and evaluation.
//! * [`analysis`]: capacity formulas, spike-map information loss, spike
//!   density, energy estimates and operation counters.

pub mod analysis;
pub mod attention;
pub mod dqn;
pub mod error;
pub mod model;
pub mod nn;
pub mod sim;
pub mod spike;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Tensor, Tape, Var};
