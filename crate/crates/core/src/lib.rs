//! Tracking-preserving performance boosting for nonlinear control systems.
//!
//! A pre-stabilized plant (here: point-mass robots under integral control) is
//! wrapped in an internal-model loop. The controller reconstructs the process
//! noise with a copy of the plant model and feeds it, together with the
//! reference, to a boosting operator `M = M1 ⊙ M2`. As long as `M` maps
//! square-summable disturbances to square-summable outputs, the closed loop
//! keeps tracking every reference the base controller tracks, whatever the
//! operator parameters are. Performance can therefore be optimized without
//! constraints by differentiating through closed-loop rollouts.
//!
//! The crate is `no_std` with `alloc`. Files, plots, parallelism and the CLI
//! live in the `rpb` companion crate.

#![no_std]
#![deny(rust_2018_idioms)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod boost;
pub mod closedloop;
pub mod error;
pub mod linalg;
pub mod plant;
pub mod ren;
pub mod robust;
pub mod scalar;
pub mod signals;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use signals::Signal;
