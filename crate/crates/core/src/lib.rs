//! Simultaneous motion and contact-force planning for a manipulator tool on a
//! soft surface.
//!
//! The crate is organised bottom-up:
//!
//! * [`contact`]: Hertz contact, sliding friction and the contact-force ODE.
//! * [`multibody`]: manipulator and tool dynamics assembled into a 29-state system.
//! * [`ddp`]: an iLQR/DDP solver for unconstrained (augmented) subproblems.
//! * [`cost`]: the tracking cost of the contact task.
//! * [`admm`]: constraint splitting around the DDP solver.
//! * [`identification`]: material-parameter fitting from measurement records.
//! * [`harness`]: scenarios, controller rollouts and trace comparison.
//!
//! World frame convention: the z axis points *into* the surface, along the
//! pressing direction, so the default surface normal is `(0, 0, 1)` and
//! gravity is `(0, 0, +9.81)`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admm;
pub mod config;
pub mod contact;
pub mod cost;
pub mod ddp;
pub mod error;
pub mod harness;
pub mod identification;
pub mod io;
pub mod multibody;
mod serde_vec;

pub use error::{Error, Result};
