//! Periodic event-triggered control of nonlinear plants over asynchronous
//! networks with large transmission delays.
//!
//! The crate is organised bottom-up:
//!
//! - [`protocols`]: scheduling updates `h` and their storage functions `W`.
//! - [`hybrid`]: the hybrid state, flow field and the three jump maps.
//! - [`storage`]: the delay-adjusted storage function `W̃` and lifted constants.
//! - [`certify`]: the Riccati-type `φ` ODE, feasibility conditions and MASP search.
//! - [`trigger`]: dynamic event triggers in four capability profiles.
//! - [`netsim`]: schedules, delays, the event-driven executor and sweeps.
//! - [`monitor`]: the Lyapunov certificate `U` evaluated along traces.
//! - [`registry`]: the two built-in scenarios (polynomial plant, robot arm).

pub mod certify;
pub mod error;
pub mod hybrid;
pub mod math;
pub mod monitor;
pub mod netsim;
pub mod protocols;
pub mod registry;
pub mod scenario;
pub mod storage;
pub mod trigger;

pub use error::{Error, Result};
