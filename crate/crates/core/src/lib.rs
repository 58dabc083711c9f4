//! Simulator and controllers for dual-arm multiple peg-in-hole assembly
//! guided by wrist cameras.
//!
//! Layering, bottom up: [`spatial`] math, [`camera`] and [`perception`],
//! the [`virtual_force`] pipeline, the object-level [`object_control`] and
//! arm-level [`arm`] controllers, the [`sim`] world and episode loop, and
//! [`batch`] / [`harness`] for runs and reports.

pub mod arm;
pub mod batch;
pub mod camera;
pub mod config;
pub mod error;
pub mod harness;
pub mod object_control;
pub mod perception;
pub mod sim;
pub mod spatial;
pub mod virtual_force;

pub use error::{Error, Result};
