//! Event-stream 6DoF pose tracking against a 3D line-segment map.
//!
//! The crate is organized around a window-based tracking loop: events are
//! collected in short temporal windows, the state is predicted once to the
//! window center, the map segments are projected and registered in a
//! tessellation grid, and every event is matched to its nearest projected
//! line and applied as a scalar Kalman update on the SO(3) manifold.
//!
//! Alongside the tracker live a synthetic event simulator (closing the loop
//! without camera hardware), evaluation metrics, and binary/text file formats
//! shared by the command-line tools.

pub mod bench;
pub mod camera;
pub mod config;
pub mod eval;
pub mod filter;
pub mod io;
pub mod lie;
pub mod matcher;
pub mod motion;
pub mod rng;
pub mod sim;
