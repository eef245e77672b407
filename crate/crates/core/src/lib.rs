//! Distilling deterministic nonlinear MPC into a measurement-window output feedback.
//!
//! Offline, sampled `(x0, w)` pairs are solved as deterministic optimal
//! control problems ([`ocp`]); each solution is sliced into many
//! (measurement window, optimal control) samples ([`datagen`]); a random
//! forest learns the window-to-control-class map ([`learner`]); and the
//! resulting feedback is compared in closed loop against a nominal design and
//! the perfect-knowledge optimum ([`cloop`]).

pub mod cli;
pub mod cloop;
pub mod datagen;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod learner;
pub mod ocp;

pub use error::{Error, Result};
