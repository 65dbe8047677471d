//! Personalizing visual-prosthesis stimulus encoders from pairwise
//! preferences.
//!
//! The crate is organized bottom-up:
//!
//! - [`phosphene`]: forward model from stimulus and user parameters to a
//!   rendered percept.
//! - [`encoders`]: the per-pixel baseline encoder and the deep stimulus
//!   encoder that inverts the forward model.
//! - [`preference`]: preferential Gaussian process with a probit pairwise
//!   likelihood and Laplace posterior.
//! - [`optimizer`]: champion/challenger duel proposals over a fixed
//!   candidate pool.
//! - [`agent`]: simulated participant.
//! - [`session`]: the tutorial/optimization/evaluation state machine with a
//!   replayable event log.
//! - [`experiment`]: subjects, conditions, batch simulation and analyses.

pub mod agent;
pub mod digits;
pub mod encoders;
pub mod error;
pub mod experiment;
pub mod mnist;
pub mod optimizer;
pub mod params;
pub mod percept_io;
pub mod phosphene;
pub mod preference;
pub mod session;
pub mod stats;
pub mod target;

pub use error::{Error, Result};
pub use params::{PhiBox, UserParams};

#[cfg(feature = "parallel")]
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.iter().map(f).collect()
}
