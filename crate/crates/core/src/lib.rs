//! First observed passage analytics for a network losing nodes and weight
//! under a marked Poisson attack stream that is only observed at the epochs
//! of an independent renewal process.
//!
//! * [`model`] holds the parameters and the primitive samplers.
//! * [`analytic`] evaluates the closed-form transforms, means and the
//!   crossing-time distribution function.
//! * [`simulator`] generates seeded realizations of the same process.
//! * [`validate`] compares the two.
//! * [`cli`] is the command-line front end.

pub mod analytic;
pub mod cli;
pub mod model;
pub mod simulator;
pub mod validate;
