//! Acceptable choice sets for committee-governed schools and approximately
//! stable matchings for markets of such schools.
//!
//! The pipeline relaxes the integral problem to a price equilibrium
//! ([`leo`] for one school, [`meo`] for a market), reads a fractional
//! solution and a support threshold off the equilibrium, then rounds it with
//! exact rational linear algebra ([`rounding`]). Every output is checked
//! from scratch by [`verify`]; [`oracle`] gives brute-force ground truth on
//! small instances.

pub mod bench;
pub mod exec;
pub mod fixtures;
pub mod gen;
pub mod io;
pub mod leo;
pub mod meo;
pub mod model;
pub mod num;
pub mod oracle;
pub mod pipeline;
pub mod rounding;
pub mod support;
pub mod verify;

mod agent;
mod lp;

pub use model::{Instance, Matching, Member, Ranking, School, Student};
pub use num::Rational;
