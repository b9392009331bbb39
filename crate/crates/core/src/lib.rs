//! Simulation and analysis toolkit for noiseless non-adaptive group testing.
//!
//! Items are indexed `0..n`. A [`model::TestDesign`] holds the bipartite
//! item/test incidence structure; [`designs`] builds random designs,
//! [`decoders`] recovers the defective set, [`thresholds`] evaluates the
//! closed-form test budgets, [`disguise`] implements the totally-disguised
//! item machinery behind the algorithm-independent lower bound, and
//! [`harness`] runs reproducible Monte Carlo experiments on top of all of it.

// Parameter checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decoders;
pub mod designs;
pub mod disguise;
pub mod error;
pub mod harness;
pub mod model;
pub mod stream;
pub mod thresholds;

pub use error::{Error, Result};
pub use model::{DefectiveSet, OutcomeVector, Prior, TestDesign};
