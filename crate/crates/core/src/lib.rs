//! Desk-scale simulator of heterogeneous federated learning.
//!
//! Participants hold structurally different MLPs trained on private data from
//! shifted domains. Communication happens over an unlabeled public pool: each
//! client aligns a cross-correlation matrix between its logits and the server
//! average (FCCM) and aligns its instance-similarity distribution with the
//! cross-client average (FISL). Local updating combats forgetting by
//! distilling only the non-target class relation from a snapshot teacher
//! (FNTD). Baseline strategies (SOLO, FedMD, FedDF, plain KD, conference
//! FCCL, EWC, homogeneous parameter averaging) share the same engine.
//!
//! The crate is `no_std` + `alloc`: every operation is a pure function of its
//! inputs and a seed, so runs are bit-reproducible. IO, file formats, and the
//! CLI live in the companion `hetfed` crate.

#![no_std]
#![deny(unsafe_code)]
// Guards written as `!(x > 0.0)` are deliberate: they reject NaN along with
// out-of-range values, which `x <= 0.0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod check;
pub mod data;
pub mod error;
pub mod federation;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod numerics;
pub mod seeds;

pub use error::{Result, SimError};
pub use numerics::Matrix;
