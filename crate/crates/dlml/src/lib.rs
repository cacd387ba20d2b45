//! Random walks with drift on Diestel-Leader graphs `DL(q, r)`.
//!
//! A Diestel-Leader graph is the horocyclic product of two homogeneous trees:
//! vertices are pairs `x1 x2` with `x1` in the `(q+1)`-regular tree, `x2` in the
//! `(r+1)`-regular tree and `hor(x1) + hor(x2) = 0`, where `hor` is the Busemann
//! (height) function with respect to a distinguished reference end in each tree.
//! When `q = r` the graph is a Cayley graph of the lamplighter group
//! `Z_q wr Z`.
//!
//! This crate implements, for the one-parameter family of nearest-neighbour
//! walks `P_alpha` (probability `alpha` of moving up in the first tree, split
//! uniformly over the `q` choices, probability `1 - alpha` of moving down,
//! split over the `r` choices):
//!
//! * exact tree combinatorics and the horocyclic product ([`tree`], [`dl`]),
//! * the walk itself, its projections and path sampling ([`walk`]),
//! * closed forms: hitting probabilities, tree Green kernels, the gambler's
//!   ruin coefficients, the Green kernel decomposition over base
//!   configurations, spherical functions, asymptotic estimates with their
//!   constants, and resolvent conjugation ([`closed_form`]),
//! * numerical Green kernel evaluation: exact/float solvers on finite balls
//!   and Monte Carlo estimators ([`green`]),
//! * Martin boundary kernels for the centred and drifted regimes, boundary
//!   point encodings, metrics on the compactifications and harmonicity
//!   checking ([`boundary`]),
//! * reproducible experiment drivers used by the `dlml` binary
//!   ([`experiment`]).
//!
//! Exact arithmetic is used wherever a quantity is rational (or lives in a
//! real quadratic extension); floating point enters only through explicitly
//! numerical backends. See [`algebra::Scalar`] for the shared abstraction.

pub mod algebra;
pub mod boundary;
pub mod closed_form;
pub mod dl;
pub mod error;
pub mod experiment;
pub mod green;
pub mod tree;
pub mod walk;

pub use error::{DlmlError, Result};
