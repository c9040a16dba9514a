//! Exact symbolic engine for Ward identity checks in perturbative scalar QED.
//!
//! All arithmetic is exact: coefficients live in the Gaussian rationals
//! extended by formal commuting symbols (the coupling `e`, the mass `m`, the
//! interpolation parameter `c`, and ansatz constants). There is no floating
//! point anywhere in the engine.
//!
//! Module map:
//! - [`scalar`]: exact coefficient arithmetic.
//! - [`canon`]: canonical relabeling of contracted Lorentz indices.
//! - [`fields`]: polynomials in the basic fields and their first derivatives,
//!   with the charge and conjugation operations on them.
//! - [`delta`]: derivatives of multi-point delta distributions in a momentum
//!   representation, with divergence, potential (anti-divergence) solving,
//!   and symmetrization.
//! - [`wick`]: two-point kernels and tree-level order-2 products, including
//!   the order-2 Ward identity check and the local part of the order-2
//!   S-matrix.
//! - [`rengroup`]: finite renormalization maps acting on interactions.
//! - [`tproduct`]: formal time-ordered product expressions with
//!   delta-distribution coefficients, pair-partition expansion, divergence
//!   rewriting, and the identity-equivalence certificates.
//! - [`anomaly`]: exact solvers for the divergence equations constraining
//!   local anomaly terms, case by case.
//! - [`unitary`]: truncated power series in the gauge-flow parameter and the
//!   associated derivation checks.
//! - [`dsl`]: parser and printer for the small input language used by the
//!   command line tool.

pub mod anomaly;
pub mod canon;
pub mod delta;
pub mod dsl;
pub mod fields;
pub mod rengroup;
pub mod scalar;
pub mod tproduct;
pub mod unitary;
pub mod wick;
