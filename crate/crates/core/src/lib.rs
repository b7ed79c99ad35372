//! Complex and real moment-SOS hierarchies for polynomial optimization.
//!
//! Problems are posed over complex variables `z` (Hermitian polynomials in
//! `z, z̄`) or real variables `x`. The pipeline:
//!
//! - [`pop`]/[`poly`]: problem data and polynomial algebra;
//! - [`sparsity`]: chordal clique plans and per-constraint orders;
//! - [`symmetry`]: balanced/even zero masks;
//! - [`relaxation`]: moment relaxation assembly;
//! - [`sdp`]: interior-point solver, [`interchange`]: files for external solvers;
//! - [`certify`]: rank tests, atom extraction, SOS certificates;
//! - [`multiorder`]: mismatch-driven order updates;
//! - [`opf`]: optimal power flow front end.

pub mod certify;
pub mod error;
pub mod interchange;
pub mod multiorder;
pub mod opf;
pub mod poly;
pub mod pop;
pub mod relaxation;
pub mod sdp;
pub mod sparsity;
pub mod symmetry;

pub use error::{Error, Result};
