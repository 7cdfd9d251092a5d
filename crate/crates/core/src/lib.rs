//! Numerical toolkit for matrices over ℤ with off-diagonal decay.
//!
//! The crate computes the usual decay-algebra norms (Jaffard, convolution
//! dominated, derivation domains, Dales–Davie), Besov and hypersingular
//! smoothness seminorms for the phase automorphism group, evaluates explicit
//! norm-controlled inversion bounds, and checks iterated quotient rules as
//! exact matrix identities on finite windows.

pub mod besov_smoothness;
pub mod bounds;
pub mod error;
pub mod experiments;
pub mod lattice_matrix;
pub mod norms_weights;
pub mod quadrature;
pub mod quotient_rules;
mod serde_ext;
pub mod special;

pub use error::{Error, Result};
pub use lattice_matrix::{IndexWindow, LatticeMatrix, StructureTag, ToeplitzSymbol};
pub use num_complex::Complex64;
