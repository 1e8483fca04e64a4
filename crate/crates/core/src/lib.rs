//! Numerical toolkit for the space-time geometry of dissipation measures.
//!
//! The crate is organised around four pieces:
//!
//! * [`exponents`]: closed-form dimension exponents `s` and time-anisotropy
//!   parameters `alpha` for Euler, Navier–Stokes and general conservation
//!   laws, with the `r = ∞` / `q = ∞` branches written out explicitly.
//! * [`aniso_measure`]: discrete measures on `R^d × R`, anisotropic cylinders
//!   `B_δ(x) × (t − δ^α, t + δ^α)`, box counting, density ladders and
//!   covering estimates.
//! * [`weak_balance`]: weak-form energy and entropy balances of gridded
//!   fields tested against explicit cutoffs, together with the Hölder bounds
//!   that control them.
//! * [`fixtures`]: analytic and semi-analytic solutions used as ground truth
//!   (power-law divergence fields, Burgers shocks, a viscous Burgers solver).
//!
//! [`io`] holds the text/binary file formats shared by the command-line tool.

pub mod aniso_measure;
pub mod error;
pub mod exponents;
pub mod fixtures;
pub mod io;
pub mod numerics;
pub mod weak_balance;

pub use error::{Error, Result};
