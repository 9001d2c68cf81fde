//! Numerical laboratory for weighted elliptic inequalities and weighted
//! Hodge decompositions of one-forms on two-dimensional domains.
//!
//! The crate discretizes bounded planar domains (rectangles, disks) as
//! uniform lattices with an interior mask and an optional conformally flat
//! metric `g = e^{2psi} delta`. On top of that sit:
//!
//! * [`weights`] — admissible weight families `omega` (products of point
//!   distances, exponentials of Green's functions) together with their
//!   gradients, singular/critical node sets, and a checker for the weak
//!   weight equation.
//! * [`inequalities`] — harnesses evaluating both sides of the three
//!   weighted inequalities (interpolation, homogeneous elliptic, and the
//!   epsilon-elliptic form with its explicit constant) on seeded test
//!   functions, plus refinement sweeps.
//! * [`hodge`] — unweighted and weighted Hodge decompositions of
//!   compactly supported one-forms via conjugate-gradient solves of the
//!   Euler–Lagrange equations, with a gap estimate between the two
//!   co-exact potentials.
//! * [`spectral`] — first Dirichlet eigenvalue by inverse power iteration
//!   and log-polar cylinder energies for the mode analysis on the
//!   punctured disk.

pub mod calculus;
pub mod error;
pub mod field;
pub mod grid;
pub mod hodge;
pub mod inequalities;
pub mod rng;
pub mod solver;
pub mod spectral;
pub mod weights;

pub use error::{Result, WelError};
pub use field::{OneForm, ScalarField};
pub use grid::{DomainDescriptor, Grid2D};
pub use weights::Weight;
