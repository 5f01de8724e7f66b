//! Polytopal-mesh discretization laboratory for the anisotropic diffusion
//! problem −∇·(K∇u) = f on 2D polygonal meshes.
//!
//! Several classical schemes are implemented behind one fully discrete
//! contract ([`framework::DiscreteScheme`]):
//!
//! * nonconforming virtual elements ([`vem`], degrees 1 and 2),
//! * symmetric weighted interior penalty DG ([`dg`], degrees 1–3),
//! * hybrid and cell-centred finite volumes ([`fv`]: TPFA, HMM, MPFA-L/G).
//!
//! The [`framework`] module turns the abstract error machinery (consistency
//! dual norms, inf–sup constants, energy bounds and their quasi-optimality
//! converse, the Aubin–Nitsche identity) into executable checks, and
//! [`study`] drives convergence, anisotropy-sweep and bound-audit batches
//! with CSV output.

pub mod dg;
pub mod framework;
pub mod fv;
pub mod geometry;
pub mod linalg;
pub mod mesh;
pub mod model;
pub mod polybasis;
pub mod recon;
pub mod study;
pub mod vem;

mod error;

pub use error::{Error, Result};
