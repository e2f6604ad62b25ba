//! Decomposition of finitely generated matrix algebras into irreducible
//! representations, bipartition tables and their state-reduction maps, and a
//! variational search for quasi-classical coarse-grainings of spin chains.
//!
//! ```
//! use bipart_core::irrep::{irrep_decompose, verify_decomposition};
//! use bipart_core::numerics::Tolerance;
//! use bipart_core::systems;
//!
//! let generators = systems::toy_generators();
//! let tol = Tolerance::for_dim(8);
//! let basis = irrep_decompose(&generators, &tol)?;
//! assert_eq!(basis.block_dims(), vec![(2, 1), (2, 1), (2, 2)]);
//! let report = verify_decomposition(&basis, &generators, &tol)?;
//! assert!(report.max_residual < 1e-9);
//! # Ok::<(), bipart_core::Error>(())
//! ```

pub mod bpt;
pub mod error;
pub mod irrep;
pub mod numerics;
pub mod scattering;
pub mod systems;
pub mod variational;

mod dsu;

pub use error::{Error, Result};
pub use numerics::{ComplexOperator, Tolerance};
