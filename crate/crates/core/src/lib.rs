//! Stationary multi-factor Ho-Lee term-structure engine.
//!
//! Forward rates move on a recombining lattice driven by an (n+1)-valued
//! factor increment. The drift is fixed by a state-price density so that
//! every model the engine assembles is arbitrage-free by construction, and
//! the checks in [`noarb`] confirm it node by node.

pub mod cli;
pub mod drift;
pub mod error;
pub mod factors;
pub mod grid;
pub mod ikrs;
pub mod io;
pub mod lattice;
pub mod model;
pub mod noarb;
pub mod pca;
pub mod sensitivity;
pub mod simulate;
pub mod volstruct;

pub use error::{Error, Result};
pub use factors::{FactorDistribution, OrthogonalSpec};
pub use lattice::{Lattice, LatticeNode};
pub use model::{Dynamics, ForwardCurve, TermStructureModel};
pub use volstruct::{CoarseVolMatrix, VolatilityTermStructure};
