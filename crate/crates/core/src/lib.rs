//! Time-efficient Hamiltonians between isospectral quantum states.
//!
//! Given density matrices `ρ` and `σ = WρW†`, the solver iteratively strips
//! the component of `H = i log O` that commutes with `ρ` until the remaining
//! generator drives `ρ → σ` with no wasted energy. Speed-limit bounds and
//! efficiency measures score the result; the experiment layer runs seeded
//! sweeps over random problems.

pub mod error;
pub mod cli;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod mask;
pub mod metrics;
pub mod parallel;
pub mod solver;
pub mod states;
pub mod stats;

pub use error::{Error, Result};
pub use linalg::{ComplexMatrix, NumericPolicy, C64};
pub use mask::MaskSpec;
pub use solver::{solve, InitialPhases, MaskSide, SignConvention, SolverConfig, SolverRun};
pub use states::{DensityMatrix, Ensemble, IsospectralPair, PairMode, RngSeed};
