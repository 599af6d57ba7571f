//! Matrix-free geometric multigrid for the stationary Stokes equations.
//!
//! Velocity lives in the Raviart–Thomas space `RT_k`, pressure in the
//! discontinuous tensor-product space `Q_k`, both on uniform Cartesian meshes
//! of the unit square or cube. The tangential velocity coupling uses the
//! symmetric interior penalty method, so the velocity block of every cell and
//! vertex patch is a Kronecker sum of univariate matrices.

pub mod error;
pub mod fem1d;
pub mod harness;
pub mod local_solver;
pub mod mesh;
pub mod multigrid;
pub mod oracle;
pub mod scalar;
pub mod smoother;
pub mod solver;
pub mod space;
pub mod stokes_op;
pub mod tensor;

pub use error::{Error, Result};
pub use local_solver::{LocalSolver, LocalSolverKind};
pub use mesh::{build_hierarchy, Coloring, Level, MeshHierarchy, VertexPatch};
pub use multigrid::{Multigrid, MultigridConfig};
pub use scalar::Real;
pub use smoother::{Smoother, SmootherStats};
pub use solver::{solve, solve_mixed, Precision, Solution, SolveReport, SolverConfig};
pub use space::{BlockVector, DofLayout};
pub use stokes_op::{Execution, OperatorContext};
