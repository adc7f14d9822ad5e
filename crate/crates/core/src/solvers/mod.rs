//! Ground-truth PDE solvers.

pub mod burgers;
pub mod darcy;
pub mod grid;
pub mod mesh;
pub mod newton;
pub mod ns;
pub mod pb_fem;
pub mod pb_grid;
pub mod pnp;

pub use burgers::{etdrk4_burgers, BurgersConfig};
pub use darcy::darcy_solve;
pub use grid::{assemble_laplacian, Grid, Laplacian};
pub use mesh::Mesh;
pub use newton::HomotopyConfig;
pub use ns::{enstrophy, ns_rollout, NsConfig};
pub use pb_fem::{solve_pb_fem, FemSystem};
pub use pb_grid::{pb_residual, solve_pb_grid, PbSolution};
pub use pnp::{gummel_pnp, pnp_centered_residual, PnpConfig, PnpSolution};
