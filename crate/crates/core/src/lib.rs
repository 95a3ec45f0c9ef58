//! SIMP topology optimization on structured Q4 grids.

pub mod dataset;
pub mod element;
pub mod error;
pub mod fdcheck;
pub mod filter;
pub mod material;
pub mod mesh;
pub mod mma;
pub mod problem;
pub mod solve;
pub mod sparse;
pub mod stress;
pub mod topopt;

use sha2::{Digest, Sha256};

pub use error::{Error, Result};
pub use material::{Kinematics, LinearElasticMaterial, NeoHookeanMaterial};
pub use mesh::{build_grid, make_boundary, BoundaryConditions, Mesh};
pub use problem::{sample_problem, ProblemSpec, Scenario};
pub use solve::{EquilibriumState, FeModel, NewtonOptions, PartitionedSystem, SystemLayout};
pub use topopt::{optimize, OptimizationResult, ProblemContext};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Modelling choices that change generated data. Hashed into every shard
/// header and run metadata record.
pub const DECISIONS: &str = "\
simp penal=3 rho_min=1e-3
filter=cone,row-normalized,physical=W*x
q4 full integration, unit thickness, square elements
linear scenario: kappa=200e6 mu=2e6 plane stress
stress scenario: E=4.07e9 nu=0.34 sigma_lim=16.44e6 plane stress
neo-hookean: C10=1e6 D1=1e-8 plane strain, total lagrangian, dead load
newton: 10 increments, rtol=1e-6, floor=1e-9, 50 iterations, 4 halvings
stress aggregate: g2=Z^(1/q)-(1+xi), q=10 eta=3 xi=1e-7
mma: asyinit=0.5 incr=1.2 decr=0.7 move=0.2 albefa=0.1 c=1000 d=1
mma scaling: objective by first max|df0|, constraints by current max|dg|
stop: max|dx|<0.01 or 100 iterations, start x=V_f
sampling: chacha8 seed+stream(index); load_row, theta, V_f, P, r_min
channels: 64x64 top-left zero fill; r_min/0.10; loads /P_max (unit for linear)
threshold: >=0.5 solid; dsc both-empty=1
";

/// Hex SHA-256 of [`DECISIONS`].
pub fn fingerprint() -> String {
    Sha256::digest(DECISIONS.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Caps the global worker pool used by the parallel routines. Must run
/// before any of them.
pub fn init_thread_pool(threads: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build_global()
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}
