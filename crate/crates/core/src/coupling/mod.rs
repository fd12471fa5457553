//! Spatially coupled measurement ensembles.
//!
//! The signal of each terminal is split into `L_c` column blocks of length
//! `N` and the measurements into `L_r` row blocks of length `M`. Block
//! `(r, c)` of the matrix has i.i.d. entries of variance `W_{r,c} / M` for a
//! band-diagonal weight matrix `W` shared by both terminals. Extra rows that
//! only see the first column blocks oversample the boundary so that recovery
//! starts there and travels through the chain as a wave.

mod amp;
mod boundary;
mod ensemble;
mod se;
mod weight;

pub use amp::{coupled_mamp_run, CoupledMampOptions, CoupledMampOutput, CoupledRecord, CoupledTrace};
pub use boundary::{
    boundary_point, flag_non_monotone, pentagon, phase_boundary_search, BoundaryOptions, BoundaryPoint, BoundaryResult,
};
pub use ensemble::{
    build_coupled_ensemble, make_coupled_problem, measure_coupled, CoupledEnsemble, CoupledProblem,
};
pub use se::{
    coupled_se_run, q_matrix, BlockState, CoupledParams, CoupledSeOptions, CoupledSeRun, Outcome,
};
pub use weight::{build_weight_matrix, WeightMatrix};
