//! Exact reference solvers used to check the estimators.
//!
//! Every oracle enforces an explicit instance-size limit and fails with
//! [`Error::InstanceTooLarge`](crate::Error::InstanceTooLarge) beyond it.

mod dtw_brute;
mod enum_mdp;
mod fdiv;
mod ot;
mod shortest_path;

pub use dtw_brute::{dtw_brute_force, BruteDtw, DTW_BRUTE_MAX_LEN};
pub use enum_mdp::{
    directional_derivative, enumerate_trajectories, exact_f_div_objective, exact_wasserstein_objective, toy_mdp,
    Weighted, ENUM_MAX_HORIZON,
};
pub use fdiv::{exact_f_divergence, FDIV_MAX_SUPPORT};
pub use ot::{exact_ot, exact_ot_points, OT_MAX_SUPPORT};
pub use shortest_path::bfs_shortest_path;
