#![allow(clippy::needless_range_loop, clippy::too_many_arguments, clippy::type_complexity, clippy::neg_cmp_op_on_partial_ord)]
//! Energy-minimal scheduling of wireless power transfer and computation
//! offloading in a multiuser mobile-edge-computing system.
//!
//! The access point (AP) beams energy to `K` single-antenna users over `N`
//! slots. Users split their arriving task bits between local execution and
//! offloading to the AP's edge server. The crate provides:
//!
//! * the system model, energy functions and an exact feasibility checker ([`model`]),
//! * Rician channel and task generators with prediction noise ([`scenario`]),
//! * the Lagrange dual machinery with an ellipsoid outer loop ([`dual`]),
//! * a structured log-barrier solver for the same problem family ([`barrier`]),
//! * covariance recovery for energy beamforming ([`wpt`]),
//! * the offline optimum ([`offline`]), the sliding-window online scheme
//!   ([`online`]) and three baseline policies ([`baselines`]),
//! * a Monte-Carlo experiment harness ([`harness`]).

pub mod baselines;
pub mod barrier;
pub mod dual;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod offline;
pub mod online;
pub mod problem;
pub mod scenario;
pub mod wpt;

pub use baselines::{
    myopic_offload_split, solve_baseline, solve_full_offload, solve_local_only, solve_myopic,
    BaselineKind,
};
pub use dual::{
    dual_function, dual_subgradient, ellipsoid_maximize, feasibility_cut, DualTailSums,
    DualVariables, EllipsoidOptions,
};
pub use error::{Error, Result};
pub use linalg::{hermitian_eig, CMat, CVec};
pub use model::{
    check_feasibility, harvested_energy, local_energy, mec_energy, offload_energy,
    total_objective, Allocation, FeasibilityReport, Scenario, SystemParams, Tolerances,
};
pub use offline::{
    causality_dominating_slots, recover_single_user_wpt, solve_offline, verify_monotonicity,
    Diagnostics, MonotonicityReport, OfflineMethod, OfflineOptions, OfflineSolution,
    SingleUserStructure,
};
pub use harness::{run_experiment, ExperimentConfig, Family, ResultRow, ResultTable, Scheme, SchemeKind};
pub use online::{
    build_window_problem, solve_sliding_window, update_residuals, write_slot_logs, OnlineOptions,
    OnlineResult, OnlineState, Predictor, SlotLog, WindowProblem,
};
pub use problem::{BitPlan, Problem, Restriction};
pub use scenario::{gen_predictions, gen_scenario, ChannelGeometry, PredictedScenario, PredictionErrorModel};
pub use wpt::{min_power_wpt, mrc_covariance, EnergyDemandProfile, WptSolution};
