//! Discrete approximation schemes for Lévy-type processes and diffusions in
//! a potential, with numerical checkers for operator convergence.

pub mod config;
pub mod diagnostics;
pub mod embedding;
pub mod environment;
pub mod error;
pub mod expr;
pub mod io;
pub mod euler;
pub mod numerics;
pub mod operator;
pub mod path;
pub mod potential;
pub mod region;
pub mod rng;
pub mod sim;
pub mod stable;
pub mod triplet;

pub use config::{ChiConfig, OperatorConfig, TripletConfig};
pub use diagnostics::{
    explosion_stats, ks_critical_value, ks_distance, martingale_residual, two_sample_report, wasserstein1, KsResult,
    ResidualReport, TwoSampleReport,
};
pub use embedding::{doob_bound_check, floor_embed, gamma_clock, poissonize, Clock};
pub use environment::{potential_from_q, rwre_simulate, EnvironmentSpec, QuenchedRun, RwreConfig};
pub use error::{Error, Result};
pub use euler::{euler_chain_simulate, IncrementPlan, SmallJumps};
pub use expr::Expr;
pub use numerics::QuadratureConfig;
pub use operator::{apply_operator, TestFunction};
pub use path::{PathRecord, State, StateRef};
pub use potential::{potential_chain_simulate, Potential, PsiOptions};
pub use region::BoxRegion;
pub use sim::{GridSpec, SimConfig, Start};
pub use stable::{stable_chain_simulate, StableField};
pub use triplet::{Atom, CompensationFunction, JumpMeasure, LevyTriplet, TripletField};
