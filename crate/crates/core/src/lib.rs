//! Peer-to-peer energy trading co-optimised with three-phase unbalanced
//! branch flow on radial feeders, with adverse-agent attack scenarios.
//!
//! ```no_run
//! use p2pgrid_core::{run_file, RunOptions};
//!
//! let outcome = run_file("data/scenarios/ieee13_pre.json", &RunOptions::default()).unwrap();
//! let dlmp = outcome.dlmp.unwrap();
//! println!("DLMP range {:?}", dlmp.range());
//! ```

pub mod assembly;
pub mod attacks;
pub mod conic;
pub mod error;
pub mod feeder;
pub mod market;
pub mod powerflow;
pub mod run;
pub mod settlement;
pub mod units;

pub use assembly::{assemble, extract_dlmp, DlmpSurface};
pub use attacks::{
    apply_attacks, apply_demand_inflation, apply_line_outage, apply_price_tamper, load_scenario, AttackKind,
    AttackSpec, ScenarioSpec,
};
pub use conic::{ClarabelSolver, ConicProblem, ConicSolver, Solution, SolveStatus, SolverOptions};
pub use error::{Error, Result};
pub use feeder::{downstream_sets, load_feeder, Feeder, Line, Network, NodeLoad, VoltageBounds};
pub use market::{assemble_market, inverter_cone, load_agents, AgentSet, Consumer, Prosumer};
pub use powerflow::{assemble_grid, check_soc_tightness, compute_tilde, GridState, LossModel, ProbeLoad, TildeImpedance};
pub use run::{prepare, run_file, solve_spec, RunOptions, RunOutcome};
pub use settlement::{compare, compute_settlement, CompareReport, SettlementReport};
pub use units::{from_per_unit, to_per_unit, Phase, PhaseSet, Quantity};
