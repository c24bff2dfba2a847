//! Load, attack, solve and settle a scenario.

use std::path::Path;
use std::time::Instant;

use crate::assembly::{assemble, extract_dlmp, grid_context, DlmpSurface, LoadTables};
use crate::attacks::{apply_attacks, load_scenario, ScenarioSpec};
use crate::conic::{ClarabelSolver, ConicProblem, ConicSolver, Solution, SolveStatus, SolverOptions};
use crate::error::Result;
use crate::powerflow::{check_soc_tightness, extract_state, GridState, LossModel, SocGapReport};
use crate::settlement::{compute_settlement, RunMetadata, SettlementReport};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub solver: SolverOptions,
    /// Overrides the scenario's shedding flag.
    pub shedding: Option<bool>,
    /// Overrides the scenario's loss model.
    pub loss_model: Option<LossModel>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Scenario with attacks applied.
    pub spec: ScenarioSpec,
    pub problem: ConicProblem,
    pub solution: Solution,
    pub states: Vec<GridState>,
    pub dlmp: Option<DlmpSurface>,
    pub soc_gap: Option<SocGapReport>,
    pub settlement: Option<SettlementReport>,
    /// Explanation attached to non-optimal outcomes.
    pub hint: Option<String>,
    pub wall_time_s: f64,
}

impl RunOutcome {
    pub fn status(&self) -> SolveStatus {
        self.solution.status
    }

    pub fn metadata(&self) -> RunMetadata {
        RunMetadata::now(self.solution.status, self.solution.stats.clone(), self.wall_time_s)
    }
}

/// Loads a scenario file, applies overrides and attacks.
pub fn prepare(path: impl AsRef<Path>, options: &RunOptions) -> Result<ScenarioSpec> {
    let mut spec = load_scenario(path)?;
    if let Some(s) = options.shedding {
        spec.shedding = s;
    }
    if let Some(m) = options.loss_model {
        spec.loss_model = m;
    }
    apply_attacks(&spec)
}

fn infeasibility_hint(spec: &ScenarioSpec) -> Option<String> {
    if spec.shedding {
        return None;
    }
    let net = &spec.feeder.network;
    let loads = LoadTables::of(spec);
    let ctx = grid_context(spec, &loads);
    let mut nodes = Vec::new();
    for (n, node) in net.nodes.iter().enumerate() {
        let nodal = ctx.nodal_load(0, n);
        let phases: String = node
            .phases
            .iter()
            .filter(|p| nodal[p.index()].total_p() > 0.0)
            .map(|p| p.as_str())
            .collect();
        if !phases.is_empty() {
            nodes.push(format!("{}({phases})", node.id));
        }
    }
    Some(format!("load shedding is disabled at nodes {}", nodes.join(", ")))
}

/// Solves a prepared scenario and, when optimal, settles it.
pub fn solve_spec(spec: ScenarioSpec, solver: &dyn ConicSolver) -> Result<RunOutcome> {
    let start = Instant::now();
    let problem = assemble(&spec)?;
    let solution = solver.solve(&problem)?;
    let mut outcome = RunOutcome {
        states: Vec::new(),
        dlmp: None,
        soc_gap: None,
        settlement: None,
        hint: None,
        wall_time_s: 0.0,
        spec,
        problem,
        solution,
    };
    if outcome.solution.is_optimal() {
        let spec = &outcome.spec;
        let loads = LoadTables::of(spec);
        let ctx = grid_context(spec, &loads);
        let states: Vec<GridState> = (0..spec.horizon())
            .map(|t| extract_state(&outcome.problem, &outcome.solution, &ctx, t))
            .collect();
        let dlmp = extract_dlmp(&outcome.solution, &outcome.problem, spec)?;
        let soc = check_soc_tightness(&spec.feeder.network, &states);
        let report = compute_settlement(spec, &outcome.problem, &outcome.solution, &dlmp, &states, &soc)?;
        outcome.states = states;
        outcome.dlmp = Some(dlmp);
        outcome.soc_gap = Some(soc);
        outcome.settlement = Some(report);
    } else if outcome.solution.status == SolveStatus::Infeasible {
        outcome.hint = infeasibility_hint(&outcome.spec);
    } else {
        let s = &outcome.solution.stats;
        outcome.hint = Some(format!(
            "solver stopped with {} after {} iterations (primal residual {:.3e}, dual residual {:.3e})",
            s.raw_status, s.iterations, s.primal_residual, s.dual_residual
        ));
    }
    outcome.wall_time_s = start.elapsed().as_secs_f64();
    Ok(outcome)
}

pub fn run_file(path: impl AsRef<Path>, options: &RunOptions) -> Result<RunOutcome> {
    let spec = prepare(path, options)?;
    solve_spec(spec, &ClarabelSolver::new(options.solver))
}
