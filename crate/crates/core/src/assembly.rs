//! Joint market and grid program, and DLMP recovery from its duals.

use serde::Serialize;

use crate::attacks::ScenarioSpec;
use crate::conic::{ConicProblem, RowLabel, Solution};
use crate::error::{Error, Result};
use crate::feeder::{NodeId, NodeIdx};
use crate::market::{assemble_market, MarketContext};
use crate::powerflow::{assemble_grid, GridContext};
use crate::units::{Phase, PhaseVec};

/// Owned load tables backing a [`GridContext`].
#[derive(Debug, Clone)]
pub struct LoadTables {
    pub p: Vec<PhaseVec>,
    pub q: Vec<PhaseVec>,
}

impl LoadTables {
    pub fn of(spec: &ScenarioSpec) -> Self {
        let (p, q) = spec.feeder.load_matrix();
        Self { p, q }
    }
}

pub fn grid_context<'a>(spec: &'a ScenarioSpec, loads: &'a LoadTables) -> GridContext<'a> {
    GridContext {
        network: &spec.feeder.network,
        load_p: &loads.p,
        load_q: &loads.q,
        bounds: spec.feeder.bounds,
        agents: &spec.agents,
        profile: &spec.profile,
        step_hours: spec.step_hours,
        voll: spec.voll,
        substation_price: spec.substation_price,
        substation_voltage: spec.substation_voltage,
        loss_model: spec.loss_model,
        shedding: spec.shedding,
        probes: &spec.probes,
    }
}

pub fn market_context(spec: &ScenarioSpec) -> MarketContext {
    MarketContext {
        profile: spec.profile.clone(),
        step_hours: spec.step_hours,
        base_mw: spec.feeder.network.base.power_mw(),
        operator_sales: spec.operator_sales,
    }
}

/// Builds the co-optimisation program for a scenario whose attacks are applied.
pub fn assemble(spec: &ScenarioSpec) -> Result<ConicProblem> {
    if !spec.attacks.is_empty() {
        return Err(Error::Scenario(format!(
            "scenario '{}' still has {} pending attack(s)",
            spec.name,
            spec.attacks.len()
        )));
    }
    spec.validate()?;
    let mut problem = ConicProblem::new();
    assemble_market(&mut problem, &spec.agents, &market_context(spec))?;
    let loads = LoadTables::of(spec);
    assemble_grid(&mut problem, &grid_context(spec, &loads))?;
    Ok(problem)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DlmpPoint {
    pub t: usize,
    #[serde(skip)]
    pub node_index: NodeIdx,
    pub node: NodeId,
    pub phase: Phase,
    /// $/MWh.
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct DlmpSurface {
    pub points: Vec<DlmpPoint>,
}

impl DlmpSurface {
    pub fn get(&self, t: usize, node: NodeIdx, phase: Phase) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.t == t && p.node_index == node && p.phase == phase)
            .map(|p| p.price)
    }

    pub fn min(&self) -> f64 {
        self.points.iter().map(|p| p.price).fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.points.iter().map(|p| p.price).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn range(&self) -> (f64, f64) {
        (self.min(), self.max())
    }
}

/// Active-balance duals converted to $/MWh for every node-phase.
pub fn extract_dlmp(solution: &Solution, problem: &ConicProblem, spec: &ScenarioSpec) -> Result<DlmpSurface> {
    if !solution.is_optimal() {
        return Err(Error::Solver(format!(
            "DLMPs need an optimal solution, got {}",
            solution.status
        )));
    }
    let net = &spec.feeder.network;
    let scale = net.base.power_mw() * spec.step_hours;
    let mut points = Vec::new();
    for t in 0..spec.horizon() {
        for (n, node) in net.nodes.iter().enumerate() {
            for phase in node.phases.iter() {
                let label = RowLabel::ActiveBalance { t, node: n, phase };
                let dual = solution
                    .eq_dual(problem, &label)
                    .ok_or_else(|| Error::Assembly(format!("missing balance row {label}")))?;
                points.push(DlmpPoint {
                    t,
                    node_index: n,
                    node: node.id,
                    phase,
                    price: dual / scale,
                });
            }
        }
    }
    Ok(DlmpSurface { points })
}
