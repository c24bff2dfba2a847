#![allow(dead_code)]

use std::path::PathBuf;

use p2pgrid_core::assembly::{grid_context, LoadTables};
use p2pgrid_core::feeder::{build_feeder, FeederFile};
use p2pgrid_core::market::{build_agents, AgentsFile};
use p2pgrid_core::powerflow::extract_state;
use p2pgrid_core::{
    assemble, solve_spec, AgentSet, ClarabelSolver, ConicSolver, Feeder, GridState, Phase, ProbeLoad, RunOptions,
    RunOutcome, ScenarioSpec, SolverOptions,
};
use serde_json::{json, Value};

pub const SHIPPED: [&str; 5] = [
    "ieee13_pre",
    "ieee13_coord_attack",
    "ieee13_lineout",
    "empty_agents",
    "infeasible_noshed",
];

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn scenario_path(name: &str) -> PathBuf {
    data_dir().join("scenarios").join(format!("{name}.json"))
}

pub fn run(name: &str) -> RunOutcome {
    p2pgrid_core::run_file(scenario_path(name), &RunOptions::default()).expect(name)
}

pub fn solver() -> ClarabelSolver {
    ClarabelSolver::new(SolverOptions::default())
}

pub fn solve(spec: ScenarioSpec) -> RunOutcome {
    solve_spec(spec, &solver()).unwrap()
}

pub fn feeder(v: Value) -> Feeder {
    let file: FeederFile = serde_json::from_value(v).unwrap();
    build_feeder(&file).unwrap()
}

pub fn agents(v: Value, feeder: &Feeder) -> AgentSet {
    let file: AgentsFile = serde_json::from_value(v).unwrap();
    build_agents(&file, feeder).unwrap()
}

pub fn no_agents(feeder: &Feeder) -> AgentSet {
    agents(json!({}), feeder)
}

pub fn mat_a(v: f64) -> Value {
    json!([[v, 0, 0], [0, 0, 0], [0, 0, 0]])
}

/// Substation 1 feeding node 2 over one phase-a line. With base 1000 kVA
/// and 1 kV the impedance base is 1 ohm, so ohms read as pu.
pub fn two_node_feeder(r: f64, x: f64, p_kw: f64, q_kvar: f64) -> Feeder {
    feeder(json!({
        "nodes": [{"id": 1}, {"id": 2, "loads": {"a": {"p": p_kw, "q": q_kvar}}}],
        "lines": [{"from": 1, "to": 2, "R": mat_a(r), "X": mat_a(x), "s_limit": 5000}],
        "substation": 1,
        "base_kva": 1000,
        "base_kv": 1,
        "v_min": 0.8,
        "v_max": 1.2
    }))
}

pub fn with_defaults(name: &str, feeder: Feeder, agents: AgentSet) -> ScenarioSpec {
    ScenarioSpec::new(name, feeder, agents)
}

/// Lossless three-phase star: substation 1 with leaves 2..=n+1 carrying the
/// given phase-a loads (kW).
pub fn copper_plate(loads_kw: &[f64]) -> Feeder {
    let zero = json!([[0, 0, 0], [0, 0, 0], [0, 0, 0]]);
    let mut nodes = vec![json!({"id": 1})];
    let mut lines = Vec::new();
    for (i, &p) in loads_kw.iter().enumerate() {
        let id = i as u32 + 2;
        if p > 0.0 {
            nodes.push(json!({"id": id, "loads": {"a": {"p": p, "q": 0}}}));
        } else {
            nodes.push(json!({"id": id}));
        }
        lines.push(json!({"from": 1, "to": id, "phases": "abc", "R": zero, "X": zero, "s_limit": 1e6}));
    }
    feeder(json!({
        "nodes": nodes,
        "lines": lines,
        "substation": 1,
        "base_kva": 1000,
        "base_kv": 1,
        "v_min": 0.9,
        "v_max": 1.1
    }))
}

/// Objective after adding `delta` pu of fixed load at one node-phase.
pub fn objective_with_probe(spec: &ScenarioSpec, node: usize, phase: Phase, delta: f64) -> f64 {
    let mut s = spec.clone();
    s.probes.push(ProbeLoad { t: 0, node, phase, p: delta });
    let problem = assemble(&s).unwrap();
    let sol = solver().solve(&problem).unwrap();
    assert!(sol.is_optimal(), "probe solve at node {node} phase {phase}: {}", sol.status);
    sol.objective_value
}

/// Central finite difference of the objective in $/MWh.
pub fn fd_dlmp(spec: &ScenarioSpec, node: usize, phase: Phase, delta: f64) -> f64 {
    let up = objective_with_probe(spec, node, phase, delta);
    let down = objective_with_probe(spec, node, phase, -delta);
    let mwh = spec.feeder.network.base.power_mw() * spec.step_hours;
    (up - down) / (2.0 * delta * mwh)
}

pub fn states(outcome: &RunOutcome) -> Vec<GridState> {
    let loads = LoadTables::of(&outcome.spec);
    let ctx = grid_context(&outcome.spec, &loads);
    (0..outcome.spec.horizon())
        .map(|t| extract_state(&outcome.problem, &outcome.solution, &ctx, t))
        .collect()
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}
