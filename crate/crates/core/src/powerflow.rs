//! Three-phase branch-flow constraints with the second-order cone
//! relaxation, load shedding and substation import.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::conic::{ConeLabel, ConicProblem, LinExpr, RowLabel, Solution, VarKey};
use crate::error::{Error, Result};
use crate::feeder::{Line, LineIdx, Network, NodeIdx, VoltageBounds};
use crate::market::AgentSet;
use crate::units::{diagonal_of, Mat3, Phase, PhaseVec};

/// Phase-shift operator applied element-wise to the impedance matrices.
pub fn alpha() -> [[Complex64; 3]; 3] {
    let one = Complex64::new(1.0, 0.0);
    let lag = Complex64::from_polar(1.0, -2.0 * PI / 3.0);
    let lead = Complex64::from_polar(1.0, 2.0 * PI / 3.0);
    [[one, lag, lead], [lead, one, lag], [lag, lead, one]]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TildeImpedance {
    pub r: Mat3,
    pub x: Mat3,
    pub z: Mat3,
}

pub fn compute_tilde(r: &Mat3, x: &Mat3) -> TildeImpedance {
    let a = alpha();
    let mut out = TildeImpedance {
        r: [[0.0; 3]; 3],
        x: [[0.0; 3]; 3],
        z: [[0.0; 3]; 3],
    };
    for i in 0..3 {
        for j in 0..3 {
            let ar = a[i][j] * r[i][j];
            let ax = a[i][j] * x[i][j];
            out.r[i][j] = ar.re - ax.im;
            out.x[i][j] = ax.re + ar.im;
            out.z[i][j] = r[i][j] * r[i][j] + x[i][j] * x[i][j];
        }
    }
    out
}

impl Line {
    pub fn tilde(&self) -> TildeImpedance {
        compute_tilde(&self.r, &self.x)
    }
}

/// How the series loss terms enter the balance and receiving-end limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossModel {
    /// Full 3x3 resistance and reactance matrices.
    #[default]
    Full,
    /// Self impedances only.
    Diagonal,
}

impl LossModel {
    pub fn matrices(self, line: &Line) -> (Mat3, Mat3) {
        match self {
            LossModel::Full => (line.r, line.x),
            LossModel::Diagonal => (diagonal_of(&line.r), diagonal_of(&line.x)),
        }
    }
}

/// Extra fixed active load on one node-phase, used for sensitivity probes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeLoad {
    pub t: usize,
    pub node: NodeIdx,
    pub phase: Phase,
    /// pu.
    pub p: f64,
}

/// Inputs of the grid block.
#[derive(Debug, Clone)]
pub struct GridContext<'a> {
    pub network: &'a Network,
    /// Base-case nodal load (pu), indexed by node.
    pub load_p: &'a [PhaseVec],
    pub load_q: &'a [PhaseVec],
    pub bounds: VoltageBounds,
    pub agents: &'a AgentSet,
    pub profile: &'a [f64],
    pub step_hours: f64,
    /// $/MWh.
    pub voll: f64,
    /// $/MWh.
    pub substation_price: f64,
    /// pu.
    pub substation_voltage: f64,
    pub loss_model: LossModel,
    pub shedding: bool,
    pub probes: &'a [ProbeLoad],
}

/// Load served at a node-phase in one step, split into the part fixed by
/// the feeder file and the part carried by consumer demand variables.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NodalLoad {
    pub fixed_p: f64,
    pub fixed_q: f64,
    /// Reported consumer demand at nominal values.
    pub consumer_p: f64,
    pub consumer_q: f64,
}

impl NodalLoad {
    pub fn total_p(&self) -> f64 {
        self.fixed_p + self.consumer_p
    }

    pub fn total_q(&self) -> f64 {
        self.fixed_q + self.consumer_q
    }

    /// Reactive shedding per unit of active shedding.
    pub fn shed_ratio(&self) -> f64 {
        if self.total_p() > 0.0 {
            self.total_q() / self.total_p()
        } else {
            0.0
        }
    }
}

impl GridContext<'_> {
    pub fn cost_weight(&self) -> f64 {
        self.network.base.power_mw() * self.step_hours
    }

    pub fn nodal_load(&self, t: usize, node: NodeIdx) -> [NodalLoad; 3] {
        let scale = self.profile[t];
        let bound = self.agents.feeder_bound_phases(self.network.nodes.len());
        let mut out = [NodalLoad::default(); 3];
        for phase in Phase::ALL {
            let k = phase.index();
            let slot = &mut out[k];
            if !bound[node].contains(phase) {
                slot.fixed_p = self.load_p[node][k] * scale;
                slot.fixed_q = self.load_q[node][k] * scale;
            } else if self.load_p[node][k] == 0.0 {
                // Reactive-only load cannot be carried by a demand ratio.
                slot.fixed_q = self.load_q[node][k] * scale;
            }
            for c in self.agents.consumers.iter().filter(|c| c.node == node && c.phases.contains(phase)) {
                slot.consumer_p += c.demand[k] * scale;
                slot.consumer_q += c.demand[k] * c.q_ratio[k] * scale;
            }
        }
        out
    }
}

/// Adds the grid variables, rows, cones and costs.
pub fn assemble_grid(problem: &mut ConicProblem, ctx: &GridContext<'_>) -> Result<()> {
    if ctx.profile.is_empty() {
        return Err(Error::Scenario("horizon must contain at least one step".into()));
    }
    let net = ctx.network;
    let topo = net.topology();
    let (v2_min, v2_max) = ctx.bounds.squared();
    let w = ctx.cost_weight();
    let sub = net.substation;

    for island in topo.islanded(sub) {
        for p in ctx.agents.prosumers.iter().filter(|p| p.node == island) {
            log::warn!("prosumer '{}' is on an island cut off from the substation", p.id);
        }
    }

    for t in 0..ctx.profile.len() {
        // node voltages
        for (n, node) in net.nodes.iter().enumerate() {
            for phase in node.phases.iter() {
                let key = VarKey::Voltage { t, node: n, phase };
                if n == sub {
                    let v = problem.add_var(key, 0.0, f64::INFINITY)?;
                    let v0 = ctx.substation_voltage;
                    problem.add_eq(RowLabel::SourceVoltage { t, phase }, LinExpr::var(v), v0 * v0)?;
                } else {
                    problem.add_var(key, v2_min, v2_max)?;
                }
            }
        }
        // line flows
        for (l, line) in net.lines.iter().enumerate() {
            if !line.in_service {
                continue;
            }
            for phase in line.phases.iter() {
                problem.add_var(VarKey::FlowP { t, line: l, phase }, f64::NEG_INFINITY, f64::INFINITY)?;
                problem.add_var(VarKey::FlowQ { t, line: l, phase }, f64::NEG_INFINITY, f64::INFINITY)?;
                problem.add_var(
                    VarKey::Current { t, line: l, phase },
                    line.i_min * line.i_min,
                    line.i_max * line.i_max,
                )?;
            }
        }
        // substation import
        for phase in net.nodes[sub].phases.iter() {
            let p = problem.add_var(VarKey::ImportP { t, phase }, 0.0, f64::INFINITY)?;
            problem.add_var(VarKey::ImportQ { t, phase }, f64::NEG_INFINITY, f64::INFINITY)?;
            problem.add_cost(p, ctx.substation_price * w);
        }

        for (n, node) in net.nodes.iter().enumerate() {
            let loads = ctx.nodal_load(t, n);
            for phase in node.phases.iter() {
                let k = phase.index();
                let load = loads[k];
                let mut bal_p = LinExpr::new();
                let mut bal_q = LinExpr::new();
                if let Some(l) = topo.parent[n] {
                    let line = &net.lines[l];
                    let (rl, xl) = ctx.loss_model.matrices(line);
                    bal_p.add_term(problem.require(&VarKey::FlowP { t, line: l, phase })?, 1.0);
                    bal_q.add_term(problem.require(&VarKey::FlowQ { t, line: l, phase })?, 1.0);
                    for psi in line.phases.iter() {
                        let a = problem.require(&VarKey::Current { t, line: l, phase: psi })?;
                        bal_p.add_term(a, -rl[k][psi.index()]);
                        bal_q.add_term(a, -xl[k][psi.index()]);
                    }
                }
                for &c in &topo.children[n] {
                    if net.lines[c].phases.contains(phase) {
                        bal_p.add_term(problem.require(&VarKey::FlowP { t, line: c, phase })?, -1.0);
                        bal_q.add_term(problem.require(&VarKey::FlowQ { t, line: c, phase })?, -1.0);
                    }
                }
                for (i, p) in ctx.agents.prosumers.iter().enumerate() {
                    if p.node == n && p.phases.contains(phase) {
                        bal_p.add_term(problem.require(&VarKey::ProsumerP { t, prosumer: i, phase })?, 1.0);
                        bal_q.add_term(problem.require(&VarKey::ProsumerQ { t, prosumer: i, phase })?, 1.0);
                    }
                }
                if n == sub {
                    bal_p.add_term(problem.require(&VarKey::ImportP { t, phase })?, 1.0);
                    bal_q.add_term(problem.require(&VarKey::ImportQ { t, phase })?, 1.0);
                }
                let mut demand = LinExpr::new();
                for (j, c) in ctx.agents.consumers.iter().enumerate() {
                    if c.node == n && c.phases.contains(phase) {
                        let d = problem.require(&VarKey::Demand { t, consumer: j, phase })?;
                        demand.add_term(d, 1.0);
                        bal_p.add_term(d, -1.0);
                        bal_q.add_term(d, -c.q_ratio[k]);
                    }
                }
                if ctx.shedding && load.total_p() > 0.0 {
                    let key = VarKey::Shed { t, node: n, phase };
                    let upper = if demand.terms.is_empty() { load.fixed_p } else { f64::INFINITY };
                    let s = problem.add_var(key, 0.0, upper)?;
                    problem.add_cost(s, ctx.voll * w);
                    bal_p.add_term(s, 1.0);
                    bal_q.add_term(s, load.shed_ratio());
                    if !demand.terms.is_empty() {
                        problem.add_le(
                            RowLabel::ShedLimit { t, node: n, phase },
                            LinExpr::var(s) - demand,
                            load.fixed_p,
                        )?;
                    }
                }
                let probe: f64 = ctx
                    .probes
                    .iter()
                    .filter(|pr| pr.t == t && pr.node == n && pr.phase == phase)
                    .map(|pr| pr.p)
                    .sum();
                problem.add_eq(RowLabel::ActiveBalance { t, node: n, phase }, bal_p, load.fixed_p + probe)?;
                problem.add_eq(RowLabel::ReactiveBalance { t, node: n, phase }, bal_q, load.fixed_q)?;
            }
        }

        for (l, line) in net.lines.iter().enumerate() {
            if !line.in_service {
                continue;
            }
            let tilde = line.tilde();
            let (rl, xl) = ctx.loss_model.matrices(line);
            for phase in line.phases.iter() {
                let k = phase.index();
                let fp = problem.require(&VarKey::FlowP { t, line: l, phase })?;
                let fq = problem.require(&VarKey::FlowQ { t, line: l, phase })?;
                let a = problem.require(&VarKey::Current { t, line: l, phase })?;
                let v_from = problem.require(&VarKey::Voltage { t, node: line.from, phase })?;
                let v_to = problem.require(&VarKey::Voltage { t, node: line.to, phase })?;

                problem.add_soc(
                    ConeLabel::SendingLimit { t, line: l, phase },
                    LinExpr::constant(line.s_limit),
                    vec![LinExpr::var(fp), LinExpr::var(fq)],
                )?;

                let mut recv_p = LinExpr::var(fp);
                let mut recv_q = LinExpr::var(fq);
                let mut drop = LinExpr::var(v_to) - LinExpr::var(v_from);
                for psi in line.phases.iter() {
                    let c = psi.index();
                    let a_psi = problem.require(&VarKey::Current { t, line: l, phase: psi })?;
                    let fp_psi = problem.require(&VarKey::FlowP { t, line: l, phase: psi })?;
                    let fq_psi = problem.require(&VarKey::FlowQ { t, line: l, phase: psi })?;
                    recv_p.add_term(a_psi, -rl[k][c]);
                    recv_q.add_term(a_psi, -xl[k][c]);
                    drop.add_term(fp_psi, 2.0 * tilde.r[k][c]);
                    drop.add_term(fq_psi, 2.0 * tilde.x[k][c]);
                    drop.add_term(a_psi, -tilde.z[k][c]);
                }
                problem.add_soc(
                    ConeLabel::ReceivingLimit { t, line: l, phase },
                    LinExpr::constant(line.s_limit),
                    vec![recv_p, recv_q],
                )?;
                problem.add_soc(
                    ConeLabel::BranchRelaxation { t, line: l, phase },
                    LinExpr::var(a) + LinExpr::var(v_from),
                    vec![
                        LinExpr::term(fp, 2.0),
                        LinExpr::term(fq, 2.0),
                        LinExpr::var(a) - LinExpr::var(v_from),
                    ],
                )?;
                problem.add_eq(RowLabel::VoltageDrop { t, line: l, phase }, drop, 0.0)?;
            }
        }
    }
    Ok(())
}

/// Grid decision variables for one time step. Missing phases hold zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    pub t: usize,
    pub flow_p: Vec<PhaseVec>,
    pub flow_q: Vec<PhaseVec>,
    /// Squared current magnitude.
    pub current_sq: Vec<PhaseVec>,
    /// Squared voltage magnitude.
    pub voltage_sq: Vec<PhaseVec>,
    pub import_p: PhaseVec,
    pub import_q: PhaseVec,
    pub shed_p: Vec<PhaseVec>,
    pub shed_q: Vec<PhaseVec>,
    pub prosumer_p: Vec<PhaseVec>,
    pub prosumer_q: Vec<PhaseVec>,
    pub demand: Vec<PhaseVec>,
}

pub fn extract_state(problem: &ConicProblem, solution: &Solution, ctx: &GridContext<'_>, t: usize) -> GridState {
    let net = ctx.network;
    let get = |k: VarKey| solution.value_or_zero(problem, &k);
    let per_line = |f: &dyn Fn(LineIdx, Phase) -> VarKey| -> Vec<PhaseVec> {
        (0..net.lines.len())
            .map(|l| Phase::ALL.map(|phase| get(f(l, phase))))
            .collect()
    };
    let flow_p = per_line(&|line, phase| VarKey::FlowP { t, line, phase });
    let flow_q = per_line(&|line, phase| VarKey::FlowQ { t, line, phase });
    let current_sq = per_line(&|line, phase| VarKey::Current { t, line, phase });
    let voltage_sq = (0..net.nodes.len())
        .map(|node| Phase::ALL.map(|phase| get(VarKey::Voltage { t, node, phase })))
        .collect();
    let mut shed_p = Vec::with_capacity(net.nodes.len());
    let mut shed_q = Vec::with_capacity(net.nodes.len());
    for node in 0..net.nodes.len() {
        let loads = ctx.nodal_load(t, node);
        let p = Phase::ALL.map(|phase| get(VarKey::Shed { t, node, phase }));
        let q = Phase::ALL.map(|phase| p[phase.index()] * loads[phase.index()].shed_ratio());
        shed_p.push(p);
        shed_q.push(q);
    }
    let prosumer_p = (0..ctx.agents.prosumers.len())
        .map(|prosumer| Phase::ALL.map(|phase| get(VarKey::ProsumerP { t, prosumer, phase })))
        .collect();
    let prosumer_q = (0..ctx.agents.prosumers.len())
        .map(|prosumer| Phase::ALL.map(|phase| get(VarKey::ProsumerQ { t, prosumer, phase })))
        .collect();
    let demand = (0..ctx.agents.consumers.len())
        .map(|consumer| Phase::ALL.map(|phase| get(VarKey::Demand { t, consumer, phase })))
        .collect();
    GridState {
        t,
        flow_p,
        flow_q,
        current_sq,
        voltage_sq,
        import_p: Phase::ALL.map(|phase| get(VarKey::ImportP { t, phase })),
        import_q: Phase::ALL.map(|phase| get(VarKey::ImportQ { t, phase })),
        shed_p,
        shed_q,
        prosumer_p,
        prosumer_q,
        demand,
    }
}

impl GridState {
    /// Series losses per phase under the given loss model.
    pub fn losses(&self, network: &Network, model: LossModel) -> PhaseVec {
        let mut out = [0.0; 3];
        for (l, line) in network.lines.iter().enumerate() {
            if !line.in_service {
                continue;
            }
            let (r, _) = model.matrices(line);
            for k in 0..3 {
                out[k] += (0..3).map(|c| r[k][c] * self.current_sq[l][c]).sum::<f64>();
            }
        }
        out
    }

    pub fn total_shed(&self) -> f64 {
        self.shed_p.iter().flatten().sum()
    }
}

/// Denominator guard for near-idle lines, in pu^2.
pub const SOC_GAP_EPS: f64 = 1e-4;
/// Gap above which a line-phase is flagged as not tight.
pub const SOC_GAP_FLAG: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SocGapEntry {
    pub t: usize,
    pub line: String,
    pub phase: Phase,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SocGapReport {
    pub max_gap: f64,
    pub mean_gap: f64,
    pub entries: Vec<SocGapEntry>,
    /// Line-phases whose gap exceeds the flag threshold.
    pub flagged: Vec<SocGapEntry>,
}

/// Relative slack of the relaxed branch cone, `(a v - f^2) / max(a v, eps)`.
pub fn soc_gap(a: f64, v: f64, fp: f64, fq: f64) -> f64 {
    let av = a * v;
    (av - (fp * fp + fq * fq)) / av.max(SOC_GAP_EPS)
}

/// A line whose current enters no loss or drop term; its `a` can be lowered
/// to `f^2 / v` without touching anything else.
fn is_lossless(line: &Line) -> bool {
    line.i_min == 0.0 && line.r.iter().chain(&line.x).flatten().all(|&z| z == 0.0)
}

pub fn check_soc_tightness(network: &Network, states: &[GridState]) -> SocGapReport {
    let mut entries = Vec::new();
    for st in states {
        for (l, line) in network.lines.iter().enumerate() {
            if !line.in_service {
                continue;
            }
            let lossless = is_lossless(line);
            for phase in line.phases.iter() {
                let k = phase.index();
                let gap = if lossless {
                    0.0
                } else {
                    soc_gap(
                        st.current_sq[l][k],
                        st.voltage_sq[line.from][k],
                        st.flow_p[l][k],
                        st.flow_q[l][k],
                    )
                };
                entries.push(SocGapEntry {
                    t: st.t,
                    line: line.id.clone(),
                    phase,
                    gap,
                });
            }
        }
    }
    let max_gap = entries.iter().map(|e| e.gap).fold(0.0, f64::max);
    let mean_gap = if entries.is_empty() {
        0.0
    } else {
        entries.iter().map(|e| e.gap).sum::<f64>() / entries.len() as f64
    };
    let flagged = entries.iter().filter(|e| e.gap > SOC_GAP_FLAG).cloned().collect();
    SocGapReport {
        max_gap,
        mean_gap,
        entries,
        flagged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_entries() {
        let a = alpha();
        let s = 3f64.sqrt() / 2.0;
        for (i, row) in a.iter().enumerate() {
            assert_eq!(row[i], Complex64::new(1.0, 0.0));
            assert!(row.iter().all(|z| (z.norm() - 1.0).abs() < 1e-15));
        }
        let lag = Complex64::new(-0.5, -s);
        let lead = Complex64::new(-0.5, s);
        for (i, j, want) in [(0, 1, lag), (0, 2, lead), (1, 0, lead), (1, 2, lag), (2, 0, lag), (2, 1, lead)] {
            assert!((a[i][j] - want).norm() < 1e-15, "alpha[{i}][{j}]");
        }
    }

    #[test]
    fn diagonal_case_preserved() {
        let r = [[0.1, 0.0, 0.0], [0.0, 0.2, 0.0], [0.0, 0.0, 0.3]];
        let x = [[0.4, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 0.6]];
        let t = compute_tilde(&r, &x);
        assert_eq!(t.r, r);
        assert_eq!(t.x, x);
    }

    #[test]
    fn single_off_diagonal_reactance() {
        let mut x = [[0.0; 3]; 3];
        x[0][1] = 2.0;
        let t = compute_tilde(&[[0.0; 3]; 3], &x);
        assert!((t.r[0][1] - 3f64.sqrt() / 2.0 * 2.0).abs() < 1e-12);
        assert!((t.x[0][1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn z_tilde_is_modulus_squared() {
        let t = compute_tilde(&[[3.0; 3]; 3], &[[4.0; 3]; 3]);
        assert!(t.z.iter().flatten().all(|&z| z == 25.0));
    }

    #[test]
    fn gap_guard() {
        assert_eq!(soc_gap(0.0, 1.0, 0.0, 0.0), 0.0);
        assert!((soc_gap(0.25, 1.0, 0.3, 0.4)).abs() < 1e-15);
    }
}
