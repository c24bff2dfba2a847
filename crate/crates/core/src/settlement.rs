//! Bills, revenues, cost breakdown and pre/post comparison, plus the JSON
//! and long-format CSV writers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::assembly::{DlmpSurface, LoadTables};
use crate::attacks::{AttackSpec, ScenarioSpec};
use crate::conic::{ConicProblem, Counterparty, Solution, SolveStatus, SolverStats, VarKey};
use crate::error::{Error, Result};
use crate::feeder::NodeId;
use crate::powerflow::{GridState, SocGapReport};
use crate::units::Phase;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsumerBill {
    pub id: String,
    pub node: NodeId,
    /// Cleared (reported) energy.
    pub energy_mwh: f64,
    pub true_energy_mwh: f64,
    pub bill_usd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProsumerRevenue {
    pub id: String,
    pub node: NodeId,
    pub energy_mwh: f64,
    pub offer_usd_per_mwh: f64,
    pub revenue_usd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub prosumer_cost_usd: f64,
    pub consumer_utility_usd: f64,
    pub import_cost_usd: f64,
    pub shed_cost_usd: f64,
    /// Offer cost minus consumer utility.
    pub p2p_usd: f64,
    /// Import plus curtailment cost.
    pub grid_usd: f64,
    pub total_usd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodePhaseValue {
    pub t: usize,
    pub node: NodeId,
    pub phase: Phase,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurtailmentPoint {
    pub t: usize,
    pub node: NodeId,
    pub phase: Phase,
    pub p_mw: f64,
    pub q_mvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeRecord {
    pub t: usize,
    pub phase: Phase,
    pub prosumer: String,
    /// Consumer id, or `operator`.
    pub counterparty: String,
    pub mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SettlementReport {
    pub scenario: String,
    pub attacks: Vec<AttackSpec>,
    pub objective_usd: f64,
    pub costs: CostBreakdown,
    pub consumers: Vec<ConsumerBill>,
    pub prosumers: Vec<ProsumerRevenue>,
    pub import_mwh: f64,
    /// Import valued at the substation DLMP.
    pub substation_payment_usd: f64,
    pub total_bills_usd: f64,
    pub total_revenues_usd: f64,
    /// Bills minus revenues minus substation payment.
    pub merchandising_surplus_usd: f64,
    pub losses_mw: f64,
    pub total_curtailment_mw: f64,
    pub dlmp: DlmpSurface,
    pub voltage: Vec<NodePhaseValue>,
    pub curtailment: Vec<CurtailmentPoint>,
    pub trades: Vec<TradeRecord>,
    pub soc_gap: SocGapReport,
    pub advisories: Vec<String>,
}

impl SettlementReport {
    pub fn bill(&self, id: &str) -> Option<f64> {
        self.consumers.iter().find(|c| c.id == id).map(|c| c.bill_usd)
    }

    pub fn revenue(&self, id: &str) -> Option<f64> {
        self.prosumers.iter().find(|p| p.id == id).map(|p| p.revenue_usd)
    }
}

pub fn compute_settlement(
    spec: &ScenarioSpec,
    problem: &ConicProblem,
    solution: &Solution,
    dlmp: &DlmpSurface,
    states: &[GridState],
    soc_gap: &SocGapReport,
) -> Result<SettlementReport> {
    if !solution.is_optimal() {
        return Err(Error::Settlement(format!(
            "cannot settle a {} solution",
            solution.status
        )));
    }
    let net = &spec.feeder.network;
    let mw = net.base.power_mw();
    let w = mw * spec.step_hours;
    let price = |t: usize, node: usize, phase: Phase| -> Result<f64> {
        dlmp.get(t, node, phase).ok_or_else(|| {
            Error::Settlement(format!("no DLMP for node {} phase {phase}", net.nodes[node].id))
        })
    };

    let mut consumers = Vec::new();
    let mut utility = 0.0;
    for (j, c) in spec.agents.consumers.iter().enumerate() {
        let (mut energy, mut true_energy, mut bill) = (0.0, 0.0, 0.0);
        for st in states {
            for phase in c.phases.iter() {
                let d = st.demand[j][phase.index()];
                energy += d * w;
                true_energy += c.true_demand[phase.index()] * spec.profile[st.t] * w;
                bill += price(st.t, c.node, phase)? * d * w;
            }
        }
        utility += c.utility_price * energy;
        consumers.push(ConsumerBill {
            id: c.id.clone(),
            node: net.nodes[c.node].id,
            energy_mwh: energy,
            true_energy_mwh: true_energy,
            bill_usd: bill,
        });
    }

    let mut prosumers = Vec::new();
    let mut offer_cost = 0.0;
    for (i, p) in spec.agents.prosumers.iter().enumerate() {
        let (mut energy, mut revenue) = (0.0, 0.0);
        for st in states {
            for phase in p.phases.iter() {
                let x = st.prosumer_p[i][phase.index()];
                energy += x * w;
                revenue += price(st.t, p.node, phase)? * x * w;
            }
        }
        offer_cost += p.offer_price * energy;
        prosumers.push(ProsumerRevenue {
            id: p.id.clone(),
            node: net.nodes[p.node].id,
            energy_mwh: energy,
            offer_usd_per_mwh: p.offer_price,
            revenue_usd: revenue,
        });
    }

    let sub = net.substation;
    let (mut import, mut payment, mut shed, mut losses) = (0.0, 0.0, 0.0, 0.0);
    for st in states {
        for phase in net.nodes[sub].phases.iter() {
            let x = st.import_p[phase.index()];
            import += x * w;
            payment += price(st.t, sub, phase)? * x * w;
        }
        shed += st.total_shed() * w;
        losses += st.losses(net, spec.loss_model).iter().sum::<f64>() * mw;
    }

    let import_cost = spec.substation_price * import;
    let shed_cost = spec.voll * shed;
    let p2p = offer_cost - utility;
    let grid = import_cost + shed_cost;
    let costs = CostBreakdown {
        prosumer_cost_usd: offer_cost,
        consumer_utility_usd: utility,
        import_cost_usd: import_cost,
        shed_cost_usd: shed_cost,
        p2p_usd: p2p,
        grid_usd: grid,
        total_usd: p2p + grid,
    };

    let mut voltage = Vec::new();
    let mut curtailment = Vec::new();
    let loads = LoadTables::of(spec);
    let ctx = crate::assembly::grid_context(spec, &loads);
    let mut total_curtailment = 0.0;
    for st in states {
        for (n, node) in net.nodes.iter().enumerate() {
            let nodal = ctx.nodal_load(st.t, n);
            for phase in node.phases.iter() {
                let k = phase.index();
                voltage.push(NodePhaseValue {
                    t: st.t,
                    node: node.id,
                    phase,
                    value: st.voltage_sq[n][k].max(0.0).sqrt(),
                });
                if nodal[k].total_p() > 0.0 {
                    curtailment.push(CurtailmentPoint {
                        t: st.t,
                        node: node.id,
                        phase,
                        p_mw: st.shed_p[n][k] * mw,
                        q_mvar: st.shed_q[n][k] * mw,
                    });
                    total_curtailment += st.shed_p[n][k] * mw;
                }
            }
        }
    }

    let mut trades = Vec::new();
    for (idx, key) in problem.keys().iter().enumerate() {
        if let VarKey::Trade { t, phase, prosumer, counterparty } = *key {
            trades.push(TradeRecord {
                t,
                phase,
                prosumer: spec.agents.prosumers[prosumer].id.clone(),
                counterparty: match counterparty {
                    Counterparty::Consumer(j) => spec.agents.consumers[j].id.clone(),
                    Counterparty::Operator => "operator".into(),
                },
                mw: solution.primal[idx] * mw,
            });
        }
    }

    let total_bills: f64 = consumers.iter().map(|c| c.bill_usd).sum();
    let total_revenues: f64 = prosumers.iter().map(|p| p.revenue_usd).sum();
    Ok(SettlementReport {
        scenario: spec.name.clone(),
        attacks: spec.applied.clone(),
        objective_usd: solution.objective_value,
        costs,
        consumers,
        prosumers,
        import_mwh: import,
        substation_payment_usd: payment,
        total_bills_usd: total_bills,
        total_revenues_usd: total_revenues,
        merchandising_surplus_usd: total_bills - total_revenues - payment,
        losses_mw: losses,
        total_curtailment_mw: total_curtailment,
        dlmp: dlmp.clone(),
        voltage,
        curtailment,
        trades,
        soc_gap: soc_gap.clone(),
        advisories: spec.agents.advisories.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Delta {
    pub pre: f64,
    pub post: f64,
    pub delta: f64,
}

impl Delta {
    pub fn new(pre: f64, post: f64) -> Self {
        Self {
            pre,
            post,
            delta: post - pre,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentDelta {
    pub id: String,
    /// `consumer` (bill) or `prosumer` (revenue).
    pub role: &'static str,
    pub amount_usd: Delta,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointDelta {
    pub t: usize,
    pub node: NodeId,
    pub phase: Phase,
    pub value: Delta,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub pre: String,
    pub post: String,
    pub total_cost_usd: Delta,
    pub total_curtailment_mw: Delta,
    pub dlmp_min: Delta,
    pub dlmp_max: Delta,
    pub agents: Vec<AgentDelta>,
    pub dlmp: Vec<PointDelta>,
    pub voltage: Vec<PointDelta>,
    pub curtailment: Vec<PointDelta>,
}

fn point_deltas<T>(
    pre: &[T],
    post: &[T],
    key: impl Fn(&T) -> (usize, NodeId, Phase),
    value: impl Fn(&T) -> f64,
) -> Vec<PointDelta> {
    let mut out = Vec::new();
    for a in pre {
        let k = key(a);
        let after = post.iter().find(|b| key(b) == k).map(&value).unwrap_or(0.0);
        out.push(PointDelta {
            t: k.0,
            node: k.1,
            phase: k.2,
            value: Delta::new(value(a), after),
        });
    }
    for b in post {
        let k = key(b);
        if !pre.iter().any(|a| key(a) == k) {
            out.push(PointDelta {
                t: k.0,
                node: k.1,
                phase: k.2,
                value: Delta::new(0.0, value(b)),
            });
        }
    }
    out
}

pub fn compare(pre: &SettlementReport, post: &SettlementReport) -> Result<CompareReport> {
    let ids = |r: &SettlementReport| {
        let mut c: Vec<String> = r.consumers.iter().map(|c| format!("c:{}", c.id)).collect();
        c.extend(r.prosumers.iter().map(|p| format!("p:{}", p.id)));
        c.sort();
        c
    };
    if ids(pre) != ids(post) {
        return Err(Error::Settlement(format!(
            "agent sets of '{}' and '{}' differ",
            pre.scenario, post.scenario
        )));
    }
    let mut agents = Vec::new();
    for c in &pre.consumers {
        agents.push(AgentDelta {
            id: c.id.clone(),
            role: "consumer",
            amount_usd: Delta::new(c.bill_usd, post.bill(&c.id).unwrap_or(0.0)),
        });
    }
    for p in &pre.prosumers {
        agents.push(AgentDelta {
            id: p.id.clone(),
            role: "prosumer",
            amount_usd: Delta::new(p.revenue_usd, post.revenue(&p.id).unwrap_or(0.0)),
        });
    }
    Ok(CompareReport {
        pre: pre.scenario.clone(),
        post: post.scenario.clone(),
        total_cost_usd: Delta::new(pre.costs.total_usd, post.costs.total_usd),
        total_curtailment_mw: Delta::new(pre.total_curtailment_mw, post.total_curtailment_mw),
        dlmp_min: Delta::new(pre.dlmp.min(), post.dlmp.min()),
        dlmp_max: Delta::new(pre.dlmp.max(), post.dlmp.max()),
        agents,
        dlmp: point_deltas(&pre.dlmp.points, &post.dlmp.points, |p| (p.t, p.node, p.phase), |p| p.price),
        voltage: point_deltas(&pre.voltage, &post.voltage, |p| (p.t, p.node, p.phase), |p| p.value),
        curtailment: point_deltas(
            &pre.curtailment,
            &post.curtailment,
            |p| (p.t, p.node, p.phase),
            |p| p.p_mw,
        ),
    })
}

// ---- writers ----

/// Fixed six-decimal formatting with negative zero folded to zero.
pub fn fmt_num(v: f64) -> String {
    let s = format!("{v:.6}");
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// Run details that may differ between otherwise identical runs.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    pub generated_unix_s: u64,
    pub status: SolveStatus,
    pub solver: SolverStats,
    pub wall_time_s: f64,
}

impl RunMetadata {
    pub fn now(status: SolveStatus, solver: SolverStats, wall_time_s: f64) -> Self {
        let generated_unix_s = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            generated_unix_s,
            status,
            solver,
            wall_time_s,
        }
    }
}

fn write_file(dir: &Path, name: &str, body: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Error::Settlement(format!("serialising report: {e}")))
}

pub fn bills_csv(r: &SettlementReport) -> String {
    let mut s = String::from("agent,role,node,energy_mwh,amount_usd\n");
    for c in &r.consumers {
        let _ = writeln!(s, "{},consumer,{},{},{}", c.id, c.node, fmt_num(c.energy_mwh), fmt_num(c.bill_usd));
    }
    for p in &r.prosumers {
        let _ = writeln!(s, "{},prosumer,{},{},{}", p.id, p.node, fmt_num(p.energy_mwh), fmt_num(p.revenue_usd));
    }
    s
}

pub fn dlmp_csv(r: &SettlementReport) -> String {
    let mut s = String::from("t,node,phase,dlmp_usd_per_mwh\n");
    for p in &r.dlmp.points {
        let _ = writeln!(s, "{},{},{},{}", p.t, p.node, p.phase, fmt_num(p.price));
    }
    s
}

pub fn voltage_csv(r: &SettlementReport) -> String {
    let mut s = String::from("t,node,phase,v_pu\n");
    for p in &r.voltage {
        let _ = writeln!(s, "{},{},{},{}", p.t, p.node, p.phase, fmt_num(p.value));
    }
    s
}

pub fn trades_csv(r: &SettlementReport) -> String {
    let mut s = String::from("t,phase,prosumer,counterparty,mw\n");
    for x in &r.trades {
        let _ = writeln!(s, "{},{},{},{},{}", x.t, x.phase, x.prosumer, x.counterparty, fmt_num(x.mw));
    }
    s
}

pub fn curtailment_csv(r: &SettlementReport) -> String {
    let mut s = String::from("t,node,phase,p_mw,q_mvar\n");
    for p in &r.curtailment {
        let _ = writeln!(s, "{},{},{},{},{}", p.t, p.node, p.phase, fmt_num(p.p_mw), fmt_num(p.q_mvar));
    }
    s
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    metadata: &'a RunMetadata,
    #[serde(flatten)]
    body: &'a T,
}

/// Writes `report.json` and the CSV tables into `dir`.
pub fn write_report(dir: &Path, report: &SettlementReport, meta: &RunMetadata) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    write_file(dir, "report.json", &to_json(&Envelope { metadata: meta, body: report })?, &mut written)?;
    write_file(dir, "bills.csv", &bills_csv(report), &mut written)?;
    write_file(dir, "dlmp.csv", &dlmp_csv(report), &mut written)?;
    write_file(dir, "voltage.csv", &voltage_csv(report), &mut written)?;
    write_file(dir, "trades.csv", &trades_csv(report), &mut written)?;
    write_file(dir, "curtailment.csv", &curtailment_csv(report), &mut written)?;
    Ok(written)
}

fn delta_csv(header: &str, rows: &[PointDelta]) -> String {
    let mut s = format!("t,node,phase,pre_{header},post_{header},delta_{header}\n");
    for d in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            d.t,
            d.node,
            d.phase,
            fmt_num(d.value.pre),
            fmt_num(d.value.post),
            fmt_num(d.value.delta)
        );
    }
    s
}

/// Rounds to four decimals; `+ 0.0` turns a rounded `-0.0` into `0.0`.
fn r4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4 + 0.0
}

pub fn render_compare(c: &CompareReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<12} {:>10} {:>14} {:>14} {:>12}", "agent", "role", "pre_usd", "post_usd", "delta_usd");
    for a in &c.agents {
        let _ = writeln!(
            s,
            "{:<12} {:>10} {:>14.4} {:>14.4} {:>12.4}",
            a.id, a.role, r4(a.amount_usd.pre), r4(a.amount_usd.post), r4(a.amount_usd.delta)
        );
    }
    let _ = writeln!(
        s,
        "total cost      {:>12.4} -> {:>12.4} ({:+.4})",
        r4(c.total_cost_usd.pre), r4(c.total_cost_usd.post), r4(c.total_cost_usd.delta)
    );
    let _ = writeln!(
        s,
        "dlmp range      [{:.4}, {:.4}] -> [{:.4}, {:.4}]",
        r4(c.dlmp_min.pre), r4(c.dlmp_max.pre), r4(c.dlmp_min.post), r4(c.dlmp_max.post)
    );
    let _ = writeln!(
        s,
        "curtailment MW  {:>12.4} -> {:>12.4} ({:+.4})",
        r4(c.total_curtailment_mw.pre), r4(c.total_curtailment_mw.post), r4(c.total_curtailment_mw.delta)
    );
    s
}

/// Writes `compare.json`, the delta tables and a rendered summary into `dir`.
pub fn write_compare(dir: &Path, c: &CompareReport) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    write_file(dir, "compare.json", &to_json(c)?, &mut written)?;
    let mut bills = String::from("agent,role,pre_usd,post_usd,delta_usd\n");
    for a in &c.agents {
        let _ = writeln!(
            bills,
            "{},{},{},{},{}",
            a.id,
            a.role,
            fmt_num(a.amount_usd.pre),
            fmt_num(a.amount_usd.post),
            fmt_num(a.amount_usd.delta)
        );
    }
    write_file(dir, "delta_bills.csv", &bills, &mut written)?;
    write_file(dir, "delta_dlmp.csv", &delta_csv("usd_per_mwh", &c.dlmp), &mut written)?;
    write_file(dir, "delta_voltage.csv", &delta_csv("v_pu", &c.voltage), &mut written)?;
    write_file(dir, "delta_curtailment.csv", &delta_csv("mw", &c.curtailment), &mut written)?;
    write_file(dir, "compare.txt", &render_compare(c), &mut written)?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_zero_is_normalised() {
        assert_eq!(fmt_num(-0.0), "0.000000");
        assert_eq!(fmt_num(-1e-9), "0.000000");
        assert_eq!(fmt_num(-0.5), "-0.500000");
        assert_eq!(fmt_num(35.25), "35.250000");
    }

    #[test]
    fn delta_sign() {
        let d = Delta::new(2.0, 5.0);
        assert_eq!(d.delta, 3.0);
    }
}
