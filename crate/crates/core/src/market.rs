//! Peer-to-peer market: agents, bilateral trade variables and their
//! constraints and costs.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conic::{ConeLabel, ConicProblem, Counterparty, LinExpr, RowLabel, VarKey};
use crate::error::{Error, Result};
use crate::feeder::{Feeder, NodeId, NodeIdx};
use crate::units::{Phase, PhaseSet, PhaseVec, Quantity};

#[derive(Debug, Clone, PartialEq)]
pub struct Prosumer {
    pub id: String,
    pub node: NodeIdx,
    pub phases: PhaseSet,
    /// Per-phase bounds in pu.
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// Per-phase inverter rating in pu.
    pub s_inv: f64,
    /// $/MWh.
    pub offer_price: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemandSource {
    /// Demand is the feeder load at the consumer's node.
    Feeder,
    Explicit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Consumer {
    pub id: String,
    pub node: NodeIdx,
    pub phases: PhaseSet,
    /// Reported demand per phase in pu; equal bounds mean inelastic.
    pub demand: PhaseVec,
    pub demand_min: PhaseVec,
    pub demand_max: PhaseVec,
    /// Demand before any falsified report.
    pub true_demand: PhaseVec,
    /// Reactive demand per unit of active demand.
    pub q_ratio: PhaseVec,
    /// $/MWh.
    pub utility_price: f64,
    pub source: DemandSource,
}

impl Consumer {
    pub fn is_inelastic(&self) -> bool {
        self.demand_min == self.demand_max
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AgentSet {
    pub prosumers: Vec<Prosumer>,
    pub consumers: Vec<Consumer>,
    /// Non-fatal findings from validation.
    pub advisories: Vec<String>,
}

impl AgentSet {
    pub fn is_empty(&self) -> bool {
        self.prosumers.is_empty() && self.consumers.is_empty()
    }

    pub fn prosumer_index(&self, id: &str) -> Option<usize> {
        self.prosumers.iter().position(|p| p.id == id)
    }

    pub fn consumer_index(&self, id: &str) -> Option<usize> {
        self.consumers.iter().position(|c| c.id == id)
    }

    /// Phases per node whose feeder load is represented by a consumer.
    pub fn feeder_bound_phases(&self, nodes: usize) -> Vec<PhaseSet> {
        let mut out = vec![PhaseSet::EMPTY; nodes];
        for c in self.consumers.iter().filter(|c| c.source == DemandSource::Feeder) {
            for p in c.phases.iter() {
                out[c.node].insert(p);
            }
        }
        out
    }

    pub fn ids(&self) -> Vec<&str> {
        self.prosumers
            .iter()
            .map(|p| p.id.as_str())
            .chain(self.consumers.iter().map(|c| c.id.as_str()))
            .collect()
    }
}

// ---- file schema ----

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentsFile {
    #[serde(default)]
    pub prosumers: Vec<ProsumerRecord>,
    #[serde(default)]
    pub consumers: Vec<ConsumerRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProsumerRecord {
    pub id: String,
    pub node: NodeId,
    pub phases: PhaseSet,
    #[serde(default)]
    pub p_min_kw: f64,
    pub p_max_kw: f64,
    pub q_min_kvar: f64,
    pub q_max_kvar: f64,
    pub s_inv_kva: f64,
    pub offer_usd_per_mwh: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsumerRecord {
    pub id: String,
    pub node: NodeId,
    pub phases: PhaseSet,
    #[serde(default)]
    pub utility_usd_per_mwh: f64,
    pub demand_source: DemandSource,
    /// Per-phase kW, required for explicit demand.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub demand_kw: BTreeMap<Phase, f64>,
    /// Elastic range; defaults to the demand itself.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub demand_min_kw: BTreeMap<Phase, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub demand_max_kw: BTreeMap<Phase, f64>,
    /// kvar per kW for explicit demand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_ratio: Option<f64>,
}

pub fn load_agents(path: impl AsRef<Path>, feeder: &Feeder) -> Result<AgentSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: AgentsFile = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
    build_agents(&file, feeder)
}

pub fn build_agents(file: &AgentsFile, feeder: &Feeder) -> Result<AgentSet> {
    let net = &feeder.network;
    let base = net.base;
    let kw = |v: f64| base.to_per_unit(Quantity::Power, v);
    let mut seen = HashSet::new();
    let mut advisories = Vec::new();

    let locate = |id: &str, node: NodeId, phases: PhaseSet| -> Result<NodeIdx> {
        let ni = net
            .node_index(node)
            .ok_or_else(|| Error::Agent(format!("agent '{id}' sits on unknown node {node}")))?;
        if phases.is_empty() {
            return Err(Error::Agent(format!("agent '{id}' has no phases")));
        }
        if !phases.is_subset(net.nodes[ni].phases) {
            return Err(Error::Agent(format!(
                "agent '{id}' uses phases {phases} but node {node} only has {}",
                net.nodes[ni].phases
            )));
        }
        Ok(ni)
    };

    let mut prosumers = Vec::new();
    for r in &file.prosumers {
        if !seen.insert(r.id.clone()) {
            return Err(Error::Agent(format!("duplicate agent id '{}'", r.id)));
        }
        let node = locate(&r.id, r.node, r.phases)?;
        let p = Prosumer {
            id: r.id.clone(),
            node,
            phases: r.phases,
            p_min: kw(r.p_min_kw),
            p_max: kw(r.p_max_kw),
            q_min: kw(r.q_min_kvar),
            q_max: kw(r.q_max_kvar),
            s_inv: kw(r.s_inv_kva),
            offer_price: r.offer_usd_per_mwh,
        };
        if p.p_min > p.p_max {
            return Err(Error::Agent(format!("prosumer '{}' has p_min > p_max", p.id)));
        }
        if p.q_min > p.q_max {
            return Err(Error::Agent(format!("prosumer '{}' has q_min > q_max", p.id)));
        }
        if p.s_inv.is_nan() || p.s_inv <= 0.0 {
            return Err(Error::Agent(format!("prosumer '{}' needs a positive inverter rating", p.id)));
        }
        if !p.offer_price.is_finite() {
            return Err(Error::Agent(format!("prosumer '{}' has a non-finite offer", p.id)));
        }
        if p.p_max.abs().max(p.p_min.abs()) > p.s_inv {
            let msg = format!(
                "prosumer '{}' active bounds exceed its inverter rating; the rating binds",
                p.id
            );
            log::warn!("{msg}");
            advisories.push(msg);
        }
        prosumers.push(p);
    }

    let (load_p, load_q) = feeder.load_matrix();
    let mut bound: Vec<PhaseSet> = vec![PhaseSet::EMPTY; net.nodes.len()];
    let mut consumers = Vec::new();
    for r in &file.consumers {
        if !seen.insert(r.id.clone()) {
            return Err(Error::Agent(format!("duplicate agent id '{}'", r.id)));
        }
        let node = locate(&r.id, r.node, r.phases)?;
        let mut demand = [0.0; 3];
        let mut q_ratio = [0.0; 3];
        match r.demand_source {
            DemandSource::Feeder => {
                for ph in r.phases.iter() {
                    let k = ph.index();
                    if bound[node].contains(ph) {
                        return Err(Error::Agent(format!(
                            "consumer '{}' binds feeder load on node {} phase {ph} already claimed by another consumer",
                            r.id, r.node
                        )));
                    }
                    bound[node].insert(ph);
                    demand[k] = load_p[node][k];
                    q_ratio[k] = if load_p[node][k] > 0.0 {
                        load_q[node][k] / load_p[node][k]
                    } else {
                        0.0
                    };
                }
                if !r.demand_kw.is_empty() {
                    return Err(Error::Agent(format!(
                        "consumer '{}' takes demand from the feeder but also lists demand_kw",
                        r.id
                    )));
                }
            }
            DemandSource::Explicit => {
                for (&ph, &v) in &r.demand_kw {
                    if !r.phases.contains(ph) {
                        return Err(Error::Agent(format!(
                            "consumer '{}' has demand on unconnected phase {ph}",
                            r.id
                        )));
                    }
                    demand[ph.index()] = kw(v);
                }
                for ph in r.phases.iter() {
                    q_ratio[ph.index()] = r.q_ratio.unwrap_or(0.0);
                }
            }
        }
        let mut demand_min = demand;
        let mut demand_max = demand;
        for (&ph, &v) in &r.demand_min_kw {
            demand_min[ph.index()] = kw(v);
        }
        for (&ph, &v) in &r.demand_max_kw {
            demand_max[ph.index()] = kw(v);
        }
        for k in 0..3 {
            if demand[k] < 0.0 || demand_min[k] < 0.0 {
                return Err(Error::Agent(format!("consumer '{}' has negative demand", r.id)));
            }
            if !(demand_min[k] <= demand[k] && demand[k] <= demand_max[k]) {
                return Err(Error::Agent(format!(
                    "consumer '{}' demand on phase {} lies outside its elastic range",
                    r.id,
                    Phase::from_index(k)
                )));
            }
        }
        if !r.utility_usd_per_mwh.is_finite() {
            return Err(Error::Agent(format!("consumer '{}' has a non-finite utility", r.id)));
        }
        consumers.push(Consumer {
            id: r.id.clone(),
            node,
            phases: r.phases,
            demand,
            demand_min,
            demand_max,
            true_demand: demand,
            q_ratio,
            utility_price: r.utility_usd_per_mwh,
            source: r.demand_source,
        });
    }

    for p in &prosumers {
        for c in &consumers {
            if p.node == c.node && !p.phases.intersection(c.phases).is_empty() {
                let msg = format!(
                    "prosumer '{}' and consumer '{}' share node {} on phases {}",
                    p.id,
                    c.id,
                    net.nodes[p.node].id,
                    p.phases.intersection(c.phases)
                );
                log::info!("{msg}");
                advisories.push(msg);
            }
        }
    }

    Ok(AgentSet {
        prosumers,
        consumers,
        advisories,
    })
}

/// `S_inv - sqrt(P^2 + Q^2)`, non-negative inside the inverter circle.
pub fn inverter_cone(p: f64, q: f64, s_inv: f64) -> f64 {
    s_inv - p.hypot(q)
}

/// Shared settings for building the market block.
#[derive(Debug, Clone)]
pub struct MarketContext {
    /// Load multiplier per time step.
    pub profile: Vec<f64>,
    pub step_hours: f64,
    /// MW per pu.
    pub base_mw: f64,
    /// Lets prosumers sell output not matched with a consumer to the operator.
    pub operator_sales: bool,
}

impl MarketContext {
    /// Objective weight that turns a $/MWh price times a pu quantity into $.
    pub fn cost_weight(&self) -> f64 {
        self.base_mw * self.step_hours
    }
}

/// Adds the trade, dispatch and demand variables with their rows and costs.
pub fn assemble_market(problem: &mut ConicProblem, agents: &AgentSet, ctx: &MarketContext) -> Result<()> {
    let w = ctx.cost_weight();
    for (t, &scale) in ctx.profile.iter().enumerate() {
        for (i, p) in agents.prosumers.iter().enumerate() {
            for phase in p.phases.iter() {
                let pp = problem.add_var(VarKey::ProsumerP { t, prosumer: i, phase }, p.p_min, p.p_max)?;
                let qp = problem.add_var(VarKey::ProsumerQ { t, prosumer: i, phase }, p.q_min, p.q_max)?;
                problem.add_cost(pp, p.offer_price * w);
                problem.add_soc(
                    ConeLabel::Inverter { t, prosumer: i, phase },
                    LinExpr::constant(p.s_inv),
                    vec![LinExpr::var(pp), LinExpr::var(qp)],
                )?;
            }
        }
        for (j, c) in agents.consumers.iter().enumerate() {
            for phase in c.phases.iter() {
                let k = phase.index();
                let d = problem.add_var(
                    VarKey::Demand { t, consumer: j, phase },
                    c.demand_min[k] * scale,
                    c.demand_max[k] * scale,
                )?;
                problem.add_cost(d, -c.utility_price * w);
            }
        }
        for (i, p) in agents.prosumers.iter().enumerate() {
            for phase in p.phases.iter() {
                let mut sold = LinExpr::new();
                for (j, c) in agents.consumers.iter().enumerate() {
                    if c.phases.contains(phase) {
                        let counterparty = Counterparty::Consumer(j);
                        let x = problem.add_var(
                            VarKey::Trade { t, phase, prosumer: i, counterparty },
                            0.0,
                            f64::INFINITY,
                        )?;
                        sold.add_term(x, 1.0);
                    }
                }
                if ctx.operator_sales {
                    let counterparty = Counterparty::Operator;
                    let x = problem.add_var(
                        VarKey::Trade { t, phase, prosumer: i, counterparty },
                        0.0,
                        f64::INFINITY,
                    )?;
                    sold.add_term(x, 1.0);
                }
                let pp = problem.require(&VarKey::ProsumerP { t, prosumer: i, phase })?;
                problem.add_eq(
                    RowLabel::Aggregation { t, prosumer: i, phase },
                    LinExpr::var(pp) - sold,
                    0.0,
                )?;
            }
        }
        for (j, c) in agents.consumers.iter().enumerate() {
            for phase in c.phases.iter() {
                let mut bought = LinExpr::new();
                for (i, p) in agents.prosumers.iter().enumerate() {
                    if p.phases.contains(phase) {
                        let key = VarKey::Trade { t, phase, prosumer: i, counterparty: Counterparty::Consumer(j) };
                        bought.add_term(problem.require(&key)?, 1.0);
                    }
                }
                if bought.terms.is_empty() {
                    continue;
                }
                let d = problem.require(&VarKey::Demand { t, consumer: j, phase })?;
                problem.add_le(
                    RowLabel::DemandCover { t, consumer: j, phase },
                    bought - LinExpr::var(d),
                    0.0,
                )?;
            }
        }
    }
    Ok(())
}
