//! Scenario specification and attack transforms.
//!
//! Attacks are pure functions from one [`ScenarioSpec`] to another; the
//! input scenario is never modified.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feeder::{load_feeder, Feeder};
use crate::market::{load_agents, AgentSet};
use crate::powerflow::{LossModel, ProbeLoad};

pub const DEFAULT_VOLL: f64 = 2000.0;
pub const DEFAULT_SUBSTATION_PRICE: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    PriceTamper,
    DemandInflation,
    LineOutage,
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackKind::PriceTamper => "price_tamper",
            AttackKind::DemandInflation => "demand_inflation",
            AttackKind::LineOutage => "line_outage",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Agent id, or line id for outages.
    pub target: String,
    /// New price in $/MWh or inflation factor; unused for outages.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param: Option<f64>,
}

impl AttackSpec {
    pub fn price_tamper(target: &str, price: f64) -> Self {
        Self {
            kind: AttackKind::PriceTamper,
            target: target.into(),
            param: Some(price),
        }
    }

    pub fn demand_inflation(target: &str, factor: f64) -> Self {
        Self {
            kind: AttackKind::DemandInflation,
            target: target.into(),
            param: Some(factor),
        }
    }

    pub fn line_outage(target: &str) -> Self {
        Self {
            kind: AttackKind::LineOutage,
            target: target.into(),
            param: None,
        }
    }

    fn param(&self) -> Result<f64> {
        self.param
            .ok_or_else(|| Error::Attack(format!("{} on '{}' needs a parameter", self.kind, self.target)))
    }
}

/// A fully loaded scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub feeder: Feeder,
    pub agents: AgentSet,
    /// Load multiplier per step; its length is the horizon.
    pub profile: Vec<f64>,
    pub step_hours: f64,
    /// $/MWh.
    pub voll: f64,
    /// $/MWh.
    pub substation_price: f64,
    /// pu.
    pub substation_voltage: f64,
    pub loss_model: LossModel,
    pub shedding: bool,
    /// Lets prosumers sell unmatched output to the distribution operator.
    pub operator_sales: bool,
    /// Attacks still to be applied.
    pub attacks: Vec<AttackSpec>,
    /// Attacks already folded into the data.
    pub applied: Vec<AttackSpec>,
    pub probes: Vec<ProbeLoad>,
    pub feeder_path: Option<PathBuf>,
    pub agents_path: Option<PathBuf>,
}

impl ScenarioSpec {
    /// A single-step scenario with default prices and no attacks.
    pub fn new(name: impl Into<String>, feeder: Feeder, agents: AgentSet) -> Self {
        Self {
            name: name.into(),
            feeder,
            agents,
            profile: vec![1.0],
            step_hours: 1.0,
            voll: DEFAULT_VOLL,
            substation_price: DEFAULT_SUBSTATION_PRICE,
            substation_voltage: 1.0,
            loss_model: LossModel::Full,
            shedding: true,
            operator_sales: true,
            attacks: Vec::new(),
            applied: Vec::new(),
            probes: Vec::new(),
            feeder_path: None,
            agents_path: None,
        }
    }

    pub fn horizon(&self) -> usize {
        self.profile.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.profile.is_empty() {
            return Err(Error::Scenario("horizon must contain at least one step".into()));
        }
        if self.profile.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
            return Err(Error::Scenario("load profile entries must be finite and non-negative".into()));
        }
        if !(self.step_hours > 0.0 && self.step_hours.is_finite()) {
            return Err(Error::Scenario(format!("step length must be positive, got {}", self.step_hours)));
        }
        for (name, v) in [("voll", self.voll), ("substation price", self.substation_price)] {
            if !v.is_finite() {
                return Err(Error::Scenario(format!("{name} must be finite")));
            }
        }
        if self.substation_voltage.is_nan() || self.substation_voltage <= 0.0 {
            return Err(Error::Scenario("substation voltage must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Path, relative to the scenario file.
    pub feeder: PathBuf,
    pub agents: PathBuf,
    #[serde(default = "default_voll")]
    pub voll_usd_per_mwh: f64,
    #[serde(default = "default_substation_price")]
    pub substation_usd_per_mwh: f64,
    #[serde(default = "default_one")]
    pub substation_voltage_pu: f64,
    #[serde(default)]
    pub loss_model: LossModel,
    #[serde(default = "default_true")]
    pub shedding: bool,
    #[serde(default = "default_true")]
    pub operator_sales: bool,
    #[serde(default = "default_profile")]
    pub load_profile: Vec<f64>,
    #[serde(default = "default_one")]
    pub step_hours: f64,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
}

fn default_voll() -> f64 {
    DEFAULT_VOLL
}
fn default_substation_price() -> f64 {
    DEFAULT_SUBSTATION_PRICE
}
fn default_one() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_profile() -> Vec<f64> {
    vec![1.0]
}

/// Reads a scenario file and the feeder and agents it references.
/// Attacks are left pending; see [`apply_attacks`].
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ScenarioFile = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let feeder_path = dir.join(&file.feeder);
    let agents_path = dir.join(&file.agents);
    let feeder = load_feeder(&feeder_path)?;
    let agents = load_agents(&agents_path, &feeder)?;
    let name = file.name.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into())
    });
    let spec = ScenarioSpec {
        name,
        feeder,
        agents,
        profile: file.load_profile,
        step_hours: file.step_hours,
        voll: file.voll_usd_per_mwh,
        substation_price: file.substation_usd_per_mwh,
        substation_voltage: file.substation_voltage_pu,
        loss_model: file.loss_model,
        shedding: file.shedding,
        operator_sales: file.operator_sales,
        attacks: file.attacks,
        applied: Vec::new(),
        probes: Vec::new(),
        feeder_path: Some(feeder_path),
        agents_path: Some(agents_path),
    };
    spec.validate()?;
    Ok(spec)
}

pub fn apply_price_tamper(scenario: &ScenarioSpec, prosumer_id: &str, new_price: f64) -> Result<ScenarioSpec> {
    if !(new_price > 0.0 && new_price.is_finite()) {
        return Err(Error::Attack(format!("tampered price must be positive, got {new_price}")));
    }
    let i = scenario
        .agents
        .prosumer_index(prosumer_id)
        .ok_or_else(|| Error::Attack(format!("unknown prosumer '{prosumer_id}'")))?;
    let mut out = scenario.clone();
    out.agents.prosumers[i].offer_price = new_price;
    Ok(out)
}

pub fn apply_demand_inflation(scenario: &ScenarioSpec, consumer_id: &str, factor: f64) -> Result<ScenarioSpec> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::Attack(format!("inflation factor must be positive, got {factor}")));
    }
    let j = scenario
        .agents
        .consumer_index(consumer_id)
        .ok_or_else(|| Error::Attack(format!("unknown consumer '{consumer_id}'")))?;
    let mut out = scenario.clone();
    let net = &out.feeder.network;
    let topo = net.topology();
    let c = &mut out.agents.consumers[j];
    for k in 0..3 {
        c.demand[k] *= factor;
        c.demand_min[k] *= factor;
        c.demand_max[k] *= factor;
    }
    if let Some(l) = topo.parent[c.node] {
        let limit = net.lines[l].s_limit;
        if c.demand.iter().any(|&d| d > limit) {
            log::warn!(
                "inflated demand of '{consumer_id}' exceeds the rating of line '{}'",
                net.lines[l].id
            );
        }
    }
    Ok(out)
}

pub fn apply_line_outage(scenario: &ScenarioSpec, line_id: &str) -> Result<ScenarioSpec> {
    let l = scenario
        .feeder
        .network
        .line_index(line_id)
        .ok_or_else(|| Error::Attack(format!("unknown line '{line_id}'")))?;
    if !scenario.feeder.network.lines[l].in_service {
        return Err(Error::Attack(format!("line '{line_id}' is already out of service")));
    }
    let mut out = scenario.clone();
    out.feeder.network.lines[l].in_service = false;
    let net = &out.feeder.network;
    let island = net.topology().islanded(net.substation);
    if !island.is_empty() {
        let ids: Vec<String> = island.iter().map(|&n| net.nodes[n].id.to_string()).collect();
        log::info!("outage of '{line_id}' islands nodes {}", ids.join(", "));
    }
    Ok(out)
}

pub fn apply_attack(scenario: &ScenarioSpec, attack: &AttackSpec) -> Result<ScenarioSpec> {
    match attack.kind {
        AttackKind::PriceTamper => apply_price_tamper(scenario, &attack.target, attack.param()?),
        AttackKind::DemandInflation => apply_demand_inflation(scenario, &attack.target, attack.param()?),
        AttackKind::LineOutage => apply_line_outage(scenario, &attack.target),
    }
}

/// Applies every pending attack in order and records them as applied.
pub fn apply_attacks(scenario: &ScenarioSpec) -> Result<ScenarioSpec> {
    let mut targets = HashSet::new();
    for a in &scenario.attacks {
        if !targets.insert(a.target.as_str()) {
            return Err(Error::Attack(format!("target '{}' is attacked more than once", a.target)));
        }
    }
    let mut out = scenario.clone();
    out.attacks.clear();
    for a in &scenario.attacks {
        out = apply_attack(&out, a)?;
        out.applied.push(a.clone());
    }
    Ok(out)
}
