//! Three-phase radial feeder data model and ingestion.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{Mat3, PerUnitBase, Phase, PhaseSet, PhaseVec, Quantity};

pub type NodeId = u32;

/// Index into [`Network::nodes`].
pub type NodeIdx = usize;
/// Index into [`Network::lines`].
pub type LineIdx = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub name: Option<String>,
    pub phases: PhaseSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub id: String,
    /// Sending end, always the node closer to the substation.
    pub from: NodeIdx,
    pub to: NodeIdx,
    pub phases: PhaseSet,
    /// Resistance matrix in pu.
    pub r: Mat3,
    /// Reactance matrix in pu.
    pub x: Mat3,
    /// Per-phase apparent power limit in pu.
    pub s_limit: f64,
    /// Current magnitude bounds in pu.
    pub i_min: f64,
    pub i_max: f64,
    pub in_service: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeLoad {
    pub node: NodeIdx,
    pub p: PhaseVec,
    pub q: PhaseVec,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoltageBounds {
    pub v_min: f64,
    pub v_max: f64,
}

impl VoltageBounds {
    pub fn new(v_min: f64, v_max: f64) -> Result<Self> {
        if !(v_min > 0.0 && v_min < v_max && v_max.is_finite()) {
            return Err(Error::Validation(format!(
                "voltage bounds must satisfy 0 < v_min < v_max, got [{v_min}, {v_max}]"
            )));
        }
        Ok(Self { v_min, v_max })
    }

    /// Bounds on the squared magnitude.
    pub fn squared(&self) -> (f64, f64) {
        (self.v_min * self.v_min, self.v_max * self.v_max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub nodes: Vec<Node>,
    pub lines: Vec<Line>,
    pub substation: NodeIdx,
    pub base: PerUnitBase,
    index: HashMap<NodeId, NodeIdx>,
}

/// Parent/child relations over in-service lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    /// Line feeding each node, `None` for the substation and island roots.
    pub parent: Vec<Option<LineIdx>>,
    /// Lines leaving each node.
    pub children: Vec<Vec<LineIdx>>,
    /// Root of the connected component each node belongs to.
    pub root: Vec<NodeIdx>,
}

impl Topology {
    pub fn is_energized(&self, node: NodeIdx, substation: NodeIdx) -> bool {
        self.root[node] == substation
    }

    /// Nodes cut off from the substation.
    pub fn islanded(&self, substation: NodeIdx) -> Vec<NodeIdx> {
        (0..self.root.len())
            .filter(|&n| self.root[n] != substation)
            .collect()
    }
}

impl Network {
    pub fn node_index(&self, id: NodeId) -> Option<NodeIdx> {
        self.index.get(&id).copied()
    }

    pub fn line_index(&self, id: &str) -> Option<LineIdx> {
        self.lines.iter().position(|l| l.id == id)
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.node_index(id).map(|i| &self.nodes[i])
    }

    pub fn topology(&self) -> Topology {
        downstream_sets(self)
    }
}

/// Child lines per node over the in-service lines, plus parent pointers.
pub fn downstream_sets(network: &Network) -> Topology {
    let n = network.nodes.len();
    let mut parent = vec![None; n];
    let mut children = vec![Vec::new(); n];
    for (li, line) in network.lines.iter().enumerate() {
        if line.in_service {
            parent[line.to] = Some(li);
            children[line.from].push(li);
        }
    }
    let mut root = vec![0; n];
    for (node, slot) in root.iter_mut().enumerate() {
        let mut cur = node;
        while let Some(li) = parent[cur] {
            cur = network.lines[li].from;
        }
        *slot = cur;
    }
    Topology {
        parent,
        children,
        root,
    }
}

/// Feeder contents after validation and per-unit conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct Feeder {
    pub network: Network,
    pub loads: Vec<NodeLoad>,
    pub bounds: VoltageBounds,
}

impl Feeder {
    /// Nodal load vectors indexed by node.
    pub fn load_matrix(&self) -> (Vec<PhaseVec>, Vec<PhaseVec>) {
        let n = self.network.nodes.len();
        let mut p = vec![[0.0; 3]; n];
        let mut q = vec![[0.0; 3]; n];
        for l in &self.loads {
            for k in 0..3 {
                p[l.node][k] += l.p[k];
                q[l.node][k] += l.q[k];
            }
        }
        (p, q)
    }

    pub fn total_load(&self) -> (f64, f64) {
        self.loads.iter().fold((0.0, 0.0), |(p, q), l| {
            (p + l.p.iter().sum::<f64>(), q + l.q.iter().sum::<f64>())
        })
    }
}

// ---- file schema ----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederFile {
    pub nodes: Vec<NodeRecord>,
    pub lines: Vec<LineRecord>,
    pub substation: NodeId,
    pub base_kva: f64,
    pub base_kv: f64,
    pub v_min: f64,
    pub v_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseLoadRecord {
    #[serde(default)]
    pub p: f64,
    #[serde(default)]
    pub q: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub loads: BTreeMap<Phase, PhaseLoadRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub from: NodeId,
    pub to: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases: Option<PhaseSet>,
    /// Ohm.
    #[serde(rename = "R")]
    pub r: Mat3,
    /// Ohm.
    #[serde(rename = "X")]
    pub x: Mat3,
    /// kVA per phase.
    pub s_limit: f64,
    /// Ampere; defaults to zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_min_amp: Option<f64>,
    /// Ampere; defaults to `s_limit / v_min`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_max_amp: Option<f64>,
    #[serde(default = "default_true")]
    pub in_service: bool,
}

fn default_true() -> bool {
    true
}

impl LineRecord {
    pub fn label(&self) -> String {
        self.id
            .clone()
            .unwrap_or_else(|| format!("{}-{}", self.from, self.to))
    }
}

pub fn load_feeder(path: impl AsRef<Path>) -> Result<Feeder> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: FeederFile = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
    build_feeder(&file)
}

/// Validates a parsed feeder file and converts it to per-unit.
pub fn build_feeder(file: &FeederFile) -> Result<Feeder> {
    let base = PerUnitBase::new(file.base_kva, file.base_kv)?;
    let bounds = VoltageBounds::new(file.v_min, file.v_max)?;

    let mut index = HashMap::new();
    for (i, node) in file.nodes.iter().enumerate() {
        if index.insert(node.id, i).is_some() {
            return Err(Error::Validation(format!("duplicate node id {}", node.id)));
        }
    }
    let substation = *index.get(&file.substation).ok_or_else(|| {
        Error::Validation(format!("substation {} is not a declared node", file.substation))
    })?;

    let mut labels = HashMap::new();
    for (li, rec) in file.lines.iter().enumerate() {
        if labels.insert(rec.label(), li).is_some() {
            return Err(Error::Validation(format!("duplicate line id '{}'", rec.label())));
        }
        for end in [rec.from, rec.to] {
            if !index.contains_key(&end) {
                return Err(Error::Validation(format!(
                    "line '{}' references unknown node {end}",
                    rec.label()
                )));
            }
        }
        if rec.from == rec.to {
            return Err(Error::Validation(format!("line '{}' is a self-loop", rec.label())));
        }
    }

    let ends: Vec<(NodeIdx, NodeIdx)> = file
        .lines
        .iter()
        .map(|l| (index[&l.from], index[&l.to]))
        .collect();
    check_radial(&file.nodes, &ends, &file.lines)?;
    let orient = orient_from(substation, file.nodes.len(), &ends);

    let z_base = base.impedance_ohm();
    let mut lines = Vec::with_capacity(file.lines.len());
    for (li, rec) in file.lines.iter().enumerate() {
        let label = rec.label();
        let phases = match rec.phases {
            Some(p) => p,
            None => Phase::ALL
                .into_iter()
                .filter(|p| rec.r[p.index()][p.index()] != 0.0 || rec.x[p.index()][p.index()] != 0.0)
                .collect(),
        };
        if phases.is_empty() {
            return Err(Error::Validation(format!("line '{label}' has no phases")));
        }
        for (name, m) in [("R", &rec.r), ("X", &rec.x)] {
            for (r, row) in m.iter().enumerate() {
                if row[r] < 0.0 {
                    return Err(Error::Validation(format!(
                        "line '{label}' has negative {name} diagonal on phase {}",
                        Phase::from_index(r)
                    )));
                }
                for (c, &z) in row.iter().enumerate() {
                    if !z.is_finite() {
                        return Err(Error::Validation(format!("line '{label}' has non-finite {name}")));
                    }
                    let connected =
                        phases.contains(Phase::from_index(r)) && phases.contains(Phase::from_index(c));
                    if !connected && z != 0.0 {
                        return Err(Error::Validation(format!(
                            "line '{label}' has {name}[{r}][{c}] on a missing phase"
                        )));
                    }
                }
            }
        }
        if !(rec.s_limit > 0.0 && rec.s_limit.is_finite()) {
            return Err(Error::Validation(format!(
                "line '{label}' needs a positive s_limit, got {}",
                rec.s_limit
            )));
        }
        let s_limit = base.to_per_unit(Quantity::Power, rec.s_limit);
        let i_min = rec
            .i_min_amp
            .map(|a| base.to_per_unit(Quantity::Current, a / 1000.0))
            .unwrap_or(0.0);
        let i_max = rec
            .i_max_amp
            .map(|a| base.to_per_unit(Quantity::Current, a / 1000.0))
            .unwrap_or(s_limit / bounds.v_min);
        if !(i_min >= 0.0 && i_max > i_min) {
            return Err(Error::Validation(format!(
                "line '{label}' current bounds need 0 <= i_min < i_max"
            )));
        }
        let (a, b) = ends[li];
        let (from, to) = if orient[b] == Some(a) { (a, b) } else { (b, a) };
        let scale = |m: &Mat3| -> Mat3 {
            let mut out = [[0.0; 3]; 3];
            for r in 0..3 {
                for c in 0..3 {
                    out[r][c] = m[r][c] / z_base;
                }
            }
            out
        };
        lines.push(Line {
            id: label,
            from,
            to,
            phases,
            r: scale(&rec.r),
            x: scale(&rec.x),
            s_limit,
            i_min,
            i_max,
            in_service: rec.in_service,
        });
    }

    // Node phases follow the feeding line; the substation carries all three.
    let mut node_phases = vec![PhaseSet::EMPTY; file.nodes.len()];
    node_phases[substation] = PhaseSet::ABC;
    for line in &lines {
        node_phases[line.to] = line.phases;
    }
    for line in &lines {
        if !line.phases.is_subset(node_phases[line.from]) {
            return Err(Error::Validation(format!(
                "line '{}' carries phases {} but node {} only has {}",
                line.id, line.phases, file.nodes[line.from].id, node_phases[line.from]
            )));
        }
    }

    let nodes: Vec<Node> = file
        .nodes
        .iter()
        .zip(&node_phases)
        .map(|(rec, &phases)| Node {
            id: rec.id,
            name: rec.name.clone(),
            phases,
        })
        .collect();

    let mut loads = Vec::new();
    for (ni, rec) in file.nodes.iter().enumerate() {
        if rec.loads.is_empty() {
            continue;
        }
        let mut p = [0.0; 3];
        let mut q = [0.0; 3];
        for (&phase, load) in &rec.loads {
            if !(load.p.is_finite() && load.q.is_finite()) {
                return Err(Error::Validation(format!("node {} has a non-finite load", rec.id)));
            }
            if load.p < 0.0 {
                return Err(Error::Validation(format!(
                    "node {} has negative active load on phase {phase}",
                    rec.id
                )));
            }
            if (load.p != 0.0 || load.q != 0.0) && !nodes[ni].phases.contains(phase) {
                return Err(Error::Validation(format!(
                    "node {} has load on phase {phase} which is not connected",
                    rec.id
                )));
            }
            p[phase.index()] = base.to_per_unit(Quantity::Power, load.p);
            q[phase.index()] = base.to_per_unit(Quantity::Power, load.q);
        }
        loads.push(NodeLoad { node: ni, p, q });
    }

    Ok(Feeder {
        network: Network {
            nodes,
            lines,
            substation,
            base,
            index,
        },
        loads,
        bounds,
    })
}

fn check_radial(nodes: &[NodeRecord], ends: &[(NodeIdx, NodeIdx)], lines: &[LineRecord]) -> Result<()> {
    let n = nodes.len();
    let mut adj: Vec<Vec<(NodeIdx, usize)>> = vec![Vec::new(); n];
    let mut dsu: Vec<usize> = (0..n).collect();
    fn find(dsu: &mut [usize], mut x: usize) -> usize {
        while dsu[x] != x {
            dsu[x] = dsu[dsu[x]];
            x = dsu[x];
        }
        x
    }
    for (li, &(a, b)) in ends.iter().enumerate() {
        let (ra, rb) = (find(&mut dsu, a), find(&mut dsu, b));
        if ra == rb {
            let mut cycle = path_between(&adj, a, b);
            cycle.push(a);
            let names: Vec<String> = cycle.iter().map(|&i| nodes[i].id.to_string()).collect();
            return Err(Error::Validation(format!(
                "network is not radial: line '{}' closes the cycle {}",
                lines[li].label(),
                names.join(" -> ")
            )));
        }
        dsu[ra] = rb;
        adj[a].push((b, li));
        adj[b].push((a, li));
    }
    let root = find(&mut dsu, 0);
    let stranded: Vec<String> = (0..n)
        .filter(|&i| find(&mut dsu, i) != root)
        .map(|i| nodes[i].id.to_string())
        .collect();
    if !stranded.is_empty() {
        return Err(Error::Validation(format!(
            "network is disconnected: nodes {} are unreachable from node {}",
            stranded.join(", "),
            nodes[0].id
        )));
    }
    Ok(())
}

fn path_between(adj: &[Vec<(NodeIdx, usize)>], from: NodeIdx, to: NodeIdx) -> Vec<NodeIdx> {
    let mut prev = vec![None; adj.len()];
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([from]);
    seen[from] = true;
    while let Some(u) = queue.pop_front() {
        if u == to {
            break;
        }
        for &(v, _) in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                prev[v] = Some(u);
                queue.push_back(v);
            }
        }
    }
    let mut path = vec![to];
    let mut cur = to;
    while let Some(p) = prev[cur] {
        path.push(p);
        cur = p;
    }
    path.reverse();
    path
}

/// BFS parent of every node when rooted at `root`.
fn orient_from(root: NodeIdx, n: usize, ends: &[(NodeIdx, NodeIdx)]) -> Vec<Option<NodeIdx>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in ends {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut parent = vec![None; n];
    let mut seen = vec![false; n];
    seen[root] = true;
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                parent[v] = Some(u);
                queue.push_back(v);
            }
        }
    }
    parent
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: f64) -> Mat3 {
        [[v, 0.0, 0.0], [0.0, v, 0.0], [0.0, 0.0, v]]
    }

    fn line(from: NodeId, to: NodeId) -> LineRecord {
        LineRecord {
            id: None,
            from,
            to,
            phases: None,
            r: diag(0.1),
            x: diag(0.2),
            s_limit: 1000.0,
            i_min_amp: None,
            i_max_amp: None,
            in_service: true,
        }
    }

    fn node(id: NodeId) -> NodeRecord {
        NodeRecord {
            id,
            name: None,
            loads: BTreeMap::new(),
        }
    }

    fn file(nodes: Vec<NodeRecord>, lines: Vec<LineRecord>) -> FeederFile {
        FeederFile {
            nodes,
            lines,
            substation: 1,
            base_kva: 1000.0,
            base_kv: 2.4,
            v_min: 0.95,
            v_max: 1.05,
            name: None,
        }
    }

    #[test]
    fn two_node_feeder() {
        let mut n2 = node(2);
        n2.loads.insert(Phase::A, PhaseLoadRecord { p: 500.0, q: 0.0 });
        let f = build_feeder(&file(vec![node(1), n2], vec![line(1, 2)])).unwrap();
        assert_eq!(f.network.lines.len(), 1);
        let topo = f.network.topology();
        assert_eq!(topo.children[0], vec![0]);
        assert!(topo.children[1].is_empty());
        assert_eq!(topo.parent[1], Some(0));
        assert_eq!(f.loads[0].p, [0.5, 0.0, 0.0]);
    }

    #[test]
    fn cycle_is_named() {
        let err = build_feeder(&file(
            vec![node(1), node(2), node(3)],
            vec![line(1, 2), line(2, 3), line(3, 1)],
        ))
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("cycle"), "{msg}");
        assert!(msg.contains("3-1"), "{msg}");
        for id in ["1", "2", "3"] {
            assert!(msg.contains(id));
        }
    }

    #[test]
    fn disconnected_node_is_named() {
        let err = build_feeder(&file(vec![node(1), node(2), node(9)], vec![line(1, 2)])).unwrap_err();
        assert!(err.to_string().contains("9"), "{err}");
    }

    #[test]
    fn negative_diagonal_rejected() {
        let mut l = line(1, 2);
        l.r[1][1] = -0.1;
        let err = build_feeder(&file(vec![node(1), node(2)], vec![l])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("1-2") && msg.contains("negative R"), "{msg}");
    }

    #[test]
    fn reversed_line_is_oriented_from_substation() {
        let f = build_feeder(&file(vec![node(1), node(2), node(3)], vec![line(2, 1), line(3, 2)])).unwrap();
        let net = &f.network;
        for l in &net.lines {
            assert_eq!(net.nodes[l.to].id, net.nodes[l.from].id + 1);
        }
        assert_eq!(net.lines[0].id, "2-1");
    }

    #[test]
    fn load_on_missing_phase_rejected() {
        let mut l = line(1, 2);
        l.r = [[0.1, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        l.x = l.r;
        let mut n2 = node(2);
        n2.loads.insert(Phase::B, PhaseLoadRecord { p: 10.0, q: 0.0 });
        let err = build_feeder(&file(vec![node(1), n2], vec![l])).unwrap_err();
        assert!(err.to_string().contains("phase b"), "{err}");
    }

    #[test]
    fn default_current_limit_from_ampacity() {
        let f = build_feeder(&file(vec![node(1), node(2)], vec![line(1, 2)])).unwrap();
        let l = &f.network.lines[0];
        assert!((l.i_max - 1.0 / 0.95).abs() < 1e-12);
        assert_eq!(l.i_min, 0.0);
    }
}
