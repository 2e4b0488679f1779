//! Pipe network topology: nodes, pipes, fixed-head boundaries and the
//! signed incidence matrices derived from them.

mod incidence;
mod parse;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use incidence::{build_incidence, IncidenceMatrix};
pub use parse::{parse_network, parse_network_bytes, parse_network_with_warnings, serialize_network, ParseWarning};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetworkError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("pipe `{pipe}` references unknown node `{node}`")]
    DanglingNode { pipe: String, node: String },
    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },
    #[error("{} junction(s) not reachable from any fixed-head node (first: `{}`)", .nodes.len(), .nodes[0])]
    Disconnected { nodes: Vec<String> },
    #[error("invalid value for `{id}`: {message}")]
    InvalidValue { id: String, message: String },
}

/// Pipe wall material. Roughness calibration groups pipes by this value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Material {
    Mscl,
    Dicl,
    Grp,
    Mpvc,
    Other(String),
}

impl fmt::Display for Material {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Material::Mscl => f.write_str("MSCL"),
            Material::Dicl => f.write_str("DICL"),
            Material::Grp => f.write_str("GRP"),
            Material::Mpvc => f.write_str("mPVC"),
            Material::Other(s) => f.write_str(s),
        }
    }
}

impl FromStr for Material {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "MSCL" => Material::Mscl,
            "DICL" => Material::Dicl,
            "GRP" => Material::Grp,
            "MPVC" => Material::Mpvc,
            _ => Material::Other(s.to_string()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeKind {
    Junction,
    /// Prescribed hydraulic grade line. `pump` marks pump-station delivery
    /// nodes whose head is driven by the setpoint (elevation + setpoint).
    FixedHead { head: f64, pump: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    /// Ground elevation, m.
    pub elevation: f64,
    pub kind: NodeKind,
    /// Column key into the demand table; `None` means zero demand.
    pub demand_ref: Option<String>,
    /// Outlet diameter class such as `DN150`; `Some` marks an irrigation outlet.
    pub outlet_class: Option<String>,
}

impl Node {
    pub fn junction(id: impl Into<String>, elevation: f64) -> Self {
        Node { id: id.into(), elevation, kind: NodeKind::Junction, demand_ref: None, outlet_class: None }
    }

    pub fn fixed_head(id: impl Into<String>, elevation: f64, head: f64) -> Self {
        Node {
            id: id.into(),
            elevation,
            kind: NodeKind::FixedHead { head, pump: false },
            demand_ref: None,
            outlet_class: None,
        }
    }

    pub fn pump_station(id: impl Into<String>, elevation: f64) -> Self {
        Node {
            id: id.into(),
            elevation,
            kind: NodeKind::FixedHead { head: elevation, pump: true },
            demand_ref: None,
            outlet_class: None,
        }
    }

    pub fn with_demand(mut self, column: impl Into<String>) -> Self {
        self.demand_ref = Some(column.into());
        self
    }

    pub fn with_outlet(mut self, class: impl Into<String>) -> Self {
        self.outlet_class = Some(class.into());
        self
    }

    pub fn is_junction(&self) -> bool {
        matches!(self.kind, NodeKind::Junction)
    }

    pub fn is_outlet(&self) -> bool {
        self.outlet_class.is_some()
    }

    pub fn is_pump(&self) -> bool {
        matches!(self.kind, NodeKind::FixedHead { pump: true, .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pipe {
    pub id: String,
    pub from: String,
    pub to: String,
    /// m
    pub length: f64,
    /// m
    pub diameter: f64,
    pub material: Material,
    /// Equivalent sand roughness, mm.
    pub roughness: f64,
}

impl Pipe {
    pub fn new(
        id: impl Into<String>,
        from: impl Into<String>,
        to: impl Into<String>,
        length: f64,
        diameter: f64,
        material: Material,
        roughness: f64,
    ) -> Self {
        Pipe { id: id.into(), from: from.into(), to: to.into(), length, diameter, material, roughness }
    }

    /// Cross-sectional area, m².
    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.diameter * self.diameter / 4.0
    }
}

/// User-supplied head-loss polynomial for an outlet class (coefficients in
/// m, m per L/s, m per (L/s)²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutletClassSpec {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub q_max: Option<f64>,
}

/// Position of a node in the reduced unknown vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Terminal {
    Junction(usize),
    Fixed(usize),
}

/// Immutable, validated network. Construct with [`Network::new`] or
/// [`parse_network`].
#[derive(Debug, Clone)]
pub struct Network {
    nodes: Vec<Node>,
    pipes: Vec<Pipe>,
    outlet_classes: BTreeMap<String, OutletClassSpec>,
    node_index: HashMap<String, usize>,
    pipe_index: HashMap<String, usize>,
    terminals: Vec<Terminal>,
    junctions: Vec<usize>,
    fixed: Vec<usize>,
    pipe_ends: Vec<(Terminal, Terminal)>,
    a1: IncidenceMatrix,
    a2: IncidenceMatrix,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.pipes == other.pipes && self.outlet_classes == other.outlet_classes
    }
}

impl Network {
    pub fn new(
        nodes: Vec<Node>,
        pipes: Vec<Pipe>,
        outlet_classes: BTreeMap<String, OutletClassSpec>,
    ) -> Result<Self, NetworkError> {
        let mut node_index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if node_index.insert(n.id.clone(), i).is_some() {
                return Err(NetworkError::DuplicateId { kind: "node", id: n.id.clone() });
            }
            validate_node(n)?;
        }
        let mut pipe_index = HashMap::with_capacity(pipes.len());
        for (i, p) in pipes.iter().enumerate() {
            if pipe_index.insert(p.id.clone(), i).is_some() {
                return Err(NetworkError::DuplicateId { kind: "pipe", id: p.id.clone() });
            }
            validate_pipe(p)?;
        }

        let (a1, a2) = build_incidence(&nodes, &pipes)?;

        let mut terminals = Vec::with_capacity(nodes.len());
        let mut junctions = Vec::new();
        let mut fixed = Vec::new();
        for (i, n) in nodes.iter().enumerate() {
            if n.is_junction() {
                terminals.push(Terminal::Junction(junctions.len()));
                junctions.push(i);
            } else {
                terminals.push(Terminal::Fixed(fixed.len()));
                fixed.push(i);
            }
        }
        let pipe_ends = pipes
            .iter()
            .map(|p| (terminals[node_index[&p.from]], terminals[node_index[&p.to]]))
            .collect();

        let net = Network {
            nodes,
            pipes,
            outlet_classes,
            node_index,
            pipe_index,
            terminals,
            junctions,
            fixed,
            pipe_ends,
            a1,
            a2,
        };
        net.check_connectivity()?;
        Ok(net)
    }

    /// Every junction must be reachable from at least one fixed-head node.
    /// Separate components are allowed as long as each carries a boundary.
    fn check_connectivity(&self) -> Result<(), NetworkError> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for p in &self.pipes {
            let (a, b) = (self.node_index[&p.from], self.node_index[&p.to]);
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut queue: VecDeque<usize> = self.fixed.iter().copied().collect();
        for &f in &self.fixed {
            seen[f] = true;
        }
        while let Some(n) = queue.pop_front() {
            for &m in &adj[n] {
                if !seen[m] {
                    seen[m] = true;
                    queue.push_back(m);
                }
            }
        }
        let unreached: Vec<String> =
            self.junctions.iter().filter(|&&j| !seen[j]).map(|&j| self.nodes[j].id.clone()).collect();
        if unreached.is_empty() {
            Ok(())
        } else {
            Err(NetworkError::Disconnected { nodes: unreached })
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn pipes(&self) -> &[Pipe] {
        &self.pipes
    }

    pub fn outlet_classes(&self) -> &BTreeMap<String, OutletClassSpec> {
        &self.outlet_classes
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.node_index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn node_idx(&self, id: &str) -> Option<usize> {
        self.node_index.get(id).copied()
    }

    pub fn pipe_idx(&self, id: &str) -> Option<usize> {
        self.pipe_index.get(id).copied()
    }

    pub fn terminal(&self, node_idx: usize) -> Terminal {
        self.terminals[node_idx]
    }

    /// Node indices of junctions, in junction-vector order.
    pub fn junctions(&self) -> &[usize] {
        &self.junctions
    }

    /// Node indices of fixed-head nodes, in boundary-vector order.
    pub fn fixed_nodes(&self) -> &[usize] {
        &self.fixed
    }

    pub fn junction_count(&self) -> usize {
        self.junctions.len()
    }

    pub fn fixed_count(&self) -> usize {
        self.fixed.len()
    }

    pub fn pipe_ends(&self) -> &[(Terminal, Terminal)] {
        &self.pipe_ends
    }

    pub fn a1(&self) -> &IncidenceMatrix {
        &self.a1
    }

    pub fn a2(&self) -> &IncidenceMatrix {
        &self.a2
    }

    /// Prescribed heads of fixed-head nodes as declared in the file.
    pub fn default_boundary_heads(&self) -> Vec<f64> {
        self.fixed
            .iter()
            .map(|&i| match self.nodes[i].kind {
                NodeKind::FixedHead { head, .. } => head,
                NodeKind::Junction => unreachable!("fixed index points at a junction"),
            })
            .collect()
    }

    /// Boundary heads with every pump node set to `elevation + setpoint`.
    pub fn boundary_heads_for_setpoint(&self, setpoint: f64) -> Vec<f64> {
        self.fixed
            .iter()
            .map(|&i| {
                let n = &self.nodes[i];
                match n.kind {
                    NodeKind::FixedHead { pump: true, .. } => n.elevation + setpoint,
                    NodeKind::FixedHead { head, .. } => head,
                    NodeKind::Junction => unreachable!(),
                }
            })
            .collect()
    }

    /// Index (into node list) of the first pump-station node, if any.
    pub fn pump_station(&self) -> Option<usize> {
        self.fixed.iter().copied().find(|&i| self.nodes[i].is_pump())
    }

    /// Junction indices (junction-vector order) that are outlets.
    pub fn outlet_junctions(&self) -> Vec<usize> {
        self.junctions
            .iter()
            .enumerate()
            .filter(|(_, &n)| self.nodes[n].is_outlet())
            .map(|(j, _)| j)
            .collect()
    }

    /// Distinct materials in declaration order of first appearance.
    pub fn materials(&self) -> Vec<Material> {
        let mut out: Vec<Material> = Vec::new();
        for p in &self.pipes {
            if !out.contains(&p.material) {
                out.push(p.material.clone());
            }
        }
        out
    }
}

fn validate_node(n: &Node) -> Result<(), NetworkError> {
    let bad = |message: &str| Err(NetworkError::InvalidValue { id: n.id.clone(), message: message.into() });
    if !n.elevation.is_finite() {
        return bad("elevation must be finite");
    }
    if let NodeKind::FixedHead { head, .. } = n.kind {
        if !head.is_finite() {
            return bad("fixed head must be finite");
        }
        if n.demand_ref.is_some() {
            return bad("fixed-head nodes carry no demand");
        }
        if n.outlet_class.is_some() {
            return bad("outlets must be junctions");
        }
    }
    Ok(())
}

fn validate_pipe(p: &Pipe) -> Result<(), NetworkError> {
    let bad = |message: &str| Err(NetworkError::InvalidValue { id: p.id.clone(), message: message.into() });
    if !(p.length > 0.0 && p.length.is_finite()) {
        return bad("length must be positive");
    }
    if !(p.diameter > 0.0 && p.diameter.is_finite()) {
        return bad("diameter must be positive");
    }
    if !(p.roughness >= 0.0 && p.roughness.is_finite()) {
        return bad("roughness must be non-negative");
    }
    if p.from == p.to {
        return bad("pipe must connect two distinct nodes");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node() -> (Vec<Node>, Vec<Pipe>) {
        (
            vec![Node::fixed_head("R", 100.0, 100.0), Node::junction("J", 50.0)],
            vec![Pipe::new("P", "R", "J", 1000.0, 0.3, Material::Dicl, 0.26)],
        )
    }

    #[test]
    fn builds_terminals_and_boundaries() {
        let (n, p) = two_node();
        let net = Network::new(n, p, BTreeMap::new()).unwrap();
        assert_eq!(net.junction_count(), 1);
        assert_eq!(net.fixed_count(), 1);
        assert_eq!(net.pipe_ends()[0], (Terminal::Fixed(0), Terminal::Junction(0)));
        assert_eq!(net.default_boundary_heads(), vec![100.0]);
    }

    #[test]
    fn rejects_duplicate_and_disconnected() {
        let (mut n, p) = two_node();
        n.push(Node::junction("J", 1.0));
        assert!(matches!(Network::new(n, p.clone(), BTreeMap::new()), Err(NetworkError::DuplicateId { .. })));

        let (mut n, p) = two_node();
        n.push(Node::junction("Lonely", 1.0));
        match Network::new(n, p, BTreeMap::new()) {
            Err(NetworkError::Disconnected { nodes }) => assert_eq!(nodes, vec!["Lonely".to_string()]),
            other => panic!("expected disconnected, got {other:?}"),
        }
    }

    #[test]
    fn fixed_head_with_demand_is_invalid() {
        let (mut n, p) = two_node();
        n[0].demand_ref = Some("x".into());
        assert!(matches!(Network::new(n, p, BTreeMap::new()), Err(NetworkError::InvalidValue { .. })));
    }

    #[test]
    fn pipe_invariants() {
        let (n, mut p) = two_node();
        p[0].length = 0.0;
        assert!(Network::new(n.clone(), p, BTreeMap::new()).is_err());
        let (_, mut p) = two_node();
        p[0].roughness = -1.0;
        assert!(Network::new(n, p, BTreeMap::new()).is_err());
    }

    #[test]
    fn material_names_round_trip() {
        for m in ["MSCL", "DICL", "GRP", "mPVC", "HDPE"] {
            assert_eq!(m.parse::<Material>().unwrap().to_string(), m);
        }
        assert_eq!("mpvc".parse::<Material>().unwrap(), Material::Mpvc);
    }

    #[test]
    fn pump_boundary_adds_setpoint_to_elevation() {
        let nodes = vec![Node::pump_station("PS", 47.0), Node::fixed_head("R", 60.0, 70.0), Node::junction("J", 50.0)];
        let pipes = vec![
            Pipe::new("P1", "PS", "J", 100.0, 0.3, Material::Grp, 1.0),
            Pipe::new("P2", "R", "J", 100.0, 0.3, Material::Grp, 1.0),
        ];
        let net = Network::new(nodes, pipes, BTreeMap::new()).unwrap();
        assert_eq!(net.boundary_heads_for_setpoint(90.0), vec![137.0, 70.0]);
        assert_eq!(net.pump_station(), Some(0));
    }
}
