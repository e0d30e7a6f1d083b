//! Road-network data model: nodes, edges, lanes, connections, signal
//! programs, and traffic analysis zones, with a derived adjacency index.
//!
//! A [`RoadNetwork`] is immutable after construction. Policy transformations
//! build a new value instead of mutating in place, so networks can be shared
//! freely across scenario workers.

mod format;
mod validate;

pub use format::{
    parse_network, resolve_network, serialize_network, ConnectionSpec, EdgeSpec, NetworkFile,
    NodeSpec, PhaseSpec, SignalSpec, TazSpec,
};
pub use validate::{validate_network, Finding, ValidationReport};

use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum accepted edge length; shorter edges are a parse error.
pub const MIN_EDGE_LENGTH_M: f64 = 1.0;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("syntax error at line {line}, column {column}: {msg}")]
    Syntax { line: usize, column: usize, msg: String },
    #[error("semantic error on '{id}': {msg}")]
    Semantic { id: String, msg: String },
    #[error("unknown edge id '{0}'")]
    UnknownEdge(String),
    #[error("unknown TAZ id '{0}'")]
    UnknownTaz(String),
}

impl NetworkError {
    pub(crate) fn semantic(id: impl Into<String>, msg: impl Into<String>) -> Self {
        NetworkError::Semantic { id: id.into(), msg: msg.into() }
    }
}

/// Index of a node in [`RoadNetwork::nodes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeIdx(pub usize);

/// Index of an edge in [`RoadNetwork::edges`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeIdx(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadType {
    Residential,
    Service,
    Arterial,
    Highway,
    Footpath,
}

impl RoadType {
    pub const ALL: [RoadType; 5] = [
        RoadType::Residential,
        RoadType::Service,
        RoadType::Arterial,
        RoadType::Highway,
        RoadType::Footpath,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeControl {
    #[default]
    None,
    TrafficLight,
    AllWayStop,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub control: NodeControl,
}

/// One lane of an edge. Indices run from the rightmost lane 0.
#[derive(Debug, Clone, Default)]
pub struct Lane {
    /// Set by the contraflow policy: the lane may be driven on upstream but
    /// has no connections through the junction at the edge's end.
    pub blocked_at_junction: bool,
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub id: String,
    pub from: NodeIdx,
    pub to: NodeIdx,
    pub length_m: f64,
    pub lanes: Vec<Lane>,
    pub road_type: RoadType,
    pub priority: i32,
    pub speed_limit_mps: f64,
    pub lane_change_allowed: bool,
}

impl Edge {
    pub fn lane_count(&self) -> usize {
        self.lanes.len()
    }

    /// Free-flow traversal time in seconds.
    pub fn free_flow_time_s(&self) -> f64 {
        self.length_m / self.speed_limit_mps
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Connection {
    pub from_edge: EdgeIdx,
    pub from_lane: usize,
    pub to_edge: EdgeIdx,
    pub to_lane: usize,
    pub yield_required: bool,
}

impl Connection {
    /// Canonical connection id, used by signal green sets and reports.
    pub fn canonical_id(&self, net: &RoadNetwork) -> String {
        format!(
            "{}.{}->{}.{}",
            net.edges[self.from_edge.0].id,
            self.from_lane,
            net.edges[self.to_edge.0].id,
            self.to_lane
        )
    }
}

#[derive(Debug, Clone)]
pub struct Phase {
    pub dur_s: u32,
    /// Canonical connection ids that have green in this phase.
    pub green: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SignalProgram {
    pub id: String,
    pub node: NodeIdx,
    pub phases: Vec<Phase>,
}

impl SignalProgram {
    pub fn cycle_s(&self) -> u32 {
        self.phases.iter().map(|p| p.dur_s).sum()
    }

    /// Phase index active at simulation time `t` (cycle repeats from t = 0).
    pub fn phase_at(&self, t_s: u64) -> usize {
        let cycle = self.cycle_s() as u64;
        let mut t = t_s % cycle;
        for (i, p) in self.phases.iter().enumerate() {
            if t < p.dur_s as u64 {
                return i;
            }
            t -= p.dur_s as u64;
        }
        self.phases.len() - 1
    }
}

#[derive(Debug, Clone)]
pub struct Taz {
    pub id: String,
    pub edges: Vec<EdgeIdx>,
}

/// Destination of a trip or a path query: a single edge or a TAZ.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Destination {
    Edge(String),
    Taz(String),
}

impl Destination {
    pub fn as_str(&self) -> &str {
        match self {
            Destination::Edge(s) | Destination::Taz(s) => s,
        }
    }
}

/// A directed road network with a derived adjacency index.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub connections: Vec<Connection>,
    pub signals: Vec<SignalProgram>,
    pub tazs: Vec<Taz>,

    node_ix: HashMap<String, usize>,
    edge_ix: HashMap<String, usize>,
    taz_ix: HashMap<String, usize>,
    /// Outgoing connection indices per edge, in file order.
    out_conns: Vec<Vec<usize>>,
    /// Incoming connection indices per edge, in file order.
    in_conns: Vec<Vec<usize>>,
    /// Edges departing / arriving per node.
    node_out_edges: Vec<Vec<EdgeIdx>>,
    node_in_edges: Vec<Vec<EdgeIdx>>,
}

impl RoadNetwork {
    /// Builds the network from resolved parts and derives the adjacency index.
    pub(crate) fn assemble(
        nodes: Vec<Node>,
        edges: Vec<Edge>,
        connections: Vec<Connection>,
        signals: Vec<SignalProgram>,
        tazs: Vec<Taz>,
    ) -> Self {
        let node_ix = nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();
        let edge_ix = edges.iter().enumerate().map(|(i, e)| (e.id.clone(), i)).collect();
        let taz_ix = tazs.iter().enumerate().map(|(i, t)| (t.id.clone(), i)).collect();
        let mut out_conns = vec![Vec::new(); edges.len()];
        let mut in_conns = vec![Vec::new(); edges.len()];
        for (ci, c) in connections.iter().enumerate() {
            out_conns[c.from_edge.0].push(ci);
            in_conns[c.to_edge.0].push(ci);
        }
        let mut node_out_edges = vec![Vec::new(); nodes.len()];
        let mut node_in_edges = vec![Vec::new(); nodes.len()];
        for (ei, e) in edges.iter().enumerate() {
            node_out_edges[e.from.0].push(EdgeIdx(ei));
            node_in_edges[e.to.0].push(EdgeIdx(ei));
        }
        RoadNetwork {
            nodes,
            edges,
            connections,
            signals,
            tazs,
            node_ix,
            edge_ix,
            taz_ix,
            out_conns,
            in_conns,
            node_out_edges,
            node_in_edges,
        }
    }

    /// Rebuilds the network value with edited parts (used by policy edits).
    pub(crate) fn reassembled(
        &self,
        edges: Vec<Edge>,
        connections: Vec<Connection>,
        signals: Vec<SignalProgram>,
    ) -> Self {
        RoadNetwork::assemble(self.nodes.clone(), edges, connections, signals, self.tazs.clone())
    }

    pub fn node_index(&self, id: &str) -> Option<NodeIdx> {
        self.node_ix.get(id).copied().map(NodeIdx)
    }

    pub fn edge_index(&self, id: &str) -> Option<EdgeIdx> {
        self.edge_ix.get(id).copied().map(EdgeIdx)
    }

    pub fn taz_index(&self, id: &str) -> Option<usize> {
        self.taz_ix.get(id).copied()
    }

    pub fn edge(&self, idx: EdgeIdx) -> &Edge {
        &self.edges[idx.0]
    }

    pub fn node(&self, idx: NodeIdx) -> &Node {
        &self.nodes[idx.0]
    }

    pub fn connection(&self, ci: usize) -> &Connection {
        &self.connections[ci]
    }

    /// Outgoing connection indices of an edge, in declaration order.
    pub fn out_connections(&self, edge: EdgeIdx) -> &[usize] {
        &self.out_conns[edge.0]
    }

    /// Incoming connection indices of an edge, in declaration order.
    pub fn in_connections(&self, edge: EdgeIdx) -> &[usize] {
        &self.in_conns[edge.0]
    }

    pub fn edges_departing(&self, node: NodeIdx) -> &[EdgeIdx] {
        &self.node_out_edges[node.0]
    }

    pub fn edges_arriving(&self, node: NodeIdx) -> &[EdgeIdx] {
        &self.node_in_edges[node.0]
    }

    pub fn out_degree(&self, edge: EdgeIdx) -> usize {
        self.out_conns[edge.0].len()
    }

    /// The signal program controlling `node`, if any.
    pub fn signal_at(&self, node: NodeIdx) -> Option<&SignalProgram> {
        self.signals.iter().find(|s| s.node == node)
    }

    /// Canonical-id lookup for connections.
    pub fn connection_by_canonical_id(&self, id: &str) -> Option<usize> {
        self.connections.iter().position(|c| c.canonical_id(self) == id)
    }

    /// Resolves a destination to the set of candidate terminal edges.
    pub fn destination_edges(&self, dest: &Destination) -> Result<Vec<EdgeIdx>, NetworkError> {
        match dest {
            Destination::Edge(id) => {
                let e = self.edge_index(id).ok_or_else(|| NetworkError::UnknownEdge(id.clone()))?;
                Ok(vec![e])
            }
            Destination::Taz(id) => {
                let t = self.taz_index(id).ok_or_else(|| NetworkError::UnknownTaz(id.clone()))?;
                Ok(self.tazs[t].edges.clone())
            }
        }
    }

    /// Resolves a bare destination string: a TAZ id if one matches, else an edge id.
    pub fn resolve_destination(&self, s: &str) -> Result<Destination, NetworkError> {
        if self.taz_index(s).is_some() {
            Ok(Destination::Taz(s.to_string()))
        } else if self.edge_index(s).is_some() {
            Ok(Destination::Edge(s.to_string()))
        } else {
            Err(NetworkError::UnknownEdge(s.to_string()))
        }
    }

    /// Breadth-first closure of edges reachable from `from` over connections,
    /// including `from` itself.
    pub fn reachable_edges(&self, from: EdgeIdx) -> HashSet<EdgeIdx> {
        let mut seen = HashSet::new();
        let mut queue = VecDeque::new();
        seen.insert(from);
        queue.push_back(from);
        while let Some(e) = queue.pop_front() {
            for &ci in &self.out_conns[e.0] {
                let next = self.connections[ci].to_edge;
                if seen.insert(next) {
                    queue.push_back(next);
                }
            }
        }
        seen
    }

    /// Edges from which any edge in `targets` is reachable (reverse closure,
    /// targets included).
    pub fn edges_reaching(&self, targets: &[EdgeIdx]) -> HashSet<EdgeIdx> {
        let mut seen: HashSet<EdgeIdx> = targets.iter().copied().collect();
        let mut queue: VecDeque<EdgeIdx> = targets.iter().copied().collect();
        while let Some(e) = queue.pop_front() {
            for &ci in &self.in_conns[e.0] {
                let prev = self.connections[ci].from_edge;
                if seen.insert(prev) {
                    queue.push_back(prev);
                }
            }
        }
        seen
    }

    /// Whether a connection-respecting path exists, and one such path if so.
    ///
    /// The path is discovered breadth-first, so it has the fewest hops; used
    /// for map debugging, not for routing.
    pub fn route_exists(&self, from: &str, to: &str) -> Result<Option<Vec<String>>, NetworkError> {
        let from = self.edge_index(from).ok_or_else(|| NetworkError::UnknownEdge(from.into()))?;
        let to = self.edge_index(to).ok_or_else(|| NetworkError::UnknownEdge(to.into()))?;
        if from == to {
            return Ok(Some(vec![self.edges[from.0].id.clone()]));
        }
        let mut parent: HashMap<EdgeIdx, EdgeIdx> = HashMap::new();
        let mut queue = VecDeque::new();
        queue.push_back(from);
        while let Some(e) = queue.pop_front() {
            for &ci in &self.out_conns[e.0] {
                let next = self.connections[ci].to_edge;
                if next != from && !parent.contains_key(&next) {
                    parent.insert(next, e);
                    if next == to {
                        let mut path = vec![to];
                        let mut cur = to;
                        while let Some(&p) = parent.get(&cur) {
                            path.push(p);
                            cur = p;
                        }
                        path.reverse();
                        return Ok(Some(
                            path.into_iter().map(|e| self.edges[e.0].id.clone()).collect(),
                        ));
                    }
                    queue.push_back(next);
                }
            }
        }
        Ok(None)
    }

    /// Sum of edge lengths of the given road type, in meters.
    pub fn total_length_by_type(&self, road_type: RoadType) -> f64 {
        self.edges
            .iter()
            .filter(|e| e.road_type == road_type)
            .map(|e| e.length_m)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn minimal_network_queries() {
        let net = parse_network(
            r#"{
            "nodes": [{"id":"A","x":0,"y":0},{"id":"B","x":100,"y":0}],
            "edges": [{"id":"AB","from":"A","to":"B","length_m":100,"lanes":1,
                       "type":"residential","priority":1,"speed_limit_mps":10,"lane_change":true}]
        }"#,
        )
        .unwrap();
        assert_eq!(net.edges.len(), 1);
        let ab = net.edge_index("AB").unwrap();
        assert_eq!(net.out_degree(ab), 0);
        assert_eq!(net.edges_departing(net.node_index("A").unwrap()).len(), 1);
    }

    #[test]
    fn diamond_adjacency_matches_hand_enumeration() {
        // Hand enumeration of the diamond fixture's connection list.
        let net = synth::diamond(100.0, 100.0, 150.0, 40.0);
        let expect: &[(&str, &[&str])] = &[
            ("in", &["top1", "bot1"]),
            ("top1", &["top2"]),
            ("top2", &["out"]),
            ("bot1", &["bot2"]),
            ("bot2", &["out"]),
            ("out", &[]),
        ];
        for &(edge, outs) in expect {
            let e = net.edge_index(edge).unwrap();
            let got: Vec<&str> = net
                .out_connections(e)
                .iter()
                .map(|&ci| net.edge(net.connection(ci).to_edge).id.as_str())
                .collect();
            assert_eq!(got, outs, "outgoing of {edge}");
        }
    }

    #[test]
    fn route_exists_minimal_and_disconnected() {
        let net = synth::diamond(1.0, 1.0, 1.0, 1.0);
        let path = net.route_exists("in", "out").unwrap().unwrap();
        assert_eq!(path.first().map(String::as_str), Some("in"));
        assert_eq!(path.last().map(String::as_str), Some("out"));
        // Every hop must be an existing connection.
        for pair in path.windows(2) {
            let a = net.edge_index(&pair[0]).unwrap();
            let b = net.edge_index(&pair[1]).unwrap();
            assert!(net
                .out_connections(a)
                .iter()
                .any(|&ci| net.connection(ci).to_edge == b));
        }
        assert!(net.route_exists("out", "in").unwrap().is_none());
        assert!(matches!(net.route_exists("in", "nope"), Err(NetworkError::UnknownEdge(_))));
    }

    #[test]
    fn total_length_by_type_sums() {
        let net = parse_network(
            r#"{
            "nodes": [{"id":"A","x":0,"y":0},{"id":"B","x":1,"y":0},{"id":"C","x":2,"y":0}],
            "edges": [
              {"id":"r1","from":"A","to":"B","length_m":100,"lanes":1,"type":"residential","priority":1,"speed_limit_mps":10,"lane_change":true},
              {"id":"r2","from":"B","to":"C","length_m":50,"lanes":1,"type":"residential","priority":1,"speed_limit_mps":10,"lane_change":true},
              {"id":"s1","from":"A","to":"C","length_m":30,"lanes":1,"type":"service","priority":1,"speed_limit_mps":5,"lane_change":true}
            ]
        }"#,
        )
        .unwrap();
        assert_eq!(net.total_length_by_type(RoadType::Residential), 150.0);
        assert_eq!(net.total_length_by_type(RoadType::Service), 30.0);
        assert_eq!(net.total_length_by_type(RoadType::Highway), 0.0);
        let total: f64 = RoadType::ALL.iter().map(|&t| net.total_length_by_type(t)).sum();
        let direct: f64 = net.edges.iter().map(|e| e.length_m).sum();
        assert!((total - direct).abs() < 1e-12);
    }
}
