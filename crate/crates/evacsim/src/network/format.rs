//! Plain-text network file format (UTF-8 JSON).
//!
//! Top-level keys: `nodes`, `edges`, `connections`, `signals`, `tazs`.
//! Unknown keys are rejected. Signal green sets reference connections by
//! their canonical id `from_edge.from_lane->to_edge.to_lane`.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{
    Connection, Edge, Lane, NetworkError, Node, NodeControl, Phase, RoadNetwork, RoadType,
    SignalProgram, Taz, EdgeIdx, MIN_EDGE_LENGTH_M,
};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    #[serde(default)]
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub edges: Vec<EdgeSpec>,
    #[serde(default)]
    pub connections: Vec<ConnectionSpec>,
    #[serde(default)]
    pub signals: Vec<SignalSpec>,
    #[serde(default)]
    pub tazs: Vec<TazSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "is_default_control")]
    pub control: NodeControl,
}

fn is_default_control(c: &NodeControl) -> bool {
    *c == NodeControl::None
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub id: String,
    pub from: String,
    pub to: String,
    pub length_m: f64,
    pub lanes: u32,
    #[serde(rename = "type")]
    pub road_type: RoadType,
    pub priority: i32,
    pub speed_limit_mps: f64,
    pub lane_change: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectionSpec {
    pub from_edge: String,
    pub from_lane: u32,
    pub to_edge: String,
    pub to_lane: u32,
    #[serde(rename = "yield")]
    pub yield_required: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    pub id: String,
    pub node: String,
    pub phases: Vec<PhaseSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub dur_s: u32,
    pub green: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TazSpec {
    pub id: String,
    pub edges: Vec<String>,
}

/// Parses network-file text into a fully indexed [`RoadNetwork`].
///
/// Syntax errors carry line/column; semantic errors (dangling references,
/// out-of-range values) name the offending id.
pub fn parse_network(text: &str) -> Result<RoadNetwork, NetworkError> {
    let file: NetworkFile = serde_json::from_str(text).map_err(|e| NetworkError::Syntax {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    resolve_network(file)
}

/// Resolves a deserialized file into a network, enforcing referential
/// integrity and value invariants. Lane-index ranges are left to
/// [`super::validate_network`].
pub fn resolve_network(file: NetworkFile) -> Result<RoadNetwork, NetworkError> {
    let mut node_ix: HashMap<&str, usize> = HashMap::new();
    let mut nodes = Vec::with_capacity(file.nodes.len());
    for n in &file.nodes {
        if !(n.x.is_finite() && n.y.is_finite()) {
            return Err(NetworkError::semantic(&n.id, "node position must be finite"));
        }
        if node_ix.insert(n.id.as_str(), nodes.len()).is_some() {
            return Err(NetworkError::semantic(&n.id, "duplicate node id"));
        }
        nodes.push(Node { id: n.id.clone(), x: n.x, y: n.y, control: n.control });
    }

    let mut edge_ix: HashMap<&str, usize> = HashMap::new();
    let mut edges = Vec::with_capacity(file.edges.len());
    for e in &file.edges {
        if edge_ix.contains_key(e.id.as_str()) {
            return Err(NetworkError::semantic(&e.id, "duplicate edge id"));
        }
        let from = *node_ix
            .get(e.from.as_str())
            .ok_or_else(|| NetworkError::semantic(&e.from, "edge references unknown node"))?;
        let to = *node_ix
            .get(e.to.as_str())
            .ok_or_else(|| NetworkError::semantic(&e.to, "edge references unknown node"))?;
        if from == to {
            return Err(NetworkError::semantic(&e.id, "self-loop edges are not supported"));
        }
        if !(e.length_m.is_finite() && e.length_m >= MIN_EDGE_LENGTH_M) {
            return Err(NetworkError::semantic(
                &e.id,
                format!("edge length must be >= {MIN_EDGE_LENGTH_M} m"),
            ));
        }
        if e.lanes == 0 {
            return Err(NetworkError::semantic(&e.id, "edge must have at least one lane"));
        }
        if !(e.speed_limit_mps.is_finite() && e.speed_limit_mps > 0.0) {
            return Err(NetworkError::semantic(&e.id, "speed limit must be positive"));
        }
        edge_ix.insert(e.id.as_str(), edges.len());
        edges.push(Edge {
            id: e.id.clone(),
            from: super::NodeIdx(from),
            to: super::NodeIdx(to),
            length_m: e.length_m,
            lanes: (0..e.lanes).map(|_| Lane::default()).collect(),
            road_type: e.road_type,
            priority: e.priority,
            speed_limit_mps: e.speed_limit_mps,
            lane_change_allowed: e.lane_change,
        });
    }

    let mut connections = Vec::with_capacity(file.connections.len());
    let mut conn_ids: HashSet<String> = HashSet::new();
    for c in &file.connections {
        let from_edge = *edge_ix
            .get(c.from_edge.as_str())
            .ok_or_else(|| NetworkError::semantic(&c.from_edge, "connection references unknown edge"))?;
        let to_edge = *edge_ix
            .get(c.to_edge.as_str())
            .ok_or_else(|| NetworkError::semantic(&c.to_edge, "connection references unknown edge"))?;
        if edges[to_edge].from != edges[from_edge].to {
            return Err(NetworkError::semantic(
                format!("{}->{}", c.from_edge, c.to_edge),
                "connected edges do not share a junction node",
            ));
        }
        let canonical =
            format!("{}.{}->{}.{}", c.from_edge, c.from_lane, c.to_edge, c.to_lane);
        if !conn_ids.insert(canonical.clone()) {
            return Err(NetworkError::semantic(canonical, "duplicate connection"));
        }
        connections.push(Connection {
            from_edge: EdgeIdx(from_edge),
            from_lane: c.from_lane as usize,
            to_edge: EdgeIdx(to_edge),
            to_lane: c.to_lane as usize,
            yield_required: c.yield_required,
        });
    }

    let mut signals = Vec::with_capacity(file.signals.len());
    let mut signal_nodes: HashSet<usize> = HashSet::new();
    let mut signal_ids: HashSet<&str> = HashSet::new();
    for s in &file.signals {
        if !signal_ids.insert(s.id.as_str()) {
            return Err(NetworkError::semantic(&s.id, "duplicate signal id"));
        }
        let node = *node_ix
            .get(s.node.as_str())
            .ok_or_else(|| NetworkError::semantic(&s.node, "signal references unknown node"))?;
        if nodes[node].control != NodeControl::TrafficLight {
            return Err(NetworkError::semantic(
                &s.node,
                "signal program attached to a node not marked traffic_light",
            ));
        }
        if !signal_nodes.insert(node) {
            return Err(NetworkError::semantic(&s.node, "node has more than one signal program"));
        }
        if s.phases.is_empty() {
            return Err(NetworkError::semantic(&s.id, "signal program has no phases"));
        }
        let mut phases = Vec::with_capacity(s.phases.len());
        for p in &s.phases {
            if p.dur_s == 0 {
                return Err(NetworkError::semantic(&s.id, "phase duration must be positive"));
            }
            for g in &p.green {
                if !conn_ids.contains(g.as_str()) {
                    return Err(NetworkError::semantic(g, "signal phase references unknown connection"));
                }
            }
            phases.push(Phase { dur_s: p.dur_s, green: p.green.clone() });
        }
        signals.push(SignalProgram { id: s.id.clone(), node: super::NodeIdx(node), phases });
    }
    for (ni, n) in nodes.iter().enumerate() {
        if n.control == NodeControl::TrafficLight && !signal_nodes.contains(&ni) {
            return Err(NetworkError::semantic(&n.id, "traffic_light node has no signal program"));
        }
    }

    let mut tazs = Vec::with_capacity(file.tazs.len());
    let mut taz_ids: HashSet<&str> = HashSet::new();
    for t in &file.tazs {
        if !taz_ids.insert(t.id.as_str()) {
            return Err(NetworkError::semantic(&t.id, "duplicate TAZ id"));
        }
        if t.edges.is_empty() {
            return Err(NetworkError::semantic(&t.id, "TAZ must have at least one member edge"));
        }
        let mut members = Vec::with_capacity(t.edges.len());
        let mut seen = HashSet::new();
        for m in &t.edges {
            let e = *edge_ix
                .get(m.as_str())
                .ok_or_else(|| NetworkError::semantic(m, "TAZ references unknown edge"))?;
            if !seen.insert(e) {
                return Err(NetworkError::semantic(m, "duplicate TAZ member edge"));
            }
            members.push(EdgeIdx(e));
        }
        tazs.push(Taz { id: t.id.clone(), edges: members });
    }

    Ok(RoadNetwork::assemble(nodes, edges, connections, signals, tazs))
}

/// Serializes a network back to the file format. Parsing the result yields a
/// structurally identical network (round-trip identity).
pub fn serialize_network(net: &RoadNetwork) -> String {
    let file = NetworkFile {
        nodes: net
            .nodes
            .iter()
            .map(|n| NodeSpec { id: n.id.clone(), x: n.x, y: n.y, control: n.control })
            .collect(),
        edges: net
            .edges
            .iter()
            .map(|e| EdgeSpec {
                id: e.id.clone(),
                from: net.nodes[e.from.0].id.clone(),
                to: net.nodes[e.to.0].id.clone(),
                length_m: e.length_m,
                lanes: e.lanes.len() as u32,
                road_type: e.road_type,
                priority: e.priority,
                speed_limit_mps: e.speed_limit_mps,
                lane_change: e.lane_change_allowed,
            })
            .collect(),
        connections: net
            .connections
            .iter()
            .map(|c| ConnectionSpec {
                from_edge: net.edges[c.from_edge.0].id.clone(),
                from_lane: c.from_lane as u32,
                to_edge: net.edges[c.to_edge.0].id.clone(),
                to_lane: c.to_lane as u32,
                yield_required: c.yield_required,
            })
            .collect(),
        signals: net
            .signals
            .iter()
            .map(|s| SignalSpec {
                id: s.id.clone(),
                node: net.nodes[s.node.0].id.clone(),
                phases: s
                    .phases
                    .iter()
                    .map(|p| PhaseSpec { dur_s: p.dur_s, green: p.green.clone() })
                    .collect(),
            })
            .collect(),
        tazs: net
            .tazs
            .iter()
            .map(|t| TazSpec {
                id: t.id.clone(),
                edges: t.edges.iter().map(|&e| net.edges[e.0].id.clone()).collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("network file serialization cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;

    const DIAMOND: &str = r#"{
        "nodes": [
            {"id":"A","x":0,"y":0},{"id":"B","x":100,"y":0},
            {"id":"C","x":200,"y":50},{"id":"D","x":200,"y":-50},{"id":"E","x":300,"y":0}
        ],
        "edges": [
            {"id":"AB","from":"A","to":"B","length_m":100,"lanes":1,"type":"arterial","priority":5,"speed_limit_mps":15,"lane_change":true},
            {"id":"BC","from":"B","to":"C","length_m":120,"lanes":1,"type":"arterial","priority":5,"speed_limit_mps":15,"lane_change":true},
            {"id":"BD","from":"B","to":"D","length_m":110,"lanes":1,"type":"arterial","priority":5,"speed_limit_mps":15,"lane_change":true},
            {"id":"CE","from":"C","to":"E","length_m":130,"lanes":1,"type":"arterial","priority":5,"speed_limit_mps":15,"lane_change":true}
        ],
        "connections": [
            {"from_edge":"AB","from_lane":0,"to_edge":"BC","to_lane":0,"yield":false},
            {"from_edge":"AB","from_lane":0,"to_edge":"BD","to_lane":0,"yield":false}
        ]
    }"#;

    #[test]
    fn parses_diamond_and_round_trips() {
        let net = parse_network(DIAMOND).unwrap();
        assert_eq!(net.edges.len(), 4);
        assert_eq!(net.connections.len(), 2);
        let text = serialize_network(&net);
        let net2 = parse_network(&text).unwrap();
        assert_eq!(serialize_network(&net2), text);
    }

    #[test]
    fn rejects_unknown_keys_with_location() {
        let err = parse_network(r#"{"nodes": [], "rogue": 1}"#).unwrap_err();
        match err {
            NetworkError::Syntax { line, .. } => assert_eq!(line, 1),
            other => panic!("expected syntax error, got {other}"),
        }
    }

    #[test]
    fn rejects_dangling_connection_edge() {
        let bad = r#"{
            "nodes": [{"id":"A","x":0,"y":0},{"id":"B","x":1,"y":0}],
            "edges": [{"id":"AB","from":"A","to":"B","length_m":10,"lanes":1,"type":"residential","priority":1,"speed_limit_mps":10,"lane_change":true}],
            "connections": [{"from_edge":"AB","from_lane":0,"to_edge":"X","to_lane":0,"yield":false}]
        }"#;
        match parse_network(bad).unwrap_err() {
            NetworkError::Semantic { id, .. } => assert_eq!(id, "X"),
            other => panic!("expected semantic error naming X, got {other}"),
        }
    }

    #[test]
    fn rejects_short_edges_and_self_loops() {
        let short = r#"{
            "nodes": [{"id":"A","x":0,"y":0},{"id":"B","x":1,"y":0}],
            "edges": [{"id":"AB","from":"A","to":"B","length_m":0.5,"lanes":1,"type":"residential","priority":1,"speed_limit_mps":10,"lane_change":true}]
        }"#;
        assert!(matches!(parse_network(short), Err(NetworkError::Semantic { .. })));
        let loopy = r#"{
            "nodes": [{"id":"A","x":0,"y":0}],
            "edges": [{"id":"AA","from":"A","to":"A","length_m":10,"lanes":1,"type":"residential","priority":1,"speed_limit_mps":10,"lane_change":true}]
        }"#;
        assert!(matches!(parse_network(loopy), Err(NetworkError::Semantic { .. })));
    }

    #[test]
    fn signal_green_must_name_existing_connection() {
        let bad = r#"{
            "nodes": [{"id":"A","x":0,"y":0},{"id":"B","x":1,"y":0},{"id":"C","x":2,"y":0,"control":"traffic_light"}],
            "edges": [
                {"id":"AB","from":"A","to":"B","length_m":10,"lanes":1,"type":"residential","priority":1,"speed_limit_mps":10,"lane_change":true},
                {"id":"BC","from":"B","to":"C","length_m":10,"lanes":1,"type":"residential","priority":1,"speed_limit_mps":10,"lane_change":true}
            ],
            "connections": [{"from_edge":"AB","from_lane":0,"to_edge":"BC","to_lane":0,"yield":false}],
            "signals": [{"id":"s1","node":"C","phases":[{"dur_s":30,"green":["AB.0->XX.0"]}]}]
        }"#;
        match parse_network(bad).unwrap_err() {
            NetworkError::Semantic { id, .. } => assert_eq!(id, "AB.0->XX.0"),
            other => panic!("unexpected: {other}"),
        }
    }
}
