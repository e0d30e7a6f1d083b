//! Contraflow and emergency traffic-rule transformations, expressed as a
//! reviewable script of atomic edits. Every edit produces a new network
//! value; the input is never mutated.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::ClosureEvent;
use crate::network::{
    Connection, ConnectionSpec, EdgeIdx, NodeControl, RoadNetwork,
};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("unknown edge '{0}'")]
    UnknownEdge(String),
    #[error("unknown node '{0}'")]
    UnknownNode(String),
    #[error("edge '{edge}' has no lane {lane}")]
    UnknownLane { edge: String, lane: usize },
    #[error("node '{0}' is not signalized")]
    NotSignalized(String),
    #[error("TAZ unreachable: reversing '{edge}' would isolate TAZ '{taz}'")]
    TazUnreachable { edge: String, taz: String },
    #[error("blocking lane {lane} would disconnect edge '{edge}'")]
    OnlyConnectedLane { edge: String, lane: usize },
    #[error("invalid closure window [{start_s}, {end_s})")]
    InvalidClosure { start_s: f64, end_s: f64 },
    #[error("remap connection invalid: {0}")]
    RemapInvalid(String),
    #[error("policy script parse error: {0}")]
    Parse(String),
    #[error("edit {index} failed: {source}")]
    AtIndex {
        index: usize,
        #[source]
        source: Box<PolicyError>,
    },
}

/// One atomic network edit.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyEdit {
    /// Swap an edge's direction; connections touching it are dropped unless
    /// re-established by the remap table.
    ReverseEdge {
        edge: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        remap: Vec<ConnectionSpec>,
    },
    /// Block a lane at its junction end: upstream driving stays legal, all
    /// connections departing that lane are removed.
    BlockLaneAtJunction { edge: String, lane: usize },
    /// Traffic light becomes priority control; the program is deleted.
    RemoveSignal { node: String },
    ForbidLaneChange { edge: String },
    /// Timed closure; not applied statically, handed to the engine schedule.
    CloseEdge { edge: String, start_s: f64, end_s: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyScript {
    pub name: String,
    pub edits: Vec<PolicyEdit>,
}

/// Script files are a JSON list of edit objects; a named object form
/// `{"name": ..., "edits": [...]}` is also accepted.
pub fn parse_policy_script(text: &str) -> Result<PolicyScript, PolicyError> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum FileForm {
        List(Vec<PolicyEdit>),
        Named(PolicyScript),
    }
    match serde_json::from_str::<FileForm>(text).map_err(|e| PolicyError::Parse(e.to_string()))? {
        FileForm::List(edits) => Ok(PolicyScript { name: "policy".into(), edits }),
        FileForm::Named(s) => Ok(s),
    }
}

#[derive(Debug, Clone, Default)]
pub struct ApplicationReport {
    /// Canonical ids of connections dropped by reversals and lane blocks.
    pub dropped_connections: Vec<String>,
    pub warnings: Vec<String>,
    /// Closure events collected from CloseEdge edits.
    pub closures: Vec<ClosureEvent>,
}

fn edge_of(net: &RoadNetwork, id: &str) -> Result<EdgeIdx, PolicyError> {
    net.edge_index(id).ok_or_else(|| PolicyError::UnknownEdge(id.to_string()))
}

/// TAZs that currently have at least one member reachable from outside the
/// TAZ; used to detect edits that sever a sink.
fn reachable_tazs(net: &RoadNetwork) -> Vec<bool> {
    net.tazs
        .iter()
        .map(|taz| {
            taz.edges.iter().any(|&m| {
                net.edges_reaching(&[m]).iter().any(|e| !taz.edges.contains(e))
            })
        })
        .collect()
}

/// Swaps an edge's direction. All connections touching the edge become
/// geometrically impossible and are dropped (and reported); the optional
/// remap table adds replacement connections validated against the reversed
/// topology. Rejected if a previously reachable TAZ would lose its last
/// approach.
pub fn reverse_edge(
    net: &RoadNetwork,
    edge_id: &str,
    remap: &[ConnectionSpec],
) -> Result<(RoadNetwork, Vec<String>), PolicyError> {
    let target = edge_of(net, edge_id)?;
    let before = reachable_tazs(net);

    let mut edges = net.edges.clone();
    let e = &mut edges[target.0];
    std::mem::swap(&mut e.from, &mut e.to);

    let mut dropped = Vec::new();
    let mut connections = Vec::with_capacity(net.connections.len());
    for c in &net.connections {
        if c.from_edge == target || c.to_edge == target {
            dropped.push(c.canonical_id(net));
        } else {
            connections.push(c.clone());
        }
    }
    for spec in remap {
        let from_edge = edge_of_by(&edges, &spec.from_edge)
            .ok_or_else(|| PolicyError::RemapInvalid(format!("unknown edge '{}'", spec.from_edge)))?;
        let to_edge = edge_of_by(&edges, &spec.to_edge)
            .ok_or_else(|| PolicyError::RemapInvalid(format!("unknown edge '{}'", spec.to_edge)))?;
        if edges[to_edge.0].from != edges[from_edge.0].to {
            return Err(PolicyError::RemapInvalid(format!(
                "{} -> {} do not share a junction after reversal",
                spec.from_edge, spec.to_edge
            )));
        }
        connections.push(Connection {
            from_edge,
            from_lane: spec.from_lane as usize,
            to_edge,
            to_lane: spec.to_lane as usize,
            yield_required: spec.yield_required,
        });
    }

    let out = net.reassembled(edges, connections, net.signals.clone());
    let after = reachable_tazs(&out);
    for (i, taz) in out.tazs.iter().enumerate() {
        if before[i] && !after[i] {
            return Err(PolicyError::TazUnreachable {
                edge: edge_id.to_string(),
                taz: taz.id.clone(),
            });
        }
    }
    Ok((out, dropped))
}

fn edge_of_by(edges: &[crate::network::Edge], id: &str) -> Option<EdgeIdx> {
    edges.iter().position(|e| e.id == id).map(EdgeIdx)
}

/// Marks a lane blocked at its junction and removes its outgoing
/// connections. Rejected when that would disconnect a through edge.
pub fn block_lane_at_junction(
    net: &RoadNetwork,
    edge_id: &str,
    lane: usize,
) -> Result<(RoadNetwork, Vec<String>), PolicyError> {
    let target = edge_of(net, edge_id)?;
    if lane >= net.edge(target).lane_count() {
        return Err(PolicyError::UnknownLane { edge: edge_id.to_string(), lane });
    }
    let total_out = net.out_degree(target);
    let from_lane_out = net
        .out_connections(target)
        .iter()
        .filter(|&&ci| net.connection(ci).from_lane == lane)
        .count();
    if total_out > 0 && from_lane_out == total_out {
        return Err(PolicyError::OnlyConnectedLane { edge: edge_id.to_string(), lane });
    }

    let mut edges = net.edges.clone();
    edges[target.0].lanes[lane].blocked_at_junction = true;

    let mut dropped = Vec::new();
    let mut connections = Vec::with_capacity(net.connections.len());
    for c in &net.connections {
        if c.from_edge == target && c.from_lane == lane {
            dropped.push(c.canonical_id(net));
        } else {
            connections.push(c.clone());
        }
    }
    Ok((net.reassembled(edges, connections, net.signals.clone()), dropped))
}

/// Replaces traffic-light control with priority control and deletes the
/// signal program. Applying it twice errors: the node is no longer signalized.
pub fn remove_signal(net: &RoadNetwork, node_id: &str) -> Result<RoadNetwork, PolicyError> {
    let node = net
        .node_index(node_id)
        .ok_or_else(|| PolicyError::UnknownNode(node_id.to_string()))?;
    if net.node(node).control != NodeControl::TrafficLight {
        return Err(PolicyError::NotSignalized(node_id.to_string()));
    }
    let mut out = net.clone();
    let mut nodes = out.nodes.clone();
    nodes[node.0].control = NodeControl::None;
    let signals = out.signals.iter().filter(|s| s.node != node).cloned().collect();
    out = RoadNetwork::assemble(
        nodes,
        out.edges.clone(),
        out.connections.clone(),
        signals,
        out.tazs.clone(),
    );
    Ok(out)
}

pub fn forbid_lane_change(net: &RoadNetwork, edge_id: &str) -> Result<RoadNetwork, PolicyError> {
    let target = edge_of(net, edge_id)?;
    let mut edges = net.edges.clone();
    edges[target.0].lane_change_allowed = false;
    Ok(net.reassembled(edges, net.connections.clone(), net.signals.clone()))
}

/// Applies a script in order. The first failing edit aborts with its index
/// and reason; the input network is untouched either way. CloseEdge edits
/// are collected into the report for the engine's event schedule.
pub fn apply_policy(
    net: &RoadNetwork,
    script: &PolicyScript,
) -> Result<(RoadNetwork, ApplicationReport), PolicyError> {
    let mut current = net.clone();
    let mut report = ApplicationReport::default();
    for (index, edit) in script.edits.iter().enumerate() {
        let fail = |source: PolicyError| PolicyError::AtIndex { index, source: Box::new(source) };
        match edit {
            PolicyEdit::ReverseEdge { edge, remap } => {
                let (next, dropped) = reverse_edge(&current, edge, remap).map_err(fail)?;
                if !dropped.is_empty() {
                    report
                        .warnings
                        .push(format!("reverse_edge {edge}: dropped {} connections", dropped.len()));
                }
                report.dropped_connections.extend(dropped);
                current = next;
            }
            PolicyEdit::BlockLaneAtJunction { edge, lane } => {
                let (next, dropped) =
                    block_lane_at_junction(&current, edge, *lane).map_err(fail)?;
                report.dropped_connections.extend(dropped);
                current = next;
            }
            PolicyEdit::RemoveSignal { node } => {
                current = remove_signal(&current, node).map_err(fail)?;
            }
            PolicyEdit::ForbidLaneChange { edge } => {
                current = forbid_lane_change(&current, edge).map_err(fail)?;
            }
            PolicyEdit::CloseEdge { edge, start_s, end_s } => {
                edge_of(&current, edge).map_err(fail)?;
                if !(*start_s >= 0.0 && start_s < end_s) {
                    return Err(fail(PolicyError::InvalidClosure {
                        start_s: *start_s,
                        end_s: *end_s,
                    }));
                }
                report.closures.push(ClosureEvent {
                    edge: edge.clone(),
                    start_s: *start_s,
                    end_s: *end_s,
                });
            }
        }
    }
    Ok((current, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{parse_network, serialize_network, validate_network};
    use crate::synth;

    fn single_edge_net() -> RoadNetwork {
        parse_network(
            r#"{
            "nodes": [{"id":"A","x":0,"y":0},{"id":"B","x":100,"y":0}],
            "edges": [{"id":"AB","from":"A","to":"B","length_m":100,"lanes":2,
                       "type":"arterial","priority":5,"speed_limit_mps":15,"lane_change":true}]
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn reverse_single_edge_swaps_endpoints() {
        let net = single_edge_net();
        let (rev, dropped) = reverse_edge(&net, "AB", &[]).unwrap();
        let e = rev.edge(rev.edge_index("AB").unwrap());
        assert_eq!(rev.node(e.from).id, "B");
        assert_eq!(rev.node(e.to).id, "A");
        assert_eq!(e.length_m, 100.0);
        assert_eq!(e.lane_count(), 2);
        assert!(dropped.is_empty());
        // Involution on a connection-free edge restores the original value.
        let (back, _) = reverse_edge(&rev, "AB", &[]).unwrap();
        assert_eq!(serialize_network(&back), serialize_network(&net));
    }

    #[test]
    fn reverse_rejects_isolating_a_taz() {
        let net = parse_network(
            r#"{
            "nodes": [{"id":"A","x":0,"y":0},{"id":"B","x":1,"y":0},{"id":"C","x":2,"y":0}],
            "edges": [
              {"id":"r","from":"A","to":"B","length_m":50,"lanes":1,"type":"residential","priority":1,"speed_limit_mps":10,"lane_change":true},
              {"id":"approach","from":"B","to":"C","length_m":50,"lanes":1,"type":"arterial","priority":5,"speed_limit_mps":15,"lane_change":true}
            ],
            "connections": [{"from_edge":"r","from_lane":0,"to_edge":"approach","to_lane":0,"yield":false}],
            "tazs": [{"id":"exit","edges":["approach"]}]
        }"#,
        )
        .unwrap();
        match reverse_edge(&net, "approach", &[]) {
            Err(PolicyError::TazUnreachable { taz, .. }) => assert_eq!(taz, "exit"),
            other => panic!("expected TazUnreachable, got {other:?}"),
        }
    }

    #[test]
    fn reverse_with_remap_doubles_exit_lanes() {
        // Corridor cross-section: out (2 lanes) + inbound twin (2 lanes).
        // Reversing the twin and remapping the feeder gives 4 exit lanes.
        let net = parse_network(
            r#"{
            "nodes": [{"id":"K","x":0,"y":0},{"id":"B","x":500,"y":0},{"id":"R","x":-300,"y":0}],
            "edges": [
              {"id":"feeder","from":"R","to":"K","length_m":300,"lanes":2,"type":"residential","priority":1,"speed_limit_mps":10,"lane_change":true},
              {"id":"out","from":"K","to":"B","length_m":500,"lanes":2,"type":"arterial","priority":5,"speed_limit_mps":15,"lane_change":true},
              {"id":"inb","from":"B","to":"K","length_m":500,"lanes":2,"type":"arterial","priority":5,"speed_limit_mps":15,"lane_change":true}
            ],
            "connections": [
              {"from_edge":"feeder","from_lane":0,"to_edge":"out","to_lane":0,"yield":false},
              {"from_edge":"feeder","from_lane":1,"to_edge":"out","to_lane":1,"yield":false},
              {"from_edge":"inb","from_lane":0,"to_edge":"out","to_lane":0,"yield":true}
            ],
            "tazs": [{"id":"exit","edges":["out"]}]
        }"#,
        )
        .unwrap();
        // Cut across the corridor at node K->B: outbound lanes before = 2.
        let outbound_lanes = |n: &RoadNetwork| -> usize {
            n.edges
                .iter()
                .filter(|e| n.node(e.to).id == "B")
                .map(|e| e.lane_count())
                .sum()
        };
        assert_eq!(outbound_lanes(&net), 2);
        let remap = vec![ConnectionSpec {
            from_edge: "feeder".into(),
            from_lane: 1,
            to_edge: "inb".into(),
            to_lane: 0,
            yield_required: false,
        }];
        let (rev, dropped) = reverse_edge(&net, "inb", &remap).unwrap();
        assert_eq!(outbound_lanes(&rev), 4);
        assert_eq!(dropped, vec!["inb.0->out.0".to_string()]);
    }

    #[test]
    fn block_lane_rules() {
        let net = synth::merge_crossroad();
        let (blocked, dropped) = block_lane_at_junction(&net, "main_in", 0).unwrap();
        assert_eq!(dropped, vec!["main_in.0->main_out.0".to_string()]);
        let e = blocked.edge(blocked.edge_index("main_in").unwrap());
        assert!(e.lanes[0].blocked_at_junction);
        // Lane 1 connections intact.
        assert_eq!(blocked.out_degree(blocked.edge_index("main_in").unwrap()), 1);

        // Blocking the only connected lane of a 1-lane through edge fails.
        match block_lane_at_junction(&net, "minor", 0) {
            Err(PolicyError::OnlyConnectedLane { .. }) => {}
            other => panic!("expected OnlyConnectedLane, got {other:?}"),
        }
    }

    #[test]
    fn remove_signal_twice_errors() {
        let net = synth::signal_crossroad(30);
        let once = remove_signal(&net, "C").unwrap();
        assert_eq!(once.node(once.node_index("C").unwrap()).control, NodeControl::None);
        assert!(once.signals.is_empty());
        assert!(matches!(remove_signal(&once, "C"), Err(PolicyError::NotSignalized(_))));
    }

    #[test]
    fn apply_policy_is_pure_and_reports() {
        let net = synth::merge_crossroad();
        let before = serialize_network(&net);
        let script = PolicyScript {
            name: "contraflow".into(),
            edits: vec![
                PolicyEdit::BlockLaneAtJunction { edge: "main_in".into(), lane: 0 },
                PolicyEdit::CloseEdge { edge: "main_out".into(), start_s: 100.0, end_s: 200.0 },
            ],
        };
        let (out, report) = apply_policy(&net, &script).unwrap();
        assert_eq!(serialize_network(&net), before, "input mutated");
        assert_eq!(report.dropped_connections.len(), 1);
        assert_eq!(report.closures.len(), 1);
        assert!(out.edge(out.edge_index("main_in").unwrap()).lanes[0].blocked_at_junction);

        // Empty script: unchanged network.
        let empty = PolicyScript { name: "noop".into(), edits: vec![] };
        let (same, _) = apply_policy(&net, &empty).unwrap();
        assert_eq!(serialize_network(&same), before);
    }

    #[test]
    fn apply_policy_aborts_with_index() {
        let net = synth::merge_crossroad();
        let script = PolicyScript {
            name: "bad".into(),
            edits: vec![
                PolicyEdit::ForbidLaneChange { edge: "main_in".into() },
                PolicyEdit::RemoveSignal { node: "J".into() },
            ],
        };
        match apply_policy(&net, &script) {
            Err(PolicyError::AtIndex { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected AtIndex, got {other:?}"),
        }
    }

    #[test]
    fn double_reversal_isomorphic_and_validator_clean() {
        let net = synth::corridor(3, 200.0, 2);
        let script = PolicyScript {
            name: "double".into(),
            edits: vec![
                PolicyEdit::ReverseEdge { edge: "res_1".into(), remap: vec![] },
                PolicyEdit::ReverseEdge { edge: "res_1".into(), remap: vec![] },
            ],
        };
        let (out, report) = apply_policy(&net, &script).unwrap();
        // Edge attributes and all untouched connections are restored; only
        // the feeder connection was dropped (and reported).
        let e = out.edge(out.edge_index("res_1").unwrap());
        let e0 = net.edge(net.edge_index("res_1").unwrap());
        assert_eq!(out.node(e.from).id, net.node(e0.from).id);
        assert_eq!(out.node(e.to).id, net.node(e0.to).id);
        assert_eq!(report.dropped_connections, vec!["res_1.0->art_1.0".to_string()]);
        assert_eq!(out.connections.len(), net.connections.len() - 1);

        // Policy application on the corridor keeps it free of dead ends
        // when the dropped feeder is re-established.
        let script = PolicyScript {
            name: "roundtrip".into(),
            edits: vec![
                PolicyEdit::ReverseEdge { edge: "res_1".into(), remap: vec![] },
                PolicyEdit::ReverseEdge {
                    edge: "res_1".into(),
                    remap: vec![ConnectionSpec {
                        from_edge: "res_1".into(),
                        from_lane: 0,
                        to_edge: "art_1".into(),
                        to_lane: 0,
                        yield_required: true,
                    }],
                },
            ],
        };
        let (out, _) = apply_policy(&net, &script).unwrap();
        let report = validate_network(&out);
        assert!(report.is_clean(), "findings: {:?}", report.findings);
        // Isomorphic to the original: identical up to connection order.
        let conn_set = |n: &RoadNetwork| {
            let mut v: Vec<String> = n
                .connections
                .iter()
                .map(|c| format!("{} y={}", c.canonical_id(n), c.yield_required))
                .collect();
            v.sort();
            v
        };
        assert_eq!(conn_set(&out), conn_set(&net));
        assert_eq!(out.connections.len(), net.connections.len());
    }

    #[test]
    fn parse_script_bare_list_and_named() {
        let s = parse_policy_script(
            r#"[{"op":"reverse_edge","edge":"pentz_in"},
                {"op":"close_edge","edge":"pentz_out","start_s":10800,"end_s":999999}]"#,
        )
        .unwrap();
        assert_eq!(s.edits.len(), 2);
        assert!(matches!(&s.edits[0], PolicyEdit::ReverseEdge { edge, .. } if edge == "pentz_in"));
        let s = parse_policy_script(r#"{"name":"x","edits":[{"op":"remove_signal","node":"C"}]}"#)
            .unwrap();
        assert_eq!(s.name, "x");
    }
}
