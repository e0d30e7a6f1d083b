//! Map-repair checks. These mirror the usual flaws of converted maps:
//! bad lane connections, stranded sinks, dead ends, footpaths wired for
//! vehicles, and signal plans pointing at removed connections.

use std::collections::HashSet;

use serde::Serialize;

use super::{EdgeIdx, RoadNetwork, RoadType};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    /// TAZ member edge not reachable from any residential/service edge.
    UnreachableSink { edge: String },
    /// Edge with no outgoing connection that is not a TAZ member.
    DeadEnd { edge: String },
    /// Connection into a lane index that does not exist on its edge.
    BadLaneIndex { connection: String },
    /// Signal phase greenlighting a connection that no longer exists.
    MissingSignalConnection { signal: String, connection: String },
    /// Footpath edge carrying a vehicle connection.
    FootpathVehicleConnection { edge: String, connection: String },
    /// Node with incoming edges, no outgoing edges, and at least one
    /// non-sink incoming edge.
    ZeroOutDegreeInteriorNode { node: String },
}

impl std::fmt::Display for Finding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Finding::UnreachableSink { edge } => write!(f, "unreachable-sink: {edge}"),
            Finding::DeadEnd { edge } => write!(f, "dead-end: {edge}"),
            Finding::BadLaneIndex { connection } => write!(f, "bad-lane-index: {connection}"),
            Finding::MissingSignalConnection { signal, connection } => {
                write!(f, "missing-signal-connection: {signal} -> {connection}")
            }
            Finding::FootpathVehicleConnection { edge, connection } => {
                write!(f, "footpath-vehicle-connection: {edge} via {connection}")
            }
            Finding::ZeroOutDegreeInteriorNode { node } => {
                write!(f, "zero-out-degree-interior-node: {node}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.findings.is_empty() {
            return writeln!(f, "network clean: no findings");
        }
        for finding in &self.findings {
            writeln!(f, "{finding}")?;
        }
        Ok(())
    }
}

/// Runs all map-repair checks; returns a report, never fails.
pub fn validate_network(net: &RoadNetwork) -> ValidationReport {
    let mut findings = Vec::new();

    let sink_edges: HashSet<EdgeIdx> =
        net.tazs.iter().flat_map(|t| t.edges.iter().copied()).collect();

    // Unreachable sinks: no origin-eligible edge reaches the TAZ member.
    for taz in &net.tazs {
        for &m in &taz.edges {
            let reaching = net.edges_reaching(&[m]);
            let ok = reaching.iter().any(|&e| {
                e != m
                    && matches!(net.edge(e).road_type, RoadType::Residential | RoadType::Service)
            });
            if !ok {
                findings.push(Finding::UnreachableSink { edge: net.edge(m).id.clone() });
            }
        }
    }

    // Dead ends: vehicle edges with nowhere to go that are not sinks.
    for (ei, e) in net.edges.iter().enumerate() {
        if e.road_type == RoadType::Footpath {
            continue;
        }
        let idx = EdgeIdx(ei);
        if net.out_degree(idx) == 0 && !sink_edges.contains(&idx) {
            findings.push(Finding::DeadEnd { edge: e.id.clone() });
        }
    }

    // Lane indices out of range.
    for c in &net.connections {
        let from = net.edge(c.from_edge);
        let to = net.edge(c.to_edge);
        if c.from_lane >= from.lane_count() || c.to_lane >= to.lane_count() {
            findings.push(Finding::BadLaneIndex { connection: c.canonical_id(net) });
        }
    }

    // Signal phases referencing missing connections.
    let canonical: HashSet<String> =
        net.connections.iter().map(|c| c.canonical_id(net)).collect();
    for s in &net.signals {
        for p in &s.phases {
            for g in &p.green {
                if !canonical.contains(g) {
                    findings.push(Finding::MissingSignalConnection {
                        signal: s.id.clone(),
                        connection: g.clone(),
                    });
                }
            }
        }
    }

    // Footpaths carrying vehicle connections.
    for c in &net.connections {
        for e in [c.from_edge, c.to_edge] {
            if net.edge(e).road_type == RoadType::Footpath {
                findings.push(Finding::FootpathVehicleConnection {
                    edge: net.edge(e).id.clone(),
                    connection: c.canonical_id(net),
                });
            }
        }
    }

    // Interior nodes where traffic can enter but never leave.
    for (ni, n) in net.nodes.iter().enumerate() {
        let node = super::NodeIdx(ni);
        let incoming = net.edges_arriving(node);
        if incoming.is_empty() || !net.edges_departing(node).is_empty() {
            continue;
        }
        if incoming.iter().any(|e| !sink_edges.contains(e)) {
            findings.push(Finding::ZeroOutDegreeInteriorNode { node: n.id.clone() });
        }
    }

    ValidationReport { findings }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::parse_network;
    use crate::synth;

    #[test]
    fn dead_end_flagged_unless_sink() {
        let net = parse_network(
            r#"{
            "nodes": [{"id":"A","x":0,"y":0},{"id":"B","x":1,"y":0},{"id":"C","x":2,"y":0}],
            "edges": [
              {"id":"AB","from":"A","to":"B","length_m":10,"lanes":1,"type":"residential","priority":1,"speed_limit_mps":10,"lane_change":true},
              {"id":"BC","from":"B","to":"C","length_m":10,"lanes":1,"type":"residential","priority":1,"speed_limit_mps":10,"lane_change":true}
            ],
            "connections": [{"from_edge":"AB","from_lane":0,"to_edge":"BC","to_lane":0,"yield":false}],
            "tazs": [{"id":"exit","edges":["BC"]}]
        }"#,
        )
        .unwrap();
        let report = validate_network(&net);
        assert!(report.is_clean(), "unexpected findings: {:?}", report.findings);

        // Same network without the TAZ: BC becomes a flagged dead end and A..B
        // onward no longer reaches any sink.
        let net = parse_network(
            r#"{
            "nodes": [{"id":"A","x":0,"y":0},{"id":"B","x":1,"y":0},{"id":"C","x":2,"y":0}],
            "edges": [
              {"id":"AB","from":"A","to":"B","length_m":10,"lanes":1,"type":"residential","priority":1,"speed_limit_mps":10,"lane_change":true},
              {"id":"BC","from":"B","to":"C","length_m":10,"lanes":1,"type":"residential","priority":1,"speed_limit_mps":10,"lane_change":true}
            ],
            "connections": [{"from_edge":"AB","from_lane":0,"to_edge":"BC","to_lane":0,"yield":false}]
        }"#,
        )
        .unwrap();
        let report = validate_network(&net);
        assert!(report
            .findings
            .contains(&Finding::DeadEnd { edge: "BC".into() }));
    }

    #[test]
    fn bad_lane_index_flagged() {
        let net = parse_network(
            r#"{
            "nodes": [{"id":"A","x":0,"y":0},{"id":"B","x":1,"y":0},{"id":"C","x":2,"y":0}],
            "edges": [
              {"id":"AB","from":"A","to":"B","length_m":10,"lanes":1,"type":"residential","priority":1,"speed_limit_mps":10,"lane_change":true},
              {"id":"BC","from":"B","to":"C","length_m":10,"lanes":1,"type":"residential","priority":1,"speed_limit_mps":10,"lane_change":true}
            ],
            "connections": [{"from_edge":"AB","from_lane":3,"to_edge":"BC","to_lane":0,"yield":false}],
            "tazs": [{"id":"exit","edges":["BC"]}]
        }"#,
        )
        .unwrap();
        let report = validate_network(&net);
        assert!(matches!(report.findings.as_slice(), [Finding::BadLaneIndex { .. }]));
    }

    #[test]
    fn clean_fixture_network_is_clean() {
        let net = synth::corridor(4, 300.0, 2);
        let report = validate_network(&net);
        assert!(report.is_clean(), "findings: {:?}", report.findings);
    }
}
