//! Synthetic road networks for tests and demo scenarios.
//!
//! All builders go through the same resolution path as file parsing, so the
//! fixtures obey every network invariant.

use crate::network::{
    resolve_network, ConnectionSpec, EdgeSpec, NetworkFile, NodeSpec, PhaseSpec, RoadNetwork,
    SignalSpec, TazSpec,
};
use crate::policy::{PolicyEdit, PolicyScript};

fn node(id: &str, x: f64, y: f64) -> NodeSpec {
    NodeSpec { id: id.into(), x, y, control: Default::default() }
}

fn edge(id: &str, from: &str, to: &str, length_m: f64, lanes: u32, ty: &str) -> EdgeSpec {
    let (road_type, priority, speed) = match ty {
        "residential" => (crate::network::RoadType::Residential, 2, 8.33),
        "service" => (crate::network::RoadType::Service, 1, 5.0),
        "arterial" => (crate::network::RoadType::Arterial, 8, 15.0),
        "highway" => (crate::network::RoadType::Highway, 10, 27.0),
        "footpath" => (crate::network::RoadType::Footpath, 0, 1.5),
        other => panic!("unknown road type {other}"),
    };
    EdgeSpec {
        id: id.into(),
        from: from.into(),
        to: to.into(),
        length_m,
        lanes,
        road_type,
        priority,
        speed_limit_mps: speed,
        lane_change: true,
    }
}

fn conn(from: &str, from_lane: u32, to: &str, to_lane: u32, yield_required: bool) -> ConnectionSpec {
    ConnectionSpec {
        from_edge: from.into(),
        from_lane,
        to_edge: to.into(),
        to_lane,
        yield_required,
    }
}

/// Six-edge diamond: `in -> (top1 top2 | bot1 bot2) -> out`, with the four
/// branch lengths given in meters. TAZ `exit` holds `out`.
pub fn diamond(top1_m: f64, top2_m: f64, bot1_m: f64, bot2_m: f64) -> RoadNetwork {
    let file = NetworkFile {
        nodes: vec![
            node("S", 0.0, 0.0),
            node("J", 50.0, 0.0),
            node("T", 150.0, 50.0),
            node("B", 150.0, -50.0),
            node("M", 250.0, 0.0),
            node("X", 300.0, 0.0),
        ],
        edges: vec![
            edge("in", "S", "J", 50.0, 1, "residential"),
            edge("top1", "J", "T", top1_m, 1, "arterial"),
            edge("top2", "T", "M", top2_m, 1, "arterial"),
            edge("bot1", "J", "B", bot1_m, 1, "arterial"),
            edge("bot2", "B", "M", bot2_m, 1, "arterial"),
            edge("out", "M", "X", 50.0, 1, "arterial"),
        ],
        connections: vec![
            conn("in", 0, "top1", 0, false),
            conn("in", 0, "bot1", 0, false),
            conn("top1", 0, "top2", 0, false),
            conn("bot1", 0, "bot2", 0, false),
            conn("top2", 0, "out", 0, false),
            conn("bot2", 0, "out", 0, true),
        ],
        signals: vec![],
        tazs: vec![TazSpec { id: "exit".into(), edges: vec!["out".into()] }],
    };
    resolve_network(file).expect("diamond fixture is valid")
}

/// Single-exit corridor: an arterial chain of `n_feeders` segments plus an
/// exit edge, with one residential feeder merging at the head of each
/// segment. TAZ `exits` holds the exit edge.
pub fn corridor(n_feeders: usize, feeder_len_m: f64, arterial_lanes: u32) -> RoadNetwork {
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut connections = Vec::new();
    let seg_len = 200.0;
    for i in 0..=n_feeders {
        nodes.push(node(&format!("K{i}"), i as f64 * seg_len, 0.0));
    }
    nodes.push(node("X", (n_feeders + 1) as f64 * seg_len, 0.0));
    for i in 0..n_feeders {
        edges.push(edge(
            &format!("art_{i}"),
            &format!("K{i}"),
            &format!("K{}", i + 1),
            seg_len,
            arterial_lanes,
            "arterial",
        ));
        if i > 0 {
            for lane in 0..arterial_lanes {
                connections.push(conn(
                    &format!("art_{}", i - 1),
                    lane,
                    &format!("art_{i}"),
                    lane,
                    false,
                ));
            }
        }
    }
    edges.push(edge(
        "exit",
        &format!("K{n_feeders}"),
        "X",
        seg_len,
        arterial_lanes,
        "arterial",
    ));
    for lane in 0..arterial_lanes {
        connections.push(conn(&format!("art_{}", n_feeders - 1), lane, "exit", lane, false));
    }
    for i in 0..n_feeders {
        let rid = format!("res_{i}");
        nodes.push(node(&format!("R{i}"), i as f64 * seg_len, feeder_len_m));
        edges.push(edge(&rid, &format!("R{i}"), &format!("K{i}"), feeder_len_m, 1, "residential"));
        connections.push(conn(&rid, 0, &format!("art_{i}"), 0, true));
    }
    let file = NetworkFile {
        nodes,
        edges,
        connections,
        signals: vec![],
        tazs: vec![TazSpec { id: "exits".into(), edges: vec!["exit".into()] }],
    };
    resolve_network(file).expect("corridor fixture is valid")
}

/// Merge crossroad in the contraflow figure's shape: a two-lane arterial
/// passes a junction where a one-lane residential road merges into lane 0.
/// Exit TAZ `exits` holds the downstream edge.
pub fn merge_crossroad() -> RoadNetwork {
    let file = NetworkFile {
        nodes: vec![
            node("A", 0.0, 0.0),
            node("J", 400.0, 0.0),
            node("X", 800.0, 0.0),
            node("R", 400.0, 300.0),
        ],
        edges: vec![
            edge("main_in", "A", "J", 400.0, 2, "arterial"),
            edge("main_out", "J", "X", 400.0, 2, "arterial"),
            edge("minor", "R", "J", 300.0, 1, "residential"),
        ],
        connections: vec![
            conn("main_in", 0, "main_out", 0, false),
            conn("main_in", 1, "main_out", 1, false),
            conn("minor", 0, "main_out", 0, true),
        ],
        signals: vec![],
        tazs: vec![TazSpec { id: "exits".into(), edges: vec!["main_out".into()] }],
    };
    resolve_network(file).expect("merge fixture is valid")
}

/// Parameters of the synthetic four-corridor city.
#[derive(Debug, Clone)]
pub struct CityParams {
    /// Residential star edges per collector, per corridor (n, e, s, w).
    /// Uneven counts skew the demand so load balancing matters.
    pub res_per_collector: [usize; 4],
    pub segment_m: f64,
    pub collector_m: f64,
    pub res_m: f64,
    pub arterial_lanes: u32,
    /// Boundary exit/entry edges: lane count and speed limit. These are the
    /// capacity chokepoints that the contraflow reversal doubles.
    pub boundary_lanes: u32,
    pub boundary_speed_mps: f64,
    /// Green durations of the two signal phases (arterial, collector).
    pub phase_art_s: u32,
    pub phase_col_s: u32,
}

impl Default for CityParams {
    fn default() -> Self {
        CityParams {
            res_per_collector: [38, 18, 4, 14],
            segment_m: 400.0,
            collector_m: 300.0,
            res_m: 300.0,
            arterial_lanes: 2,
            boundary_lanes: 1,
            boundary_speed_mps: 5.0,
            phase_art_s: 12,
            phase_col_s: 18,
        }
    }
}

const CITY_DIRS: [&str; 4] = ["n", "e", "s", "w"];
const CROSSROADS: usize = 3;

fn rot(dir: usize, x: f64, y: f64) -> (f64, f64) {
    match dir {
        0 => (x, y),   // north
        1 => (y, x),   // east (mirror keeps collector side "a" on the left)
        2 => (-x, -y), // south
        3 => (-y, -x), // west
        _ => unreachable!(),
    }
}

/// Synthetic four-corridor evacuation city: a central collector ring with
/// four radial corridors (outbound and inbound arterial twins), signalized
/// crossroads where side collectors merge, and residential star roads
/// hanging off every collector. TAZ `exits` holds the four boundary exit
/// edges plus the four inbound entry edges (the pre-designated contraflow
/// sinks, reachable in the baseline through boundary turnarounds).
pub fn four_corridor_city(p: &CityParams) -> RoadNetwork {
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut connections = Vec::new();
    let mut signals = Vec::new();
    let ring_r = 800.0;
    let lanes = p.arterial_lanes;

    for d in CITY_DIRS {
        let (x, y) = rot(dir_ix(d), 0.0, ring_r);
        nodes.push(node(&format!("ring_{d}"), x, y));
    }

    for (di, d) in CITY_DIRS.iter().enumerate() {
        // Corridor chain: ring_d = K0, crossroads K1..K3, boundary b_d.
        for i in 1..=CROSSROADS {
            let (x, y) = rot(di, 0.0, ring_r + p.segment_m * i as f64);
            let mut n = node(&format!("k_{d}_{i}"), x, y);
            n.control = crate::network::NodeControl::TrafficLight;
            nodes.push(n);
        }
        let (bx, by) = rot(di, 0.0, ring_r + p.segment_m * (CROSSROADS + 1) as f64);
        nodes.push(node(&format!("b_{d}"), bx, by));

        let chain_node = |i: usize| -> String {
            if i == 0 {
                format!("ring_{d}")
            } else {
                format!("k_{d}_{i}")
            }
        };
        for i in 0..CROSSROADS {
            edges.push(edge(
                &format!("art_{d}_{i}"),
                &chain_node(i),
                &chain_node(i + 1),
                p.segment_m,
                lanes,
                "arterial",
            ));
            edges.push(edge(
                &format!("inb_{d}_{i}"),
                &chain_node(i + 1),
                &chain_node(i),
                p.segment_m,
                lanes,
                "arterial",
            ));
        }
        let mut boundary = edge(
            &format!("exit_{d}"),
            &chain_node(CROSSROADS),
            &format!("b_{d}"),
            p.segment_m,
            p.boundary_lanes,
            "arterial",
        );
        boundary.speed_limit_mps = p.boundary_speed_mps;
        edges.push(boundary);
        let mut boundary = edge(
            &format!("entry_{d}"),
            &format!("b_{d}"),
            &chain_node(CROSSROADS),
            p.segment_m,
            p.boundary_lanes,
            "arterial",
        );
        boundary.speed_limit_mps = p.boundary_speed_mps;
        edges.push(boundary);

        // Through connections on both carriageways, boundary turnaround.
        // At the last crossroad the two arterial lanes funnel into the
        // boundary chokepoint.
        for i in 0..CROSSROADS {
            if i + 1 < CROSSROADS {
                for j in 0..lanes {
                    connections.push(conn(
                        &format!("art_{d}_{i}"),
                        j,
                        &format!("art_{d}_{}", i + 1),
                        j,
                        false,
                    ));
                    connections.push(conn(
                        &format!("inb_{d}_{}", i + 1),
                        j,
                        &format!("inb_{d}_{i}"),
                        j,
                        false,
                    ));
                }
            } else {
                for j in 0..lanes {
                    connections.push(conn(
                        &format!("art_{d}_{i}"),
                        j,
                        &format!("exit_{d}"),
                        j.min(p.boundary_lanes - 1),
                        false,
                    ));
                }
                for j in 0..p.boundary_lanes {
                    connections.push(conn(
                        &format!("entry_{d}"),
                        j,
                        &format!("inb_{d}_{i}"),
                        j.min(lanes - 1),
                        false,
                    ));
                }
            }
        }
        connections.push(conn(&format!("exit_{d}"), 0, &format!("entry_{d}"), 0, false));

        // Crossroads: side collectors with residential stars.
        for i in 1..=CROSSROADS {
            let ky = ring_r + p.segment_m * i as f64;
            for (side, sx) in [("a", -1.0), ("b", 1.0)] {
                let root = format!("a_{d}_{i}_{side}");
                let (rx, ry) = rot(di, sx * p.collector_m, ky);
                nodes.push(node(&root, rx, ry));
                let col = format!("col_{d}_{i}_{side}");
                edges.push(edge(&col, &root, &format!("k_{d}_{i}"), p.collector_m, 1, "residential"));
                let art_next = if i < CROSSROADS {
                    format!("art_{d}_{i}")
                } else {
                    format!("exit_{d}")
                };
                connections.push(conn(&col, 0, &art_next, 0, true));
                // Two-way arterial: collectors may also head inward toward
                // the ring and leave through another corridor.
                connections.push(conn(&col, 0, &format!("inb_{d}_{}", i - 1), 0, true));

                let m = p.res_per_collector[di];
                for k in 0..m {
                    let leaf = format!("h_{d}_{i}_{side}_{k}");
                    let spread = 120f64.to_radians();
                    let theta = std::f64::consts::PI * if sx < 0.0 { 1.0 } else { 0.0 }
                        + spread * (k as f64 / (m.max(2) - 1) as f64 - 0.5);
                    let (hx, hy) = rot(
                        di,
                        sx * p.collector_m + theta.cos() * p.res_m,
                        ky + theta.sin() * p.res_m,
                    );
                    nodes.push(node(&leaf, hx, hy));
                    let rid = format!("res_{d}_{i}_{side}_{k}");
                    edges.push(edge(&rid, &leaf, &root, p.res_m, 1, "residential"));
                    connections.push(conn(&rid, 0, &col, 0, true));
                }
            }

            // Two-phase signal: arterial throughs, then collector merges.
            let art_prev = format!("art_{d}_{}", i - 1);
            let art_next =
                if i < CROSSROADS { format!("art_{d}_{i}") } else { format!("exit_{d}") };
            let inb_arr =
                if i < CROSSROADS { format!("inb_{d}_{i}") } else { format!("entry_{d}") };
            let inb_dep = format!("inb_{d}_{}", i - 1);
            let mut art_green = Vec::new();
            if i < CROSSROADS {
                for j in 0..lanes {
                    art_green.push(format!("{art_prev}.{j}->{art_next}.{j}"));
                    art_green.push(format!("{inb_arr}.{j}->{inb_dep}.{j}"));
                }
            } else {
                for j in 0..lanes {
                    let to = j.min(p.boundary_lanes - 1);
                    art_green.push(format!("{art_prev}.{j}->{art_next}.{to}"));
                }
                for j in 0..p.boundary_lanes {
                    let to = j.min(lanes - 1);
                    art_green.push(format!("{inb_arr}.{j}->{inb_dep}.{to}"));
                }
            }
            signals.push(SignalSpec {
                id: format!("sig_{d}_{i}"),
                node: format!("k_{d}_{i}"),
                phases: vec![
                    PhaseSpec { dur_s: p.phase_art_s, green: art_green },
                    PhaseSpec {
                        dur_s: p.phase_col_s,
                        green: vec![
                            format!("col_{d}_{i}_a.0->{art_next}.0"),
                            format!("col_{d}_{i}_b.0->{art_next}.0"),
                            format!("col_{d}_{i}_a.0->{inb_dep}.0"),
                            format!("col_{d}_{i}_b.0->{inb_dep}.0"),
                        ],
                    },
                ],
            });
        }
    }

    // Collector ring, both directions, with corridor hookups.
    for (ai, a) in CITY_DIRS.iter().enumerate() {
        let b = CITY_DIRS[(ai + 1) % 4];
        let ring_len = ring_r * std::f64::consts::SQRT_2;
        edges.push(edge(
            &format!("ring_{a}_{b}"),
            &format!("ring_{a}"),
            &format!("ring_{b}"),
            ring_len,
            1,
            "arterial",
        ));
        edges.push(edge(
            &format!("ring_{b}_{a}"),
            &format!("ring_{b}"),
            &format!("ring_{a}"),
            ring_len,
            1,
            "arterial",
        ));
    }
    for (ai, a) in CITY_DIRS.iter().enumerate() {
        let prev = CITY_DIRS[(ai + 3) % 4];
        let next = CITY_DIRS[(ai + 1) % 4];
        // Arrivals at ring_a: from both neighbors and the inbound corridor.
        for from in [format!("ring_{prev}_{a}"), format!("ring_{next}_{a}")] {
            connections.push(conn(&from, 0, &format!("art_{a}_0"), 0, true));
        }
        connections.push(conn(&format!("ring_{prev}_{a}"), 0, &format!("ring_{a}_{next}"), 0, false));
        connections.push(conn(&format!("ring_{next}_{a}"), 0, &format!("ring_{a}_{prev}"), 0, false));
        connections.push(conn(&format!("inb_{a}_0"), 0, &format!("ring_{a}_{next}"), 0, true));
        connections.push(conn(&format!("inb_{a}_0"), 0, &format!("ring_{a}_{prev}"), 0, true));
    }

    let taz_edges: Vec<String> = CITY_DIRS
        .iter()
        .flat_map(|d| [format!("exit_{d}"), format!("entry_{d}")])
        .collect();
    let file = NetworkFile {
        nodes,
        edges,
        connections,
        signals,
        tazs: vec![TazSpec { id: "exits".into(), edges: taz_edges }],
    };
    resolve_network(file).expect("city fixture is valid")
}

fn dir_ix(d: &str) -> usize {
    CITY_DIRS.iter().position(|x| *x == d).expect("known direction")
}

/// The evacuation policy for [`four_corridor_city`], mirroring the paper's
/// playbook: remove corridor signals, reverse the inbound carriageways into
/// extra outbound capacity (rewiring the chain and feeding it from the ring
/// and the near-side collectors), block the curb lane at each crossroad so
/// the far-side collector merges without conflict, and forbid lane changes
/// on the boundary edges.
pub fn city_contraflow_script(p: &CityParams) -> PolicyScript {
    let mut edits = Vec::new();
    let lanes = p.arterial_lanes;
    for d in CITY_DIRS {
        for i in 1..=CROSSROADS {
            edits.push(PolicyEdit::RemoveSignal { node: format!("k_{d}_{i}") });
        }
        // Reverse boundary-inward so each remap only references edges that
        // are already flowing outward.
        edits.push(PolicyEdit::ReverseEdge { edge: format!("entry_{d}"), remap: vec![] });
        for i in (0..CROSSROADS).rev() {
            let (downstream, down_lanes) = if i + 1 < CROSSROADS {
                (format!("inb_{d}_{}", i + 1), lanes)
            } else {
                (format!("entry_{d}"), p.boundary_lanes)
            };
            let mut remap: Vec<ConnectionSpec> = (0..lanes)
                .map(|j| {
                    conn(&format!("inb_{d}_{i}"), j, &downstream, j.min(down_lanes - 1), false)
                })
                .collect();
            if i == 0 {
                // Feed the reversed carriageway: near-side collectors merge
                // into its curb lane and the outbound left lane crosses over
                // at each crossroad; the ring feeds it at the root.
                for c in 1..=CROSSROADS {
                    let (dep, dep_lanes) = if c < CROSSROADS {
                        (format!("inb_{d}_{c}"), lanes)
                    } else {
                        (format!("entry_{d}"), p.boundary_lanes)
                    };
                    remap.push(conn(&format!("col_{d}_{c}_a"), 0, &dep, 0, true));
                    remap.push(conn(
                        &format!("art_{d}_{}", c - 1),
                        lanes - 1,
                        &dep,
                        (lanes - 1).min(dep_lanes - 1),
                        true,
                    ));
                }
                let prev = CITY_DIRS[(dir_ix(d) + 3) % 4];
                let next = CITY_DIRS[(dir_ix(d) + 1) % 4];
                remap.push(conn(&format!("ring_{prev}_{d}"), 0, &format!("inb_{d}_0"), 0, true));
                remap.push(conn(
                    &format!("ring_{next}_{d}"),
                    0,
                    &format!("inb_{d}_0"),
                    (lanes - 1).min(1),
                    true,
                ));
            }
            edits.push(PolicyEdit::ReverseEdge { edge: format!("inb_{d}_{i}"), remap });
        }
        // Reserve the curb lane for the far-side collector at each crossroad.
        for i in 1..=CROSSROADS {
            edits.push(PolicyEdit::BlockLaneAtJunction {
                edge: format!("art_{d}_{}", i - 1),
                lane: 0,
            });
        }
        edits.push(PolicyEdit::ForbidLaneChange { edge: format!("exit_{d}") });
        edits.push(PolicyEdit::ForbidLaneChange { edge: format!("entry_{d}") });
    }
    PolicyScript { name: "contraflow".into(), edits }
}

/// Signalized crossroad: north and west approaches cross to south and east
/// exits under a two-phase fixed signal. TAZ `exits` holds both exits.
pub fn signal_crossroad(phase_s: u32) -> RoadNetwork {
    let mut file = NetworkFile {
        nodes: vec![
            node("N", 0.0, 400.0),
            node("W", -400.0, 0.0),
            node("C", 0.0, 0.0),
            node("S", 0.0, -400.0),
            node("E", 400.0, 0.0),
        ],
        edges: vec![
            edge("n_in", "N", "C", 400.0, 1, "residential"),
            edge("w_in", "W", "C", 400.0, 1, "residential"),
            edge("s_out", "C", "S", 400.0, 1, "arterial"),
            edge("e_out", "C", "E", 400.0, 1, "arterial"),
        ],
        connections: vec![
            conn("n_in", 0, "s_out", 0, false),
            conn("w_in", 0, "e_out", 0, false),
        ],
        signals: vec![SignalSpec {
            id: "sig_C".into(),
            node: "C".into(),
            phases: vec![
                PhaseSpec { dur_s: phase_s, green: vec!["n_in.0->s_out.0".into()] },
                PhaseSpec { dur_s: phase_s, green: vec!["w_in.0->e_out.0".into()] },
            ],
        }],
        tazs: vec![TazSpec {
            id: "exits".into(),
            edges: vec!["s_out".into(), "e_out".into()],
        }],
    };
    file.nodes[2].control = crate::network::NodeControl::TrafficLight;
    resolve_network(file).expect("signal fixture is valid")
}
