//! Static shortest-distance and dynamic fastest-time routing over smoothed
//! edge travel times, with TAZ destination resolution.
//!
//! Both path operations share one Dijkstra core over the edge graph
//! (connections are the arcs). Ties are broken by fewer edges, then by the
//! lexicographically smaller edge-id sequence, so results are deterministic
//! and reproducible against exhaustive enumeration.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet, VecDeque};

use thiserror::Error;

use crate::network::{Destination, EdgeIdx, NetworkError, RoadNetwork};

/// Number of completed-traversal records retained per edge.
pub const TT_HISTORY_LEN: usize = 5;

#[derive(Debug, Error)]
pub enum RoutingError {
    #[error("travel time must be positive, got {0}")]
    NonpositiveTravelTime(f64),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// A connection-respecting sequence of edges from origin to destination.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub edges: Vec<EdgeIdx>,
}

impl Route {
    pub fn ids(&self, net: &RoadNetwork) -> Vec<String> {
        self.edges.iter().map(|&e| net.edge(e).id.clone()).collect()
    }

    /// Checks connection validity without consulting any router state.
    pub fn is_connection_valid(&self, net: &RoadNetwork) -> bool {
        !self.edges.is_empty()
            && self.edges.windows(2).all(|w| {
                net.out_connections(w[0])
                    .iter()
                    .any(|&ci| net.connection(ci).to_edge == w[1])
            })
    }

    pub fn total_length_m(&self, net: &RoadNetwork) -> f64 {
        self.edges.iter().map(|&e| net.edge(e).length_m).sum()
    }
}

/// Per-edge smoothed travel times: the mean of the last five recorded
/// traversal means, with free-flow time as the fallback for edges that were
/// never traversed. Also carries the closure state used to price closed
/// edges as unenterable.
#[derive(Debug, Clone)]
pub struct TravelTimeTable {
    history: Vec<VecDeque<f64>>,
    smoothed: Vec<f64>,
    free_flow: Vec<f64>,
    closed: Vec<bool>,
}

impl TravelTimeTable {
    pub fn new(net: &RoadNetwork) -> Self {
        let free_flow: Vec<f64> = net.edges.iter().map(|e| e.free_flow_time_s()).collect();
        TravelTimeTable {
            history: vec![VecDeque::with_capacity(TT_HISTORY_LEN); net.edges.len()],
            smoothed: free_flow.clone(),
            free_flow,
            closed: vec![false; net.edges.len()],
        }
    }

    /// Appends a completed-traversal mean; evicts beyond five records and
    /// recomputes the smoothed value.
    pub fn record_traversal(&mut self, edge: EdgeIdx, travel_time_s: f64) -> Result<(), RoutingError> {
        if !(travel_time_s > 0.0) {
            return Err(RoutingError::NonpositiveTravelTime(travel_time_s));
        }
        let h = &mut self.history[edge.0];
        if h.len() == TT_HISTORY_LEN {
            h.pop_front();
        }
        h.push_back(travel_time_s);
        self.smoothed[edge.0] = h.iter().sum::<f64>() / h.len() as f64;
        Ok(())
    }

    /// Smoothed travel time for an edge, seconds.
    pub fn smoothed(&self, edge: EdgeIdx) -> f64 {
        self.smoothed[edge.0]
    }

    pub fn history(&self, edge: EdgeIdx) -> impl Iterator<Item = f64> + '_ {
        self.history[edge.0].iter().copied()
    }

    pub fn free_flow(&self, edge: EdgeIdx) -> f64 {
        self.free_flow[edge.0]
    }

    pub fn set_closed(&mut self, edge: EdgeIdx, closed: bool) {
        self.closed[edge.0] = closed;
    }

    pub fn is_closed(&self, edge: EdgeIdx) -> bool {
        self.closed[edge.0]
    }

    /// Debug dump rows: (edge id, smoothed seconds, history).
    pub fn dump(&self, net: &RoadNetwork) -> Vec<(String, f64, Vec<f64>)> {
        net.edges
            .iter()
            .enumerate()
            .map(|(i, e)| {
                (e.id.clone(), self.smoothed[i], self.history[i].iter().copied().collect())
            })
            .collect()
    }
}

#[derive(Clone)]
struct Label {
    cost: f64,
    hops: usize,
    edge: EdgeIdx,
}

impl PartialEq for Label {
    fn eq(&self, other: &Self) -> bool {
        self.cost == other.cost && self.hops == other.hops && self.edge == other.edge
    }
}
impl Eq for Label {}

impl Ord for Label {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert for min-first ordering.
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.hops.cmp(&self.hops))
            .then_with(|| other.edge.cmp(&self.edge))
    }
}
impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn reconstruct(parent: &[Option<EdgeIdx>], mut at: EdgeIdx, origin: EdgeIdx) -> Vec<EdgeIdx> {
    let mut path = vec![at];
    while at != origin {
        at = parent[at.0].expect("settled edge has a parent chain");
        path.push(at);
    }
    path.reverse();
    path
}

fn path_ids_less(net: &RoadNetwork, a: &[EdgeIdx], b: &[EdgeIdx]) -> bool {
    let a = a.iter().map(|&e| net.edge(e).id.as_str());
    let b = b.iter().map(|&e| net.edge(e).id.as_str());
    a.cmp(b) == Ordering::Less
}

/// Dijkstra over the edge graph with deterministic tie-breaking.
///
/// `weight(e)` is the cost of traversing edge `e`; the origin's own weight is
/// included. `blocked(e)` marks edges that cannot be entered (the origin is
/// exempt: a vehicle already on a closed edge may drive off it).
fn dijkstra(
    net: &RoadNetwork,
    origin: EdgeIdx,
    targets: &HashSet<EdgeIdx>,
    weight: &dyn Fn(EdgeIdx) -> f64,
    blocked: &dyn Fn(EdgeIdx) -> bool,
) -> Option<Route> {
    let n = net.edges.len();
    let mut best: Vec<Option<(f64, usize)>> = vec![None; n];
    let mut parent: Vec<Option<EdgeIdx>> = vec![None; n];
    let mut heap = BinaryHeap::new();

    best[origin.0] = Some((weight(origin), 0));
    heap.push(Label { cost: weight(origin), hops: 0, edge: origin });

    while let Some(Label { cost, hops, edge }) = heap.pop() {
        match best[edge.0] {
            Some((c, h)) if (c, h) != (cost, hops) => continue, // stale entry
            _ => {}
        }
        for &ci in net.out_connections(edge) {
            let next = net.connection(ci).to_edge;
            if next == origin || blocked(next) {
                continue;
            }
            let cand = (cost + weight(next), hops + 1);
            let improved = match best[next.0] {
                None => true,
                Some(cur) => {
                    if cand.0 < cur.0 || (cand.0 == cur.0 && cand.1 < cur.1) {
                        true
                    } else if cand == cur {
                        // Exact tie: keep the lexicographically smaller path.
                        let mut via = reconstruct(&parent, edge, origin);
                        via.push(next);
                        let cur_path = reconstruct(&parent, next, origin);
                        path_ids_less(net, &via, &cur_path)
                    } else {
                        false
                    }
                }
            };
            if improved {
                best[next.0] = Some(cand);
                parent[next.0] = Some(edge);
                heap.push(Label { cost: cand.0, hops: cand.1, edge: next });
            }
        }
    }

    // Choose the best settled target under the same ordering.
    let mut chosen: Option<(f64, usize, Vec<EdgeIdx>)> = None;
    for &t in targets {
        if let Some((c, h)) = best[t.0] {
            let path = reconstruct(&parent, t, origin);
            let better = match &chosen {
                None => true,
                Some((bc, bh, bp)) => {
                    c < *bc
                        || (c == *bc && h < *bh)
                        || (c == *bc && h == *bh && path_ids_less(net, &path, bp))
                }
            };
            if better {
                chosen = Some((c, h, path));
            }
        }
    }
    chosen.map(|(_, _, edges)| Route { edges })
}

/// Minimum total-length connection-respecting route; `targets` holds the
/// destination edge or the TAZ member set.
pub fn shortest_route(net: &RoadNetwork, origin: EdgeIdx, targets: &[EdgeIdx]) -> Option<Route> {
    let targets: HashSet<EdgeIdx> = targets.iter().copied().collect();
    dijkstra(net, origin, &targets, &|e| net.edge(e).length_m, &|_| false)
}

/// Minimum smoothed-travel-time route. Closed edges cannot be entered.
pub fn fastest_route(
    net: &RoadNetwork,
    tt: &TravelTimeTable,
    origin: EdgeIdx,
    targets: &[EdgeIdx],
) -> Option<Route> {
    let targets: HashSet<EdgeIdx> = targets.iter().copied().collect();
    dijkstra(net, origin, &targets, &|e| tt.smoothed(e), &|e| tt.is_closed(e))
}

/// String-keyed wrapper over [`shortest_route`]; resolves TAZ destinations
/// to their member edges.
pub fn shortest_path_distance(
    net: &RoadNetwork,
    origin_edge: &str,
    dest: &Destination,
) -> Result<Option<Route>, NetworkError> {
    let origin = net
        .edge_index(origin_edge)
        .ok_or_else(|| NetworkError::UnknownEdge(origin_edge.into()))?;
    let targets = net.destination_edges(dest)?;
    Ok(shortest_route(net, origin, &targets))
}

/// String-keyed wrapper over [`fastest_route`].
pub fn fastest_path(
    net: &RoadNetwork,
    tt: &TravelTimeTable,
    origin_edge: &str,
    dest: &Destination,
) -> Result<Option<Route>, NetworkError> {
    let origin = net
        .edge_index(origin_edge)
        .ok_or_else(|| NetworkError::UnknownEdge(origin_edge.into()))?;
    let targets = net.destination_edges(dest)?;
    Ok(fastest_route(net, tt, origin, &targets))
}

/// One vehicle's rerouting request: the edge it is on, the rest of its
/// current route (starting at that edge), and its destination edge set.
#[derive(Debug, Clone)]
pub struct RerouteRequest {
    pub current: EdgeIdx,
    pub remaining: Vec<EdgeIdx>,
    pub targets: Vec<EdgeIdx>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RerouteOutcome {
    Route(Route),
    /// No open path to any destination edge exists.
    Stranded,
}

/// Fastest-path rerouting for a batch of vehicles.
///
/// A vehicle whose current edge no longer reaches the destination (for
/// example behind a closure) is re-planned from the first open edge on its
/// remaining route; if none of those reaches the destination either, it is
/// flagged stranded.
pub fn reroute_batch(
    net: &RoadNetwork,
    tt: &TravelTimeTable,
    vehicles: &[RerouteRequest],
) -> Vec<RerouteOutcome> {
    vehicles
        .iter()
        .map(|req| {
            if let Some(route) = fastest_route(net, tt, req.current, &req.targets) {
                return RerouteOutcome::Route(route);
            }
            for k in 1..req.remaining.len() {
                let step = req.remaining[k];
                if tt.is_closed(step) {
                    break; // the old route itself is severed here
                }
                if let Some(tail) = fastest_route(net, tt, step, &req.targets) {
                    let mut edges = req.remaining[..k].to_vec();
                    edges.extend(tail.edges);
                    return RerouteOutcome::Route(Route { edges });
                }
            }
            RerouteOutcome::Stranded
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Destination;
    use crate::synth;

    fn idx(net: &RoadNetwork, id: &str) -> EdgeIdx {
        net.edge_index(id).unwrap()
    }

    #[test]
    fn origin_equals_destination() {
        let net = synth::diamond(100.0, 100.0, 150.0, 40.0);
        let r = shortest_path_distance(&net, "out", &Destination::Edge("out".into()))
            .unwrap()
            .unwrap();
        assert_eq!(r.ids(&net), ["out"]);
    }

    #[test]
    fn shortest_picks_190m_branch() {
        // Branch costs by hand: top 100+100 = 200, bottom 150+40 = 190.
        let net = synth::diamond(100.0, 100.0, 150.0, 40.0);
        let r = shortest_path_distance(&net, "in", &Destination::Taz("exit".into()))
            .unwrap()
            .unwrap();
        assert_eq!(r.ids(&net), ["in", "bot1", "bot2", "out"]);
        assert!(r.is_connection_valid(&net));
    }

    #[test]
    fn taz_resolves_to_cheapest_member() {
        // top2 and bot2 act as the two TAZ members; total distances by hand:
        // in(50)+top1(250)+top2(250) = 550 vs in(50)+bot1(150)+bot2(50) = 250.
        let net = synth::diamond(250.0, 250.0, 150.0, 50.0);
        let targets = [idx(&net, "top2"), idx(&net, "bot2")];
        let r = shortest_route(&net, idx(&net, "in"), &targets).unwrap();
        assert_eq!(*r.edges.last().unwrap(), idx(&net, "bot2"));
    }

    #[test]
    fn fastest_prefers_uncongested_long_branch() {
        let net = synth::diamond(100.0, 100.0, 150.0, 40.0);
        let mut tt = TravelTimeTable::new(&net);
        // Congest the short (bottom) branch: smoothed 500 s on bot1.
        tt.record_traversal(idx(&net, "bot1"), 500.0).unwrap();
        let r = fastest_path(&net, &tt, "in", &Destination::Taz("exit".into()))
            .unwrap()
            .unwrap();
        assert_eq!(r.ids(&net), ["in", "top1", "top2", "out"]);
    }

    #[test]
    fn fastest_agrees_with_shortest_at_free_flow_uniform_limits() {
        let net = synth::diamond(100.0, 100.0, 150.0, 40.0);
        let tt = TravelTimeTable::new(&net);
        let a = shortest_path_distance(&net, "in", &Destination::Taz("exit".into())).unwrap();
        let b = fastest_path(&net, &tt, "in", &Destination::Taz("exit".into())).unwrap();
        // All branch edges share one speed limit, so time is proportional to
        // distance on the branches.
        assert_eq!(a.unwrap().edges, b.unwrap().edges);
    }

    #[test]
    fn exact_tie_breaks_lexicographically() {
        let net = synth::diamond(100.0, 90.0, 100.0, 90.0);
        let r = shortest_path_distance(&net, "in", &Destination::Taz("exit".into()))
            .unwrap()
            .unwrap();
        // Same cost, same hops; "bot1" < "top1" at the first divergence.
        assert_eq!(r.ids(&net), ["in", "bot1", "bot2", "out"]);
    }

    #[test]
    fn unreachable_is_distinguished() {
        let net = synth::diamond(100.0, 100.0, 150.0, 40.0);
        assert!(shortest_path_distance(&net, "out", &Destination::Edge("in".into()))
            .unwrap()
            .is_none());
        assert!(matches!(
            shortest_path_distance(&net, "nope", &Destination::Edge("in".into())),
            Err(NetworkError::UnknownEdge(_))
        ));
    }

    #[test]
    fn record_traversal_mean_and_eviction() {
        let net = synth::diamond(100.0, 100.0, 150.0, 40.0);
        let e = idx(&net, "in");
        let mut tt = TravelTimeTable::new(&net);
        for t in [10.0, 20.0, 30.0, 40.0, 50.0] {
            tt.record_traversal(e, t).unwrap();
        }
        assert_eq!(tt.smoothed(e), 30.0);
        tt.record_traversal(e, 60.0).unwrap();
        assert_eq!(tt.smoothed(e), 40.0);
        assert_eq!(tt.history(e).collect::<Vec<_>>(), [20.0, 30.0, 40.0, 50.0, 60.0]);
        assert!(tt.record_traversal(e, 0.0).is_err());
    }

    #[test]
    fn free_flow_fallback() {
        let net = synth::corridor(2, 100.0, 1);
        let tt = TravelTimeTable::new(&net);
        // res_0 is 100 m at 8.33 m/s.
        let e = idx(&net, "res_0");
        assert!((tt.smoothed(e) - 100.0 / 8.33).abs() < 1e-12);
    }

    #[test]
    fn reroute_avoids_closed_edge_and_strands_when_cut_off() {
        let net = synth::diamond(100.0, 100.0, 150.0, 40.0);
        let mut tt = TravelTimeTable::new(&net);
        let targets = vec![idx(&net, "out")];
        // Close the bottom branch; reroute goes over the top.
        tt.set_closed(idx(&net, "bot1"), true);
        let req = RerouteRequest {
            current: idx(&net, "in"),
            remaining: vec![idx(&net, "in"), idx(&net, "bot1"), idx(&net, "bot2"), idx(&net, "out")],
            targets: targets.clone(),
        };
        match &reroute_batch(&net, &tt, &[req])[0] {
            RerouteOutcome::Route(r) => {
                assert!(!r.edges.contains(&idx(&net, "bot1")));
                assert_eq!(*r.edges.last().unwrap(), idx(&net, "out"));
            }
            other => panic!("expected route, got {other:?}"),
        }
        // Close the sole exit: stranded.
        tt.set_closed(idx(&net, "out"), true);
        let req = RerouteRequest {
            current: idx(&net, "in"),
            remaining: vec![idx(&net, "in")],
            targets,
        };
        assert_eq!(reroute_batch(&net, &tt, &[req]), vec![RerouteOutcome::Stranded]);
    }

    #[test]
    fn vehicle_on_closed_edge_may_drive_off_it() {
        let net = synth::diamond(100.0, 100.0, 150.0, 40.0);
        let mut tt = TravelTimeTable::new(&net);
        tt.set_closed(idx(&net, "in"), true);
        let req = RerouteRequest {
            current: idx(&net, "in"),
            remaining: vec![idx(&net, "in")],
            targets: vec![idx(&net, "out")],
        };
        assert!(matches!(&reroute_batch(&net, &tt, &[req])[0], RerouteOutcome::Route(_)));
    }
}
