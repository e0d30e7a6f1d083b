//! Discrete-time (1 s) microscopic simulation: insertion, safe-speed car
//! following, simplified lane changing, junction control (signals, stops,
//! gap-acceptance yielding), teleport deadlock handling, timed closures, and
//! trajectory/summary recording.

mod outputs;
mod vehicle;

pub use outputs::{
    trajectories_from_csv, trips_from_csv, OutputParseError, SimOutputs, SummaryRow,
    TrajectorySample, TripRecord, TripStatus,
};
pub use vehicle::{Phase, Vehicle, VehicleParams};

use std::collections::{HashMap, HashSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::{DemandSet, RoutingMode};
use crate::network::{EdgeIdx, NetworkError, NodeControl, RoadNetwork};
use crate::routing::{self, RerouteOutcome, RerouteRequest, TravelTimeTable};

/// A vehicle counts as "at the lane head" within this distance of the edge end.
const HEAD_ZONE_M: f64 = 5.0;
/// Below this speed a vehicle is considered stopped for wait/stop bookkeeping.
const STOPPED_SPEED: f64 = 0.1;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("closure references unknown edge '{0}'")]
    UnknownClosureEdge(String),
    #[error("demand is not sorted by departure time")]
    UnsortedDemand,
}

/// A timed full-edge closure; vehicles cannot enter the edge while active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosureEvent {
    pub edge: String,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub step_s: f64,
    pub teleport_threshold_s: f64,
    pub reroute_period_s: f64,
    pub tt_refresh_period_s: f64,
    pub max_time_s: f64,
    pub record_trajectories: bool,
    /// Dawdle scale sigma: each step the speed drops by U(0, a*sigma*dt).
    pub dawdle_sigma: f64,
    pub accel_max: f64,
    pub decel_max: f64,
    pub vehicle_length_m: f64,
    pub min_gap_m: f64,
    pub reaction_time_s: f64,
    /// Std of the per-vehicle desired-speed factor around 1.0.
    pub speed_dev: f64,
    /// Yielding vehicles need the nearest conflicting arrival to be at
    /// least this far away, seconds.
    pub yield_gap_s: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            step_s: 1.0,
            teleport_threshold_s: 300.0,
            reroute_period_s: 60.0,
            tt_refresh_period_s: 300.0,
            max_time_s: 172_800.0,
            record_trajectories: true,
            dawdle_sigma: 0.5,
            accel_max: 2.6,
            decel_max: 4.5,
            vehicle_length_m: 5.0,
            min_gap_m: 2.5,
            reaction_time_s: 1.0,
            speed_dev: 0.1,
            yield_gap_s: 4.0,
        }
    }
}

/// Krauss-style safe speed: the fastest speed that still allows stopping
/// behind the leader if it brakes at full deceleration.
pub fn safe_speed(v_leader: f64, gap_m: f64, decel_max: f64, reaction_time_s: f64) -> f64 {
    let b = decel_max;
    let tau = reaction_time_s;
    let g = gap_m.max(0.0);
    let v = -b * tau + (b * b * tau * tau + v_leader * v_leader + 2.0 * b * g).sqrt();
    v.max(0.0)
}

fn bearing(net: &RoadNetwork, node: crate::network::NodeIdx, toward: crate::network::NodeIdx) -> f64 {
    let a = net.node(node);
    let b = net.node(toward);
    (b.y - a.y).atan2(b.x - a.x).rem_euclid(std::f64::consts::TAU)
}

/// Whether two junction movements from different edges conflict.
///
/// Same target lane is a merge conflict; different lanes of one target edge
/// never conflict (this is what makes blocked-lane contraflow merges work);
/// parallel twin edges between the same node pair count as one carriageway.
/// Otherwise each movement is a chord across the junction circle, with
/// right-hand-traffic offsets (approaches sit counterclockwise of the road
/// axis, exits clockwise), and two movements conflict when their chord
/// endpoints interleave (crossing paths).
pub(crate) fn movements_conflict(
    net: &RoadNetwork,
    a: &crate::network::Connection,
    b: &crate::network::Connection,
) -> bool {
    if a.to_edge == b.to_edge {
        return a.to_lane == b.to_lane;
    }
    let ta = net.edge(a.to_edge);
    let tb = net.edge(b.to_edge);
    if ta.from == tb.from && ta.to == tb.to {
        return false;
    }
    let tau = std::f64::consts::TAU;
    let side = 0.1; // carriageway offset, radians
    let node = net.edge(a.from_edge).to;
    let a_in = (bearing(net, node, net.edge(a.from_edge).from) + side).rem_euclid(tau);
    let a_out = (bearing(net, node, ta.to) - side).rem_euclid(tau);
    let b_in = (bearing(net, node, net.edge(b.from_edge).from) + side).rem_euclid(tau);
    let b_out = (bearing(net, node, tb.to) - side).rem_euclid(tau);
    let arc_end = (a_out - a_in).rem_euclid(tau);
    let inside = |x: f64| {
        let p = (x - a_in).rem_euclid(tau);
        p > 1e-9 && p < arc_end - 1e-9
    };
    inside(b_in) != inside(b_out)
}

#[derive(Clone, Copy, Default)]
struct StepPlan {
    v_new: f64,
}

pub struct World<'a> {
    net: &'a RoadNetwork,
    cfg: SimConfig,
    time_s: f64,
    step_no: u64,
    rng: ChaCha8Rng,

    vehicles: Vec<Vehicle>,
    phase: Vec<Phase>,
    trip_ids: Vec<String>,
    trip_departs: Vec<f64>,
    arrive_s: Vec<Option<f64>>,

    /// Not-yet-inserted vehicle indices, ascending departure.
    pending: Vec<usize>,
    /// Watermark into the depart-sorted trips: how many are due (loaded).
    loaded_watermark: usize,
    /// occupancy[edge][lane]: vehicle indices sorted front-first (pos desc).
    occupancy: Vec<Vec<Vec<usize>>>,
    plans: Vec<StepPlan>,

    tt: TravelTimeTable,
    closures: Vec<(EdgeIdx, f64, f64)>,
    closed_now: Vec<bool>,

    /// (edge, lane, to_edge) -> (connection index, to_lane).
    conn_table: HashMap<(usize, usize, usize), (usize, usize)>,
    /// node index -> index into `signal_greens` / the network signal list.
    signal_of_node: HashMap<usize, usize>,
    /// Per signal, per phase: green connection indices.
    signal_greens: Vec<Vec<HashSet<usize>>>,

    /// Completed traversal-time accumulator per edge since the last refresh.
    traversal_acc: Vec<(f64, u32)>,

    inserted: u64,
    finished: u64,
    teleports: u64,

    outputs: SimOutputs,
}

impl<'a> World<'a> {
    pub fn new(
        net: &'a RoadNetwork,
        demand: &DemandSet,
        closures: &[ClosureEvent],
        cfg: SimConfig,
    ) -> Result<World<'a>, EngineError> {
        if demand.trips.windows(2).any(|w| w[0].depart_s > w[1].depart_s) {
            return Err(EngineError::UnsortedDemand);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(demand.seed);
        let factor_dist = Normal::new(1.0, cfg.speed_dev).expect("finite speed deviation");

        let mut vehicles = Vec::with_capacity(demand.trips.len());
        let mut trip_ids = Vec::with_capacity(demand.trips.len());
        let mut trip_departs = Vec::with_capacity(demand.trips.len());
        let mut target_cache: HashMap<String, Vec<EdgeIdx>> = HashMap::new();
        for (i, trip) in demand.trips.iter().enumerate() {
            let edge = net
                .edge_index(&trip.origin_edge)
                .ok_or_else(|| NetworkError::UnknownEdge(trip.origin_edge.clone()))?;
            let targets = match target_cache.get(trip.destination.as_str()) {
                Some(t) => t.clone(),
                None => {
                    let t = net.destination_edges(&trip.destination)?;
                    target_cache.insert(trip.destination.as_str().to_string(), t.clone());
                    t
                }
            };
            let factor = factor_dist.sample(&mut rng).clamp(0.2, 2.0);
            vehicles.push(Vehicle {
                trip: i,
                params: VehicleParams {
                    accel_max: cfg.accel_max,
                    decel_max: cfg.decel_max,
                    length_m: cfg.vehicle_length_m,
                    min_gap_m: cfg.min_gap_m,
                    reaction_time_s: cfg.reaction_time_s,
                    speed_factor: factor,
                },
                routing_mode: trip.routing_mode,
                targets,
                edge,
                lane: 0,
                pos_m: trip.origin_pos_m,
                speed_mps: 0.0,
                route: Vec::new(),
                route_index: 0,
                wait_timer_s: 0.0,
                stopped_at_head: false,
                entered_edge_at_s: 0.0,
                teleport_cursor: 0,
            });
            trip_ids.push(trip.vehicle_id.clone());
            trip_departs.push(trip.depart_s);
        }

        let mut conn_table = HashMap::new();
        for (ci, c) in net.connections.iter().enumerate() {
            conn_table
                .entry((c.from_edge.0, c.from_lane, c.to_edge.0))
                .or_insert((ci, c.to_lane));
        }
        let canonical: HashMap<String, usize> = net
            .connections
            .iter()
            .enumerate()
            .map(|(ci, c)| (c.canonical_id(net), ci))
            .collect();
        let mut signal_of_node = HashMap::new();
        let mut signal_greens = Vec::new();
        for s in &net.signals {
            let phases: Vec<HashSet<usize>> = s
                .phases
                .iter()
                .map(|p| p.green.iter().filter_map(|g| canonical.get(g).copied()).collect())
                .collect();
            signal_of_node.insert(s.node.0, signal_greens.len());
            signal_greens.push(phases);
        }

        let mut resolved_closures = Vec::with_capacity(closures.len());
        for c in closures {
            let e = net
                .edge_index(&c.edge)
                .ok_or_else(|| EngineError::UnknownClosureEdge(c.edge.clone()))?;
            resolved_closures.push((e, c.start_s, c.end_s));
        }

        let occupancy = net.edges.iter().map(|e| vec![Vec::new(); e.lane_count()]).collect();
        let n = vehicles.len();
        Ok(World {
            net,
            cfg,
            time_s: 0.0,
            step_no: 0,
            rng,
            phase: vec![Phase::Pending; n],
            pending: (0..n).collect(),
            loaded_watermark: 0,
            vehicles,
            trip_ids,
            trip_departs,
            arrive_s: vec![None; n],
            occupancy,
            plans: vec![StepPlan::default(); n],
            tt: TravelTimeTable::new(net),
            closures: resolved_closures,
            closed_now: vec![false; net.edges.len()],
            conn_table,
            signal_of_node,
            signal_greens,
            traversal_acc: vec![(0.0, 0); net.edges.len()],
            inserted: 0,
            finished: 0,
            teleports: 0,
            outputs: SimOutputs::default(),
        })
    }

    fn active_count(&self) -> usize {
        self.phase
            .iter()
            .filter(|p| matches!(p, Phase::Pending | Phase::Running | Phase::Teleporting))
            .count()
    }

    /// Runs until every trip is finished or stranded, or max_time is hit.
    pub fn run(mut self) -> SimOutputs {
        while self.active_count() > 0 && self.time_s < self.cfg.max_time_s {
            self.step();
        }
        self.finalize()
    }

    fn finalize(mut self) -> SimOutputs {
        let mut incomplete = false;
        for i in 0..self.vehicles.len() {
            match self.phase[i] {
                Phase::Pending | Phase::Running | Phase::Teleporting => {
                    if matches!(self.phase[i], Phase::Running | Phase::Teleporting) {
                        incomplete = true;
                    }
                    self.phase[i] = Phase::Stranded;
                }
                _ => {}
            }
        }
        let stranded_total =
            self.phase.iter().filter(|p| matches!(p, Phase::Stranded)).count() as u64;
        self.outputs.trips = (0..self.vehicles.len())
            .map(|i| TripRecord {
                vehicle_id: self.trip_ids[i].clone(),
                depart_s: self.trip_departs[i],
                arrive_s: self.arrive_s[i],
                status: if self.arrive_s[i].is_some() {
                    TripStatus::Arrived
                } else {
                    TripStatus::Stranded
                },
            })
            .collect();
        self.outputs.incomplete = incomplete;
        self.outputs.teleport_total = self.teleports;
        self.outputs.stranded_total = stranded_total;
        self.outputs
    }

    /// Advances the world by one time step.
    pub fn step(&mut self) {
        let t = self.time_s;
        let dt = self.cfg.step_s;

        // (1) closures
        for &(e, start, end) in &self.closures {
            let active = t >= start && t < end;
            self.closed_now[e.0] = active;
            self.tt.set_closed(e, active);
        }

        // (2) insertion of due departures
        while self.loaded_watermark < self.trip_departs.len()
            && self.trip_departs[self.loaded_watermark] <= t
        {
            self.loaded_watermark += 1;
        }
        self.insert_pending(t);

        // (3) lane changes
        self.lane_change_pass();

        // (4) speeds: by-lane constraint pass, then idx-order dawdle draws.
        self.speed_pass(t, dt);
        for vi in 0..self.vehicles.len() {
            if self.phase[vi] != Phase::Running {
                continue;
            }
            let a = self.vehicles[vi].params.accel_max;
            let u: f64 = self.rng.gen_range(0.0..=(a * self.cfg.dawdle_sigma * dt));
            self.plans[vi].v_new = (self.plans[vi].v_new - u).max(0.0);
        }

        // (5) move, transition, finish
        self.move_pass(t, dt);

        // (6) wait timers and teleport removals
        self.wait_pass(dt);

        // (7) teleport re-insertion scans
        self.teleport_reinsertion(t, dt);

        // (8) periodic rerouting and travel-time refresh
        let step_next = self.step_no + 1;
        let reroute_every = (self.cfg.reroute_period_s / dt).round().max(1.0) as u64;
        let tt_every = (self.cfg.tt_refresh_period_s / dt).round().max(1.0) as u64;
        if step_next % tt_every == 0 {
            for e in 0..self.traversal_acc.len() {
                let (sum, count) = self.traversal_acc[e];
                if count > 0 {
                    self.tt
                        .record_traversal(EdgeIdx(e), sum / count as f64)
                        .expect("traversal times are positive");
                    self.traversal_acc[e] = (0.0, 0);
                }
            }
        }
        if step_next % reroute_every == 0 {
            self.reroute_dynamic();
        }

        // (9) record, then verify conservation at the pre-advance clock.
        self.record(t + dt);
        self.check_conservation(t);

        self.time_s = t + dt;
        self.step_no = step_next;
    }

    fn check_conservation(&self, t: f64) {
        let loaded = self.loaded_watermark as u64;
        let pending_due = self
            .pending
            .iter()
            .filter(|&&i| self.trip_departs[self.vehicles[i].trip] <= t)
            .count() as u64;
        let running = self
            .phase
            .iter()
            .filter(|p| matches!(p, Phase::Running | Phase::Teleporting))
            .count() as u64;
        let stranded = self.phase.iter().filter(|p| matches!(p, Phase::Stranded)).count() as u64;
        debug_assert_eq!(
            loaded,
            pending_due + running + self.finished + stranded,
            "conservation violated at t={t}"
        );
        debug_assert_eq!(self.inserted, running + self.finished + stranded);
        let _ = (loaded, pending_due, running, stranded, t);
    }

    fn insert_pending(&mut self, t: f64) {
        let pending = std::mem::take(&mut self.pending);
        let mut still_pending = Vec::with_capacity(pending.len());
        let mut rest_from = None;
        for (k, &vi) in pending.iter().enumerate() {
            if self.trip_departs[self.vehicles[vi].trip] > t {
                // Sorted by departure: everything after is in the future too.
                rest_from = Some(k);
                break;
            }
            if self.try_insert(vi, t) {
                self.inserted += 1;
            } else {
                still_pending.push(vi);
            }
        }
        if let Some(k) = rest_from {
            still_pending.extend_from_slice(&pending[k..]);
        }
        self.pending = still_pending;
    }

    /// Attempts to put a pending vehicle on its origin edge. Plans the route
    /// on the first eligible attempt.
    fn try_insert(&mut self, vi: usize, t: f64) -> bool {
        if self.vehicles[vi].route.is_empty() {
            let (edge, mode) = (self.vehicles[vi].edge, self.vehicles[vi].routing_mode);
            let route = match mode {
                RoutingMode::FixedShortest => {
                    routing::shortest_route(self.net, edge, &self.vehicles[vi].targets)
                }
                RoutingMode::Dynamic => {
                    routing::fastest_route(self.net, &self.tt, edge, &self.vehicles[vi].targets)
                }
            };
            match route {
                Some(r) => self.vehicles[vi].route = r.edges,
                None => return false, // retried next step; stranded at max_time
            }
        }
        let edge = self.vehicles[vi].edge;
        let len_m = self.net.edge(edge).length_m;
        let veh_len = self.vehicles[vi].params.length_m;
        let pos = self.vehicles[vi].pos_m.clamp(veh_len.min(len_m), len_m);
        let next = self.vehicles[vi].route.get(1).copied();
        let lane_count = self.net.edge(edge).lane_count();
        // Prefer lanes that continue the route, then lower indices.
        let mut lanes: Vec<usize> = (0..lane_count).collect();
        if let Some(next) = next {
            lanes.sort_by_key(|&l| (!self.conn_table.contains_key(&(edge.0, l, next.0)), l));
        }
        for lane in lanes {
            if self.insertion_gap_ok(edge, lane, pos, vi) {
                let v = &mut self.vehicles[vi];
                v.lane = lane;
                v.pos_m = pos;
                v.speed_mps = 0.0;
                v.route_index = 0;
                v.entered_edge_at_s = t;
                v.wait_timer_s = 0.0;
                v.stopped_at_head = false;
                self.phase[vi] = Phase::Running;
                self.occupancy_insert(edge, lane, vi);
                return true;
            }
        }
        false
    }

    /// Space check for placing `vi`'s front bumper at `pos`: enough gap to
    /// the leader, and any follower can still brake safely.
    fn insertion_gap_ok(&self, edge: EdgeIdx, lane: usize, pos: f64, vi: usize) -> bool {
        let me = &self.vehicles[vi].params;
        let mut leader: Option<usize> = None;
        let mut follower: Option<usize> = None;
        for &other in &self.occupancy[edge.0][lane] {
            if self.vehicles[other].pos_m >= pos {
                leader = Some(other);
            } else {
                follower = Some(other);
                break;
            }
        }
        if let Some(l) = leader {
            let lv = &self.vehicles[l];
            if lv.pos_m - lv.params.length_m - pos < me.min_gap_m {
                return false;
            }
        }
        if let Some(f) = follower {
            let fv = &self.vehicles[f];
            let gap = pos - me.length_m - fv.pos_m;
            let need = fv.params.min_gap_m
                + fv.speed_mps * fv.params.reaction_time_s
                + fv.speed_mps * fv.speed_mps / (2.0 * fv.params.decel_max);
            if gap < need {
                return false;
            }
        }
        true
    }

    fn occupancy_insert(&mut self, edge: EdgeIdx, lane: usize, vi: usize) {
        let pos = self.vehicles[vi].pos_m;
        let list = &mut self.occupancy[edge.0][lane];
        let mut at = list.len();
        for (i, &o) in list.iter().enumerate() {
            if self.vehicles[o].pos_m < pos {
                at = i;
                break;
            }
        }
        list.insert(at, vi);
    }

    fn occupancy_remove(&mut self, edge: EdgeIdx, lane: usize, vi: usize) {
        let list = &mut self.occupancy[edge.0][lane];
        if let Some(at) = list.iter().position(|&o| o == vi) {
            list.remove(at);
        }
    }

    /// Route-necessity and gap-advantage lane changes, one lane step each.
    fn lane_change_pass(&mut self) {
        for e in 0..self.net.edges.len() {
            if self.net.edges[e].lane_count() < 2 || !self.net.edges[e].lane_change_allowed {
                continue;
            }
            for l in 0..self.net.edges[e].lane_count() {
                // Copy: the lists mutate as vehicles change lanes.
                let members: Vec<usize> = self.occupancy[e][l].clone();
                for vi in members {
                    if self.phase[vi] != Phase::Running
                        || self.vehicles[vi].edge.0 != e
                        || self.vehicles[vi].lane != l
                    {
                        continue;
                    }
                    self.consider_lane_change(vi);
                }
            }
        }
    }

    fn lane_continues_route(&self, vi: usize, lane: usize) -> bool {
        let v = &self.vehicles[vi];
        match v.next_edge() {
            None => true, // finishing on this edge: any lane works
            Some(next) => self.conn_table.contains_key(&(v.edge.0, lane, next.0)),
        }
    }

    fn leader_gap_on(&self, edge: usize, lane: usize, pos: f64, exclude: usize) -> f64 {
        let mut best = f64::INFINITY;
        for &o in &self.occupancy[edge][lane] {
            if o == exclude {
                continue;
            }
            let ov = &self.vehicles[o];
            if ov.pos_m >= pos {
                best = best.min(ov.pos_m - ov.params.length_m - pos);
            }
        }
        best
    }

    fn consider_lane_change(&mut self, vi: usize) {
        let (edge, lane, pos) = {
            let v = &self.vehicles[vi];
            (v.edge, v.lane, v.pos_m)
        };
        let lane_count = self.net.edge(edge).lane_count();
        let here_ok = self.lane_continues_route(vi, lane);

        let target = if !here_ok {
            // One lane toward the nearest lane that continues the route.
            let candidate = (0..lane_count)
                .filter(|&l| l != lane && self.lane_continues_route(vi, l))
                .min_by_key(|&l| (lane as i64 - l as i64).unsigned_abs());
            match candidate {
                Some(c) if c > lane => Some(lane + 1),
                Some(c) if c < lane => Some(lane - 1),
                _ => None,
            }
        } else {
            // Gap advantage: an adjacent route-continuing lane offering at
            // least twice the current leader gap.
            let cur_gap = self.leader_gap_on(edge.0, lane, pos, vi);
            if !cur_gap.is_finite() {
                None // free road ahead: nothing to gain
            } else {
                let mut best: Option<(f64, usize)> = None;
                for l in [lane.wrapping_sub(1), lane + 1] {
                    if l >= lane_count || l == lane || !self.lane_continues_route(vi, l) {
                        continue;
                    }
                    let g = self.leader_gap_on(edge.0, l, pos, vi);
                    if g >= 2.0 * cur_gap {
                        let better = match best {
                            None => true,
                            Some((bg, bl)) => g > bg || (g == bg && l < bl),
                        };
                        if better {
                            best = Some((g, l));
                        }
                    }
                }
                best.map(|(_, l)| l)
            }
        };

        let Some(target) = target else { return };
        if !self.change_gap_ok(vi, target) {
            return;
        }
        self.occupancy_remove(edge, lane, vi);
        self.vehicles[vi].lane = target;
        self.occupancy_insert(edge, target, vi);
    }

    /// Full safety envelope for a lane change: the changer can brake for its
    /// new leader and the new follower can brake for the changer.
    fn change_gap_ok(&self, vi: usize, target: usize) -> bool {
        let v = &self.vehicles[vi];
        let (edge, pos, speed) = (v.edge, v.pos_m, v.speed_mps);
        let p = v.params;
        for &o in &self.occupancy[edge.0][target] {
            let ov = &self.vehicles[o];
            if ov.pos_m >= pos {
                let gap = ov.pos_m - ov.params.length_m - pos;
                let need = p.min_gap_m
                    + speed * p.reaction_time_s
                    + (speed * speed - ov.speed_mps * ov.speed_mps).max(0.0) / (2.0 * p.decel_max);
                if gap < need {
                    return false;
                }
            } else {
                let gap = pos - p.length_m - ov.pos_m;
                let op = ov.params;
                let need = op.min_gap_m
                    + ov.speed_mps * op.reaction_time_s
                    + (ov.speed_mps * ov.speed_mps - speed * speed).max(0.0) / (2.0 * op.decel_max);
                if gap < need {
                    return false;
                }
            }
        }
        true
    }

    /// By-lane constraint pass filling `plans`: desired speed, acceleration
    /// cap, leader safe-speed (same lane or across the junction), and
    /// junction stop constraints with one-entry-per-lane reservations.
    fn speed_pass(&mut self, t: f64, dt: f64) {
        let mut reservations: HashSet<(usize, usize)> = HashSet::new();
        for e in 0..self.net.edges.len() {
            let elen = self.net.edges[e].length_m;
            for l in 0..self.net.edges[e].lane_count() {
                for rank in 0..self.occupancy[e][l].len() {
                    let vi = self.occupancy[e][l][rank];
                    let (pos, speed, p, next, has_second, route_ok) = {
                        let v = &self.vehicles[vi];
                        (
                            v.pos_m,
                            v.speed_mps,
                            v.params,
                            v.next_edge(),
                            v.route_index + 2 < v.route.len(),
                            !v.on_last_edge(),
                        )
                    };
                    let mut cap = (speed + p.accel_max * dt)
                        .min(p.speed_factor * self.net.edges[e].speed_limit_mps);
                    let dist_end = elen - pos;

                    // Same-lane leader.
                    if rank > 0 {
                        let lead = &self.vehicles[self.occupancy[e][l][rank - 1]];
                        let gap = lead.pos_m - lead.params.length_m - pos;
                        cap = cap.min(safe_speed(
                            lead.speed_mps,
                            gap - p.min_gap_m,
                            p.decel_max,
                            p.reaction_time_s,
                        ));
                    }

                    if route_ok {
                        let next = next.expect("route continues");
                        if rank == 0 {
                            // Cross-junction leader on the connection target lane.
                            if let Some(&(_, to_lane)) = self.conn_table.get(&(e, l, next.0)) {
                                if let Some(&lead_i) = self.occupancy[next.0][to_lane].last() {
                                    let lead = &self.vehicles[lead_i];
                                    let gap = dist_end + lead.pos_m - lead.params.length_m;
                                    cap = cap.min(safe_speed(
                                        lead.speed_mps,
                                        gap - p.min_gap_m,
                                        p.decel_max,
                                        p.reaction_time_s,
                                    ));
                                }
                            }
                            // Entry speed limit of the next edge, softened so
                            // it only binds near the junction.
                            let next_desired =
                                p.speed_factor * self.net.edges[next.0].speed_limit_mps;
                            cap = cap.min(
                                next_desired
                                    .max(safe_speed(0.0, dist_end, p.decel_max, p.reaction_time_s)),
                            );
                        }

                        let binding = cap * p.reaction_time_s.max(dt)
                            + cap * cap / (2.0 * p.decel_max)
                            + HEAD_ZONE_M;
                        if dist_end <= binding {
                            let admitted = rank == 0
                                && self.admission(vi, t, dt, &mut reservations);
                            if admitted {
                                if has_second {
                                    // One boundary per step: never pass the
                                    // end of the entered edge blindly.
                                    let next_len = self.net.edges[next.0].length_m;
                                    cap = cap.min(safe_speed(
                                        0.0,
                                        dist_end + next_len,
                                        p.decel_max,
                                        p.reaction_time_s,
                                    ));
                                }
                            } else {
                                cap = cap.min(safe_speed(
                                    0.0,
                                    dist_end,
                                    p.decel_max,
                                    p.reaction_time_s,
                                ));
                            }
                        }
                    }

                    self.plans[vi] = StepPlan { v_new: cap.max(0.0) };
                }
            }
        }
    }

    /// Whether the head vehicle may cross its junction this step: right
    /// connection from its lane, open target edge, signal green or
    /// stop/yield gap acceptance, and an unclaimed entry slot.
    fn admission(
        &self,
        vi: usize,
        t: f64,
        dt: f64,
        reservations: &mut HashSet<(usize, usize)>,
    ) -> bool {
        let v = &self.vehicles[vi];
        let e = v.edge;
        let Some(next) = v.next_edge() else { return false };
        let Some(&(conn_idx, to_lane)) = self.conn_table.get(&(e.0, v.lane, next.0)) else {
            return false;
        };
        if self.closed_now[next.0] {
            return false;
        }
        if reservations.contains(&(next.0, to_lane)) {
            return false;
        }

        let node = self.net.edge(e).to;
        let ok = match self.net.node(node).control {
            NodeControl::TrafficLight => match self.signal_of_node.get(&node.0) {
                Some(&si) => {
                    let program = &self.net.signals[si];
                    let phase = program.phase_at(t as u64);
                    self.signal_greens[si][phase].contains(&conn_idx)
                }
                None => true,
            },
            NodeControl::AllWayStop => v.stopped_at_head && self.priority_ok(vi, conn_idx),
            NodeControl::None => self.priority_ok(vi, conn_idx),
        };
        if ok {
            // Claim the entry slot if the line is reachable this step.
            let dist_end = self.net.edge(e).length_m - v.pos_m;
            let vmax = v.speed_mps + v.params.accel_max * dt;
            if dist_end <= vmax * dt {
                reservations.insert((next.0, to_lane));
            }
        }
        ok
    }

    /// Gap acceptance against conflicting approaches at the junction.
    ///
    /// Precedence: non-yielding beats yielding, then higher edge priority,
    /// then longer waiting, then the lexicographically smaller edge id.
    fn priority_ok(&self, vi: usize, my_conn: usize) -> bool {
        let v = &self.vehicles[vi];
        let my = self.net.connection(my_conn);
        let e = v.edge;
        let node = self.net.edge(e).to;
        for &w_edge in self.net.edges_arriving(node) {
            if w_edge == e {
                continue;
            }
            for wl in 0..self.net.edge(w_edge).lane_count() {
                let Some(&w_head) = self.occupancy[w_edge.0][wl].first() else { continue };
                let w = &self.vehicles[w_head];
                let Some(w_next) = w.next_edge() else { continue };
                let Some(&(w_conn_idx, _)) = self.conn_table.get(&(w_edge.0, wl, w_next.0))
                else {
                    continue;
                };
                let wc = self.net.connection(w_conn_idx);
                if !movements_conflict(self.net, my, wc) {
                    continue;
                }
                let dist = self.net.edge(w_edge).length_m - w.pos_m;
                let arrival = if w.speed_mps < STOPPED_SPEED {
                    if dist <= HEAD_ZONE_M {
                        0.0 // waiting at the head
                    } else {
                        continue; // stopped far back: not approaching
                    }
                } else {
                    dist / w.speed_mps
                };
                if arrival > self.cfg.yield_gap_s {
                    continue;
                }
                let my_key = (
                    !my.yield_required,
                    self.net.edge(e).priority,
                    v.wait_timer_s,
                    std::cmp::Reverse(self.net.edge(e).id.as_str()),
                );
                let w_key = (
                    !wc.yield_required,
                    self.net.edge(w_edge).priority,
                    w.wait_timer_s,
                    std::cmp::Reverse(self.net.edge(w_edge).id.as_str()),
                );
                if w_key > my_key {
                    return false;
                }
            }
        }
        true
    }

    /// Applies buffered speeds; advances positions; handles edge
    /// transitions and trip completion.
    fn move_pass(&mut self, t: f64, dt: f64) {
        for vi in 0..self.vehicles.len() {
            if self.phase[vi] != Phase::Running {
                continue;
            }
            let v_new = self.plans[vi].v_new;
            let (edge, lane) = (self.vehicles[vi].edge, self.vehicles[vi].lane);
            let elen = self.net.edge(edge).length_m;
            let new_pos = self.vehicles[vi].pos_m + v_new * dt;
            self.vehicles[vi].speed_mps = v_new;

            if new_pos <= elen {
                self.vehicles[vi].pos_m = new_pos;
                continue;
            }

            // Crossing the edge end.
            let overshoot = new_pos - elen;
            let traversal = (t + dt) - self.vehicles[vi].entered_edge_at_s;
            if traversal > 0.0 {
                let acc = &mut self.traversal_acc[edge.0];
                acc.0 += traversal;
                acc.1 += 1;
            }

            if self.vehicles[vi].on_last_edge() {
                // Front passed the end of the destination edge: finished.
                self.occupancy_remove(edge, lane, vi);
                self.phase[vi] = Phase::Finished;
                self.arrive_s[vi] = Some(t + dt);
                self.finished += 1;
                continue;
            }

            let next = self.vehicles[vi].next_edge().expect("route continues");
            let Some(&(_, to_lane)) = self.conn_table.get(&(edge.0, lane, next.0)) else {
                // Speed caps forbid crossing without a connection; pin at the
                // line as a defensive fallback.
                self.vehicles[vi].pos_m = elen;
                self.vehicles[vi].speed_mps = 0.0;
                continue;
            };
            self.occupancy_remove(edge, lane, vi);
            let next_len = self.net.edge(next).length_m;
            let v = &mut self.vehicles[vi];
            v.edge = next;
            v.lane = to_lane;
            v.pos_m = overshoot.min(next_len);
            v.route_index += 1;
            v.entered_edge_at_s = t + dt;
            v.stopped_at_head = false;
            v.wait_timer_s = 0.0;
            self.occupancy_insert(next, to_lane, vi);
        }
    }

    /// Wait-timer bookkeeping and teleport removals.
    fn wait_pass(&mut self, dt: f64) {
        for vi in 0..self.vehicles.len() {
            if self.phase[vi] != Phase::Running {
                continue;
            }
            let (edge, lane) = (self.vehicles[vi].edge, self.vehicles[vi].lane);
            let is_head = self.occupancy[edge.0][lane].first() == Some(&vi);
            let dist_end = self.net.edge(edge).length_m - self.vehicles[vi].pos_m;
            let speed = self.vehicles[vi].speed_mps;
            let at_head = is_head && dist_end <= HEAD_ZONE_M && !self.vehicles[vi].on_last_edge();
            if at_head && speed < STOPPED_SPEED {
                self.vehicles[vi].wait_timer_s += dt;
                if dist_end <= 2.0 && speed < 0.05 {
                    self.vehicles[vi].stopped_at_head = true;
                }
            } else {
                self.vehicles[vi].wait_timer_s = 0.0;
            }
            if self.vehicles[vi].wait_timer_s > self.cfg.teleport_threshold_s {
                // Gridlocked: remove and scan forward along the route.
                self.teleports += 1;
                self.vehicles[vi].wait_timer_s = 0.0;
                self.vehicles[vi].teleport_cursor = self.vehicles[vi].route_index + 1;
                self.occupancy_remove(edge, lane, vi);
                self.phase[vi] = Phase::Teleporting;
            }
        }
    }

    /// Teleported vehicles try the edge under their cursor each step and
    /// advance the cursor on failure, stopping at the final route edge.
    fn teleport_reinsertion(&mut self, t: f64, dt: f64) {
        for vi in 0..self.vehicles.len() {
            if self.phase[vi] != Phase::Teleporting {
                continue;
            }
            let route_len = self.vehicles[vi].route.len();
            let cursor = self.vehicles[vi].teleport_cursor.min(route_len - 1);
            let edge = self.vehicles[vi].route[cursor];
            let veh_len = self.vehicles[vi].params.length_m;
            let elen = self.net.edge(edge).length_m;
            let pos = veh_len.min(elen);
            if !self.closed_now[edge.0] {
                let lane_count = self.net.edge(edge).lane_count();
                let next = self.vehicles[vi].route.get(cursor + 1).copied();
                let mut lanes: Vec<usize> = (0..lane_count).collect();
                if let Some(next) = next {
                    lanes.sort_by_key(|&l| {
                        (!self.conn_table.contains_key(&(edge.0, l, next.0)), l)
                    });
                }
                let mut placed = false;
                for lane in lanes {
                    if self.insertion_gap_ok(edge, lane, pos, vi) {
                        let v = &mut self.vehicles[vi];
                        v.edge = edge;
                        v.lane = lane;
                        v.pos_m = pos;
                        v.speed_mps = 0.0;
                        v.route_index = cursor;
                        v.entered_edge_at_s = t + dt;
                        v.stopped_at_head = false;
                        self.phase[vi] = Phase::Running;
                        self.occupancy_insert(edge, lane, vi);
                        placed = true;
                        break;
                    }
                }
                if placed {
                    continue;
                }
            }
            if cursor + 1 < route_len {
                self.vehicles[vi].teleport_cursor = cursor + 1;
            }
        }
    }

    /// Replaces routes of running dynamic vehicles with fresh fastest paths.
    fn reroute_dynamic(&mut self) {
        let mut requests = Vec::new();
        let mut who = Vec::new();
        for vi in 0..self.vehicles.len() {
            if self.phase[vi] != Phase::Running
                || self.vehicles[vi].routing_mode != RoutingMode::Dynamic
            {
                continue;
            }
            let v = &self.vehicles[vi];
            requests.push(RerouteRequest {
                current: v.edge,
                remaining: v.route[v.route_index..].to_vec(),
                targets: v.targets.clone(),
            });
            who.push(vi);
        }
        if requests.is_empty() {
            return;
        }
        let outcomes = routing::reroute_batch(self.net, &self.tt, &requests);
        for (vi, outcome) in who.into_iter().zip(outcomes) {
            if let RerouteOutcome::Route(r) = outcome {
                debug_assert_eq!(r.edges.first(), Some(&self.vehicles[vi].edge));
                self.vehicles[vi].route = r.edges;
                self.vehicles[vi].route_index = 0;
            }
            // Stranded vehicles keep their old route and stall; teleporting
            // and the max-time cap decide their fate.
        }
    }

    fn record(&mut self, t_out: f64) {
        let running = self
            .phase
            .iter()
            .filter(|p| matches!(p, Phase::Running | Phase::Teleporting))
            .count() as u64;
        self.outputs.summary.push(SummaryRow {
            t_s: t_out.round() as u64,
            loaded: self.loaded_watermark as u64,
            inserted: self.inserted,
            running,
            finished: self.finished,
            teleports: self.teleports,
        });
        if self.cfg.record_trajectories {
            for vi in 0..self.vehicles.len() {
                if self.phase[vi] != Phase::Running {
                    continue;
                }
                let v = &self.vehicles[vi];
                self.outputs.trajectories.push(TrajectorySample {
                    t_s: t_out,
                    vehicle_id: self.trip_ids[vi].clone(),
                    edge: self.net.edge(v.edge).id.clone(),
                    lane: v.lane,
                    pos_m: v.pos_m,
                    speed_mps: v.speed_mps,
                });
            }
        }
    }

    /// Collision check over all lanes: front-to-back gaps never negative.
    pub fn assert_collision_free(&self) {
        for e in 0..self.occupancy.len() {
            for l in 0..self.occupancy[e].len() {
                for w in self.occupancy[e][l].windows(2) {
                    let lead = &self.vehicles[w[0]];
                    let follow = &self.vehicles[w[1]];
                    let gap = lead.pos_m - lead.params.length_m - follow.pos_m;
                    assert!(
                        gap >= -1e-9,
                        "collision on edge {} lane {}: gap {}",
                        self.net.edges[e].id,
                        l,
                        gap
                    );
                }
            }
        }
    }

    pub fn time_s(&self) -> f64 {
        self.time_s
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phase
    }

    pub fn travel_times(&self) -> &TravelTimeTable {
        &self.tt
    }

    pub fn teleport_count(&self) -> u64 {
        self.teleports
    }
}

/// Runs a complete simulation: steps until all trips are finished or
/// stranded, or the configured max time is reached.
pub fn run(
    net: &RoadNetwork,
    demand: &DemandSet,
    closures: &[ClosureEvent],
    cfg: SimConfig,
) -> Result<SimOutputs, EngineError> {
    Ok(World::new(net, demand, closures, cfg)?.run())
}
