//! Per-agent kinematic and route state advanced each step.

use crate::demand::RoutingMode;
use crate::network::EdgeIdx;

#[derive(Debug, Clone, Copy)]
pub struct VehicleParams {
    pub accel_max: f64,
    /// Maximum deceleration, positive magnitude.
    pub decel_max: f64,
    pub length_m: f64,
    pub min_gap_m: f64,
    pub reaction_time_s: f64,
    /// Desired speed = factor * lane speed limit; drawn per vehicle around
    /// 1.0 with the configured deviation.
    pub speed_factor: f64,
}

/// Where a vehicle is in its lifecycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Departure time not yet reached, or waiting for insertion space.
    Pending,
    Running,
    /// Removed after a teleport; scanning forward along the route for
    /// insertion space, one edge per step.
    Teleporting,
    Finished,
    Stranded,
}

#[derive(Debug, Clone)]
pub struct Vehicle {
    /// Position in the demand set; ids and depart times live there.
    pub trip: usize,
    pub params: VehicleParams,
    pub routing_mode: RoutingMode,
    /// Destination edge set (TAZ members or the single edge).
    pub targets: Vec<EdgeIdx>,

    pub edge: EdgeIdx,
    pub lane: usize,
    /// Front-bumper position along the edge, meters.
    pub pos_m: f64,
    pub speed_mps: f64,
    pub route: Vec<EdgeIdx>,
    pub route_index: usize,

    pub wait_timer_s: f64,
    /// Set once the vehicle has come to a stop at the head of a
    /// stop-controlled edge.
    pub stopped_at_head: bool,
    pub entered_edge_at_s: f64,
    /// Teleport route cursor: next route index to try for re-insertion.
    pub teleport_cursor: usize,
}

impl Vehicle {
    pub fn next_edge(&self) -> Option<EdgeIdx> {
        self.route.get(self.route_index + 1).copied()
    }

    pub fn on_last_edge(&self) -> bool {
        self.route_index + 1 >= self.route.len()
    }
}
