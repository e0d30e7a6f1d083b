//! Evacuation demand generation: spatial density allocation over
//! residential/service roads plus a temporal departure model (Gamma), and
//! the point-process family for fitting and simulating event-driven demand.

pub mod pointprocess;

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{Destination, EdgeIdx, NetworkError, RoadNetwork, RoadType};

#[derive(Debug, Error)]
pub enum DemandError {
    #[error("invalid temporal model: {0}")]
    InvalidTemporal(String),
    #[error("invalid spatial allocation: {0}")]
    InvalidAllocation(String),
    #[error("allocation yields zero vehicles")]
    ZeroVehicles,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("demand csv error: {0}")]
    Csv(String),
}

/// Gamma departure-time model given as mean/std hours; shape and scale come
/// from moment matching: k = (mean/std)^2, theta = std^2/mean.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GammaTemporal {
    pub mean_h: f64,
    pub std_h: f64,
}

impl GammaTemporal {
    pub fn new(mean_h: f64, std_h: f64) -> Result<Self, DemandError> {
        if !(mean_h > 0.0 && mean_h.is_finite()) {
            return Err(DemandError::InvalidTemporal("mean must be positive".into()));
        }
        if !(std_h > 0.0 && std_h.is_finite()) {
            return Err(DemandError::InvalidTemporal("std must be positive".into()));
        }
        Ok(GammaTemporal { mean_h, std_h })
    }

    /// Shape parameter k.
    pub fn shape(&self) -> f64 {
        (self.mean_h / self.std_h).powi(2)
    }

    /// Scale parameter theta, in hours.
    pub fn scale_h(&self) -> f64 {
        self.std_h * self.std_h / self.mean_h
    }
}

/// Spatial density allocation over origin-eligible roads.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpatialAllocation {
    /// Vehicles per meter of residential road.
    pub density_residential: f64,
    /// Service-road density multiplier (parking areas hold more cars).
    pub parking_ratio: f64,
    /// Fraction of the total vehicles that actually departs.
    pub portion: f64,
    /// Edges whose floored count falls below this contribute zero.
    pub min_count_threshold: u32,
}

impl Default for SpatialAllocation {
    fn default() -> Self {
        SpatialAllocation {
            density_residential: 0.0417,
            parking_ratio: 4.0,
            portion: 1.0,
            min_count_threshold: 1,
        }
    }
}

impl SpatialAllocation {
    fn validate(&self) -> Result<(), DemandError> {
        if !(self.density_residential > 0.0) {
            return Err(DemandError::InvalidAllocation("density must be positive".into()));
        }
        if !(self.parking_ratio >= 1.0) {
            return Err(DemandError::InvalidAllocation("parking ratio must be >= 1".into()));
        }
        if !(self.portion > 0.0 && self.portion <= 1.0) {
            return Err(DemandError::InvalidAllocation("portion must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingMode {
    FixedShortest,
    Dynamic,
}

impl RoutingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RoutingMode::FixedShortest => "fixed_shortest",
            RoutingMode::Dynamic => "dynamic",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trip {
    pub vehicle_id: String,
    pub depart_s: f64,
    pub origin_edge: String,
    pub origin_pos_m: f64,
    pub destination: Destination,
    pub routing_mode: RoutingMode,
}

/// Origins whose trips were dropped because no path to the destination
/// exists, with the vehicle count lost per origin.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Provenance {
    pub params: Option<serde_json::Value>,
    pub dropped_origins: Vec<(String, u32)>,
}

#[derive(Debug, Clone)]
pub struct DemandSet {
    /// Trips sorted by departure time.
    pub trips: Vec<Trip>,
    pub seed: u64,
    pub provenance: Provenance,
}

/// Per-edge vehicle counts from the density model.
///
/// count = floor(effective_density * length * portion), where the effective
/// density is the residential density, multiplied by the parking ratio on
/// service roads. Counts below the threshold contribute zero.
pub fn allocate_origins(
    net: &RoadNetwork,
    alloc: &SpatialAllocation,
) -> Result<Vec<(EdgeIdx, u32)>, DemandError> {
    alloc.validate()?;
    let mut out = Vec::new();
    for (ei, e) in net.edges.iter().enumerate() {
        let density = match e.road_type {
            RoadType::Residential => alloc.density_residential,
            RoadType::Service => alloc.density_residential * alloc.parking_ratio,
            _ => continue,
        };
        let count = (density * e.length_m * alloc.portion).floor() as u32;
        if count >= alloc.min_count_threshold.max(1) {
            out.push((EdgeIdx(ei), count));
        }
    }
    Ok(out)
}

/// Draws `n` departure times (seconds, sorted ascending) from the Gamma
/// model. Deterministic per seed.
pub fn sample_departures(model: &GammaTemporal, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(model.shape(), model.scale_h())
        .expect("shape and scale are positive by construction");
    let mut out: Vec<f64> = (0..n).map(|_| gamma.sample(&mut rng) * 3600.0).collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Generates one trip per allocated vehicle: uniform position along the
/// origin edge, independent Gamma departure draw, fixed destination.
/// Origins that cannot reach the destination are dropped with a warning and
/// recorded in the provenance.
pub fn generate_demand(
    net: &RoadNetwork,
    alloc: &SpatialAllocation,
    temporal: &GammaTemporal,
    destination: &Destination,
    routing_mode: RoutingMode,
    seed: u64,
) -> Result<DemandSet, DemandError> {
    let dest_edges = net.destination_edges(destination)?;
    let reaching = net.edges_reaching(&dest_edges);
    let origins = allocate_origins(net, alloc)?;
    if origins.iter().map(|&(_, c)| c as u64).sum::<u64>() == 0 {
        return Err(DemandError::ZeroVehicles);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(temporal.shape(), temporal.scale_h())
        .expect("shape and scale are positive by construction");

    let mut dropped = Vec::new();
    let mut raw: Vec<(f64, f64, EdgeIdx)> = Vec::new(); // (depart_s, pos_m, edge)
    for (edge, count) in origins {
        if !reaching.contains(&edge) {
            log::warn!(
                "origin {} cannot reach destination {}; dropping {} trips",
                net.edge(edge).id,
                destination.as_str(),
                count
            );
            dropped.push((net.edge(edge).id.clone(), count));
            continue;
        }
        let len = net.edge(edge).length_m;
        for _ in 0..count {
            let pos = rng.gen_range(0.0..len);
            let depart = gamma.sample(&mut rng) * 3600.0;
            raw.push((depart, pos, edge));
        }
    }
    if raw.is_empty() {
        return Err(DemandError::ZeroVehicles);
    }

    // Sort by departure (generation order breaks exact ties), then assign
    // sequential ids so the demand file reads in departure order.
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| raw[a].0.total_cmp(&raw[b].0).then(a.cmp(&b)));
    let trips = order
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let (depart_s, pos, edge) = raw[k];
            Trip {
                vehicle_id: format!("veh_{i}"),
                depart_s,
                origin_edge: net.edge(edge).id.clone(),
                origin_pos_m: pos,
                destination: destination.clone(),
                routing_mode,
            }
        })
        .collect();

    Ok(DemandSet {
        trips,
        seed,
        provenance: Provenance {
            params: Some(serde_json::json!({
                "density_residential": alloc.density_residential,
                "parking_ratio": alloc.parking_ratio,
                "portion": alloc.portion,
                "min_count_threshold": alloc.min_count_threshold,
                "mean_h": temporal.mean_h,
                "std_h": temporal.std_h,
                "destination": destination.as_str(),
                "routing_mode": routing_mode.as_str(),
            })),
            dropped_origins: dropped,
        },
    })
}

impl DemandSet {
    /// CSV with header `vehicle_id,depart_s,origin_edge,origin_pos_m,destination,routing_mode`.
    pub fn to_csv(&self) -> String {
        let mut out = Vec::new();
        writeln!(out, "vehicle_id,depart_s,origin_edge,origin_pos_m,destination,routing_mode")
            .unwrap();
        for t in &self.trips {
            writeln!(
                out,
                "{},{:.3},{},{:.2},{},{}",
                t.vehicle_id,
                t.depart_s,
                t.origin_edge,
                t.origin_pos_m,
                t.destination.as_str(),
                t.routing_mode.as_str()
            )
            .unwrap();
        }
        String::from_utf8(out).expect("csv output is utf-8")
    }

    /// Parses a demand CSV; destinations naming a TAZ resolve to the TAZ,
    /// else to an edge.
    pub fn from_csv(text: &str, net: &RoadNetwork) -> Result<DemandSet, DemandError> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut trips = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| DemandError::Csv(e.to_string()))?;
            let field = |i: usize| -> Result<&str, DemandError> {
                rec.get(i).ok_or_else(|| {
                    DemandError::Csv(format!("row {}: missing column {i}", line + 2))
                })
            };
            let depart_s: f64 = field(1)?
                .parse()
                .map_err(|e| DemandError::Csv(format!("row {}: {e}", line + 2)))?;
            let origin_edge = field(2)?.to_string();
            if net.edge_index(&origin_edge).is_none() {
                return Err(NetworkError::UnknownEdge(origin_edge).into());
            }
            let origin_pos_m: f64 = field(3)?
                .parse()
                .map_err(|e| DemandError::Csv(format!("row {}: {e}", line + 2)))?;
            let destination = net.resolve_destination(field(4)?)?;
            let routing_mode = match field(5)? {
                "fixed_shortest" => RoutingMode::FixedShortest,
                "dynamic" => RoutingMode::Dynamic,
                other => {
                    return Err(DemandError::Csv(format!(
                        "row {}: unknown routing mode '{other}'",
                        line + 2
                    )))
                }
            };
            trips.push(Trip {
                vehicle_id: field(0)?.to_string(),
                depart_s,
                origin_edge,
                origin_pos_m,
                destination,
                routing_mode,
            });
        }
        trips.sort_by(|a, b| a.depart_s.total_cmp(&b.depart_s));
        Ok(DemandSet { trips, seed: 0, provenance: Provenance::default() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn moment_matching() {
        let g = GammaTemporal::new(3.0, 0.7).unwrap();
        assert!((g.shape() - 18.367346938775512).abs() < 1e-9);
        assert!((g.scale_h() - 0.16333333333333333).abs() < 1e-9);
    }

    #[test]
    fn sample_statistics_match_moments() {
        let g = GammaTemporal::new(3.0, 0.7).unwrap();
        let xs = sample_departures(&g, 100_000, 42);
        let n = xs.len() as f64;
        let mean_h = xs.iter().sum::<f64>() / n / 3600.0;
        let var_h = xs.iter().map(|x| (x / 3600.0 - mean_h).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean_h - 3.0).abs() < 0.01, "sample mean {mean_h}");
        assert!((var_h.sqrt() - 0.7).abs() < 0.01, "sample std {}", var_h.sqrt());
        assert!(xs.windows(2).all(|w| w[0] <= w[1]));
        assert!(xs.iter().all(|&x| x >= 0.0));
        assert_eq!(xs, sample_departures(&g, 100_000, 42));
    }

    #[test]
    fn shape_one_reduces_to_exponential() {
        // std == mean gives k = 1; the median of Exp(mean) is mean*ln 2.
        let g = GammaTemporal::new(2.0, 2.0).unwrap();
        assert!((g.shape() - 1.0).abs() < 1e-12);
        let xs = sample_departures(&g, 200_001, 7);
        let median_h = xs[100_000] / 3600.0;
        assert!((median_h - 2.0 * std::f64::consts::LN_2).abs() < 0.03, "median {median_h}");
    }

    #[test]
    fn allocation_thresholds_match_density_formula() {
        // 24 m at 0.0417 veh/m crosses 1.0 (1.0008); 23 m stays below.
        let net = crate::network::parse_network(
            r#"{
            "nodes": [{"id":"A","x":0,"y":0},{"id":"B","x":1,"y":0},{"id":"C","x":2,"y":0},
                      {"id":"D","x":3,"y":0}],
            "edges": [
              {"id":"r24","from":"A","to":"B","length_m":24,"lanes":1,"type":"residential","priority":1,"speed_limit_mps":10,"lane_change":true},
              {"id":"r23","from":"B","to":"C","length_m":23,"lanes":1,"type":"residential","priority":1,"speed_limit_mps":10,"lane_change":true},
              {"id":"s100","from":"C","to":"D","length_m":100,"lanes":1,"type":"service","priority":1,"speed_limit_mps":5,"lane_change":true}
            ]
        }"#,
        )
        .unwrap();
        let alloc = SpatialAllocation::default();
        let got = allocate_origins(&net, &alloc).unwrap();
        let by_id: Vec<(String, u32)> = got
            .iter()
            .map(|&(e, c)| (net.edge(e).id.clone(), c))
            .collect();
        // service: 0.0417 * 4 * 100 = 16.68 -> 16
        assert_eq!(by_id, vec![("r24".to_string(), 1), ("s100".to_string(), 16)]);
    }

    #[test]
    fn allocation_monotone_in_portion_and_density() {
        let net = synth::corridor(6, 500.0, 1);
        let total = |portion: f64, density: f64| -> u64 {
            let alloc = SpatialAllocation {
                portion,
                density_residential: density,
                ..Default::default()
            };
            allocate_origins(&net, &alloc)
                .unwrap()
                .iter()
                .map(|&(_, c)| c as u64)
                .sum()
        };
        let mut prev = 0;
        for p in [0.2, 0.4, 0.6, 0.8, 1.0] {
            let t = total(p, 0.0417);
            assert!(t >= prev);
            prev = t;
        }
        assert!(total(1.0, 0.08) >= total(1.0, 0.0417));
    }

    #[test]
    fn generate_demand_is_deterministic_and_sorted() {
        let net = synth::corridor(3, 300.0, 1);
        let alloc = SpatialAllocation::default();
        let temporal = GammaTemporal::new(3.0, 0.7).unwrap();
        let dest = Destination::Taz("exits".into());
        let a = generate_demand(&net, &alloc, &temporal, &dest, RoutingMode::Dynamic, 11).unwrap();
        let b = generate_demand(&net, &alloc, &temporal, &dest, RoutingMode::Dynamic, 11).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(a.trips.windows(2).all(|w| w[0].depart_s <= w[1].depart_s));
        assert_eq!(a.trips[0].vehicle_id, "veh_0");
        // 3 feeders at 300 m, 0.0417 veh/m -> floor(12.51) = 12 each.
        assert_eq!(a.trips.len(), 36);
    }

    #[test]
    fn half_portion_recomputes_floors() {
        let net = synth::corridor(3, 300.0, 1);
        let temporal = GammaTemporal::new(3.0, 0.7).unwrap();
        let dest = Destination::Taz("exits".into());
        let alloc = SpatialAllocation { portion: 0.5, ..Default::default() };
        let d = generate_demand(&net, &alloc, &temporal, &dest, RoutingMode::Dynamic, 11).unwrap();
        // floor(0.0417 * 300 * 0.5) = floor(6.255) = 6 per feeder.
        assert_eq!(d.trips.len(), 18);
    }

    #[test]
    fn unreachable_origins_dropped_with_note() {
        // r_far has no connection toward the exit; its trips are dropped and
        // recorded, r_ok's trips survive.
        let net = crate::network::parse_network(
            r#"{
            "nodes": [{"id":"A","x":0,"y":0},{"id":"B","x":1,"y":0},{"id":"C","x":2,"y":0},
                      {"id":"D","x":0,"y":1},{"id":"E","x":1,"y":1}],
            "edges": [
              {"id":"r_ok","from":"A","to":"B","length_m":100,"lanes":1,"type":"residential","priority":1,"speed_limit_mps":10,"lane_change":true},
              {"id":"exit_e","from":"B","to":"C","length_m":100,"lanes":1,"type":"arterial","priority":5,"speed_limit_mps":15,"lane_change":true},
              {"id":"r_far","from":"D","to":"E","length_m":100,"lanes":1,"type":"residential","priority":1,"speed_limit_mps":10,"lane_change":true}
            ],
            "connections": [{"from_edge":"r_ok","from_lane":0,"to_edge":"exit_e","to_lane":0,"yield":false}],
            "tazs": [{"id":"exit","edges":["exit_e"]}]
        }"#,
        )
        .unwrap();
        let alloc = SpatialAllocation::default();
        let temporal = GammaTemporal::new(1.0, 0.5).unwrap();
        let d = generate_demand(
            &net,
            &alloc,
            &temporal,
            &Destination::Taz("exit".into()),
            RoutingMode::FixedShortest,
            3,
        )
        .unwrap();
        // 100 m at 0.0417 -> 4 vehicles per edge; only r_ok's survive.
        assert_eq!(d.trips.len(), 4);
        assert_eq!(d.provenance.dropped_origins, vec![("r_far".to_string(), 4)]);
        let reparsed = DemandSet::from_csv(&d.to_csv(), &net).unwrap();
        assert_eq!(reparsed.trips.len(), 4);
        assert_eq!(reparsed.trips[0].destination, Destination::Taz("exit".into()));
    }
}
