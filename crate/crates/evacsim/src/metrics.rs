//! Post-run analysis: demand/evacuation curves, the gap-area metric, per
//! half-hour speed maps, and scenario comparison tables.

use std::collections::BTreeMap;
use std::fmt::Write;

use thiserror::Error;

use crate::demand::DemandSet;
use crate::engine::{TrajectorySample, TripRecord};
use crate::network::RoadNetwork;

/// Default percentage-grid spacing for the gap-area Riemann sum (0.1%).
pub const DEFAULT_GRID_FRAC: f64 = 0.001;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("finished curve terminates below the demand curve: {stranded} stranded vehicles")]
    Stranded { stranded: usize },
    #[error("no trips to analyze")]
    Empty,
    #[error("trajectory references unknown edge '{0}'")]
    UnknownEdge(String),
}

/// Cumulative demand and cumulative finished step functions, queried through
/// their inverses (time at a given fraction).
#[derive(Debug, Clone)]
pub struct EvacCurve {
    /// Sorted departure seconds of all demanded trips.
    depart_s: Vec<f64>,
    /// Sorted arrival seconds of finished trips.
    arrive_s: Vec<f64>,
    pub stranded: usize,
}

impl EvacCurve {
    pub fn total(&self) -> usize {
        self.depart_s.len()
    }

    pub fn finished(&self) -> usize {
        self.arrive_s.len()
    }

    fn quantile(xs: &[f64], p: f64) -> f64 {
        debug_assert!(!xs.is_empty());
        let n = xs.len();
        let k = ((p * n as f64).ceil() as usize).clamp(1, n);
        xs[k - 1]
    }

    /// Inverse cumulative demand: the time by which fraction `p` of trips
    /// has departed.
    pub fn demand_time_at(&self, p: f64) -> f64 {
        Self::quantile(&self.depart_s, p)
    }

    /// Inverse cumulative evacuation: the time by which fraction `p` of
    /// trips has finished (fractions of the full demand).
    pub fn finished_time_at(&self, p: f64) -> f64 {
        Self::quantile(&self.arrive_s, p)
    }

    /// Time series `t_s,demand_frac,finished_frac` at 1 s resolution.
    pub fn to_csv(&self) -> String {
        let n = self.depart_s.len() as f64;
        let t_end = self
            .arrive_s
            .last()
            .copied()
            .unwrap_or(0.0)
            .max(self.depart_s.last().copied().unwrap_or(0.0))
            .ceil() as u64;
        let mut out = String::from("t_s,demand_frac,finished_frac\n");
        let mut di = 0;
        let mut ai = 0;
        for t in 0..=t_end {
            while di < self.depart_s.len() && self.depart_s[di] <= t as f64 {
                di += 1;
            }
            while ai < self.arrive_s.len() && self.arrive_s[ai] <= t as f64 {
                ai += 1;
            }
            writeln!(out, "{},{:.6},{:.6}", t, di as f64 / n, ai as f64 / n).unwrap();
        }
        out
    }
}

/// Builds the curve pair from the demand set and the per-trip records;
/// stranded trips are excluded from the finished curve and counted.
pub fn build_curves(demand: &DemandSet, trips: &[TripRecord]) -> Result<EvacCurve, MetricsError> {
    if demand.trips.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut depart_s: Vec<f64> = demand.trips.iter().map(|t| t.depart_s).collect();
    depart_s.sort_by(f64::total_cmp);
    let mut arrive_s: Vec<f64> = trips.iter().filter_map(|t| t.arrive_s).collect();
    arrive_s.sort_by(f64::total_cmp);
    let stranded = trips.iter().filter(|t| t.arrive_s.is_none()).count();
    Ok(EvacCurve { depart_s, arrive_s, stranded })
}

/// Gap area in hours at the default 0.1% grid.
pub fn gap_area(curve: &EvacCurve) -> Result<f64, MetricsError> {
    gap_area_with_grid(curve, DEFAULT_GRID_FRAC)
}

/// Riemann sum of the time gap between the finished and demand inverse
/// curves over a uniform percentage grid (midpoint evaluation), in hours.
/// Interpretable as the average trip time.
pub fn gap_area_with_grid(curve: &EvacCurve, grid_frac: f64) -> Result<f64, MetricsError> {
    if curve.stranded > 0 {
        return Err(MetricsError::Stranded { stranded: curve.stranded });
    }
    if curve.total() == 0 {
        return Err(MetricsError::Empty);
    }
    let n = (1.0 / grid_frac).round() as usize;
    let mut sum_s = 0.0;
    for i in 0..n {
        let p = (i as f64 + 0.5) / n as f64;
        sum_s += curve.finished_time_at(p) - curve.demand_time_at(p);
    }
    Ok(sum_s / n as f64 / 3600.0)
}

/// Per-edge, per-time-bin mean speeds over trajectory samples.
#[derive(Debug, Clone)]
pub struct SpeedMap {
    pub bin_s: u64,
    /// (edge id, bin index) -> (mean speed m/s, sample count).
    pub cells: BTreeMap<(String, u64), (f64, u64)>,
}

impl SpeedMap {
    /// CSV `edge,bin_start_s,mean_speed_mps,samples`, sorted by edge then bin.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("edge,bin_start_s,mean_speed_mps,samples\n");
        for ((edge, bin), (mean, count)) in &self.cells {
            writeln!(out, "{},{},{:.3},{}", edge, bin * self.bin_s, mean, count).unwrap();
        }
        out
    }

    pub fn cell(&self, edge: &str, bin: u64) -> Option<(f64, u64)> {
        self.cells.get(&(edge.to_string(), bin)).copied()
    }
}

/// Aggregates each trajectory sample into its (edge, floor(t/bin)) cell.
pub fn build_speed_map(
    samples: &[TrajectorySample],
    net: &RoadNetwork,
    bin_s: u64,
) -> Result<SpeedMap, MetricsError> {
    let mut acc: BTreeMap<(String, u64), (f64, u64)> = BTreeMap::new();
    for s in samples {
        if net.edge_index(&s.edge).is_none() {
            return Err(MetricsError::UnknownEdge(s.edge.clone()));
        }
        let bin = (s.t_s / bin_s as f64).floor() as u64;
        let cell = acc.entry((s.edge.clone(), bin)).or_insert((0.0, 0));
        cell.0 += s.speed_mps;
        cell.1 += 1;
    }
    let cells = acc
        .into_iter()
        .map(|(k, (sum, count))| (k, (sum / count as f64, count)))
        .collect();
    Ok(SpeedMap { bin_s, cells })
}

/// One comparison row: gap area plus the times by which 50/90/95% of the
/// demand has evacuated.
#[derive(Debug, Clone)]
pub struct ScenarioSummary {
    pub scenario: String,
    pub gap_area_h: f64,
    pub t50_s: f64,
    pub t90_s: f64,
    pub t95_s: f64,
}

pub fn summarize_scenarios(
    scenarios: &[(String, &EvacCurve)],
) -> Result<Vec<ScenarioSummary>, MetricsError> {
    scenarios
        .iter()
        .map(|(id, curve)| {
            Ok(ScenarioSummary {
                scenario: id.clone(),
                gap_area_h: gap_area(curve)?,
                t50_s: curve.finished_time_at(0.5),
                t90_s: curve.finished_time_at(0.9),
                t95_s: curve.finished_time_at(0.95),
            })
        })
        .collect()
}

/// CSV `scenario,gap_area_h,t50_s,t90_s,t95_s`.
pub fn comparison_csv(rows: &[ScenarioSummary]) -> String {
    let mut out = String::from("scenario,gap_area_h,t50_s,t90_s,t95_s\n");
    for r in rows {
        writeln!(
            out,
            "{},{:.6},{:.1},{:.1},{:.1}",
            r.scenario, r.gap_area_h, r.t50_s, r.t90_s, r.t95_s
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::{DemandSet, Provenance, RoutingMode, Trip};
    use crate::engine::{TripRecord, TripStatus};
    use crate::network::Destination;

    fn demand_with_departs(departs: &[f64]) -> DemandSet {
        DemandSet {
            trips: departs
                .iter()
                .enumerate()
                .map(|(i, &d)| Trip {
                    vehicle_id: format!("v{i}"),
                    depart_s: d,
                    origin_edge: "e".into(),
                    origin_pos_m: 0.0,
                    destination: Destination::Edge("e".into()),
                    routing_mode: RoutingMode::FixedShortest,
                })
                .collect(),
            seed: 0,
            provenance: Provenance::default(),
        }
    }

    fn records(arrivals: &[Option<f64>]) -> Vec<TripRecord> {
        arrivals
            .iter()
            .enumerate()
            .map(|(i, &a)| TripRecord {
                vehicle_id: format!("v{i}"),
                depart_s: 0.0,
                arrive_s: a,
                status: if a.is_some() { TripStatus::Arrived } else { TripStatus::Stranded },
            })
            .collect()
    }

    /// Synthetic curve with continuous (piecewise-linear) inverses, built by
    /// dense sampling so grid tests behave like the analytic case.
    fn linear_curve(d0: f64, d1: f64, f0: f64, f1: f64, n: usize) -> EvacCurve {
        let departs: Vec<f64> =
            (0..n).map(|i| d0 + (d1 - d0) * (i as f64 + 0.5) / n as f64).collect();
        let arrives: Vec<Option<f64>> =
            (0..n).map(|i| Some(f0 + (f1 - f0) * (i as f64 + 0.5) / n as f64)).collect();
        build_curves(&demand_with_departs(&departs), &records(&arrives)).unwrap()
    }

    #[test]
    fn curve_hits_full_fraction_at_last_event() {
        let demand = demand_with_departs(&[0.0, 100.0]);
        let curve = build_curves(&demand, &records(&[Some(50.0), Some(150.0)])).unwrap();
        assert_eq!(curve.demand_time_at(1.0), 100.0);
        assert_eq!(curve.finished_time_at(1.0), 150.0);
        assert_eq!(curve.demand_time_at(0.5), 0.0);
    }

    #[test]
    fn all_stranded_flagged() {
        let demand = demand_with_departs(&[0.0, 1.0]);
        let curve = build_curves(&demand, &records(&[None, None])).unwrap();
        assert_eq!(curve.finished(), 0);
        assert_eq!(curve.stranded, 2);
        assert!(matches!(gap_area(&curve), Err(MetricsError::Stranded { stranded: 2 })));
    }

    #[test]
    fn curve_matches_counting_oracle_at_grid_points() {
        // Independent sort-and-count oracle over a 1000-trip fixture.
        let departs: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 3600) as f64).collect();
        let arrives: Vec<Option<f64>> =
            departs.iter().map(|d| Some(d + 120.0 + (d % 97.0))).collect();
        let curve = build_curves(&demand_with_departs(&departs), &records(&arrives)).unwrap();
        let mut sorted = departs.clone();
        sorted.sort_by(f64::total_cmp);
        for i in 1..=20 {
            let p = i as f64 / 20.0;
            let t = curve.demand_time_at(p);
            // Counting oracle: the number of departures at or before t must
            // reach p, and the previous event must not.
            let count = sorted.iter().filter(|&&x| x <= t).count();
            assert!(count as f64 / 1000.0 >= p - 1e-12);
            let k = ((p * 1000.0).ceil() as usize).clamp(1, 1000);
            assert_eq!(t, sorted[k - 1]);
        }
    }

    #[test]
    fn gap_area_zero_iff_identical() {
        let departs: Vec<f64> = (0..100).map(|i| i as f64 * 10.0).collect();
        let arrives: Vec<Option<f64>> = departs.iter().map(|&d| Some(d)).collect();
        let curve = build_curves(&demand_with_departs(&departs), &records(&arrives)).unwrap();
        assert_eq!(gap_area(&curve).unwrap(), 0.0);
    }

    #[test]
    fn constant_shift_yields_shift() {
        // finished = demand + 0.36 h everywhere -> gap area 0.36 h exactly.
        let departs: Vec<f64> = (0..500).map(|i| (i * i % 7200) as f64).collect();
        let arrives: Vec<Option<f64>> = departs.iter().map(|&d| Some(d + 0.36 * 3600.0)).collect();
        let curve = build_curves(&demand_with_departs(&departs), &records(&arrives)).unwrap();
        let g = gap_area(&curve).unwrap();
        assert!((g - 0.36).abs() < 1e-12, "gap {g}");
    }

    #[test]
    fn piecewise_linear_matches_trapezoid_oracle() {
        // demand: linear 0 -> 1 over [0, 1] h; finished: linear over [0.5, 2] h.
        let n = 200_000;
        let curve = linear_curve(0.0, 3600.0, 1800.0, 7200.0, n);
        let got = gap_area(&curve).unwrap();
        // Trapezoid oracle over the same inverse functions at the same grid.
        let grid = 1000;
        let mut oracle_s = 0.0;
        for i in 0..grid {
            let p0 = i as f64 / grid as f64;
            let p1 = (i + 1) as f64 / grid as f64;
            let f = |p: f64| {
                if p == 0.0 {
                    (1800.0f64, 0.0f64)
                } else {
                    (curve.finished_time_at(p), curve.demand_time_at(p))
                }
            };
            let (fa, da) = f(p0);
            let (fb, db) = f(p1);
            oracle_s += 0.5 * ((fa - da) + (fb - db)) * (p1 - p0);
        }
        let oracle_h = oracle_s / 3600.0;
        assert!(
            (got - oracle_h).abs() < 1e-6 + 2.0 * (3600.0 / n as f64) / 3600.0,
            "gap {got} vs oracle {oracle_h}"
        );
        // Analytic value: mean of (finished - demand) = 0.5 + 0.5*E[p] = 0.75 h.
        assert!((got - 0.75).abs() < 1e-3, "gap {got}");
    }

    #[test]
    fn grid_refinement_is_stable() {
        let curve = linear_curve(0.0, 3600.0, 1800.0, 7200.0, 100_000);
        let coarse = gap_area_with_grid(&curve, 0.01).unwrap();
        let fine = gap_area_with_grid(&curve, 0.001).unwrap();
        assert!((coarse - fine).abs() / fine < 0.01, "coarse {coarse} fine {fine}");
    }

    #[test]
    fn speed_map_cells() {
        let net = crate::synth::corridor(1, 100.0, 1);
        let mk = |t: f64, edge: &str, speed: f64| TrajectorySample {
            t_s: t,
            vehicle_id: "v".into(),
            edge: edge.into(),
            lane: 0,
            pos_m: 0.0,
            speed_mps: speed,
        };
        let samples = vec![mk(10.0, "art_0", 10.0), mk(11.0, "art_0", 20.0), mk(1900.0, "art_0", 5.0)];
        let map = build_speed_map(&samples, &net, 1800).unwrap();
        assert_eq!(map.cell("art_0", 0), Some((15.0, 2)));
        assert_eq!(map.cell("art_0", 1), Some((5.0, 1)));
        assert_eq!(map.cell("exit", 0), None);
        let empty = build_speed_map(&[], &net, 1800).unwrap();
        assert!(empty.cells.is_empty());
        assert!(build_speed_map(&[mk(0.0, "nope", 1.0)], &net, 1800).is_err());

        // Group-by oracle on a mixed fixture.
        let mixed: Vec<TrajectorySample> = (0..100)
            .map(|i| mk(i as f64 * 37.0, if i % 2 == 0 { "art_0" } else { "exit" }, (i % 13) as f64))
            .collect();
        let map = build_speed_map(&mixed, &net, 1800).unwrap();
        for ((edge, bin), (mean, count)) in &map.cells {
            let group: Vec<f64> = mixed
                .iter()
                .filter(|s| &s.edge == edge && (s.t_s / 1800.0).floor() as u64 == *bin)
                .map(|s| s.speed_mps)
                .collect();
            assert_eq!(*count as usize, group.len());
            let oracle = group.iter().sum::<f64>() / group.len() as f64;
            assert!((mean - oracle).abs() < 1e-12);
            let lo = group.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = group.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(*mean >= lo && *mean <= hi);
        }
    }

    #[test]
    fn summary_rows_consistent() {
        let departs: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let arrives: Vec<Option<f64>> = departs.iter().map(|&d| Some(d + 600.0)).collect();
        let curve = build_curves(&demand_with_departs(&departs), &records(&arrives)).unwrap();
        let rows = summarize_scenarios(&[("a".into(), &curve), ("b".into(), &curve)]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].gap_area_h, gap_area(&curve).unwrap());
        assert_eq!(rows[0].t50_s, rows[1].t50_s);
        assert_eq!(rows[0].t95_s, curve.finished_time_at(0.95));
    }
}
