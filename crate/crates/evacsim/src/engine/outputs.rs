//! Simulation outputs: the per-step trajectory log (floating-car-data
//! analogue), the per-step summary series, and per-trip records.

use std::fmt::Write;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OutputParseError {
    #[error("output csv error: {0}")]
    Csv(String),
}

#[derive(Debug, Clone)]
pub struct TrajectorySample {
    pub t_s: f64,
    pub vehicle_id: String,
    pub edge: String,
    pub lane: usize,
    pub pos_m: f64,
    pub speed_mps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SummaryRow {
    pub t_s: u64,
    /// Trips whose departure time has been reached (cumulative).
    pub loaded: u64,
    /// Vehicles inserted into the network (cumulative).
    pub inserted: u64,
    /// Currently in the network, including teleporting vehicles.
    pub running: u64,
    /// Arrived trips (cumulative).
    pub finished: u64,
    /// Teleport events (cumulative).
    pub teleports: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripStatus {
    Arrived,
    Stranded,
}

impl TripStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TripStatus::Arrived => "arrived",
            TripStatus::Stranded => "stranded",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TripRecord {
    pub vehicle_id: String,
    pub depart_s: f64,
    pub arrive_s: Option<f64>,
    pub status: TripStatus,
}

#[derive(Debug, Clone, Default)]
pub struct SimOutputs {
    pub trajectories: Vec<TrajectorySample>,
    pub summary: Vec<SummaryRow>,
    pub trips: Vec<TripRecord>,
    /// Max simulation time was reached with vehicles still unfinished.
    pub incomplete: bool,
    pub teleport_total: u64,
    pub stranded_total: u64,
}

impl SimOutputs {
    /// CSV `t_s,vehicle_id,edge,lane,pos_m,speed_mps`.
    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("t_s,vehicle_id,edge,lane,pos_m,speed_mps\n");
        for s in &self.trajectories {
            writeln!(
                out,
                "{},{},{},{},{:.2},{:.2}",
                s.t_s, s.vehicle_id, s.edge, s.lane, s.pos_m, s.speed_mps
            )
            .unwrap();
        }
        out
    }

    /// CSV `t_s,loaded,inserted,running,finished,teleports`.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("t_s,loaded,inserted,running,finished,teleports\n");
        for r in &self.summary {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.t_s, r.loaded, r.inserted, r.running, r.finished, r.teleports
            )
            .unwrap();
        }
        out
    }

    /// CSV `vehicle_id,depart_s,arrive_s,status`; stranded trips have an
    /// empty arrive_s.
    pub fn trips_csv(&self) -> String {
        let mut out = String::from("vehicle_id,depart_s,arrive_s,status\n");
        for t in &self.trips {
            match t.arrive_s {
                Some(a) => {
                    writeln!(out, "{},{:.3},{:.3},{}", t.vehicle_id, t.depart_s, a, t.status.as_str())
                        .unwrap()
                }
                None => writeln!(out, "{},{:.3},,{}", t.vehicle_id, t.depart_s, t.status.as_str())
                    .unwrap(),
            }
        }
        out
    }
}

/// Parses a trip-record CSV produced by [`SimOutputs::trips_csv`].
pub fn trips_from_csv(text: &str) -> Result<Vec<TripRecord>, OutputParseError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| OutputParseError::Csv(e.to_string()))?;
        let get = |k: usize| rec.get(k).unwrap_or("");
        let depart_s: f64 = get(1)
            .parse()
            .map_err(|e| OutputParseError::Csv(format!("row {}: {e}", i + 2)))?;
        let arrive_s = match get(2) {
            "" => None,
            s => Some(
                s.parse::<f64>()
                    .map_err(|e| OutputParseError::Csv(format!("row {}: {e}", i + 2)))?,
            ),
        };
        let status = match get(3) {
            "arrived" => TripStatus::Arrived,
            "stranded" => TripStatus::Stranded,
            other => {
                return Err(OutputParseError::Csv(format!("row {}: bad status '{other}'", i + 2)))
            }
        };
        out.push(TripRecord { vehicle_id: get(0).to_string(), depart_s, arrive_s, status });
    }
    Ok(out)
}

/// Parses a trajectory CSV produced by [`SimOutputs::trajectory_csv`].
pub fn trajectories_from_csv(text: &str) -> Result<Vec<TrajectorySample>, OutputParseError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| OutputParseError::Csv(e.to_string()))?;
        let err = |e: String| OutputParseError::Csv(format!("row {}: {e}", i + 2));
        let get = |k: usize| rec.get(k).unwrap_or("");
        out.push(TrajectorySample {
            t_s: get(0).parse().map_err(|e: std::num::ParseFloatError| err(e.to_string()))?,
            vehicle_id: get(1).to_string(),
            edge: get(2).to_string(),
            lane: get(3).parse().map_err(|e: std::num::ParseIntError| err(e.to_string()))?,
            pos_m: get(4).parse().map_err(|e: std::num::ParseFloatError| err(e.to_string()))?,
            speed_mps: get(5).parse().map_err(|e: std::num::ParseFloatError| err(e.to_string()))?,
        });
    }
    Ok(out)
}
