//! Scenario files and the batch runner: one JSON spec binds a network,
//! optional policy script, demand parameters, closures, and engine config.
//! Batches expand axis sweeps into the sorted cross product and run
//! scenarios in parallel with isolated worlds.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::{
    generate_demand, DemandError, DemandSet, GammaTemporal, RoutingMode, SpatialAllocation,
};
use crate::engine::{self, ClosureEvent, EngineError, SimConfig, SimOutputs};
use crate::metrics::{self, MetricsError, ScenarioSummary};
use crate::network::{parse_network, serialize_network, NetworkError, RoadNetwork};
use crate::policy::{apply_policy, parse_policy_script, PolicyError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario json error: {0}")]
    Json(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Demand(#[from] DemandError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("batch axis '{0}' is not supported")]
    UnknownAxis(String),
    #[error("axis '{0}' requires inline demand parameters")]
    AxisNeedsInlineDemand(String),
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.into(), source })
}

fn write(path: &Path, text: &str) -> Result<(), ScenarioError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|source| ScenarioError::Io { path: parent.into(), source })?;
    }
    fs::write(path, text).map_err(|source| ScenarioError::Io { path: path.into(), source })
}

/// Inline demand parameters: density allocation plus the Gamma temporal model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineDemand {
    #[serde(default = "default_density")]
    pub density_residential: f64,
    #[serde(default = "default_parking_ratio")]
    pub parking_ratio: f64,
    #[serde(default = "default_portion")]
    pub portion: f64,
    #[serde(default = "default_min_count")]
    pub min_count: u32,
    #[serde(default = "default_mean_h")]
    pub mean_h: f64,
    #[serde(default = "default_std_h")]
    pub std_h: f64,
    /// TAZ id (preferred) or edge id.
    pub destination: String,
    pub routing: RoutingMode,
}

fn default_density() -> f64 {
    0.0417
}
fn default_parking_ratio() -> f64 {
    4.0
}
fn default_portion() -> f64 {
    1.0
}
fn default_min_count() -> u32 {
    1
}
fn default_mean_h() -> f64 {
    3.0
}
fn default_std_h() -> f64 {
    0.7
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DemandSpec {
    Csv { csv: PathBuf },
    Inline(InlineDemand),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub network: PathBuf,
    #[serde(default)]
    pub policy: Option<PathBuf>,
    pub demand: DemandSpec,
    #[serde(default)]
    pub closures: Vec<ClosureEvent>,
    #[serde(default)]
    pub sim: SimConfig,
    pub seed: u64,
}

fn default_name() -> String {
    "scenario".into()
}

impl ScenarioSpec {
    pub fn from_file(path: &Path) -> Result<ScenarioSpec, ScenarioError> {
        let mut spec: ScenarioSpec =
            serde_json::from_str(&read(path)?).map_err(|e| ScenarioError::Json(e.to_string()))?;
        // File references resolve relative to the scenario file.
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        spec.network = base.join(&spec.network);
        if let Some(p) = &spec.policy {
            spec.policy = Some(base.join(p));
        }
        if let DemandSpec::Csv { csv } = &spec.demand {
            spec.demand = DemandSpec::Csv { csv: base.join(csv) };
        }
        Ok(spec)
    }
}

/// Everything a finished run leaves behind, for further analysis in-process.
pub struct RunArtifacts {
    pub net: RoadNetwork,
    pub demand: DemandSet,
    pub outputs: SimOutputs,
}

/// Executes one scenario and writes its outputs directory: the network as
/// used (post-policy), the demand CSV, trajectory/summary/trip CSVs, and an
/// effective-config echo for reproducibility.
pub fn run_scenario(spec: &ScenarioSpec, out_dir: &Path) -> Result<RunArtifacts, ScenarioError> {
    let base_net = parse_network(&read(&spec.network)?)?;

    let mut closures = spec.closures.clone();
    let net = match &spec.policy {
        Some(policy_path) => {
            let script = parse_policy_script(&read(policy_path)?)?;
            let (net, report) = apply_policy(&base_net, &script)?;
            closures.extend(report.closures);
            for w in &report.warnings {
                log::warn!("policy: {w}");
            }
            net
        }
        None => base_net,
    };

    let mut demand = match &spec.demand {
        DemandSpec::Csv { csv } => DemandSet::from_csv(&read(csv)?, &net)?,
        DemandSpec::Inline(inline) => {
            let alloc = SpatialAllocation {
                density_residential: inline.density_residential,
                parking_ratio: inline.parking_ratio,
                portion: inline.portion,
                min_count_threshold: inline.min_count,
            };
            let temporal = GammaTemporal::new(inline.mean_h, inline.std_h)?;
            let dest = net.resolve_destination(&inline.destination)?;
            generate_demand(&net, &alloc, &temporal, &dest, inline.routing, spec.seed)?
        }
    };
    demand.seed = spec.seed;

    let outputs = engine::run(&net, &demand, &closures, spec.sim)?;

    write(&out_dir.join("network_used.json"), &serialize_network(&net))?;
    write(&out_dir.join("demand.csv"), &demand.to_csv())?;
    if spec.sim.record_trajectories {
        write(&out_dir.join("trajectories.csv"), &outputs.trajectory_csv())?;
    }
    write(&out_dir.join("summary.csv"), &outputs.summary_csv())?;
    write(&out_dir.join("trips.csv"), &outputs.trips_csv())?;
    let effective = serde_json::json!({
        "name": spec.name,
        "network": spec.network,
        "policy": spec.policy,
        "seed": spec.seed,
        "closures": closures,
        "sim": spec.sim,
    });
    write(
        &out_dir.join("effective_config.json"),
        &serde_json::to_string_pretty(&effective).expect("config serializes"),
    )?;
    Ok(RunArtifacts { net, demand, outputs })
}

/// Analysis over a finished run directory: curves CSV, gap area, and the
/// speed-map CSV when trajectories were recorded.
pub struct RunAnalysis {
    pub curve: metrics::EvacCurve,
    pub gap_area_h: Option<f64>,
    pub stranded: usize,
    pub speed_map: Option<metrics::SpeedMap>,
}

pub fn analyze_run_dir(dir: &Path, bin_s: u64) -> Result<RunAnalysis, ScenarioError> {
    let net = parse_network(&read(&dir.join("network_used.json"))?)?;
    let demand = DemandSet::from_csv(&read(&dir.join("demand.csv"))?, &net)?;
    let trips = engine::trips_from_csv(&read(&dir.join("trips.csv"))?)
        .map_err(|e| ScenarioError::Json(e.to_string()))?;
    let curve = metrics::build_curves(&demand, &trips)?;
    let gap = match metrics::gap_area(&curve) {
        Ok(g) => Some(g),
        Err(MetricsError::Stranded { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let traj_path = dir.join("trajectories.csv");
    let speed_map = if traj_path.exists() {
        let samples = engine::trajectories_from_csv(&read(&traj_path)?)
            .map_err(|e| ScenarioError::Json(e.to_string()))?;
        Some(metrics::build_speed_map(&samples, &net, bin_s)?)
    } else {
        None
    };
    write(&dir.join("curves.csv"), &curve.to_csv())?;
    if let Some(map) = &speed_map {
        write(&dir.join("speed_map.csv"), &map.to_csv())?;
    }
    Ok(RunAnalysis { stranded: curve.stranded, gap_area_h: gap, curve, speed_map })
}

/// An axis sweep over a base scenario. Supported axes: `std_h`, `mean_h`,
/// `portion`, `density_residential`, `closure_start_s`, `seed`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSpec {
    pub base: ScenarioSpec,
    pub axes: std::collections::BTreeMap<String, Vec<serde_json::Value>>,
}

impl BatchSpec {
    pub fn from_file(path: &Path) -> Result<BatchSpec, ScenarioError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            base: serde_json::Value,
            axes: std::collections::BTreeMap<String, Vec<serde_json::Value>>,
        }
        let raw: Raw =
            serde_json::from_str(&read(path)?).map_err(|e| ScenarioError::Json(e.to_string()))?;
        let mut base: ScenarioSpec =
            serde_json::from_value(raw.base).map_err(|e| ScenarioError::Json(e.to_string()))?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        base.network = dir.join(&base.network);
        if let Some(p) = &base.policy {
            base.policy = Some(dir.join(p));
        }
        if let DemandSpec::Csv { csv } = &base.demand {
            base.demand = DemandSpec::Csv { csv: dir.join(csv) };
        }
        Ok(BatchSpec { base, axes: raw.axes })
    }
}

fn inline_demand<'a>(
    spec: &'a mut ScenarioSpec,
    axis: &str,
) -> Result<&'a mut InlineDemand, ScenarioError> {
    match &mut spec.demand {
        DemandSpec::Inline(d) => Ok(d),
        DemandSpec::Csv { .. } => Err(ScenarioError::AxisNeedsInlineDemand(axis.to_string())),
    }
}

fn apply_axis(spec: &mut ScenarioSpec, axis: &str, value: &serde_json::Value) -> Result<(), ScenarioError> {
    let as_f64 = || value.as_f64().ok_or_else(|| ScenarioError::Json(format!("axis {axis}: not a number")));
    match axis {
        "std_h" => inline_demand(spec, axis)?.std_h = as_f64()?,
        "mean_h" => inline_demand(spec, axis)?.mean_h = as_f64()?,
        "portion" => inline_demand(spec, axis)?.portion = as_f64()?,
        "density_residential" => inline_demand(spec, axis)?.density_residential = as_f64()?,
        "closure_start_s" => {
            let start = as_f64()?;
            for c in &mut spec.closures {
                let dur = c.end_s - c.start_s;
                c.start_s = start;
                c.end_s = start + dur;
            }
        }
        "seed" => {
            spec.seed =
                value.as_u64().ok_or_else(|| ScenarioError::Json("seed axis: not an integer".into()))?
        }
        other => return Err(ScenarioError::UnknownAxis(other.to_string())),
    }
    Ok(())
}

fn value_label(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::Number(n) => n.to_string(),
        other => other.to_string().trim_matches('"').to_string(),
    }
}

/// Expands the sorted cross product of all axes into named scenarios.
/// Axis names iterate in sorted (BTreeMap) order; values in listed order.
pub fn expand_batch(batch: &BatchSpec) -> Result<Vec<(String, ScenarioSpec)>, ScenarioError> {
    let mut expanded: Vec<(String, ScenarioSpec)> = vec![(String::new(), batch.base.clone())];
    for (axis, values) in &batch.axes {
        let mut next = Vec::with_capacity(expanded.len() * values.len());
        for (label, spec) in &expanded {
            for v in values {
                let mut s = spec.clone();
                apply_axis(&mut s, axis, v)?;
                let part = format!("{axis}={}", value_label(v));
                let name = if label.is_empty() { part } else { format!("{label}_{part}") };
                next.push((name, s));
            }
        }
        expanded = next;
    }
    for (label, spec) in &mut expanded {
        if label.is_empty() {
            *label = spec.name.clone();
        }
        spec.name = label.clone();
    }
    Ok(expanded)
}

/// Runs every expanded scenario (in parallel up to `workers`), each into
/// `out_dir/<scenario name>/`, then assembles the aggregate comparison
/// table sorted by scenario name.
pub fn run_batch(
    batch: &BatchSpec,
    out_dir: &Path,
    workers: usize,
) -> Result<Vec<ScenarioSummary>, ScenarioError> {
    let expanded = expand_batch(batch)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("worker pool");
    let results: Vec<Result<(String, ScenarioSummary), ScenarioError>> = pool.install(|| {
        expanded
            .par_iter()
            .map(|(name, spec)| {
                let dir = out_dir.join(name);
                let artifacts = run_scenario(spec, &dir)?;
                let curve = metrics::build_curves(&artifacts.demand, &artifacts.outputs.trips)?;
                let mut rows = metrics::summarize_scenarios(&[(name.clone(), &curve)])?;
                Ok((name.clone(), rows.remove(0)))
            })
            .collect()
    });
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        rows.push(r?.1);
    }
    rows.sort_by(|a, b| a.scenario.cmp(&b.scenario));
    write(&out_dir.join("aggregate.csv"), &metrics::comparison_csv(&rows))?;
    Ok(rows)
}
