//! evacsim command-line pipeline: validate, generate, apply-policy, run,
//! analyze, batch, fit-pp, simulate-pp.
//!
//! Exit codes: 0 success / clean report, 1 findings or domain failures,
//! 2 parse, i/o, or usage errors. Set EVACSIM_LOG for log level.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use evacsim::demand::pointprocess::{
    events_from_csv, events_to_csv, pp_fit, pp_simulate, FitFamily, PointProcessModel,
};
use evacsim::demand::{generate_demand, GammaTemporal, RoutingMode, SpatialAllocation};
use evacsim::metrics;
use evacsim::network::{parse_network, serialize_network, validate_network};
use evacsim::policy::{apply_policy, parse_policy_script};
use evacsim::scenario::{
    analyze_run_dir, run_batch, run_scenario, BatchSpec, ScenarioSpec,
};
use evacsim::svg;

#[derive(Parser)]
#[command(name = "evacsim", version, about = "Microscopic evacuation-traffic simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a network file and run the map-repair checks.
    Validate {
        #[arg(long)]
        network: PathBuf,
    },
    /// Generate a demand CSV from density and Gamma departure parameters.
    Generate(GenerateArgs),
    /// Apply a policy script to a network and write the transformed network.
    ApplyPolicy {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one scenario file; outputs land in --out.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Analyze one or more finished run directories.
    Analyze {
        /// Run directories (each from `evacsim run`).
        dirs: Vec<PathBuf>,
        /// Speed-map bin width in seconds.
        #[arg(long, default_value_t = 1800)]
        bin_s: u64,
        /// Also write SVG plots (curves; speed map at --svg-bin).
        #[arg(long)]
        svg: bool,
        #[arg(long, default_value_t = 0)]
        svg_bin: u64,
    },
    /// Expand a batch spec and run every scenario.
    Batch {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Fit a point-process model to an event CSV (t_s,block).
    FitPp(FitPpArgs),
    /// Simulate a point-process model to an event CSV.
    SimulatePp {
        /// Model JSON (kind, parameters, blocks, window).
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Destination TAZ (or edge) id.
    #[arg(long)]
    destination: String,
    #[arg(long, default_value = "dynamic")]
    routing: String,
    #[arg(long, default_value_t = 0.0417)]
    density: f64,
    #[arg(long, default_value_t = 4.0)]
    parking_ratio: f64,
    #[arg(long, default_value_t = 1.0)]
    portion: f64,
    #[arg(long, default_value_t = 3.0)]
    mean_h: f64,
    #[arg(long, default_value_t = 0.7)]
    std_h: f64,
}

#[derive(Args)]
struct FitPpArgs {
    #[arg(long)]
    events: PathBuf,
    /// homogeneous | inhom-poisson | hawkes | multivariate-hawkes
    #[arg(long)]
    family: String,
    #[arg(long, default_value_t = 4)]
    bins: usize,
    #[arg(long, default_value_t = 0.0)]
    t_start: f64,
    #[arg(long)]
    t_end: f64,
    /// Write the fitted model JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<(), String> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| format!("{}: {e}", parent.display()))?;
    }
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("EVACSIM_LOG")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode, String> {
    match cmd {
        Command::Validate { network } => {
            let net = parse_network(&read(&network)?).map_err(|e| e.to_string())?;
            let report = validate_network(&net);
            print!("{report}");
            Ok(if report.is_clean() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Generate(args) => {
            let net = parse_network(&read(&args.network)?).map_err(|e| e.to_string())?;
            let routing = match args.routing.as_str() {
                "dynamic" => RoutingMode::Dynamic,
                "fixed_shortest" => RoutingMode::FixedShortest,
                other => return Err(format!("unknown routing mode '{other}'")),
            };
            let alloc = SpatialAllocation {
                density_residential: args.density,
                parking_ratio: args.parking_ratio,
                portion: args.portion,
                min_count_threshold: 1,
            };
            let temporal =
                GammaTemporal::new(args.mean_h, args.std_h).map_err(|e| e.to_string())?;
            let dest = net.resolve_destination(&args.destination).map_err(|e| e.to_string())?;
            let demand = generate_demand(&net, &alloc, &temporal, &dest, routing, args.seed)
                .map_err(|e| e.to_string())?;
            write(&args.out, &demand.to_csv())?;
            println!("{} trips -> {}", demand.trips.len(), args.out.display());
            for (edge, count) in &demand.provenance.dropped_origins {
                eprintln!("warning: origin {edge} cannot reach destination; dropped {count} trips");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ApplyPolicy { network, policy, out } => {
            let net = parse_network(&read(&network)?).map_err(|e| e.to_string())?;
            let script = parse_policy_script(&read(&policy)?).map_err(|e| e.to_string())?;
            let (applied, report) = apply_policy(&net, &script).map_err(|e| e.to_string())?;
            write(&out, &serialize_network(&applied))?;
            println!(
                "applied {} edits; dropped {} connections; {} closures scheduled",
                script.edits.len(),
                report.dropped_connections.len(),
                report.closures.len()
            );
            for c in &report.dropped_connections {
                println!("dropped: {c}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { scenario, out, seed } => {
            let mut spec = ScenarioSpec::from_file(&scenario).map_err(|e| e.to_string())?;
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let artifacts = run_scenario(&spec, &out).map_err(|e| e.to_string())?;
            let o = &artifacts.outputs;
            let last = o.summary.last();
            println!(
                "finished {} / {} trips; teleports {}; stranded {}; sim time {} s{}",
                last.map_or(0, |r| r.finished),
                artifacts.demand.trips.len(),
                o.teleport_total,
                o.stranded_total,
                last.map_or(0, |r| r.t_s),
                if o.incomplete { " (incomplete: max_time reached)" } else { "" }
            );
            Ok(if o.incomplete { ExitCode::from(1) } else { ExitCode::SUCCESS })
        }
        Command::Analyze { dirs, bin_s, svg: want_svg, svg_bin } => {
            if dirs.is_empty() {
                return Err("analyze needs at least one run directory".into());
            }
            let mut rows = Vec::new();
            let mut curves = Vec::new();
            for dir in &dirs {
                let analysis = analyze_run_dir(dir, bin_s).map_err(|e| e.to_string())?;
                let name = dir
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| dir.display().to_string());
                match analysis.gap_area_h {
                    Some(g) => println!("{name}: gap area {g:.4} h"),
                    None => println!(
                        "{name}: gap area undefined ({} stranded vehicles)",
                        analysis.stranded
                    ),
                }
                if want_svg {
                    if let Some(map) = &analysis.speed_map {
                        let net = parse_network(&read(&dir.join("network_used.json"))?)
                            .map_err(|e| e.to_string())?;
                        write(&dir.join("speed_map.svg"), &svg::speed_map_svg(&net, map, svg_bin))?;
                    }
                }
                curves.push((name, analysis));
            }
            let with_gap: Vec<(String, &metrics::EvacCurve)> = curves
                .iter()
                .filter(|(_, a)| a.gap_area_h.is_some())
                .map(|(n, a)| (n.clone(), &a.curve))
                .collect();
            if !with_gap.is_empty() {
                let mut summary =
                    metrics::summarize_scenarios(&with_gap).map_err(|e| e.to_string())?;
                summary.sort_by(|a, b| {
                    a.gap_area_h.total_cmp(&b.gap_area_h).then(a.scenario.cmp(&b.scenario))
                });
                let table = metrics::comparison_csv(&summary);
                print!("{table}");
                if dirs.len() > 1 {
                    write(&dirs[0].join("comparison.csv"), &table)?;
                }
                if want_svg {
                    write(&dirs[0].join("curves.svg"), &svg::curves_svg(&with_gap))?;
                }
            }
            rows.extend(curves.into_iter().map(|(n, _)| n));
            Ok(ExitCode::SUCCESS)
        }
        Command::Batch { spec, out, workers } => {
            let batch = BatchSpec::from_file(&spec).map_err(|e| e.to_string())?;
            let rows = run_batch(&batch, &out, workers).map_err(|e| e.to_string())?;
            print!("{}", metrics::comparison_csv(&rows));
            println!("aggregate -> {}", out.join("aggregate.csv").display());
            Ok(ExitCode::SUCCESS)
        }
        Command::FitPp(args) => {
            let events = events_from_csv(&read(&args.events)?).map_err(|e| e.to_string())?;
            let family = match args.family.as_str() {
                "homogeneous" => FitFamily::Homogeneous,
                "inhom-poisson" => FitFamily::InhomPoisson { bins: args.bins },
                "hawkes" => FitFamily::Hawkes,
                "multivariate-hawkes" => FitFamily::MultivariateHawkes,
                other => return Err(format!("unknown family '{other}'")),
            };
            let fit = pp_fit(&events, family, (args.t_start, args.t_end))
                .map_err(|e| e.to_string())?;
            let model_json =
                serde_json::to_string_pretty(&fit.model).expect("model serializes");
            println!(
                "loglik {:.6}; converged {}; iterations {}",
                fit.loglik, fit.converged, fit.iterations
            );
            println!("{model_json}");
            if let Some(out) = args.out {
                write(&out, &model_json)?;
            }
            Ok(if fit.converged { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::SimulatePp { model, seed, out } => {
            let model: PointProcessModel = serde_json::from_str(&read(&model)?)
                .map_err(|e| format!("model json: {e}"))?;
            let events = pp_simulate(&model, seed).map_err(|e| e.to_string())?;
            write(&out, &events_to_csv(&events))?;
            println!("{} events -> {}", events.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
