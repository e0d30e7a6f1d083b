use evacsim::demand::{generate_demand, GammaTemporal, RoutingMode, SpatialAllocation};
use evacsim::engine::{run, ClosureEvent, SimConfig};
use evacsim::metrics::{build_curves, gap_area};
use evacsim::network::Destination;
use evacsim::policy::apply_policy;
use evacsim::synth::{city_contraflow_script, four_corridor_city, CityParams};

fn main() {
    let p = CityParams {
        res_per_collector: [30, 18, 8, 16],
        phase_art_s: 12,
        phase_col_s: 18,
        ..Default::default()
    };
    let net = four_corridor_city(&p);
    let (cf, _) = apply_policy(&net, &city_contraflow_script(&p)).unwrap();
    let dest = Destination::Taz("exits".into());
    let mut cfg = SimConfig::default();
    cfg.record_trajectories = false;
    cfg.max_time_s = 15.0 * 3600.0;

    let run_one = |use_net: &evacsim::network::RoadNetwork, mode, std_h: f64, portion: f64, closures: &[ClosureEvent]| {
        let alloc = SpatialAllocation { portion, ..Default::default() };
        let temporal = GammaTemporal::new(1.5, std_h).unwrap();
        let demand = generate_demand(use_net, &alloc, &temporal, &dest, mode, 42).unwrap();
        let out = run(use_net, &demand, closures, cfg).unwrap();
        let curve = build_curves(&demand, &out.trips).unwrap();
        let gap = gap_area(&curve).map(|g| format!("{g:.4}")).unwrap_or_else(|e| format!("ERR {e}"));
        println!(
            "  std {std_h:4} portion {portion:4}: gap {gap} completion {:6}s teleports {:4} stranded {} n={}",
            out.summary.last().map_or(0, |r| r.t_s),
            out.teleport_total,
            out.stranded_total,
            demand.trips.len(),
        );
    };

    println!("7a baseline fixed / dynamic / contraflow @ std 0.25:");
    run_one(&net, RoutingMode::FixedShortest, 0.25, 1.0, &[]);
    run_one(&net, RoutingMode::Dynamic, 0.25, 1.0, &[]);
    run_one(&cf, RoutingMode::Dynamic, 0.25, 1.0, &[]);

    println!("7b contraflow std sweep @ portion 1.0:");
    for std in [0.2, 0.4, 0.7] {
        run_one(&cf, RoutingMode::Dynamic, std, 1.0, &[]);
    }

    println!("7c contraflow portion sweep @ std 0.2 (saturated?):");
    for portion in [1.0, 0.95, 0.9, 0.5] {
        run_one(&cf, RoutingMode::Dynamic, 0.2, portion, &[]);
    }
    println!("7c contraflow portion sweep @ std 0.7 (non-saturated?):");
    for portion in [1.0, 0.95, 0.9, 0.5] {
        run_one(&cf, RoutingMode::Dynamic, 0.7, portion, &[]);
    }

    println!("7d contraflow closure of exit_n at varying times @ std 0.25:");
    for start in [0.0f64, 1800.0, 3600.0, 5400.0, 7200.0] {
        let closures = vec![ClosureEvent { edge: "exit_n".into(), start_s: start, end_s: 1e9 }];
        run_one(&cf, RoutingMode::Dynamic, 0.25, 1.0, &closures);
    }
}
