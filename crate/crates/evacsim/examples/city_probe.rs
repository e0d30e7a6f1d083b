use evacsim::demand::{generate_demand, GammaTemporal, RoutingMode, SpatialAllocation};
use evacsim::network::{validate_network, Destination};
use evacsim::policy::apply_policy;
use evacsim::synth::{city_contraflow_script, four_corridor_city, CityParams};

fn main() {
    let p = CityParams::default();
    let net = four_corridor_city(&p);
    println!("edges: {}", net.edges.len());
    println!("nodes: {}", net.nodes.len());
    println!("connections: {}", net.connections.len());
    println!("residential km: {:.1}", net.total_length_by_type(evacsim::network::RoadType::Residential) / 1000.0);
    let report = validate_network(&net);
    println!("validation findings: {}", report.findings.len());
    for f in report.findings.iter().take(10) { println!("  {f}"); }

    let script = city_contraflow_script(&p);
    match apply_policy(&net, &script) {
        Ok((cf, rep)) => {
            println!("contraflow applied: {} edits, {} dropped, {} warnings", script.edits.len(), rep.dropped_connections.len(), rep.warnings.len());
            let r2 = validate_network(&cf);
            println!("post-policy findings: {}", r2.findings.len());
            for f in r2.findings.iter().take(12) { println!("  {f}"); }
        }
        Err(e) => println!("POLICY FAILED: {e}"),
    }

    let alloc = SpatialAllocation::default();
    let temporal = GammaTemporal::new(1.5, 0.4).unwrap();
    let d = generate_demand(&net, &alloc, &temporal, &Destination::Taz("exits".into()), RoutingMode::Dynamic, 1).unwrap();
    println!("vehicles: {}", d.trips.len());
    println!("dropped origins: {}", d.provenance.dropped_origins.len());
}
