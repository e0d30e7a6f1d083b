//! Microscopic evacuation-traffic simulator and analysis toolkit.
//!
//! The pipeline: parse and validate a road network, generate evacuation
//! demand (Gamma departures or point-process models), optionally transform
//! the network with a contraflow policy script, run the 1 s time-step
//! microscopic engine, and evaluate the outputs (evacuation curves, gap
//! area, speed maps).

pub mod demand;
pub mod engine;
pub mod metrics;
pub mod network;
pub mod policy;
pub mod routing;
pub mod scenario;
pub mod svg;
pub mod synth;

pub use network::{parse_network, serialize_network, validate_network, RoadNetwork};
