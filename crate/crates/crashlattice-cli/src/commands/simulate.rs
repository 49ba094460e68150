//! simulate: scenario file -> synthetic dataset bundle (same layout as
//! ingest output, plus the generative truth).

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;

use crashlattice::sim::{simulate_dataset, SimScenario};

use crate::bundle::{sha256_file, write_bundle, write_json};
use crate::config::load_scenario;
use crate::error::CliError;
use crate::geojson;

pub struct SimulateArgs {
    pub scenario: PathBuf,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct TruthFile {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    tau_theta: f64,
    tau_eps: f64,
    tau_u: f64,
    tau_phi: f64,
    theta: Vec<f64>,
    x: Vec<f64>,
    phi: Vec<f64>,
}

#[derive(Serialize)]
struct SimulateManifest {
    command: &'static str,
    input_hashes: BTreeMap<String, String>,
    scenario: SimScenario,
}

pub fn run(args: &SimulateArgs) -> Result<(), CliError> {
    let scenario = load_scenario(&args.scenario)?;
    let (data, truth) = simulate_dataset(&scenario)?;
    let network = scenario.build_network()?;

    std::fs::create_dir_all(&args.out)?;
    let segment_ids: Vec<String> =
        network.segments().iter().map(|s| s.id.clone()).collect();
    let lengths: Vec<f64> = network.segments().iter().map(|s| s.length_m).collect();
    let edges: Vec<(usize, usize)> = network.edges().collect();
    write_bundle(&args.out, &segment_ids, &lengths, &data, &edges)?;

    let gj = geojson::network_to_geojson(network.segments(), Some(&data.w));
    write_json(&args.out.join("network.geojson"), &gj)?;

    write_json(
        &args.out.join("truth.json"),
        &TruthFile {
            beta: truth.beta.clone(),
            alpha: truth.alpha.clone(),
            tau_theta: truth.tau_theta,
            tau_eps: truth.tau_eps,
            tau_u: truth.tau_u,
            tau_phi: truth.tau_phi,
            theta: truth.theta.clone(),
            x: truth.x.clone(),
            phi: truth.phi.clone(),
        },
    )?;

    let mut input_hashes = BTreeMap::new();
    input_hashes.insert("scenario".to_string(), sha256_file(&args.scenario)?);
    write_json(
        &args.out.join("manifest.json"),
        &SimulateManifest {
            command: "simulate",
            input_hashes,
            scenario,
        },
    )?;

    println!(
        "simulated {} sites, total events {}",
        data.len(),
        data.y.iter().sum::<u64>()
    );
    Ok(())
}
