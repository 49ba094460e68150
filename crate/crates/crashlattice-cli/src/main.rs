//! Command-line pipeline for Bayesian crash-rate models on road-network
//! lattices: ingest GeoJSON layers, simulate synthetic lattices, fit the
//! baseline / classical-ME / spatial-ME hierarchies, compare fits via
//! DIC and WAIC, run prior-sensitivity sweeps, and export choropleth
//! layers.

mod bundle;
mod commands;
mod config;
mod error;
mod geojson;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::{compare, export, fit, ingest, sensitivity, simulate};
use config::PrunePolicyArg;
use error::CliError;

#[derive(Parser)]
#[command(
    name = "crashlattice",
    version,
    about = "Hierarchical Poisson models for event counts on road-network lattices with measurement-error correction"
)]
struct Cli {
    /// Worker threads for chain-level parallelism (default: all cores).
    #[arg(long, global = true, env = "CRASHLATTICE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a dataset bundle from GeoJSON layers.
    Ingest(IngestCli),
    /// Draw a synthetic dataset bundle from a scenario file.
    Simulate(SimulateCli),
    /// Fit a model: MAP initialisation, MCMC, summaries.
    Fit(FitCli),
    /// Compare fitted models by DIC and WAIC.
    Compare(CompareCli),
    /// Refit under alternative priors, one substitution at a time.
    Sensitivity(SensitivityCli),
    /// Join fitted rates onto network geometry as GeoJSON.
    Export(ExportCli),
}

#[derive(Args)]
struct IngestCli {
    /// Segment layer: LineString features with id, frc, speed_kmh and
    /// the traffic proxy.
    #[arg(long)]
    network: PathBuf,
    /// Event layer: Point features.
    #[arg(long)]
    events: PathBuf,
    /// Covariate polygons with numeric properties.
    #[arg(long)]
    polygons: PathBuf,
    /// Bundle output directory.
    #[arg(long)]
    out: PathBuf,
    /// Segment property holding the error-prone proxy covariate.
    #[arg(long, default_value = "traffic")]
    traffic_property: String,
    /// Drop events farther than this from every segment.
    #[arg(long, default_value_t = 10.0)]
    snap_tolerance_m: f64,
    /// Endpoint coincidence tolerance for adjacency (0 = exact match).
    #[arg(long, default_value_t = 0.0)]
    endpoint_tolerance_m: f64,
    /// keep-largest or min-size=<k>.
    #[arg(long, default_value = "keep-largest")]
    prune: PrunePolicyArg,
    /// Also write the ICAR structure matrix in MatrixMarket format.
    #[arg(long)]
    export_structure: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateCli {
    /// Scenario TOML file.
    #[arg(long)]
    scenario: PathBuf,
    /// Bundle output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitCli {
    /// Fit configuration TOML with sections data/model/priors/sampler/output.
    #[arg(long)]
    config: PathBuf,
    /// Override the configured output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CompareCli {
    /// Two or more fit directories (fits of the same bundle).
    fits: Vec<PathBuf>,
    /// Write the comparison report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SensitivityCli {
    /// Base fit configuration.
    #[arg(long)]
    config: PathBuf,
    /// Sweep TOML listing alternative priors for beta_x / tau_eps / tau_u.
    #[arg(long)]
    sweep: PathBuf,
    /// Sweep output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportCli {
    /// Fit directory containing lambda.csv.
    #[arg(long)]
    fit: PathBuf,
    /// Network GeoJSON whose features carry the segment ids.
    #[arg(long)]
    network: PathBuf,
    /// Output GeoJSON path.
    #[arg(long)]
    out: PathBuf,
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::validation(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Ingest(a) => ingest::run(&ingest::IngestArgs {
            network: a.network,
            events: a.events,
            polygons: a.polygons,
            out: a.out,
            traffic_property: a.traffic_property,
            snap_tolerance_m: a.snap_tolerance_m,
            endpoint_tolerance_m: a.endpoint_tolerance_m,
            prune: a.prune,
            export_structure: a.export_structure,
        }),
        Command::Simulate(a) => simulate::run(&simulate::SimulateArgs {
            scenario: a.scenario,
            out: a.out,
        }),
        Command::Fit(a) => fit::run(&fit::FitArgs {
            config: a.config,
            output: a.output,
        }),
        Command::Compare(a) => compare::run(&compare::CompareArgs {
            fits: a.fits,
            out: a.out,
        }),
        Command::Sensitivity(a) => sensitivity::run(&sensitivity::SensitivityArgs {
            config: a.config,
            sweep: a.sweep,
            out: a.out,
        }),
        Command::Export(a) => export::run(&export::ExportArgs {
            fit: a.fit,
            network: a.network,
            out: a.out,
        }),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        let payload = serde_json::json!({
            "error": { "kind": e.kind(), "message": e.message() }
        });
        eprintln!("{payload}");
        std::process::exit(e.exit_code());
    }
}
