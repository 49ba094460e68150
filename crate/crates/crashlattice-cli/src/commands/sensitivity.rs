//! sensitivity: refit under alternative priors, one substitution at a
//! time, and consolidate the results in the columns-(0)..(k) layout.

use std::path::PathBuf;

use serde::Serialize;

use crate::bundle::write_json;
use crate::commands::fit::run_with_config;
use crate::config::{FitConfig, SweepConfig};
use crate::error::CliError;

pub struct SensitivityArgs {
    pub config: PathBuf,
    pub sweep: PathBuf,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct CellStatus {
    column: usize,
    parameter: String,
    status: String,
    message: String,
}

#[derive(Serialize)]
struct SweepReport {
    columns: Vec<String>,
    cells: Vec<CellStatus>,
}

pub fn run(args: &SensitivityArgs) -> Result<(), CliError> {
    let base = FitConfig::load(&args.config)?;
    let sweep = SweepConfig::load(&args.sweep)?;
    std::fs::create_dir_all(&args.out)?;

    // column (0): the default priors; columns (1)..(k): one substitution
    // each. Cell failures are recorded and the sweep continues.
    let mut columns = vec!["(0) default".to_string()];
    let mut configs = vec![base.clone()];
    for (k, alt) in sweep.alternative.iter().enumerate() {
        columns.push(format!("({}) {}", k + 1, alt.parameter));
        configs.push(base.with_prior_override(&alt.parameter, alt.prior)?);
    }

    let mut cells = Vec::new();
    let mut tables: Vec<Option<Vec<(String, f64, f64)>>> = Vec::new();
    for (k, config) in configs.iter().enumerate() {
        let col_dir = args.out.join(format!("col_{k}"));
        let parameter = if k == 0 {
            "default".to_string()
        } else {
            sweep.alternative[k - 1].parameter.clone()
        };
        match run_with_config(config, &col_dir) {
            Ok(()) => {
                let table = read_summary(&col_dir)?;
                tables.push(Some(table));
                cells.push(CellStatus {
                    column: k,
                    parameter,
                    status: "ok".to_string(),
                    message: String::new(),
                });
            }
            Err(e) => {
                tables.push(None);
                cells.push(CellStatus {
                    column: k,
                    parameter,
                    status: "error".to_string(),
                    message: e.to_string(),
                });
            }
        }
    }

    // consolidated table: one row per parameter, "mean (sd)" per column
    let row_names: Vec<String> = tables
        .iter()
        .flatten()
        .next()
        .map(|t| t.iter().map(|(n, _, _)| n.clone()).collect())
        .unwrap_or_default();
    let mut w = csv::Writer::from_path(args.out.join("sensitivity.csv"))?;
    let mut header = vec!["parameter".to_string()];
    header.extend(columns.iter().cloned());
    w.write_record(&header)?;
    for name in &row_names {
        let mut row = vec![name.clone()];
        for table in &tables {
            let cell = table
                .as_ref()
                .and_then(|t| t.iter().find(|(n, _, _)| n == name))
                .map(|(_, mean, sd)| format!("{mean:.3} ({sd:.3})"))
                .unwrap_or_else(|| "error".to_string());
            row.push(cell);
        }
        w.write_record(&row)?;
    }
    w.flush()?;

    write_json(
        &args.out.join("sensitivity.json"),
        &SweepReport { columns, cells },
    )?;

    #[derive(Serialize)]
    struct SweepManifest {
        command: &'static str,
        input_hashes: std::collections::BTreeMap<String, String>,
    }
    let mut input_hashes = std::collections::BTreeMap::new();
    input_hashes.insert(
        "config".to_string(),
        crate::bundle::sha256_file(&args.config)?,
    );
    input_hashes.insert("sweep".to_string(), crate::bundle::sha256_file(&args.sweep)?);
    write_json(
        &args.out.join("manifest.json"),
        &SweepManifest {
            command: "sensitivity",
            input_hashes,
        },
    )?;
    println!(
        "sensitivity sweep: {} columns written to {}",
        configs.len(),
        args.out.display()
    );
    Ok(())
}

fn read_summary(dir: &std::path::Path) -> Result<Vec<(String, f64, f64)>, CliError> {
    let mut reader = csv::Reader::from_path(dir.join("summary.csv"))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let r = record?;
        out.push((
            r[0].to_string(),
            r[1].parse::<f64>()
                .map_err(|_| CliError::validation("bad mean in summary.csv"))?,
            r[2].parse::<f64>()
                .map_err(|_| CliError::validation("bad sd in summary.csv"))?,
        ));
    }
    Ok(out)
}
