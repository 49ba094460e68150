//! fit: bundle + config -> MAP -> MCMC -> summaries on disk.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crashlattice::gmrf::IcarStructure;
use crashlattice::inference::{diagnostics, run_mcmc, PosteriorSamples};
use crashlattice::model::{Dataset, ModelSpec};
use crashlattice::selection::{
    count_class_table, dic, lambda_summaries, summarize, waic, DicResult, ParameterSummary,
    WaicResult,
};

use crate::bundle::{bundle_data_hash, read_bundle, select_columns, write_json};
use crate::config::FitConfig;
use crate::error::CliError;

pub struct FitArgs {
    pub config: PathBuf,
    pub output: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
pub struct FitReport {
    pub variant: String,
    /// Original-scale sd of the proxy covariate, for converting the
    /// standardised slope into rate ratios per original-scale increment.
    pub proxy_sd_original: f64,
    pub dic: DicResult,
    pub waic: WaicResult,
    pub data_hash: String,
    pub rng_seed: u64,
    pub n_chains: usize,
    pub n_kept_draws: usize,
    pub acceptance: Vec<BTreeMap<String, f64>>,
}

pub fn run(args: &FitArgs) -> Result<(), CliError> {
    let mut config = FitConfig::load(&args.config)?;
    if let Some(out) = &args.output {
        config.output.directory = out.clone();
    }
    let out = config.output.directory.clone();
    run_with_config(&config, &out)?;
    println!("fit written to {}", out.display());
    Ok(())
}

/// The fit pipeline behind both `fit` and `sensitivity`.
pub fn run_with_config(config: &FitConfig, out: &Path) -> Result<(), CliError> {
    let bundle = read_bundle(&config.data.bundle)?;
    let data = apply_column_selection(config, &bundle.data)?;
    let icar = IcarStructure::from_edges(data.len(), &bundle.edges)?;
    let spec = config.model_spec()?;
    let samples = run_mcmc(&data, &spec, &icar, &config.sampler)?;

    std::fs::create_dir_all(out)?;
    write_chains(out, &samples)?;

    let table = summarize(&samples)?;
    write_summary(out, &spec, &data, &table)?;

    let diag = diagnostics(&samples);
    let mut dcsv = csv::Writer::from_path(out.join("diagnostics.csv"))?;
    dcsv.write_record(["parameter", "ess_bulk", "rhat", "mcse"])?;
    for p in &diag.parameters {
        dcsv.write_record([
            p.name.as_str(),
            &format!("{:.1}", p.ess_bulk),
            &p.rhat.map(|r| format!("{r:.4}")).unwrap_or_default(),
            &format!("{:.6e}", p.mcse),
        ])?;
    }
    dcsv.flush()?;

    let lambda = lambda_summaries(&samples, &data, &spec)?;
    let mut lcsv = csv::Writer::from_path(out.join("lambda.csv"))?;
    lcsv.write_record(["segment_id", "lambda_mean", "lambda_low90", "lambda_high90"])?;
    for (id, l) in bundle.segment_ids.iter().zip(&lambda) {
        lcsv.write_record([
            id.as_str(),
            &l.mean.to_string(),
            &l.low90.to_string(),
            &l.high90.to_string(),
        ])?;
    }
    lcsv.flush()?;

    let classes = count_class_table(&lambda, &data)?;
    let mut ccsv = csv::Writer::from_path(out.join("predicted_observed.csv"))?;
    ccsv.write_record([
        "class",
        "observed_segments",
        "observed_share",
        "predicted_segments",
        "predicted_share",
        "mean_predicted",
    ])?;
    for row in &classes {
        ccsv.write_record([
            row.class.as_str(),
            &row.observed_segments.to_string(),
            &row.observed_share.to_string(),
            &row.predicted_segments.to_string(),
            &row.predicted_share.to_string(),
            &row.mean_predicted.to_string(),
        ])?;
    }
    ccsv.flush()?;

    let dic_res = dic(&samples, &data, &spec)?;
    let waic_res = waic(&samples, &data, &spec)?;
    let report = FitReport {
        variant: spec.variant.label().to_string(),
        proxy_sd_original: bundle.meta.w.sd,
        dic: dic_res,
        waic: waic_res,
        data_hash: bundle_data_hash(&config.data.bundle)?,
        rng_seed: config.sampler.rng_seed,
        n_chains: config.sampler.n_chains,
        n_kept_draws: samples.n_kept_total(),
        acceptance: samples
            .chains
            .iter()
            .map(|c| c.acceptance.iter().cloned().collect())
            .collect(),
    };
    write_json(&out.join("fit_report.json"), &report)?;

    #[derive(Serialize)]
    struct FitManifest<'a> {
        command: &'static str,
        config: &'a FitConfig,
        data_hash: String,
    }
    write_json(
        &out.join("manifest.json"),
        &FitManifest {
            command: "fit",
            config,
            data_hash: bundle_data_hash(&config.data.bundle)?,
        },
    )?;
    Ok(())
}

fn apply_column_selection(config: &FitConfig, data: &Dataset) -> Result<Dataset, CliError> {
    let z = match &config.model.regression_covariates {
        Some(names) => select_columns(&data.z, names, "regression_covariates")?,
        None => data.z.clone(),
    };
    let ztilde = match &config.model.exposure_covariates {
        Some(names) => {
            // exposure columns may come from either design matrix
            let mut merged = data.ztilde.columns().to_vec();
            for c in data.z.columns() {
                if !merged.iter().any(|m| m.name == c.name) {
                    merged.push(c.clone());
                }
            }
            let all = crashlattice::model::DesignMatrix::from_columns(merged)?;
            select_columns(&all, names, "exposure_covariates")?
        }
        None => data.ztilde.clone(),
    };
    Dataset::new(
        data.y.clone(),
        data.e.clone(),
        data.w.clone(),
        data.w_name.clone(),
        data.w_standardization,
        z,
        ztilde,
    )
    .map_err(CliError::from)
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

fn write_chains(out: &Path, samples: &PosteriorSamples) -> Result<(), CliError> {
    let dir = out.join("chains");
    std::fs::create_dir_all(&dir)?;
    for (idx, name) in samples.scalar_names.iter().enumerate() {
        let per_chain = samples.scalar_chains(idx);
        let mut w = csv::Writer::from_path(dir.join(format!("{}.csv", sanitize(name))))?;
        let header: Vec<String> = (0..per_chain.len())
            .map(|c| format!("chain_{c}"))
            .collect();
        w.write_record(&header)?;
        let n_draws = per_chain.first().map_or(0, Vec::len);
        for k in 0..n_draws {
            let row: Vec<String> = per_chain.iter().map(|c| c[k].to_string()).collect();
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Summary table in the reporting order: intercept, error-free
/// covariates, the traffic slope last among the fixed effects, then the
/// exposure coefficients and precisions.
fn write_summary(
    out: &Path,
    spec: &ModelSpec,
    data: &Dataset,
    table: &[ParameterSummary],
) -> Result<(), CliError> {
    let mut order: Vec<usize> = Vec::new();
    let find = |name: &str| table.iter().position(|r| r.name == name);
    if let Some(i) = find("Intercept") {
        order.push(i);
    }
    for c in data.z.columns() {
        if let Some(i) = find(&c.name) {
            order.push(i);
        }
    }
    if let Some(i) = find(&data.w_name) {
        order.push(i);
    }
    for i in 0..table.len() {
        if !order.contains(&i) {
            order.push(i);
        }
    }

    let mut w = csv::Writer::from_path(out.join("summary.csv"))?;
    w.write_record(["parameter", "mean", "sd", "q05", "q95"])?;
    for &i in &order {
        let r = &table[i];
        w.write_record([
            r.name.as_str(),
            &r.mean.to_string(),
            &r.sd.to_string(),
            &r.q05.to_string(),
            &r.q95.to_string(),
        ])?;
    }
    w.flush()?;

    let mut txt = std::fs::File::create(out.join("summary.txt"))?;
    writeln!(txt, "{} model posterior summary", spec.variant.label())?;
    writeln!(txt, "{:<24} {:>10} {:>10} {:>10} {:>10}", "parameter", "mean", "sd", "q05", "q95")?;
    for &i in &order {
        let r = &table[i];
        writeln!(
            txt,
            "{:<24} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
            r.name, r.mean, r.sd, r.q05, r.q95
        )?;
    }
    Ok(())
}
