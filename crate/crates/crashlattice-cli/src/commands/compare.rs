//! compare: DIC/WAIC across fits of the same dataset.

use std::path::PathBuf;

use serde::Serialize;

use crate::commands::fit::FitReport;
use crate::bundle::write_json;
use crate::error::CliError;

pub struct CompareArgs {
    pub fits: Vec<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ComparisonRow {
    fit: String,
    model: String,
    dic: f64,
    p_d: f64,
    waic: f64,
    p_waic: f64,
}

#[derive(Serialize)]
struct ComparisonReport {
    models: Vec<ComparisonRow>,
    best_dic: String,
    best_waic: String,
    criteria_agree: bool,
}

pub fn run(args: &CompareArgs) -> Result<(), CliError> {
    if args.fits.len() < 2 {
        return Err(CliError::validation("compare needs at least two fits"));
    }
    let mut reports = Vec::new();
    for dir in &args.fits {
        let path = dir.join("fit_report.json");
        let text = std::fs::read_to_string(&path).map_err(|e| {
            CliError::validation(format!("cannot read {}: {e}", path.display()))
        })?;
        let report: FitReport = serde_json::from_str(&text)?;
        reports.push((dir.clone(), report));
    }
    let hash0 = &reports[0].1.data_hash;
    for (dir, r) in &reports {
        if &r.data_hash != hash0 {
            return Err(CliError::validation(format!(
                "fit {} was computed on different data (hash {} vs {}); comparisons across datasets are invalid",
                dir.display(),
                r.data_hash,
                hash0
            )));
        }
    }

    let rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|(dir, r)| ComparisonRow {
            fit: dir.display().to_string(),
            model: r.variant.clone(),
            dic: r.dic.dic,
            p_d: r.dic.p_d,
            waic: r.waic.waic,
            p_waic: r.waic.p_waic,
        })
        .collect();
    let best = |key: fn(&ComparisonRow) -> f64| -> String {
        rows.iter()
            .min_by(|a, b| key(a).partial_cmp(&key(b)).unwrap())
            .map(|r| r.fit.clone())
            .unwrap()
    };
    let best_dic = best(|r| r.dic);
    let best_waic = best(|r| r.waic);
    let report = ComparisonReport {
        criteria_agree: best_dic == best_waic,
        models: rows,
        best_dic,
        best_waic,
    };

    println!(
        "{:<28} {:<14} {:>12} {:>10} {:>12} {:>10}",
        "fit", "model", "DIC", "p_D", "WAIC", "p_WAIC"
    );
    for r in &report.models {
        let mut flags = String::new();
        if r.fit == report.best_dic {
            flags.push_str(" <- min DIC");
        }
        if r.fit == report.best_waic {
            flags.push_str(" <- min WAIC");
        }
        println!(
            "{:<28} {:<14} {:>12.2} {:>10.2} {:>12.2} {:>10.2}{flags}",
            r.fit, r.model, r.dic, r.p_d, r.waic, r.p_waic
        );
    }
    if !report.criteria_agree {
        println!("note: DIC and WAIC disagree; both minimisers reported, no aggregate verdict");
    }
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    Ok(())
}
