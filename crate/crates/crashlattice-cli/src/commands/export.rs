//! export: fitted rates joined back onto the network geometry as a
//! choropleth-ready GeoJSON layer.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde_json::{json, Value};

use crate::bundle::write_json;
use crate::error::CliError;

pub struct ExportArgs {
    pub fit: PathBuf,
    pub network: PathBuf,
    pub out: PathBuf,
}

pub fn run(args: &ExportArgs) -> Result<(), CliError> {
    // fitted per-segment rates
    let mut reader = csv::Reader::from_path(args.fit.join("lambda.csv")).map_err(|e| {
        CliError::validation(format!(
            "fit {} has no lambda.csv: {e}",
            args.fit.display()
        ))
    })?;
    let mut rates: Vec<(String, f64, f64, f64)> = Vec::new();
    for record in reader.records() {
        let r = record?;
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| CliError::validation(format!("bad number in lambda.csv: {s:?}")))
        };
        rates.push((r[0].to_string(), parse(&r[1])?, parse(&r[2])?, parse(&r[3])?));
    }
    if rates.is_empty() {
        return Err(CliError::validation("lambda.csv has no rows"));
    }

    // decile of the posterior mean rate, 1..10 over the segments
    let mut order: Vec<usize> = (0..rates.len()).collect();
    order.sort_by(|&a, &b| {
        rates[a]
            .1
            .partial_cmp(&rates[b].1)
            .unwrap()
            .then_with(|| rates[a].0.cmp(&rates[b].0))
    });
    let mut decile = vec![0_usize; rates.len()];
    for (rank, &idx) in order.iter().enumerate() {
        decile[idx] = (rank * 10) / rates.len() + 1;
    }

    // network geometry
    let text = std::fs::read_to_string(&args.network).map_err(|e| {
        CliError::validation(format!("cannot read {}: {e}", args.network.display()))
    })?;
    let network: Value = serde_json::from_str(&text)?;
    let features = network
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| CliError::validation("network is not a GeoJSON FeatureCollection"))?;
    let mut geometry_by_id: BTreeMap<String, &Value> = BTreeMap::new();
    for f in features {
        if let Some(id) = f.pointer("/properties/id") {
            let key = match id {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            if let Some(geom) = f.get("geometry") {
                geometry_by_id.insert(key, geom);
            }
        }
    }

    let orphans: Vec<&str> = rates
        .iter()
        .filter(|(id, _, _, _)| !geometry_by_id.contains_key(id))
        .map(|(id, _, _, _)| id.as_str())
        .collect();
    if !orphans.is_empty() {
        return Err(CliError::validation(format!(
            "fitted segments missing from the network layer: {}",
            orphans.join(", ")
        )));
    }

    let out_features: Vec<Value> = rates
        .iter()
        .enumerate()
        .map(|(i, (id, mean, low, high))| {
            json!({
                "type": "Feature",
                "geometry": geometry_by_id[id],
                "properties": {
                    "segment_id": id,
                    "lambda_mean": mean,
                    "lambda_low90": low,
                    "lambda_high90": high,
                    "decile": decile[i],
                },
            })
        })
        .collect();
    let collection = json!({ "type": "FeatureCollection", "features": out_features });
    write_json(&args.out, &collection)?;
    println!("exported {} features to {}", rates.len(), args.out.display());
    Ok(())
}
