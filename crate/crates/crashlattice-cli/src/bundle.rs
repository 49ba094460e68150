//! The dataset bundle: the on-disk interchange format between ingest /
//! simulate and fit. Plain CSV tables plus JSON metadata, written
//! deterministically so that identical inputs give byte-identical
//! bundles.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crashlattice::model::{Column, ColumnKind, Dataset, DesignMatrix, Standardization};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
    pub mean: f64,
    pub sd: f64,
    pub standardized: bool,
    /// Which design matrices use this column: "z" (regression) and/or
    /// "ztilde" (exposure).
    pub roles: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WMeta {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub standardized: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleColumns {
    pub w: WMeta,
    pub columns: Vec<ColumnMeta>,
}

pub struct Bundle {
    pub segment_ids: Vec<String>,
    pub data: Dataset,
    pub edges: Vec<(usize, usize)>,
    pub meta: BundleColumns,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex_digest(&bytes))
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash that identifies the dataset for fit comparisons.
pub fn bundle_data_hash(dir: &Path) -> Result<String, CliError> {
    let mut hasher = Sha256::new();
    for file in ["segments.csv", "covariates.csv", "adjacency.csv"] {
        let bytes = fs::read(dir.join(file)).map_err(|e| {
            CliError::validation(format!("bundle {} is missing {file}: {e}", dir.display()))
        })?;
        hasher.update(&bytes);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut file = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn write_bundle(
    dir: &Path,
    segment_ids: &[String],
    lengths_m: &[f64],
    data: &Dataset,
    edges: &[(usize, usize)],
) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let n = data.len();

    let mut seg = csv::Writer::from_path(dir.join("segments.csv"))?;
    seg.write_record(["segment_id", "y", "e", "length_m"])?;
    for i in 0..n {
        seg.write_record([
            segment_ids[i].as_str(),
            &data.y[i].to_string(),
            &data.e[i].to_string(),
            &lengths_m[i].to_string(),
        ])?;
    }
    seg.flush()?;

    let mut cov = csv::Writer::from_path(dir.join("covariates.csv"))?;
    let mut header = vec!["segment_id".to_string(), data.w_name.clone()];
    header.extend(data.z.columns().iter().map(|c| c.name.clone()));
    for c in data.ztilde.columns() {
        if !data.z.columns().iter().any(|zc| zc.name == c.name) {
            header.push(c.name.clone());
        }
    }
    cov.write_record(&header)?;
    for i in 0..n {
        let mut row = vec![segment_ids[i].clone(), data.w[i].to_string()];
        for c in data.z.columns() {
            row.push(c.values[i].to_string());
        }
        for c in data.ztilde.columns() {
            if !data.z.columns().iter().any(|zc| zc.name == c.name) {
                row.push(c.values[i].to_string());
            }
        }
        cov.write_record(&row)?;
    }
    cov.flush()?;

    let mut adj = csv::Writer::from_path(dir.join("adjacency.csv"))?;
    adj.write_record(["i", "j"])?;
    for &(i, j) in edges {
        adj.write_record([i.to_string(), j.to_string()])?;
    }
    adj.flush()?;

    let mut columns = Vec::new();
    for c in data.z.columns() {
        let ztilde_too = data.ztilde.columns().iter().any(|zc| zc.name == c.name);
        let mut roles = vec!["z".to_string()];
        if ztilde_too {
            roles.push("ztilde".to_string());
        }
        columns.push(ColumnMeta {
            name: c.name.clone(),
            kind: c.kind,
            mean: c.standardization.mean,
            sd: c.standardization.sd,
            standardized: c.standardization.standardized,
            roles,
        });
    }
    for c in data.ztilde.columns() {
        if !data.z.columns().iter().any(|zc| zc.name == c.name) {
            columns.push(ColumnMeta {
                name: c.name.clone(),
                kind: c.kind,
                mean: c.standardization.mean,
                sd: c.standardization.sd,
                standardized: c.standardization.standardized,
                roles: vec!["ztilde".to_string()],
            });
        }
    }
    let meta = BundleColumns {
        w: WMeta {
            name: data.w_name.clone(),
            mean: data.w_standardization.mean,
            sd: data.w_standardization.sd,
            standardized: data.w_standardization.standardized,
        },
        columns,
    };
    write_json(&dir.join("columns.json"), &meta)?;
    Ok(())
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    let header = reader
        .headers()?
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    for record in reader.records() {
        rows.push(record?.iter().map(|s| s.to_string()).collect());
    }
    Ok((header, rows))
}

fn parse_f64(s: &str, what: &str) -> Result<f64, CliError> {
    s.parse::<f64>()
        .map_err(|_| CliError::validation(format!("{what}: {s:?} is not a number")))
}

pub fn read_bundle(dir: &Path) -> Result<Bundle, CliError> {
    let meta: BundleColumns = {
        let text = fs::read_to_string(dir.join("columns.json")).map_err(|e| {
            CliError::validation(format!("bundle {} has no columns.json: {e}", dir.display()))
        })?;
        serde_json::from_str(&text)?
    };

    let (seg_header, seg_rows) = read_csv(&dir.join("segments.csv"))?;
    if seg_header != ["segment_id", "y", "e", "length_m"] {
        return Err(CliError::validation(format!(
            "unexpected segments.csv header: {seg_header:?}"
        )));
    }
    let mut segment_ids = Vec::new();
    let mut y = Vec::new();
    let mut e = Vec::new();
    for row in &seg_rows {
        segment_ids.push(row[0].clone());
        y.push(
            row[1]
                .parse::<u64>()
                .map_err(|_| CliError::validation(format!("count {:?} is not an integer", row[1])))?,
        );
        e.push(parse_f64(&row[2], "offset")?);
    }

    let (cov_header, cov_rows) = read_csv(&dir.join("covariates.csv"))?;
    if cov_rows.len() != seg_rows.len() {
        return Err(CliError::validation(format!(
            "covariates.csv has {} rows, segments.csv {}",
            cov_rows.len(),
            seg_rows.len()
        )));
    }
    let col_index = |name: &str| -> Result<usize, CliError> {
        cov_header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::validation(format!("covariates.csv is missing {name:?}")))
    };
    let w_idx = col_index(&meta.w.name)?;
    let mut w = Vec::new();
    for row in &cov_rows {
        w.push(parse_f64(&row[w_idx], "proxy")?);
    }

    let make_column = |meta: &ColumnMeta| -> Result<Column, CliError> {
        let idx = col_index(&meta.name)?;
        let values = cov_rows
            .iter()
            .map(|row| parse_f64(&row[idx], &meta.name))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Column {
            name: meta.name.clone(),
            values,
            kind: meta.kind,
            standardization: Standardization {
                mean: meta.mean,
                sd: meta.sd,
                standardized: meta.standardized,
            },
        })
    };
    let mut z_cols = Vec::new();
    let mut zt_cols = Vec::new();
    for cm in &meta.columns {
        if cm.roles.iter().any(|r| r == "z") {
            z_cols.push(make_column(cm)?);
        }
        if cm.roles.iter().any(|r| r == "ztilde") {
            zt_cols.push(make_column(cm)?);
        }
    }

    let (adj_header, adj_rows) = read_csv(&dir.join("adjacency.csv"))?;
    if adj_header != ["i", "j"] {
        return Err(CliError::validation(format!(
            "unexpected adjacency.csv header: {adj_header:?}"
        )));
    }
    let mut edges = Vec::new();
    for row in &adj_rows {
        let i = row[0]
            .parse::<usize>()
            .map_err(|_| CliError::validation("adjacency index is not an integer"))?;
        let j = row[1]
            .parse::<usize>()
            .map_err(|_| CliError::validation("adjacency index is not an integer"))?;
        edges.push((i, j));
    }

    let n = y.len();
    let data = Dataset::new(
        y,
        e,
        w,
        meta.w.name.clone(),
        Standardization {
            mean: meta.w.mean,
            sd: meta.w.sd,
            standardized: meta.w.standardized,
        },
        DesignMatrix::from_columns(z_cols).map_err(CliError::from)?,
        if zt_cols.is_empty() {
            DesignMatrix::empty(n)
        } else {
            DesignMatrix::from_columns(zt_cols).map_err(CliError::from)?
        },
    )?;
    Ok(Bundle {
        segment_ids,
        data,
        edges,
        meta,
    })
}

/// Restrict a design matrix to a configured subset of column names.
pub fn select_columns(
    matrix: &DesignMatrix,
    names: &[String],
    what: &str,
) -> Result<DesignMatrix, CliError> {
    let mut cols = Vec::new();
    for name in names {
        let col = matrix
            .columns()
            .iter()
            .find(|c| &c.name == name)
            .ok_or_else(|| {
                CliError::validation(format!("{what}: column {name:?} not in the bundle"))
            })?;
        cols.push(col.clone());
    }
    DesignMatrix::from_columns(cols).map_err(CliError::from)
}

