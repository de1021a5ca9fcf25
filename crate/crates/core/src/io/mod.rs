//! On-disk formats: feature CSVs, score CSVs, metric reports and model JSON.
//!
//! Feature CSV header: `id,label,f0,...,f{d-1}[,p0,...,p{nc-1}][,cluster]`.
//! Numbers are written as shortest round-trip decimals, UTF-8 with LF endings.

mod model;

pub use model::{
    load_indicator, read_model, save_indicator, write_model, LoadContext, Model, ModelDoc, ReferenceFile, SaveContext,
    FORMAT_VERSION,
};

use std::fs;
use std::path::Path;

use crate::dataset::{check_softmax, FeatureDataset};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, Default)]
pub struct ReadOptions {
    /// Rescale softmax rows to sum to one instead of rejecting them.
    pub renormalize_softmax: bool,
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn content_hash(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a64(bytes))
}

pub(crate) fn fmt_f64(v: f64) -> String {
    // Debug formatting is the shortest representation that parses back exactly.
    format!("{v:?}")
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureDataset> {
    read_features_with(path, ReadOptions::default())
}

pub fn read_features_with(path: impl AsRef<Path>, opts: ReadOptions) -> Result<FeatureDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_features(&bytes, &path.display().to_string(), opts)
}

struct Layout {
    d: usize,
    nc: usize,
    cluster: bool,
}

fn parse_header(header: &csv::StringRecord, name: &str) -> Result<Layout> {
    let bad = |msg: String| Error::Parse { path: name.to_string(), line: 1, msg };
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 3 || cols[0] != "id" || cols[1] != "label" {
        return Err(bad("header must start with id,label,f0".into()));
    }
    let mut idx = 2;
    let mut d = 0;
    while idx < cols.len() && cols[idx] == format!("f{d}") {
        d += 1;
        idx += 1;
    }
    let mut nc = 0;
    while idx < cols.len() && cols[idx] == format!("p{nc}") {
        nc += 1;
        idx += 1;
    }
    let cluster = idx < cols.len() && cols[idx] == "cluster";
    if cluster {
        idx += 1;
    }
    if d == 0 {
        return Err(bad("no feature columns".into()));
    }
    if idx != cols.len() {
        return Err(bad(format!("unexpected column '{}'", cols[idx])));
    }
    Ok(Layout { d, nc, cluster })
}

pub fn parse_features(bytes: &[u8], name: &str, opts: ReadOptions) -> Result<FeatureDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(bytes);
    let header = reader.headers().map_err(|e| Error::Parse { path: name.into(), line: 1, msg: e.to_string() })?.clone();
    let layout = parse_header(&header, name)?;
    let width = header.len();

    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut feats = Vec::new();
    let mut probs = Vec::new();
    let mut clusters = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            path: name.into(),
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(row as u64 + 2, |p| p.line());
        let err = |msg: String| Error::Parse { path: name.into(), line, msg };
        if record.len() != width {
            return Err(err(format!("expected {width} fields, found {}", record.len())));
        }
        let num = |i: usize| -> Result<f64> {
            let field = &record[i];
            let v: f64 = field.trim().parse().map_err(|_| err(format!("'{field}' is not a number")))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite value '{field}'")));
            }
            Ok(v)
        };
        ids.push(record[0].to_string());
        let label: i64 =
            record[1].trim().parse().map_err(|_| err(format!("label '{}' is not an integer", &record[1])))?;
        if label < -1 {
            return Err(err(format!("label {label} below -1")));
        }
        labels.push(label);
        for i in 0..layout.d {
            feats.push(num(2 + i)?);
        }
        if layout.nc > 0 {
            let mut p = (0..layout.nc).map(|i| num(2 + layout.d + i)).collect::<Result<Vec<_>>>()?;
            if opts.renormalize_softmax {
                let sum: f64 = p.iter().sum();
                if sum > 0.0 {
                    p.iter_mut().for_each(|v| *v /= sum);
                }
            }
            check_softmax(&p, row).map_err(|e| err(e.to_string()))?;
            probs.extend(p);
        }
        if layout.cluster {
            clusters.push(record[width - 1].to_string());
        }
    }
    let n = ids.len();
    Ok(FeatureDataset {
        ids,
        labels,
        features: Matrix::new(n, layout.d, feats)?,
        softmax: if layout.nc > 0 { Some(Matrix::new(n, layout.nc, probs)?) } else { None },
        cluster: layout.cluster.then_some(clusters),
    })
}

/// Deterministic CSV rendering of a dataset.
pub fn render_features(ds: &FeatureDataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..ds.dim()).map(|i| format!("f{i}")));
    if let Some(sm) = &ds.softmax {
        header.extend((0..sm.cols()).map(|i| format!("p{i}")));
    }
    if ds.cluster.is_some() {
        header.push("cluster".into());
    }
    let csv_err = |e: csv::Error| Error::invalid(format!("csv encoding failed: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..ds.len() {
        let mut rec = vec![ds.ids[i].clone(), ds.labels[i].to_string()];
        rec.extend(ds.row(i).iter().map(|&v| fmt_f64(v)));
        if let Some(sm) = &ds.softmax {
            rec.extend(sm.row(i).iter().map(|&v| fmt_f64(v)));
        }
        if let Some(c) = &ds.cluster {
            rec.push(c[i].clone());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::invalid(format!("csv encoding failed: {e}")))
}

pub fn write_features(ds: &FeatureDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = render_features(ds)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `id,score` rows.
pub fn write_scores(path: impl AsRef<Path>, ids: &[String], scores: &[f64]) -> Result<()> {
    let path = path.as_ref();
    if ids.len() != scores.len() {
        return Err(Error::DimensionMismatch { expected: ids.len(), got: scores.len() });
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::invalid(format!("csv encoding failed: {e}"));
    w.write_record(["id", "score"]).map_err(csv_err)?;
    for (id, s) in ids.iter().zip(scores) {
        w.write_record([id.as_str(), &fmt_f64(*s)]).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<f64>)> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let header = reader.headers().map_err(|e| Error::Parse { path: name.clone(), line: 1, msg: e.to_string() })?;
    if header.iter().collect::<Vec<_>>() != ["id", "score"] {
        return Err(Error::Parse { path: name, line: 1, msg: "header must be id,score".into() });
    }
    let mut ids = Vec::new();
    let mut scores = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: name.clone(),
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let v: f64 = record[1].trim().parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| Error::Parse {
            path: name.clone(),
            line,
            msg: format!("bad score '{}'", &record[1]),
        })?;
        ids.push(record[0].to_string());
        scores.push(v);
    }
    Ok((ids, scores))
}

/// Writes the report as pretty JSON.
pub fn write_report(path: impl AsRef<Path>, report: &MetricsReport) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
