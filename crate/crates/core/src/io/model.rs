//! Model JSON documents.
//!
//! ```json
//! { "format_version": 1, "kind": "pca", "payload": { ... } }
//! ```
//!
//! kNN-based indicators keep their training rows in a sidecar CSV named
//! `reference-<hash>.csv` next to the model file. The payload records the
//! file name and its FNV-1a hash; loading fails if the file changed.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{content_hash, parse_features, render_features, ReadOptions};
use crate::classifier::MlpModel;
use crate::dataset::FeatureDataset;
use crate::detectors::{Indicator, Registry};
use crate::ensemble::{Detector, Ensemble};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub format_version: u32,
    pub kind: String,
    pub payload: serde_json::Value,
}

/// A sidecar file, relative to the model's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceFile {
    pub path: String,
    pub content_hash: String,
}

pub struct SaveContext {
    dir: PathBuf,
}

impl SaveContext {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        SaveContext { dir: dir.into() }
    }

    /// Writes `reference-<hash>.csv` unless an identical file is already there.
    pub fn persist_reference(&mut self, data: &FeatureDataset) -> Result<ReferenceFile> {
        let bytes = render_features(data)?;
        let hash = content_hash(&bytes);
        let name = format!("reference-{hash}.csv");
        let path = self.dir.join(&name);
        let up_to_date = fs::read(&path).map(|existing| existing == bytes).unwrap_or(false);
        if !up_to_date {
            fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        }
        Ok(ReferenceFile { path: name, content_hash: hash })
    }
}

pub struct LoadContext {
    dir: PathBuf,
    cache: RefCell<BTreeMap<String, Arc<FeatureDataset>>>,
}

impl LoadContext {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        LoadContext { dir: dir.into(), cache: RefCell::new(BTreeMap::new()) }
    }

    /// Reads a sidecar and checks its hash. Repeated references share one copy.
    pub fn load_reference(&self, reference: &ReferenceFile) -> Result<Arc<FeatureDataset>> {
        if let Some(ds) = self.cache.borrow().get(&reference.content_hash) {
            return Ok(Arc::clone(ds));
        }
        let path = self.dir.join(&reference.path);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let found = content_hash(&bytes);
        if found != reference.content_hash {
            return Err(Error::HashMismatch { path, expected: reference.content_hash.clone(), found });
        }
        let ds = Arc::new(parse_features(&bytes, &path.display().to_string(), ReadOptions::default())?);
        self.cache.borrow_mut().insert(found, Arc::clone(&ds));
        Ok(ds)
    }
}

/// Anything that can be written as a model file.
#[derive(Debug)]
pub enum Model {
    Mlp(MlpModel),
    Indicator(Box<dyn Indicator>),
    Detector(Detector),
    Ensemble(Ensemble),
}

impl Model {
    pub fn kind(&self) -> &str {
        match self {
            Model::Mlp(_) => "mlp",
            Model::Indicator(i) => i.kind(),
            Model::Detector(_) => "detector",
            Model::Ensemble(_) => "ensemble",
        }
    }

    pub fn to_doc(&self, ctx: &mut SaveContext) -> Result<ModelDoc> {
        let payload = match self {
            Model::Mlp(m) => serde_json::to_value(m)?,
            Model::Indicator(i) => i.save(ctx)?,
            Model::Detector(d) => d.save(ctx)?,
            Model::Ensemble(e) => e.save(ctx)?,
        };
        Ok(ModelDoc { format_version: FORMAT_VERSION, kind: self.kind().to_string(), payload })
    }

    pub fn from_doc(doc: &ModelDoc, ctx: &LoadContext, registry: &Registry) -> Result<Model> {
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::Model(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                doc.format_version
            )));
        }
        Ok(match doc.kind.as_str() {
            "mlp" => {
                let m: MlpModel =
                    serde_json::from_value(doc.payload.clone()).map_err(|e| Error::Model(e.to_string()))?;
                m.validate()?;
                Model::Mlp(m)
            }
            "detector" => Model::Detector(Detector::load(&doc.payload, ctx, registry)?),
            "ensemble" => Model::Ensemble(Ensemble::load(&doc.payload, ctx, registry)?),
            kind => Model::Indicator(registry.load(kind, &doc.payload, ctx)?),
        })
    }
}

/// `{kind, payload}` for an indicator nested inside a larger model.
pub fn save_indicator(indicator: &dyn Indicator, ctx: &mut SaveContext) -> Result<serde_json::Value> {
    Ok(serde_json::json!({ "kind": indicator.kind(), "payload": indicator.save(ctx)? }))
}

pub fn load_indicator(value: &serde_json::Value, ctx: &LoadContext, registry: &Registry) -> Result<Box<dyn Indicator>> {
    let kind =
        value.get("kind").and_then(|k| k.as_str()).ok_or_else(|| Error::Model("indicator lacks 'kind'".into()))?;
    let payload = value.get("payload").ok_or_else(|| Error::Model("indicator lacks 'payload'".into()))?;
    registry.load(kind, payload, ctx)
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Pretty JSON with a trailing newline; sidecars go next to `path`.
pub fn write_model(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let path = path.as_ref();
    let mut ctx = SaveContext::new(parent_dir(path));
    let doc = model.to_doc(&mut ctx)?;
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: impl AsRef<Path>, registry: &Registry) -> Result<Model> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: ModelDoc = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line() as u64,
        msg: e.to_string(),
    })?;
    Model::from_doc(&doc, &LoadContext::new(parent_dir(path)), registry)
}
