//! Uncertainty indicators.
//!
//! Every indicator implements [`Indicator`] and emits an OOD score where
//! higher means more out-of-distribution. Indicators are created by name
//! through a [`Registry`] of [`IndicatorFactory`] implementations, which also
//! restores them from model files.
//!
//! | kind          | uncertainty | needs                      |
//! |---------------|-------------|----------------------------|
//! | `entropy`     | aleatoric   | softmax                    |
//! | `sbp`         | aleatoric   | softmax                    |
//! | `odin`        | aleatoric   | network + input-space rows |
//! | `conformance` | aleatoric   | features (kNN reference)   |
//! | `knn_entropy` | aleatoric   | features (kNN reference)   |
//! | `mahalanobis` | epistemic   | features                   |
//! | `pca`         | epistemic   | features                   |

mod conformance;
mod knn;
mod mahalanobis;
mod pca;
mod softmax;

pub use conformance::{
    conformance_vector, fit_conformance, score_conformance, select_k, ConformanceFactory, ConformanceIndicator,
    ConformanceModel, DeviationMode, K_CANDIDATES,
};
pub use knn::{knn, knn_excluding, score_knn_label_entropy, KnnEntropyFactory, KnnEntropyIndicator};
pub use mahalanobis::{fit_mahalanobis, score_mahalanobis, MahalanobisFactory, MahalanobisIndicator};
pub use pca::{fit_pca, retained_components, score_pca, PcaClass, PcaClassModel, PcaFactory, PcaIndicator};
pub use softmax::{
    score_entropy, score_odin, score_sbp, EntropyFactory, EntropyIndicator, OdinFactory, OdinIndicator, OdinParams,
    SbpFactory, SbpIndicator,
};

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::MlpModel;
use crate::dataset::FeatureDataset;
use crate::error::{Error, Result};
use crate::io::{LoadContext, SaveContext};
use crate::numerics::{CovarianceMode, Matrix, Regularization};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Uncertainty {
    Aleatoric,
    Epistemic,
}

/// One row as seen by the indicators.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    /// Representation the density and neighbour indicators work in.
    pub features: &'a [f64],
    pub softmax: Option<&'a [f64]>,
    /// Network input, present only when rows were pushed through a classifier.
    pub input: Option<&'a [f64]>,
}

/// A batch of rows in feature space, optionally carrying the network inputs they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub data: FeatureDataset,
    pub inputs: Option<Matrix>,
}

impl SampleSet {
    /// Rows are already features (for example an externally extracted CSV).
    pub fn from_features(data: FeatureDataset) -> Self {
        SampleSet { data, inputs: None }
    }

    /// Rows are network inputs: computes penultimate features and softmax.
    pub fn through_network(inputs: &FeatureDataset, network: &MlpModel) -> Result<Self> {
        let data = extract_features(inputs, network)?;
        Ok(SampleSet { data, inputs: Some(inputs.features.clone()) })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample(&self, i: usize) -> Sample<'_> {
        Sample {
            features: self.data.row(i),
            softmax: self.data.softmax.as_ref().map(|m| m.row(i)),
            input: self.inputs.as_ref().map(|m| m.row(i)),
        }
    }

    pub fn select(&self, indices: &[usize]) -> SampleSet {
        let inputs = self.inputs.as_ref().map(|m| {
            let rows: Vec<&[f64]> = indices.iter().map(|&i| m.row(i)).collect();
            Matrix::from_rows(&rows, m.cols()).expect("rows share width")
        });
        SampleSet { data: self.data.select(indices), inputs }
    }

    pub fn filter_cluster(&self, tag: &str) -> SampleSet {
        let idx: Vec<usize> = match &self.data.cluster {
            Some(c) => (0..self.len()).filter(|&i| c[i] == tag).collect(),
            None => Vec::new(),
        };
        self.select(&idx)
    }
}

/// Penultimate activations plus softmax for each row of `inputs`; ids, labels and tags are kept.
pub fn extract_features(inputs: &FeatureDataset, network: &MlpModel) -> Result<FeatureDataset> {
    let outputs = (0..inputs.len()).map(|i| network.forward(inputs.row(i))).collect::<Result<Vec<_>>>()?;
    let pen: Vec<&[f64]> = outputs.iter().map(|f| f.penultimate.as_slice()).collect();
    let sm: Vec<&[f64]> = outputs.iter().map(|f| f.softmax.as_slice()).collect();
    Ok(FeatureDataset {
        ids: inputs.ids.clone(),
        labels: inputs.labels.clone(),
        features: Matrix::from_rows(&pen, network.penultimate_dim())?,
        softmax: Some(Matrix::from_rows(&sm, network.n_classes())?),
        cluster: inputs.cluster.clone(),
    })
}

/// Anything that maps a sample to an OOD score (higher = more OOD).
pub trait Scorer: Send + Sync {
    fn score(&self, sample: &Sample<'_>) -> Result<f64>;

    /// Scores every row. Rows are split across threads; results keep row order.
    fn score_set(&self, set: &SampleSet) -> Result<Vec<f64>> {
        (0..set.len()).into_par_iter().map(|i| self.score(&set.sample(i))).collect()
    }
}

pub trait Indicator: Scorer + fmt::Debug {
    /// Registry name, also the `kind` tag in model files.
    fn kind(&self) -> &'static str;

    fn uncertainty(&self) -> Uncertainty;

    /// Kind-specific payload for the model file.
    fn save(&self, ctx: &mut SaveContext) -> Result<serde_json::Value>;
}

/// Fitting parameters shared by all factories; each reads the fields it needs.
#[derive(Clone, Debug, PartialEq)]
pub struct IndicatorParams {
    pub k: usize,
    pub retained_fraction: f64,
    pub odin: OdinParams,
    pub covariance_mode: CovarianceMode,
    pub regularization: Regularization,
    pub deviation: DeviationMode,
}

impl Default for IndicatorParams {
    fn default() -> Self {
        IndicatorParams {
            k: 10,
            retained_fraction: 0.4,
            odin: OdinParams::default(),
            covariance_mode: CovarianceMode::Tied,
            regularization: Regularization::Auto,
            deviation: DeviationMode::Signed,
        }
    }
}

pub struct FitContext<'a> {
    pub network: Option<&'a Arc<MlpModel>>,
    pub params: &'a IndicatorParams,
}

pub trait IndicatorFactory: Send + Sync {
    fn kind(&self) -> &'static str;

    fn uncertainty(&self) -> Uncertainty;

    /// Fits on labelled in-distribution training rows.
    fn fit(&self, train: &SampleSet, ctx: &FitContext<'_>) -> Result<Box<dyn Indicator>>;

    fn load(&self, payload: &serde_json::Value, ctx: &LoadContext) -> Result<Box<dyn Indicator>>;
}

/// Indicator factories by name.
pub struct Registry {
    factories: BTreeMap<&'static str, Box<dyn IndicatorFactory>>,
}

impl Registry {
    pub fn empty() -> Self {
        Registry { factories: BTreeMap::new() }
    }

    /// All built-in indicators.
    pub fn builtin() -> Self {
        let mut r = Registry::empty();
        r.register(Box::new(EntropyFactory));
        r.register(Box::new(SbpFactory));
        r.register(Box::new(OdinFactory));
        r.register(Box::new(MahalanobisFactory));
        r.register(Box::new(PcaFactory));
        r.register(Box::new(ConformanceFactory));
        r.register(Box::new(KnnEntropyFactory));
        r
    }

    /// Adds a factory, returning any previous one registered under the same name.
    pub fn register(&mut self, factory: Box<dyn IndicatorFactory>) -> Option<Box<dyn IndicatorFactory>> {
        self.factories.insert(factory.kind(), factory)
    }

    pub fn get(&self, kind: &str) -> Result<&dyn IndicatorFactory> {
        self.factories.get(kind).map(|f| f.as_ref()).ok_or_else(|| Error::UnknownKind(kind.to_string()))
    }

    pub fn contains(&self, kind: &str) -> bool {
        self.factories.contains_key(kind)
    }

    pub fn kinds(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn fit(&self, kind: &str, train: &SampleSet, ctx: &FitContext<'_>) -> Result<Box<dyn Indicator>> {
        self.get(kind)?.fit(train, ctx)
    }

    pub fn load(&self, kind: &str, payload: &serde_json::Value, ctx: &LoadContext) -> Result<Box<dyn Indicator>> {
        self.get(kind)?.load(payload, ctx)
    }
}

impl Default for Registry {
    fn default() -> Self {
        Registry::builtin()
    }
}

pub(crate) fn require_softmax<'a>(sample: &Sample<'a>, kind: &str) -> Result<&'a [f64]> {
    sample
        .softmax
        .ok_or_else(|| Error::MissingInput(format!("{kind} needs softmax columns (p0..) or a classifier model")))
}

pub(crate) fn check_dim(x: &[f64], expected: usize) -> Result<()> {
    if x.len() != expected {
        return Err(Error::DimensionMismatch { expected, got: x.len() });
    }
    Ok(())
}

/// Labelled training rows only (label >= 0).
pub(crate) fn labelled(ds: &FeatureDataset) -> FeatureDataset {
    let idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] >= 0).collect();
    ds.select(&idx)
}

pub(crate) fn from_payload<T: serde::de::DeserializeOwned>(payload: &serde_json::Value) -> Result<T> {
    serde_json::from_value(payload.clone()).map_err(|e| Error::Model(e.to_string()))
}
