//! Non-conformance: how an input's neighbourhood deviates from it, compared
//! against the deviations seen on training data.

use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::knn::knn_excluding;
use super::mahalanobis::validate_gaussian;
use super::{from_payload, labelled, FitContext, Indicator, IndicatorFactory, Sample, SampleSet, Scorer, Uncertainty};
use crate::dataset::FeatureDataset;
use crate::error::{Error, Result};
use crate::io::{LoadContext, ReferenceFile, SaveContext};
use crate::metrics::{scored, tnr_at_tpr};
use crate::numerics::{class_statistics, CovarianceMode, GaussianClassModel, Matrix, Regularization};

/// Neighbour counts tried by [`select_k`].
pub const K_CANDIDATES: [usize; 5] = [10, 20, 30, 40, 50];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationMode {
    /// `(1/k) Σ (z - x)`
    #[default]
    Signed,
    /// `(1/k) Σ |z - x|`
    Absolute,
}

impl FromStr for DeviationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "signed" => Ok(DeviationMode::Signed),
            "absolute" => Ok(DeviationMode::Absolute),
            other => Err(Error::invalid(format!("unknown deviation mode '{other}'"))),
        }
    }
}

/// Mean per-dimension deviation of the `k` nearest reference rows from `x`, skipping row `skip`.
pub fn conformance_vector(
    reference: &Matrix,
    x: &[f64],
    k: usize,
    skip: Option<usize>,
    mode: DeviationMode,
) -> Result<Vec<f64>> {
    let nn = knn_excluding(reference, x, k, skip)?;
    let mut c = vec![0.0; x.len()];
    for i in nn {
        for (dst, (z, xi)) in c.iter_mut().zip(reference.row(i).iter().zip(x)) {
            *dst += match mode {
                DeviationMode::Signed => z - xi,
                DeviationMode::Absolute => (z - xi).abs(),
            };
        }
    }
    c.iter_mut().for_each(|v| *v /= k as f64);
    Ok(c)
}

#[derive(Clone, Debug)]
pub struct ConformanceModel {
    pub k: usize,
    pub deviation: DeviationMode,
    pub reference: Arc<FeatureDataset>,
    /// Class means and tied covariance of the training conformance vectors.
    pub gaussian: GaussianClassModel,
}

/// Fits on labelled rows. Each training row's neighbours exclude the row itself.
pub fn fit_conformance(
    features: &FeatureDataset,
    k: usize,
    deviation: DeviationMode,
    regularization: Regularization,
) -> Result<ConformanceModel> {
    let reference = labelled(features);
    let n = reference.len();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("k = {k} must be in 1..={}", n.saturating_sub(1))));
    }
    let vectors = (0..n)
        .into_par_iter()
        .map(|i| conformance_vector(&reference.features, reference.row(i), k, Some(i), deviation))
        .collect::<Result<Vec<_>>>()?;
    let vectors = Matrix::from_rows(&vectors, reference.dim())?;
    let gaussian = class_statistics(&vectors, &reference.labels, CovarianceMode::Tied, regularization)?;
    let mut reference = reference;
    reference.softmax = None;
    reference.cluster = None;
    Ok(ConformanceModel { k, deviation, reference: Arc::new(reference), gaussian })
}

/// Minimum squared Mahalanobis distance of `c(x)` to the class conformance means.
pub fn score_conformance(model: &ConformanceModel, x: &[f64]) -> Result<f64> {
    let c = conformance_vector(&model.reference.features, x, model.k, None, model.deviation)?;
    model.gaussian.min_mahalanobis_sq(&c)
}

/// Picks the candidate `k` with the best validation TNR at 95% TPR (smaller `k` on ties).
/// Candidates that do not fit the training set are skipped. Returns the choice and every
/// evaluated `(k, tnr)` pair.
pub fn select_k(
    train: &FeatureDataset,
    val_id: &FeatureDataset,
    val_ood: &FeatureDataset,
    candidates: &[usize],
    deviation: DeviationMode,
    regularization: Regularization,
) -> Result<(usize, Vec<(usize, f64)>)> {
    let n = labelled(train).len();
    let mut tried = Vec::new();
    for &k in candidates.iter().filter(|&&k| k >= 1 && k < n) {
        let model = fit_conformance(train, k, deviation, regularization)?;
        let score_all = |ds: &FeatureDataset| {
            (0..ds.len()).into_par_iter().map(|i| score_conformance(&model, ds.row(i))).collect::<Result<Vec<_>>>()
        };
        let tnr = tnr_at_tpr(&scored(&score_all(val_id)?, &score_all(val_ood)?), 0.95)?;
        tried.push((k, tnr));
    }
    let best = tried
        .iter()
        .fold(None::<(usize, f64)>, |best, &(k, t)| match best {
            Some((_, bt)) if bt >= t => best,
            _ => Some((k, t)),
        })
        .ok_or_else(|| Error::invalid(format!("no candidate k fits a reference set of {n} rows")))?;
    Ok((best.0, tried))
}

#[derive(Debug)]
pub struct ConformanceIndicator {
    pub model: ConformanceModel,
}

impl Scorer for ConformanceIndicator {
    fn score(&self, sample: &Sample<'_>) -> Result<f64> {
        score_conformance(&self.model, sample.features)
    }
}

#[derive(Serialize, Deserialize)]
struct ConformancePayload {
    k: usize,
    deviation: DeviationMode,
    reference: ReferenceFile,
    gaussian: GaussianClassModel,
}

impl Indicator for ConformanceIndicator {
    fn kind(&self) -> &'static str {
        "conformance"
    }

    fn uncertainty(&self) -> Uncertainty {
        Uncertainty::Aleatoric
    }

    fn save(&self, ctx: &mut SaveContext) -> Result<serde_json::Value> {
        let reference = ctx.persist_reference(&self.model.reference)?;
        Ok(serde_json::to_value(ConformancePayload {
            k: self.model.k,
            deviation: self.model.deviation,
            reference,
            gaussian: self.model.gaussian.clone(),
        })?)
    }
}

pub struct ConformanceFactory;

impl IndicatorFactory for ConformanceFactory {
    fn kind(&self) -> &'static str {
        "conformance"
    }

    fn uncertainty(&self) -> Uncertainty {
        Uncertainty::Aleatoric
    }

    fn fit(&self, train: &SampleSet, ctx: &FitContext<'_>) -> Result<Box<dyn Indicator>> {
        let p = ctx.params;
        Ok(Box::new(ConformanceIndicator { model: fit_conformance(&train.data, p.k, p.deviation, p.regularization)? }))
    }

    fn load(&self, payload: &serde_json::Value, ctx: &LoadContext) -> Result<Box<dyn Indicator>> {
        let p: ConformancePayload = from_payload(payload)?;
        let reference = ctx.load_reference(&p.reference)?;
        validate_gaussian(&p.gaussian)?;
        if p.k == 0 || p.k >= reference.len() || p.gaussian.dim() != reference.dim() {
            return Err(Error::Model("conformance payload does not fit its reference set".into()));
        }
        Ok(Box::new(ConformanceIndicator {
            model: ConformanceModel { k: p.k, deviation: p.deviation, reference, gaussian: p.gaussian },
        }))
    }
}
