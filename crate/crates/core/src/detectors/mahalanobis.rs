//! Minimum squared Mahalanobis distance to the class means.

use super::{
    check_dim, from_payload, labelled, FitContext, Indicator, IndicatorFactory, Sample, SampleSet, Scorer, Uncertainty,
};
use crate::dataset::FeatureDataset;
use crate::error::{Error, Result};
use crate::io::{LoadContext, SaveContext};
use crate::numerics::{class_statistics, CovarianceMode, GaussianClassModel, Regularization};

pub fn fit_mahalanobis(
    features: &FeatureDataset,
    mode: CovarianceMode,
    regularization: Regularization,
) -> Result<GaussianClassModel> {
    class_statistics(&features.features, &features.labels, mode, regularization)
}

pub fn score_mahalanobis(model: &GaussianClassModel, x: &[f64]) -> Result<f64> {
    model.min_mahalanobis_sq(x)
}

#[derive(Debug)]
pub struct MahalanobisIndicator {
    pub model: GaussianClassModel,
}

impl Scorer for MahalanobisIndicator {
    fn score(&self, sample: &Sample<'_>) -> Result<f64> {
        score_mahalanobis(&self.model, sample.features)
    }
}

impl Indicator for MahalanobisIndicator {
    fn kind(&self) -> &'static str {
        "mahalanobis"
    }

    fn uncertainty(&self) -> Uncertainty {
        Uncertainty::Epistemic
    }

    fn save(&self, _: &mut SaveContext) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(&self.model)?)
    }
}

pub struct MahalanobisFactory;

impl IndicatorFactory for MahalanobisFactory {
    fn kind(&self) -> &'static str {
        "mahalanobis"
    }

    fn uncertainty(&self) -> Uncertainty {
        Uncertainty::Epistemic
    }

    fn fit(&self, train: &SampleSet, ctx: &FitContext<'_>) -> Result<Box<dyn Indicator>> {
        let model = fit_mahalanobis(&labelled(&train.data), ctx.params.covariance_mode, ctx.params.regularization)?;
        Ok(Box::new(MahalanobisIndicator { model }))
    }

    fn load(&self, payload: &serde_json::Value, _: &LoadContext) -> Result<Box<dyn Indicator>> {
        let model: GaussianClassModel = from_payload(payload)?;
        validate_gaussian(&model)?;
        Ok(Box::new(MahalanobisIndicator { model }))
    }
}

/// Shape checks for a deserialized Gaussian model.
pub(crate) fn validate_gaussian(model: &GaussianClassModel) -> Result<()> {
    let d = model.dim();
    let n_cov = match model.covariance_mode {
        CovarianceMode::Tied => 1,
        CovarianceMode::PerClass => model.means.len(),
    };
    let bad = model.means.is_empty()
        || model.class_ids.len() != model.means.len()
        || model.means.iter().any(|m| m.len() != d)
        || model.precisions.len() != n_cov
        || model.covariances.len() != n_cov
        || model.precisions.iter().chain(&model.covariances).any(|p| p.rows() != d || p.cols() != d);
    if bad {
        return Err(Error::Model("inconsistent Gaussian class model shapes".into()));
    }
    for m in &model.means {
        check_dim(m, d)?;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("non-finite class mean".into()));
        }
    }
    Ok(())
}
