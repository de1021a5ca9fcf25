//! Minimum class-conditional PCA reconstruction error.

use serde::{Deserialize, Serialize};

use super::{
    check_dim, from_payload, labelled, FitContext, Indicator, IndicatorFactory, Sample, SampleSet, Scorer, Uncertainty,
};
use crate::dataset::FeatureDataset;
use crate::error::{Error, Result};
use crate::io::{LoadContext, SaveContext};
use crate::numerics::{symmetric_eig, Matrix};

/// `ceil(fraction · d)`, at least one and at most `d`.
pub fn retained_components(fraction: f64, d: usize) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("retained_fraction must be in (0, 1], got {fraction}")));
    }
    // The small slack keeps e.g. 0.4 · 5 from rounding up to 3.
    Ok(((fraction * d as f64 - 1e-9).ceil() as usize).clamp(1, d.max(1)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaClass {
    pub class_id: i64,
    pub mean: Vec<f64>,
    /// Retained eigenvectors as columns, by decreasing eigenvalue.
    pub components: Matrix,
    /// The remaining eigenvectors; the residual is the energy along these.
    pub residual_basis: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaClassModel {
    pub retained_fraction: f64,
    pub classes: Vec<PcaClass>,
}

impl PcaClassModel {
    pub fn dim(&self) -> usize {
        self.classes.first().map_or(0, |c| c.mean.len())
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        let r = retained_components(self.retained_fraction, d)?;
        let bad = self.classes.is_empty()
            || self.classes.iter().any(|c| {
                c.mean.len() != d
                    || c.components.rows() != d
                    || c.components.cols() != r
                    || c.residual_basis.rows() != d
                    || c.residual_basis.cols() != d - r
            });
        if bad {
            return Err(Error::Model("inconsistent PCA model shapes".into()));
        }
        Ok(())
    }
}

/// Per-class eigendecomposition of the empirical covariance over labelled rows.
pub fn fit_pca(features: &FeatureDataset, retained_fraction: f64) -> Result<PcaClassModel> {
    let d = features.dim();
    let r = retained_components(retained_fraction, d)?;
    let max_label = features.labels.iter().copied().filter(|&l| l >= 0).max().ok_or(Error::EmptyClass(0))?;
    let mut classes = Vec::new();
    for class_id in 0..=max_label {
        let rows: Vec<&[f64]> =
            (0..features.len()).filter(|&i| features.labels[i] == class_id).map(|i| features.row(i)).collect();
        if rows.is_empty() {
            return Err(Error::EmptyClass(class_id));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for row in &rows {
            mean.iter_mut().zip(*row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut cov = Matrix::zeros(d, d);
        let mut diff = vec![0.0; d];
        for row in &rows {
            diff.iter_mut().zip(row.iter().zip(&mean)).for_each(|(t, (v, m))| *t = v - m);
            for i in 0..d {
                for j in i..d {
                    cov[(i, j)] += diff[i] * diff[j];
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] /= n;
                cov[(j, i)] = cov[(i, j)];
            }
        }
        let eig = symmetric_eig(&cov)?;
        let mut residual_basis = Matrix::zeros(d, d - r);
        for i in 0..d {
            for j in r..d {
                residual_basis[(i, j - r)] = eig.vectors[(i, j)];
            }
        }
        classes.push(PcaClass { class_id, mean, components: eig.vectors.leading_columns(r), residual_basis });
    }
    Ok(PcaClassModel { retained_fraction, classes })
}

/// `min_c ‖(x-μ_c) - V_c V_cᵀ (x-μ_c)‖²`.
///
/// Evaluated as the squared length of `x-μ_c` along the discarded eigenvectors,
/// accumulated from the smallest eigenvalue up; this keeps the result
/// non-negative and monotone in the retained count. Full rank gives exactly 0.
pub fn score_pca(model: &PcaClassModel, x: &[f64]) -> Result<f64> {
    check_dim(x, model.dim())?;
    let mut best = f64::INFINITY;
    let mut centred = vec![0.0; x.len()];
    let mut coord = vec![0.0; x.len()];
    for class in &model.classes {
        centred.iter_mut().zip(x.iter().zip(&class.mean)).for_each(|(c, (v, m))| *c = v - m);
        let basis = &class.residual_basis;
        let extra = basis.cols();
        coord[..extra].iter_mut().for_each(|c| *c = 0.0);
        for (i, ci) in centred.iter().enumerate() {
            for (j, dst) in coord[..extra].iter_mut().enumerate() {
                *dst += basis[(i, j)] * ci;
            }
        }
        let e = coord[..extra].iter().rev().fold(0.0, |acc, t| acc + t * t);
        best = best.min(e);
    }
    Ok(best)
}

#[derive(Debug)]
pub struct PcaIndicator {
    pub model: PcaClassModel,
}

impl Scorer for PcaIndicator {
    fn score(&self, sample: &Sample<'_>) -> Result<f64> {
        score_pca(&self.model, sample.features)
    }
}

impl Indicator for PcaIndicator {
    fn kind(&self) -> &'static str {
        "pca"
    }

    fn uncertainty(&self) -> Uncertainty {
        Uncertainty::Epistemic
    }

    fn save(&self, _: &mut SaveContext) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(&self.model)?)
    }
}

pub struct PcaFactory;

impl IndicatorFactory for PcaFactory {
    fn kind(&self) -> &'static str {
        "pca"
    }

    fn uncertainty(&self) -> Uncertainty {
        Uncertainty::Epistemic
    }

    fn fit(&self, train: &SampleSet, ctx: &FitContext<'_>) -> Result<Box<dyn Indicator>> {
        Ok(Box::new(PcaIndicator { model: fit_pca(&labelled(&train.data), ctx.params.retained_fraction)? }))
    }

    fn load(&self, payload: &serde_json::Value, _: &LoadContext) -> Result<Box<dyn Indicator>> {
        let model: PcaClassModel = from_payload(payload)?;
        model.validate()?;
        Ok(Box::new(PcaIndicator { model }))
    }
}
