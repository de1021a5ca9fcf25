//! Aleatoric indicators computed from the classifier's predicted class distribution.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    from_payload, require_softmax, FitContext, Indicator, IndicatorFactory, Sample, SampleSet, Scorer, Uncertainty,
};
use crate::classifier::{sign, softmax_with_temperature, MlpModel, Objective};
use crate::dataset::check_softmax;
use crate::error::{Error, Result};
use crate::io::{LoadContext, SaveContext};

/// `-Σ p ln p` with `0·ln 0 = 0`.
pub fn score_entropy(softmax: &[f64]) -> Result<f64> {
    check_softmax(softmax, 0)?;
    Ok(-softmax.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>())
}

/// `1 - max_i p_i`.
pub fn score_sbp(softmax: &[f64]) -> Result<f64> {
    check_softmax(softmax, 0)?;
    Ok(1.0 - softmax.iter().fold(0.0f64, |m, &p| m.max(p)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdinParams {
    pub epsilon: f64,
    pub temperature: f64,
}

impl Default for OdinParams {
    fn default() -> Self {
        OdinParams { epsilon: 0.005, temperature: 10.0 }
    }
}

impl OdinParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::invalid("ODIN epsilon must be finite and >= 0"));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::invalid("ODIN temperature must be finite and > 0"));
        }
        Ok(())
    }
}

/// Temperature-scaled max-softmax after a gradient-sign step that raises the
/// scaled confidence: `x' = x - ε·sign(-∇ ln max softmax(f(x)/T))`, score
/// `1 - max softmax(f(x')/T)`.
pub fn score_odin(model: &MlpModel, x: &[f64], params: &OdinParams) -> Result<f64> {
    params.validate()?;
    let perturbed;
    let x = if params.epsilon > 0.0 {
        let grad = model.input_gradient(x, Objective::LogMaxSoftmax { temperature: params.temperature })?;
        perturbed = x.iter().zip(&grad).map(|(xi, gi)| xi - params.epsilon * sign(-gi)).collect::<Vec<_>>();
        perturbed.as_slice()
    } else {
        x
    };
    let logits = model.logits(x)?;
    let p = softmax_with_temperature(&logits, params.temperature);
    Ok(1.0 - p.iter().fold(0.0f64, |m, &v| m.max(v)))
}

#[derive(Debug)]
pub struct EntropyIndicator;

impl Scorer for EntropyIndicator {
    fn score(&self, sample: &Sample<'_>) -> Result<f64> {
        score_entropy(require_softmax(sample, "entropy")?)
    }
}

impl Indicator for EntropyIndicator {
    fn kind(&self) -> &'static str {
        "entropy"
    }

    fn uncertainty(&self) -> Uncertainty {
        Uncertainty::Aleatoric
    }

    fn save(&self, _: &mut SaveContext) -> Result<serde_json::Value> {
        Ok(serde_json::json!({}))
    }
}

pub struct EntropyFactory;

impl IndicatorFactory for EntropyFactory {
    fn kind(&self) -> &'static str {
        "entropy"
    }

    fn uncertainty(&self) -> Uncertainty {
        Uncertainty::Aleatoric
    }

    fn fit(&self, _: &SampleSet, _: &FitContext<'_>) -> Result<Box<dyn Indicator>> {
        Ok(Box::new(EntropyIndicator))
    }

    fn load(&self, _: &serde_json::Value, _: &LoadContext) -> Result<Box<dyn Indicator>> {
        Ok(Box::new(EntropyIndicator))
    }
}

#[derive(Debug)]
pub struct SbpIndicator;

impl Scorer for SbpIndicator {
    fn score(&self, sample: &Sample<'_>) -> Result<f64> {
        score_sbp(require_softmax(sample, "sbp")?)
    }
}

impl Indicator for SbpIndicator {
    fn kind(&self) -> &'static str {
        "sbp"
    }

    fn uncertainty(&self) -> Uncertainty {
        Uncertainty::Aleatoric
    }

    fn save(&self, _: &mut SaveContext) -> Result<serde_json::Value> {
        Ok(serde_json::json!({}))
    }
}

pub struct SbpFactory;

impl IndicatorFactory for SbpFactory {
    fn kind(&self) -> &'static str {
        "sbp"
    }

    fn uncertainty(&self) -> Uncertainty {
        Uncertainty::Aleatoric
    }

    fn fit(&self, _: &SampleSet, _: &FitContext<'_>) -> Result<Box<dyn Indicator>> {
        Ok(Box::new(SbpIndicator))
    }

    fn load(&self, _: &serde_json::Value, _: &LoadContext) -> Result<Box<dyn Indicator>> {
        Ok(Box::new(SbpIndicator))
    }
}

/// ODIN bound to the network whose gradients it uses.
#[derive(Debug)]
pub struct OdinIndicator {
    pub network: Arc<MlpModel>,
    pub params: OdinParams,
}

impl Scorer for OdinIndicator {
    fn score(&self, sample: &Sample<'_>) -> Result<f64> {
        let x = sample.input.ok_or_else(|| {
            Error::MissingInput("odin needs network inputs; score input-space data together with its model".into())
        })?;
        score_odin(&self.network, x, &self.params)
    }
}

#[derive(Serialize, Deserialize)]
struct OdinPayload {
    epsilon: f64,
    temperature: f64,
    network: MlpModel,
}

impl Indicator for OdinIndicator {
    fn kind(&self) -> &'static str {
        "odin"
    }

    fn uncertainty(&self) -> Uncertainty {
        Uncertainty::Aleatoric
    }

    fn save(&self, _: &mut SaveContext) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(OdinPayload {
            epsilon: self.params.epsilon,
            temperature: self.params.temperature,
            network: (*self.network).clone(),
        })?)
    }
}

pub struct OdinFactory;

impl IndicatorFactory for OdinFactory {
    fn kind(&self) -> &'static str {
        "odin"
    }

    fn uncertainty(&self) -> Uncertainty {
        Uncertainty::Aleatoric
    }

    fn fit(&self, _: &SampleSet, ctx: &FitContext<'_>) -> Result<Box<dyn Indicator>> {
        let network = ctx.network.ok_or_else(|| {
            Error::MissingInput("odin needs a classifier model; it cannot run on externally extracted features".into())
        })?;
        ctx.params.odin.validate()?;
        Ok(Box::new(OdinIndicator { network: Arc::clone(network), params: ctx.params.odin }))
    }

    fn load(&self, payload: &serde_json::Value, _: &LoadContext) -> Result<Box<dyn Indicator>> {
        let p: OdinPayload = from_payload(payload)?;
        p.network.validate()?;
        let params = OdinParams { epsilon: p.epsilon, temperature: p.temperature };
        params.validate()?;
        Ok(Box::new(OdinIndicator { network: Arc::new(p.network), params }))
    }
}
