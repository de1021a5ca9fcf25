//! Combining indicator scores into detectors, and detectors into an ensemble.
//!
//! A [`Detector`] pairs an aleatoric and an epistemic indicator and merges
//! their two scores with a [`Combiner`]. An [`Ensemble`] runs logistic
//! regression over the scores of several detectors.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::classifier::MlpModel;
use crate::dataset::FeatureDataset;
use crate::detectors::{Indicator, Registry, Sample, SampleSet, Scorer};
use crate::error::{Error, Result};
use crate::io::{load_indicator, save_indicator, LoadContext, SaveContext};
use crate::metrics::id_quantile_threshold;
use crate::numerics::Matrix;

/// `max(au - δa, eu - δe)`; positive exactly when either score crosses its threshold.
pub fn combine_max(au: f64, eu: f64, delta_au: f64, delta_eu: f64) -> f64 {
    (au - delta_au).max(eu - delta_eu)
}

pub fn combine_linear(au: f64, eu: f64, w_au: f64, w_eu: f64) -> f64 {
    w_au * au + w_eu * eu
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub l2: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig { learning_rate: 0.1, iterations: 2000, l2: 1e-4 }
    }
}

/// Logistic regression on standardized channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub weights: Vec<f64>,
    pub intercept: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fits on rows of channel scores; `is_ood` marks the positive class.
pub fn fit_logistic(scores: &Matrix, is_ood: &[bool], cfg: &LogisticConfig) -> Result<LogisticModel> {
    let (n, c) = (scores.rows(), scores.cols());
    if is_ood.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: is_ood.len() });
    }
    if c == 0 {
        return Err(Error::invalid("no score channels"));
    }
    if !is_ood.contains(&true) || !is_ood.contains(&false) {
        return Err(Error::SingleClass);
    }
    if !(cfg.learning_rate > 0.0) || !(cfg.l2 >= 0.0) {
        return Err(Error::invalid("learning_rate must be > 0 and l2 >= 0"));
    }
    let mut mean = vec![0.0; c];
    let mut std = vec![0.0; c];
    for j in 0..c {
        let col = scores.column(j);
        let m = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
        let s = var.sqrt();
        if !s.is_finite() || s == 0.0 || s <= 1e-12 * m.abs() {
            return Err(Error::ZeroVariance(j));
        }
        mean[j] = m;
        std[j] = s;
    }
    let z: Vec<Vec<f64>> = scores
        .iter_rows()
        .map(|r| r.iter().zip(mean.iter().zip(&std)).map(|(v, (m, s))| (v - m) / s).collect())
        .collect();
    let y: Vec<f64> = is_ood.iter().map(|&o| f64::from(u8::from(o))).collect();

    let mut w = vec![0.0; c];
    let mut b = 0.0;
    let mut gw = vec![0.0; c];
    for _ in 0..cfg.iterations {
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        for (zi, yi) in z.iter().zip(&y) {
            let p = sigmoid(b + zi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>());
            let r = p - yi;
            gb += r;
            gw.iter_mut().zip(zi).for_each(|(g, v)| *g += r * v);
        }
        for (wj, gj) in w.iter_mut().zip(&gw) {
            *wj -= cfg.learning_rate * (gj / n as f64 + cfg.l2 * *wj);
        }
        b -= cfg.learning_rate * gb / n as f64;
    }
    Ok(LogisticModel { mean, std, weights: w, intercept: b })
}

impl LogisticModel {
    pub fn channels(&self) -> usize {
        self.weights.len()
    }

    /// Log-odds `β₀ + β·standardized(x)`.
    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.channels() {
            return Err(Error::DimensionMismatch { expected: self.channels(), got: x.len() });
        }
        let mut acc = self.intercept;
        for (((v, m), s), w) in x.iter().zip(&self.mean).zip(&self.std).zip(&self.weights) {
            acc += w * (v - m) / s;
        }
        Ok(acc)
    }

    /// Probability of OOD in (0, 1).
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        self.decision(x).map(sigmoid)
    }

    /// Weights and intercept acting on raw (unstandardized) channels.
    pub fn folded(&self) -> (Vec<f64>, f64) {
        let w: Vec<f64> = self.weights.iter().zip(&self.std).map(|(w, s)| w / s).collect();
        let b = self.intercept - w.iter().zip(&self.mean).map(|(w, m)| w * m).sum::<f64>();
        (w, b)
    }

    fn validate(&self) -> Result<()> {
        let c = self.weights.len();
        if c == 0 || self.mean.len() != c || self.std.len() != c {
            return Err(Error::Model("logistic model channel counts disagree".into()));
        }
        if let Some(j) = self.std.iter().position(|s| !(*s > 0.0)) {
            return Err(Error::ZeroVariance(j));
        }
        Ok(())
    }
}

/// `ln(max(s - floor, 0) + scale)`: squashes the heavy upper tail of distance
/// scores so a linear fit can weigh them against bounded ones. `floor` and
/// `scale` come from the fit data, which makes the compressed channel move by
/// a constant under positive affine rescaling of `s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogCompression {
    pub floor: f64,
    pub scale: f64,
}

impl LogCompression {
    /// `floor` is the smallest fit score, `scale` the median excess of the iD
    /// rows over it (the mean excess of all rows if that median is 0).
    pub fn fit(id: &[f64], all: &[f64]) -> Result<LogCompression> {
        let floor = all.iter().copied().fold(f64::INFINITY, f64::min);
        if !floor.is_finite() {
            return Err(Error::invalid("cannot compress an empty or non-finite channel"));
        }
        let mut excess: Vec<f64> = id.iter().map(|v| v - floor).collect();
        excess.sort_by(f64::total_cmp);
        let mut scale = if excess.is_empty() { 0.0 } else { excess[excess.len() / 2] };
        if !(scale > 0.0) {
            scale = all.iter().map(|v| v - floor).sum::<f64>() / all.len() as f64;
        }
        Ok(LogCompression { floor, scale })
    }

    pub fn apply(&self, s: f64) -> f64 {
        ((s - self.floor).max(0.0) + self.scale).ln()
    }

    fn validate(&self) -> Result<()> {
        if !self.floor.is_finite() || !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::Model("invalid log compression constants".into()));
        }
        Ok(())
    }
}

/// A fitted way of merging the AU and EU scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Combiner {
    Max { delta_au: f64, delta_eu: f64 },
    Linear { w_au: f64, w_eu: f64 },
    Logistic { compress: [LogCompression; 2], model: LogisticModel },
}

impl Combiner {
    /// Log-odds for the logistic combiner, the raw combined value otherwise.
    pub fn decision(&self, au: f64, eu: f64) -> Result<f64> {
        match self {
            Combiner::Max { delta_au, delta_eu } => Ok(combine_max(au, eu, *delta_au, *delta_eu)),
            Combiner::Linear { w_au, w_eu } => Ok(combine_linear(au, eu, *w_au, *w_eu)),
            Combiner::Logistic { compress, model } => model.decision(&[compress[0].apply(au), compress[1].apply(eu)]),
        }
    }

    pub fn combine(&self, au: f64, eu: f64) -> Result<f64> {
        let d = self.decision(au, eu)?;
        Ok(if matches!(self, Combiner::Logistic { .. }) { sigmoid(d) } else { d })
    }
}

/// How to build a [`Combiner`] from data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CombinerSpec {
    /// Missing thresholds default to the 95th percentile of held-out iD scores.
    Max {
        delta_au: Option<f64>,
        delta_eu: Option<f64>,
    },
    Linear {
        w_au: f64,
        w_eu: f64,
    },
    Logistic {
        config: LogisticConfig,
    },
}

impl Default for CombinerSpec {
    fn default() -> Self {
        CombinerSpec::Logistic { config: LogisticConfig::default() }
    }
}

impl std::str::FromStr for CombinerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(CombinerSpec::default()),
            "max" => Ok(CombinerSpec::Max { delta_au: None, delta_eu: None }),
            "linear" => Ok(CombinerSpec::Linear { w_au: 0.5, w_eu: 0.5 }),
            other => Err(Error::invalid(format!("unknown combiner '{other}' (expected logistic, max or linear)"))),
        }
    }
}

/// Nearest-rank percentile of `scores`.
pub fn percentile(scores: &[f64], q: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid("percentile of an empty set"));
    }
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(id_quantile_threshold(&s, q))
}

/// An aleatoric and an epistemic indicator merged into one score.
#[derive(Debug)]
pub struct Detector {
    pub au: Arc<dyn Indicator>,
    pub eu: Arc<dyn Indicator>,
    pub combiner: Combiner,
}

impl Detector {
    /// Fits the combiner. `id` is held-out in-distribution data, `proxy` the
    /// OOD stand-in (only used by the logistic combiner).
    pub fn fit(
        au: Arc<dyn Indicator>,
        eu: Arc<dyn Indicator>,
        spec: &CombinerSpec,
        id: &SampleSet,
        proxy: &SampleSet,
    ) -> Result<Detector> {
        let combiner = match spec {
            CombinerSpec::Linear { w_au, w_eu } => Combiner::Linear { w_au: *w_au, w_eu: *w_eu },
            CombinerSpec::Max { delta_au, delta_eu } => {
                let delta_au = match delta_au {
                    Some(d) => *d,
                    None => percentile(&au.score_set(id)?, 0.95)?,
                };
                let delta_eu = match delta_eu {
                    Some(d) => *d,
                    None => percentile(&eu.score_set(id)?, 0.95)?,
                };
                Combiner::Max { delta_au, delta_eu }
            }
            CombinerSpec::Logistic { config } => {
                let (mut x, y) = stack_channels(&[au.as_ref(), eu.as_ref()], id, proxy)?;
                let mut compress = Vec::with_capacity(2);
                for j in 0..2 {
                    let col = x.column(j);
                    let c = LogCompression::fit(&col[..id.len()], &col)?;
                    for i in 0..x.rows() {
                        x[(i, j)] = c.apply(x[(i, j)]);
                    }
                    compress.push(c);
                }
                Combiner::Logistic { compress: [compress[0], compress[1]], model: fit_logistic(&x, &y, config)? }
            }
        };
        Ok(Detector { au, eu, combiner })
    }

    pub fn name(&self) -> String {
        format!("{}+{}", self.au.kind(), self.eu.kind())
    }

    pub fn save(&self, ctx: &mut SaveContext) -> Result<serde_json::Value> {
        Ok(serde_json::json!({
            "au": save_indicator(self.au.as_ref(), ctx)?,
            "eu": save_indicator(self.eu.as_ref(), ctx)?,
            "combiner": serde_json::to_value(&self.combiner)?,
        }))
    }

    pub fn load(payload: &serde_json::Value, ctx: &LoadContext, registry: &Registry) -> Result<Detector> {
        let field =
            |name: &str| payload.get(name).ok_or_else(|| Error::Model(format!("detector payload lacks '{name}'")));
        let combiner: Combiner =
            serde_json::from_value(field("combiner")?.clone()).map_err(|e| Error::Model(e.to_string()))?;
        if let Combiner::Logistic { compress, model } = &combiner {
            compress.iter().try_for_each(LogCompression::validate)?;
            model.validate()?;
            if model.channels() != 2 {
                return Err(Error::Model("detector combiner must have two channels".into()));
            }
        }
        Ok(Detector {
            au: load_indicator(field("au")?, ctx, registry)?.into(),
            eu: load_indicator(field("eu")?, ctx, registry)?.into(),
            combiner,
        })
    }
}

impl Detector {
    /// Unsquashed detector outputs; these are the ensemble's channels.
    pub fn decision_set(&self, set: &SampleSet) -> Result<Vec<f64>> {
        let au = self.au.score_set(set)?;
        let eu = self.eu.score_set(set)?;
        au.iter().zip(&eu).map(|(a, e)| self.combiner.decision(*a, *e)).collect()
    }

    fn decision(&self, sample: &Sample<'_>) -> Result<f64> {
        self.combiner.decision(self.au.score(sample)?, self.eu.score(sample)?)
    }
}

impl Scorer for Detector {
    fn score(&self, sample: &Sample<'_>) -> Result<f64> {
        self.combiner.combine(self.au.score(sample)?, self.eu.score(sample)?)
    }

    fn score_set(&self, set: &SampleSet) -> Result<Vec<f64>> {
        let au = self.au.score_set(set)?;
        let eu = self.eu.score_set(set)?;
        au.iter().zip(&eu).map(|(a, e)| self.combiner.combine(*a, *e)).collect()
    }
}

fn stack_channels(scorers: &[&dyn Scorer], id: &SampleSet, proxy: &SampleSet) -> Result<(Matrix, Vec<bool>)> {
    stack_columns(scorers.len(), id, proxy, |j, set| scorers[j].score_set(set))
}

/// Channel matrix over `id` rows then `proxy` rows, with OOD flags.
fn stack_columns(
    channels: usize,
    id: &SampleSet,
    proxy: &SampleSet,
    column: impl Fn(usize, &SampleSet) -> Result<Vec<f64>>,
) -> Result<(Matrix, Vec<bool>)> {
    let cols_id = (0..channels).map(|j| column(j, id)).collect::<Result<Vec<_>>>()?;
    let cols_ood = (0..channels).map(|j| column(j, proxy)).collect::<Result<Vec<_>>>()?;
    let n = id.len() + proxy.len();
    let mut data = Vec::with_capacity(n * channels);
    for i in 0..id.len() {
        data.extend(cols_id.iter().map(|c| c[i]));
    }
    for i in 0..proxy.len() {
        data.extend(cols_ood.iter().map(|c| c[i]));
    }
    let y = (0..n).map(|i| i >= id.len()).collect();
    Ok((Matrix::new(n, channels, data)?, y))
}

/// Logistic regression over detector decisions (log-odds for logistic detectors).
#[derive(Debug)]
pub struct Ensemble {
    pub detectors: Vec<Detector>,
    pub model: LogisticModel,
}

impl Ensemble {
    pub fn fit(detectors: Vec<Detector>, id: &SampleSet, proxy: &SampleSet, cfg: &LogisticConfig) -> Result<Ensemble> {
        if detectors.is_empty() {
            return Err(Error::invalid("an ensemble needs at least one detector"));
        }
        if proxy.is_empty() {
            return Err(Error::invalid("the OOD proxy set is empty"));
        }
        let (x, y) = stack_columns(detectors.len(), id, proxy, |j, set| detectors[j].decision_set(set))?;
        let model = fit_logistic(&x, &y, cfg)?;
        Ok(Ensemble { detectors, model })
    }

    pub fn save(&self, ctx: &mut SaveContext) -> Result<serde_json::Value> {
        let detectors = self.detectors.iter().map(|d| d.save(ctx)).collect::<Result<Vec<_>>>()?;
        Ok(serde_json::json!({ "detectors": detectors, "logistic": serde_json::to_value(&self.model)? }))
    }

    pub fn load(payload: &serde_json::Value, ctx: &LoadContext, registry: &Registry) -> Result<Ensemble> {
        let detectors = payload
            .get("detectors")
            .and_then(|d| d.as_array())
            .ok_or_else(|| Error::Model("ensemble payload lacks 'detectors'".into()))?
            .iter()
            .map(|d| Detector::load(d, ctx, registry))
            .collect::<Result<Vec<_>>>()?;
        let model: LogisticModel = serde_json::from_value(
            payload.get("logistic").cloned().ok_or_else(|| Error::Model("ensemble payload lacks 'logistic'".into()))?,
        )
        .map_err(|e| Error::Model(e.to_string()))?;
        model.validate()?;
        if model.channels() != detectors.len() {
            return Err(Error::Model("ensemble weights do not match its detectors".into()));
        }
        Ok(Ensemble { detectors, model })
    }
}

impl Scorer for Ensemble {
    fn score(&self, sample: &Sample<'_>) -> Result<f64> {
        let x = self.detectors.iter().map(|d| d.decision(sample)).collect::<Result<Vec<_>>>()?;
        self.model.score(&x)
    }

    fn score_set(&self, set: &SampleSet) -> Result<Vec<f64>> {
        let cols = self.detectors.iter().map(|d| d.decision_set(set)).collect::<Result<Vec<_>>>()?;
        (0..set.len()).map(|i| self.model.score(&cols.iter().map(|c| c[i]).collect::<Vec<_>>())).collect()
    }
}

/// Source of the OOD rows the ensemble weights are fitted on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OodProxy {
    /// Held-out real OOD samples.
    Real,
    /// FGSM-perturbed copies of held-out iD inputs.
    Fgsm { epsilon: f64 },
}

pub const DEFAULT_FGSM_EPSILON: f64 = 1.0;

/// FGSM copies of labelled input rows, tagged `fgsm` and labelled `-1`.
pub fn fgsm_proxy(inputs: &FeatureDataset, network: &MlpModel, epsilon: f64) -> Result<FeatureDataset> {
    let mut rows = Vec::with_capacity(inputs.len());
    let mut ids = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let label = inputs.labels[i];
        if label < 0 || label as usize >= network.n_classes() {
            return Err(Error::invalid(format!("row '{}' needs a class label for FGSM, found {label}", inputs.ids[i])));
        }
        rows.push(network.fgsm(inputs.row(i), label as usize, epsilon)?);
        ids.push(format!("fgsm-{}", inputs.ids[i]));
    }
    let mut out = FeatureDataset::with_ids(ids, Matrix::from_rows(&rows, inputs.dim())?, vec![-1; inputs.len()])?;
    out.cluster = Some(vec!["fgsm".to_string(); inputs.len()]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{auroc, scored};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn combiner_examples() {
        assert_eq!(combine_max(1.5, 2.5, 1.5, 2.5), 0.0);
        assert_eq!(combine_max(3.0, -5.0, 1.0, 0.0), 2.0);
        assert_eq!(combine_linear(2.0, 9.0, 1.0, 0.0), 2.0);
        assert_eq!(combine_linear(2.0, 9.0, 0.0, 1.0), 9.0);
        assert_eq!(combine_linear(2.0, 4.0, 0.5, 0.5), 3.0);
    }

    #[test]
    fn max_rule_is_the_disjunction_of_single_thresholds() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (da, de) = (0.3, -0.2);
        for _ in 0..1000 {
            let (a, e) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            assert_eq!(combine_max(a, e, da, de) > 0.0, a > da || e > de);
        }
    }

    fn channel_data(seed: u64, n: usize, c: usize) -> (Matrix, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
        let data = (0..n * c)
            .map(|k| rng.random_range(-1.0..1.0) + if y[k / c] { 0.8 * (k % c + 1) as f64 } else { 0.0 })
            .collect();
        (Matrix::new(n, c, data).unwrap(), y)
    }

    #[test]
    fn separated_channel_gives_perfect_auroc() {
        let x = Matrix::new(8, 1, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        let y = vec![false, false, false, false, true, true, true, true];
        let m = fit_logistic(&x, &y, &LogisticConfig::default()).unwrap();
        let s: Vec<f64> = x.iter_rows().map(|r| m.score(r).unwrap()).collect();
        assert_eq!(auroc(&scored(&s[..4], &s[4..])).unwrap(), 1.0);
    }

    #[test]
    fn zero_iterations_give_one_half() {
        let (x, y) = channel_data(1, 30, 2);
        let m = fit_logistic(&x, &y, &LogisticConfig { iterations: 0, ..Default::default() }).unwrap();
        assert_eq!(m.weights, vec![0.0, 0.0]);
        assert!(x.iter_rows().all(|r| m.score(r).unwrap() == 0.5));
    }

    #[test]
    fn fit_errors() {
        let (x, _) = channel_data(1, 10, 2);
        assert!(matches!(fit_logistic(&x, &[false; 10], &LogisticConfig::default()), Err(Error::SingleClass)));
        let flat = Matrix::new(4, 2, vec![1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]).unwrap();
        let y = [false, true, false, true];
        assert!(matches!(fit_logistic(&flat, &y, &LogisticConfig::default()), Err(Error::ZeroVariance(0))));
        let m = fit_logistic(
            &x,
            &[true, false, true, false, true, false, true, false, true, false],
            &LogisticConfig::default(),
        )
        .unwrap();
        assert!(matches!(m.score(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn random_labels_give_chance_auroc() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 2000;
        let data: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Matrix::new(n, 2, data).unwrap();
        let y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let m = fit_logistic(&x, &y, &LogisticConfig::default()).unwrap();
        let (mut id, mut ood) = (Vec::new(), Vec::new());
        for (r, &o) in x.iter_rows().zip(&y) {
            if o { &mut ood } else { &mut id }.push(m.score(r).unwrap());
        }
        assert!((auroc(&scored(&id, &ood)).unwrap() - 0.5).abs() < 0.1);
    }

    #[test]
    fn folded_weights_give_the_same_ordering() {
        let (x, y) = channel_data(5, 120, 3);
        let m = fit_logistic(&x, &y, &LogisticConfig::default()).unwrap();
        let (w, b) = m.folded();
        for r in x.iter_rows() {
            let raw = b + r.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            assert!((raw - m.decision(r).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let (x, y) = channel_data(9, 90, 2);
        let cfg = LogisticConfig::default();
        assert_eq!(fit_logistic(&x, &y, &cfg).unwrap(), fit_logistic(&x, &y, &cfg).unwrap());
    }

    #[test]
    fn single_channel_keeps_the_roc() {
        let (x, y) = channel_data(3, 200, 1);
        let m = fit_logistic(&x, &y, &LogisticConfig::default()).unwrap();
        assert!(m.weights[0] > 0.0);
        let (mut raw_id, mut raw_ood, mut s_id, mut s_ood) = (vec![], vec![], vec![], vec![]);
        for (r, &o) in x.iter_rows().zip(&y) {
            let s = m.score(r).unwrap();
            if o {
                raw_ood.push(r[0]);
                s_ood.push(s);
            } else {
                raw_id.push(r[0]);
                s_id.push(s);
            }
        }
        // Same ROC means the same pairwise order statistics at every threshold.
        let all_raw: Vec<f64> = raw_id.iter().chain(&raw_ood).copied().collect();
        let all_s: Vec<f64> = s_id.iter().chain(&s_ood).copied().collect();
        for i in 0..all_raw.len() {
            for j in 0..all_raw.len() {
                assert_eq!(all_raw[i] < all_raw[j], all_s[i] < all_s[j]);
            }
        }
        assert_eq!(auroc(&scored(&raw_id, &raw_ood)).unwrap(), auroc(&scored(&s_id, &s_ood)).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn affine_channel_transform_keeps_scores(seed in 0u64..1000, channel in 0usize..2) {
            let (x, y) = channel_data(seed, 60, 2);
            let mut moved = x.clone();
            for r in 0..moved.rows() {
                moved[(r, channel)] = 7.0 * moved[(r, channel)] + 3.0;
            }
            let cfg = LogisticConfig { iterations: 300, ..Default::default() };
            let a = fit_logistic(&x, &y, &cfg).unwrap();
            let b = fit_logistic(&moved, &y, &cfg).unwrap();
            for (ra, rb) in x.iter_rows().zip(moved.iter_rows()) {
                prop_assert!((a.decision(ra).unwrap() - b.decision(rb).unwrap()).abs() < 1e-9);
            }
        }

        #[test]
        fn max_rule_disjunction(a in -10.0f64..10.0, e in -10.0f64..10.0, da in -10.0f64..10.0, de in -10.0f64..10.0) {
            prop_assert_eq!(combine_max(a, e, da, de) > 0.0, a > da || e > de);
        }
    }
}
