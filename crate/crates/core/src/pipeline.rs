//! End-to-end toy study: generate half-moons and OOD clusters, train the
//! classifier, fit every indicator in its penultimate space, compose two
//! detectors and an ensemble, and report TNR at the target TPR.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::classifier::{MlpModel, TrainConfig, TrainReport, DEFAULT_ARCH};
use crate::dataset::FeatureDataset;
use crate::detectors::DeviationMode;
use crate::detectors::{extract_features, FitContext, Indicator, IndicatorParams, Registry, SampleSet, Scorer};
use crate::ensemble::{fgsm_proxy, CombinerSpec, Detector, Ensemble, LogisticConfig, OodProxy, DEFAULT_FGSM_EPSILON};
use crate::error::{Error, Result};
use crate::metrics::{auroc, scored, tnr_at_tpr};
use crate::numerics::CovarianceMode;
use crate::toy_data::{half_moons, ood_clusters, ToyConfig, CLUSTER_TAGS};

/// Indicators reported on their own, in table order.
pub const TOY_INDICATORS: [&str; 7] = ["sbp", "entropy", "odin", "mahalanobis", "pca", "knn_entropy", "conformance"];
/// `(aleatoric, epistemic)` pairs composed into detectors.
pub const TOY_DETECTORS: [(&str, &str); 2] = [("odin", "mahalanobis"), ("conformance", "pca")];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyPipelineConfig {
    pub toy: ToyConfig,
    pub n_val_per_class: usize,
    pub n_val_ood_per_cluster: usize,
    pub arch: Vec<usize>,
    pub train: TrainConfig,
    pub k: usize,
    pub retained_fraction: f64,
    pub odin_epsilon: f64,
    pub odin_temperature: f64,
    pub covariance_mode: CovarianceMode,
    pub deviation: DeviationMode,
    pub fgsm_epsilon: f64,
    pub tpr: f64,
    pub logistic: LogisticConfig,
}

impl Default for ToyPipelineConfig {
    fn default() -> Self {
        let params = IndicatorParams::default();
        ToyPipelineConfig {
            toy: ToyConfig::default(),
            n_val_per_class: 100,
            n_val_ood_per_cluster: 50,
            arch: DEFAULT_ARCH.to_vec(),
            train: TrainConfig::default(),
            k: params.k,
            retained_fraction: params.retained_fraction,
            odin_epsilon: params.odin.epsilon,
            odin_temperature: params.odin.temperature,
            covariance_mode: params.covariance_mode,
            deviation: params.deviation,
            fgsm_epsilon: DEFAULT_FGSM_EPSILON,
            tpr: 0.95,
            logistic: LogisticConfig::default(),
        }
    }
}

impl ToyPipelineConfig {
    pub fn indicator_params(&self) -> IndicatorParams {
        let mut p = IndicatorParams {
            k: self.k,
            retained_fraction: self.retained_fraction,
            covariance_mode: self.covariance_mode,
            deviation: self.deviation,
            ..Default::default()
        };
        p.odin.epsilon = self.odin_epsilon;
        p.odin.temperature = self.odin_temperature;
        p
    }

    pub fn validate(&self) -> Result<()> {
        self.toy.validate()?;
        if self.n_val_per_class == 0 || self.n_val_ood_per_cluster == 0 {
            return Err(Error::invalid("validation set sizes must be >= 1"));
        }
        if !(self.tpr > 0.0 && self.tpr <= 1.0) {
            return Err(Error::invalid(format!("tpr must be in (0, 1], got {}", self.tpr)));
        }
        if !(self.fgsm_epsilon >= 0.0) {
            return Err(Error::invalid("fgsm_epsilon must be >= 0"));
        }
        if self.k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        crate::detectors::retained_components(self.retained_fraction, 1)?;
        self.indicator_params().odin.validate()
    }
}

/// Seeds for the independent draws of one run. Every split gets its own
/// ChaCha seed so that the splits never share samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSeeds {
    pub train: u64,
    pub val: u64,
    pub test: u64,
}

impl SplitSeeds {
    pub fn for_seed(seed: u64) -> Self {
        let base = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        SplitSeeds { train: seed, val: base ^ 0x0000_7661_6c00_0001, test: base ^ 0x0000_7465_7374_0002 }
    }
}

/// The generated splits of one run, all in input space.
#[derive(Clone, Debug)]
pub struct ToySplits {
    pub train: FeatureDataset,
    pub val_id: FeatureDataset,
    pub val_ood: FeatureDataset,
    pub test_id: FeatureDataset,
    pub test_ood: FeatureDataset,
}

pub fn toy_splits(cfg: &ToyPipelineConfig, seed: u64) -> Result<ToySplits> {
    let seeds = SplitSeeds::for_seed(seed);
    let train_cfg = ToyConfig { seed: seeds.train, ..cfg.toy.clone() };
    let val_cfg = ToyConfig {
        seed: seeds.val,
        n_id_per_class: cfg.n_val_per_class,
        n_ood_per_cluster: cfg.n_val_ood_per_cluster,
        ..cfg.toy.clone()
    };
    let test_cfg = ToyConfig { seed: seeds.test, ..cfg.toy.clone() };
    Ok(ToySplits {
        train: half_moons(&train_cfg)?,
        val_id: half_moons(&val_cfg)?,
        val_ood: ood_clusters(&val_cfg)?,
        test_id: half_moons(&test_cfg)?,
        test_ood: ood_clusters(&test_cfg)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Indicator,
    Detector,
    Ensemble,
}

impl Stage {
    fn as_str(self) -> &'static str {
        match self {
            Stage::Indicator => "indicator",
            Stage::Detector => "detector",
            Stage::Ensemble => "ensemble",
        }
    }
}

fn proxy_name(proxy: Option<OodProxy>) -> &'static str {
    match proxy {
        None => "-",
        Some(OodProxy::Real) => "ood",
        Some(OodProxy::Fgsm { .. }) => "fgsm",
    }
}

/// TNR on the union of clusters and on each cluster, plus AUROC on the union.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub tnr: f64,
    pub tnr_a: f64,
    pub tnr_b: f64,
    pub tnr_c: f64,
    pub auroc: f64,
}

impl Detection {
    fn values(&self) -> [f64; 5] {
        [self.tnr, self.tnr_a, self.tnr_b, self.tnr_c, self.auroc]
    }

    /// Per-cluster TNR over the named clusters pooled.
    pub fn tnr_of(&self, clusters: &str) -> f64 {
        let parts: Vec<f64> = clusters
            .chars()
            .map(|c| match c {
                'A' => self.tnr_a,
                'B' => self.tnr_b,
                _ => self.tnr_c,
            })
            .collect();
        parts.iter().sum::<f64>() / parts.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub stage: Stage,
    pub name: String,
    /// `-` for indicators, otherwise the OOD proxy the weights were fitted on.
    pub proxy: String,
    pub detection: Detection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub train_accuracy: f64,
    pub rows: Vec<ResultRow>,
}

impl SeedResult {
    pub fn get(&self, stage: Stage, name: &str, proxy: &str) -> Option<&Detection> {
        self.rows.iter().find(|r| r.stage == stage && r.name == name && r.proxy == proxy).map(|r| &r.detection)
    }
}

fn detection(scorer: &dyn Scorer, id: &SampleSet, ood: &SampleSet, tpr: f64) -> Result<Detection> {
    let id_scores = scorer.score_set(id)?;
    let ood_scores = scorer.score_set(ood)?;
    let tags = ood.data.cluster.as_ref().ok_or_else(|| Error::invalid("OOD test set lacks cluster tags"))?;
    let per_cluster = |tag: &str| -> Result<f64> {
        let sub: Vec<f64> = ood_scores.iter().zip(tags).filter(|(_, t)| *t == tag).map(|(s, _)| *s).collect();
        tnr_at_tpr(&scored(&id_scores, &sub), tpr)
    };
    let all = scored(&id_scores, &ood_scores);
    Ok(Detection {
        tnr: tnr_at_tpr(&all, tpr)?,
        tnr_a: per_cluster(CLUSTER_TAGS[0])?,
        tnr_b: per_cluster(CLUSTER_TAGS[1])?,
        tnr_c: per_cluster(CLUSTER_TAGS[2])?,
        auroc: auroc(&all)?,
    })
}

/// Retraining budget for [`train_toy_network`].
pub const MAX_TRAIN_ATTEMPTS: u64 = 16;
/// Each penultimate unit must be active on at least this share of training rows.
pub const MIN_ACTIVE_FRACTION: f64 = 0.1;
/// No class may have more than this share of its rows mapped to the all-zero feature vector.
pub const MAX_COLLAPSED_FRACTION: f64 = 0.1;
/// Training accuracy below which a run is retried.
pub const MIN_TRAIN_ACCURACY: f64 = 0.99;

/// Share of rows on which each penultimate unit is positive.
pub fn active_fractions(features: &FeatureDataset) -> Vec<f64> {
    (0..features.dim())
        .map(|j| {
            (0..features.len()).filter(|&i| features.row(i)[j] > 0.0).count() as f64 / features.len().max(1) as f64
        })
        .collect()
}

/// Per class `0..n`, the share of rows whose features are all zero.
pub fn collapsed_fractions(features: &FeatureDataset) -> Vec<f64> {
    let n = features.labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize);
    (0..n as i64)
        .map(|c| {
            let rows: Vec<usize> = (0..features.len()).filter(|&i| features.labels[i] == c).collect();
            let zero = rows.iter().filter(|&&i| features.row(i).iter().all(|&v| v <= 0.0)).count();
            zero as f64 / rows.len().max(1) as f64
        })
        .collect()
}

/// Trains with seeds `cfg.seed, cfg.seed + 2^32, ..` until the network fits the
/// training data, no penultimate unit is dead and no class collapses onto the
/// origin. A two-unit ReLU bottleneck often ends in one of those states, which
/// leaves the detectors a degenerate feature space. Returns the number of attempts used.
pub fn train_usable_network(
    train: &FeatureDataset,
    arch: &[usize],
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainReport, u64)> {
    let mut last = None;
    for attempt in 0..MAX_TRAIN_ATTEMPTS {
        let train_cfg = TrainConfig { seed: cfg.seed.wrapping_add(attempt << 32), ..cfg.clone() };
        let (network, report) = MlpModel::train(train, arch, &train_cfg)?;
        let features = extract_features(train, &network)?;
        let active = active_fractions(&features);
        let collapsed = collapsed_fractions(&features);
        if report.accuracy >= MIN_TRAIN_ACCURACY
            && active.iter().all(|&a| a >= MIN_ACTIVE_FRACTION)
            && collapsed.iter().all(|&c| c <= MAX_COLLAPSED_FRACTION)
        {
            return Ok((network, report, attempt + 1));
        }
        last = Some((report.accuracy, active, collapsed));
    }
    let (accuracy, active, collapsed) = last.expect("at least one attempt");
    Err(Error::TrainingFailed(format!(
        "no usable network after {MAX_TRAIN_ATTEMPTS} attempts \
         (last: accuracy {accuracy:.3}, active {active:?}, collapsed {collapsed:?})"
    )))
}

pub fn train_toy_network(
    cfg: &ToyPipelineConfig,
    train: &FeatureDataset,
    seed: u64,
) -> Result<(MlpModel, TrainReport)> {
    let (network, report, _) = train_usable_network(train, &cfg.arch, &TrainConfig { seed, ..cfg.train.clone() })?;
    Ok((network, report))
}

/// Runs the whole study for one seed, fitting detectors and the ensemble once per proxy.
pub fn run_seed(cfg: &ToyPipelineConfig, seed: u64, proxies: &[OodProxy]) -> Result<SeedResult> {
    cfg.validate()?;
    let splits = toy_splits(cfg, seed)?;
    let (network, report) = train_toy_network(cfg, &splits.train, seed)?;
    let network = Arc::new(network);

    let train = SampleSet::through_network(&splits.train, &network)?;
    let val_id = SampleSet::through_network(&splits.val_id, &network)?;
    let test_id = SampleSet::through_network(&splits.test_id, &network)?;
    let test_ood = SampleSet::through_network(&splits.test_ood, &network)?;

    let registry = Registry::builtin();
    let params = cfg.indicator_params();
    let ctx = FitContext { network: Some(&network), params: &params };
    let mut indicators: Vec<(&str, Arc<dyn Indicator>)> = Vec::new();
    for kind in TOY_INDICATORS {
        indicators.push((kind, registry.fit(kind, &train, &ctx)?.into()));
    }
    let find = |kind: &str| Arc::clone(&indicators.iter().find(|(k, _)| *k == kind).expect("fitted above").1);

    let mut rows = Vec::new();
    for (kind, ind) in &indicators {
        rows.push(ResultRow {
            stage: Stage::Indicator,
            name: kind.to_string(),
            proxy: proxy_name(None).into(),
            detection: detection(ind.as_ref(), &test_id, &test_ood, cfg.tpr)?,
        });
    }

    let mut detector_rows = Vec::new();
    let mut ensemble_rows = Vec::new();
    for &proxy in proxies {
        let proxy_inputs = match proxy {
            OodProxy::Real => splits.val_ood.clone(),
            OodProxy::Fgsm { epsilon } => fgsm_proxy(&splits.val_id, &network, epsilon)?,
        };
        let proxy_set = SampleSet::through_network(&proxy_inputs, &network)?;
        let spec = CombinerSpec::Logistic { config: cfg.logistic };
        let mut detectors = Vec::new();
        for (au, eu) in TOY_DETECTORS {
            let d = Detector::fit(find(au), find(eu), &spec, &val_id, &proxy_set)?;
            detector_rows.push(ResultRow {
                stage: Stage::Detector,
                name: d.name(),
                proxy: proxy_name(Some(proxy)).into(),
                detection: detection(&d, &test_id, &test_ood, cfg.tpr)?,
            });
            detectors.push(d);
        }
        let ensemble = Ensemble::fit(detectors, &val_id, &proxy_set, &cfg.logistic)?;
        ensemble_rows.push(ResultRow {
            stage: Stage::Ensemble,
            name: "ensemble".into(),
            proxy: proxy_name(Some(proxy)).into(),
            detection: detection(&ensemble, &test_id, &test_ood, cfg.tpr)?,
        });
    }
    rows.extend(detector_rows);
    rows.extend(ensemble_rows);
    Ok(SeedResult { seed, train_accuracy: report.accuracy, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub stage: Stage,
    pub name: String,
    pub proxy: String,
    pub mean: Detection,
    pub std: Detection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub config: ToyPipelineConfig,
    pub tpr: f64,
    pub seeds: Vec<SeedResult>,
    pub summary: Vec<SummaryRow>,
}

/// Sample mean and standard deviation (`n - 1` denominator; 0 for one value).
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Seeds `base, base+1, ..` with both proxies.
pub fn reproduce_toy(cfg: &ToyPipelineConfig, base_seed: u64, n_seeds: usize) -> Result<ToyReport> {
    if n_seeds == 0 {
        return Err(Error::invalid("at least one seed is required"));
    }
    let proxies = [OodProxy::Real, OodProxy::Fgsm { epsilon: cfg.fgsm_epsilon }];
    let seeds =
        (0..n_seeds as u64).map(|i| run_seed(cfg, base_seed.wrapping_add(i), &proxies)).collect::<Result<Vec<_>>>()?;
    let summary = seeds[0]
        .rows
        .iter()
        .enumerate()
        .map(|(idx, row)| {
            let cols: Vec<[f64; 5]> = seeds.iter().map(|s| s.rows[idx].detection.values()).collect();
            let stat = |j: usize| mean_std(&cols.iter().map(|c| c[j]).collect::<Vec<_>>());
            let s: Vec<(f64, f64)> = (0..5).map(stat).collect();
            SummaryRow {
                stage: row.stage,
                name: row.name.clone(),
                proxy: row.proxy.clone(),
                mean: Detection { tnr: s[0].0, tnr_a: s[1].0, tnr_b: s[2].0, tnr_c: s[3].0, auroc: s[4].0 },
                std: Detection { tnr: s[0].1, tnr_a: s[1].1, tnr_b: s[2].1, tnr_c: s[3].1, auroc: s[4].1 },
            }
        })
        .collect();
    Ok(ToyReport { config: cfg.clone(), tpr: cfg.tpr, seeds, summary })
}

impl ToyReport {
    pub fn summary_row(&self, stage: Stage, name: &str, proxy: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.stage == stage && r.name == name && r.proxy == proxy)
    }

    /// `seed,stage,name,proxy,tnr,tnr_A,tnr_B,tnr_C,auroc` rows.
    pub fn results_csv(&self) -> String {
        let mut out = String::from("seed,stage,name,proxy,tnr,tnr_A,tnr_B,tnr_C,auroc\n");
        for s in &self.seeds {
            for r in &s.rows {
                let d = &r.detection;
                let _ = writeln!(
                    out,
                    "{},{},{},{},{:?},{:?},{:?},{:?},{:?}",
                    s.seed,
                    r.stage.as_str(),
                    r.name,
                    r.proxy,
                    d.tnr,
                    d.tnr_a,
                    d.tnr_b,
                    d.tnr_c,
                    d.auroc
                );
            }
        }
        out
    }

    /// Aligned table of mean ± std in percent.
    pub fn table(&self) -> String {
        let pct = |m: f64, s: f64| {
            if self.seeds.len() > 1 {
                format!("{:6.2} ± {:5.2}", 100.0 * m, 100.0 * s)
            } else {
                format!("{:6.2}", 100.0 * m)
            }
        };
        let mut out = String::new();
        let _ = writeln!(
            out,
            "TNR (%) at {:.0}% TPR over {} seed(s); higher score = more OOD",
            100.0 * self.tpr,
            self.seeds.len()
        );
        let w = if self.seeds.len() > 1 { 14 } else { 6 };
        let _ = writeln!(
            out,
            "{:<10} {:<24} {:<5} {:>w$} {:>w$} {:>w$} {:>w$} {:>w$}",
            "stage", "name", "proxy", "A∪B∪C", "A", "B", "C", "AUROC"
        );
        for r in &self.summary {
            let _ = writeln!(
                out,
                "{:<10} {:<24} {:<5} {:>w$} {:>w$} {:>w$} {:>w$} {:>w$}",
                r.stage.as_str(),
                r.name,
                r.proxy,
                pct(r.mean.tnr, r.std.tnr),
                pct(r.mean.tnr_a, r.std.tnr_a),
                pct(r.mean.tnr_b, r.std.tnr_b),
                pct(r.mean.tnr_c, r.std.tnr_c),
                pct(r.mean.auroc, r.std.auroc),
            );
        }
        out
    }
}
