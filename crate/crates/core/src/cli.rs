//! Command-line driver. Every command prints its resolved settings as JSON on
//! stderr before doing any work; results go to files and stdout.
//!
//! Exit codes: 0 success, 2 usage (bad flags, bad settings, missing model for
//! ODIN/FGSM), 3 data (unreadable or malformed inputs, failed fits).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::classifier::MlpModel;
use crate::dataset::FeatureDataset;
use crate::detectors::{select_k, FitContext, Indicator, Registry, SampleSet, Scorer, K_CANDIDATES};
use crate::ensemble::{fgsm_proxy, CombinerSpec, Detector, Ensemble};
use crate::error::Error;
use crate::io::{
    content_hash, read_features_with, read_model, read_scores, render_features, write_features, write_model,
    write_report, write_scores, Model, ReadOptions,
};
use crate::metrics::MetricsReport;
use crate::pipeline::{reproduce_toy, toy_splits, train_usable_network, ToyPipelineConfig};
use crate::toy_data::CLUSTER_TAGS;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProxyMode {
    /// Held-out real OOD rows.
    #[default]
    Ood,
    /// FGSM copies of the held-out iD inputs (needs --model).
    Fgsm,
}

/// Everything a command can be configured with. Loaded from `--config`, then
/// overridden by flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,
    pub seeds: usize,
    pub proxy: ProxyMode,
    pub combiner: String,
    pub renormalize_softmax: bool,
    pub pipeline: ToyPipelineConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            seed: 0,
            seeds: 5,
            proxy: ProxyMode::Ood,
            combiner: "logistic".into(),
            renormalize_softmax: false,
            pipeline: ToyPipelineConfig::default(),
        }
    }
}

impl Settings {
    fn combiner_spec(&self) -> CliResult<CombinerSpec> {
        let mut spec: CombinerSpec = self.combiner.parse().map_err(|e: Error| usage(e.to_string()))?;
        if let CombinerSpec::Logistic { config } = &mut spec {
            *config = self.pipeline.logistic;
        }
        Ok(spec)
    }

    fn read_options(&self) -> ReadOptions {
        ReadOptions { renormalize_softmax: self.renormalize_softmax }
    }
}

#[derive(Debug, Parser)]
#[command(name = "oodkit", version, about = "OOD detection from aleatoric and epistemic uncertainty indicators")]
pub struct Cli {
    /// JSON settings file; flags take precedence over its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Rescale softmax columns of feature CSVs that do not sum to one.
    #[arg(long, global = true)]
    pub renormalize_softmax: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate half-moon train/validation/test splits and OOD clusters A, B, C.
    GenToy(GenToyArgs),
    /// Train the MLP classifier on a labelled input CSV.
    Train(TrainArgs),
    /// Write penultimate features and softmax of a dataset through a model.
    Extract(ExtractArgs),
    /// FGSM-perturb labelled inputs; rows come out labelled -1.
    AttackFgsm(AttackArgs),
    /// Fit a single indicator.
    Fit(FitArgs),
    /// Score a dataset with an indicator, detector or ensemble file.
    Score(ScoreArgs),
    /// Compose an aleatoric and an epistemic indicator into a detector.
    Detector(DetectorArgs),
    /// Fit the ensemble weights over several detectors.
    Ensemble(EnsembleArgs),
    /// Compute detection metrics from iD and OOD score files.
    Eval(EvalArgs),
    /// Run the whole toy study over several seeds and write the comparison table.
    ReproduceToy(ReproduceArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ToyFlags {
    /// In-distribution training/test points per class.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n_id: Option<u64>,
    /// Test points per OOD cluster.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n_ood: Option<u64>,
    /// Validation points per class.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n_val_id: Option<u64>,
    /// Validation points per OOD cluster.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n_val_ood: Option<u64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub cluster_sigma: Option<f64>,
}

impl ToyFlags {
    fn apply(&self, s: &mut Settings) {
        let p = &mut s.pipeline;
        if let Some(v) = self.n_id {
            p.toy.n_id_per_class = v as usize;
        }
        if let Some(v) = self.n_ood {
            p.toy.n_ood_per_cluster = v as usize;
        }
        if let Some(v) = self.n_val_id {
            p.n_val_per_class = v as usize;
        }
        if let Some(v) = self.n_val_ood {
            p.n_val_ood_per_cluster = v as usize;
        }
        if let Some(v) = self.noise {
            p.toy.noise_sigma = v;
        }
        if let Some(v) = self.cluster_sigma {
            p.toy.cluster_sigma = v;
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainFlags {
    /// Layer sizes, input to output, e.g. 2,50,2,2.
    #[arg(long, value_delimiter = ',')]
    pub arch: Option<Vec<usize>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

impl TrainFlags {
    fn apply(&self, s: &mut Settings) {
        let p = &mut s.pipeline;
        if let Some(v) = &self.arch {
            p.arch = v.clone();
        }
        if let Some(v) = self.epochs {
            p.train.epochs = v;
        }
        if let Some(v) = self.batch_size {
            p.train.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            p.train.learning_rate = v;
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct IndicatorFlags {
    /// Neighbour count for kNN-based indicators.
    #[arg(long)]
    pub k: Option<usize>,
    /// Share of PCA eigenvectors kept per class.
    #[arg(long)]
    pub retained_fraction: Option<f64>,
    #[arg(long)]
    pub odin_eps: Option<f64>,
    #[arg(long)]
    pub odin_temp: Option<f64>,
    /// tied or per_class.
    #[arg(long)]
    pub covariance: Option<String>,
    /// Conformance deviation: signed or absolute.
    #[arg(long)]
    pub deviation: Option<String>,
}

impl IndicatorFlags {
    fn apply(&self, s: &mut Settings) -> CliResult<()> {
        let p = &mut s.pipeline;
        if let Some(v) = self.k {
            p.k = v;
        }
        if let Some(v) = self.retained_fraction {
            p.retained_fraction = v;
        }
        if let Some(v) = self.odin_eps {
            p.odin_epsilon = v;
        }
        if let Some(v) = self.odin_temp {
            p.odin_temperature = v;
        }
        if let Some(v) = &self.covariance {
            p.covariance_mode = v.parse().map_err(|e: Error| usage(e.to_string()))?;
        }
        if let Some(v) = &self.deviation {
            p.deviation = v.parse().map_err(|e: Error| usage(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GenToyArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub toy: ToyFlags,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Labelled input CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args, Serialize)]
pub struct ExtractArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AttackArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub fgsm_eps: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// Indicator kind, e.g. mahalanobis, pca, conformance, odin.
    #[arg(long)]
    pub detector: String,
    /// Training rows: features, or network inputs when --model is given.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Held-out iD rows; with --val-ood, selects k for conformance when --k is absent.
    #[arg(long)]
    pub val_id: Option<PathBuf>,
    #[arg(long)]
    pub val_ood: Option<PathBuf>,
    #[command(flatten)]
    pub indicator: IndicatorFlags,
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    /// Indicator, detector or ensemble model file.
    #[arg(long)]
    pub detector: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ProxyFlags {
    /// Held-out in-distribution rows.
    #[arg(long)]
    pub id: PathBuf,
    /// Held-out OOD rows, used with --proxy ood.
    #[arg(long)]
    pub ood: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub proxy: Option<ProxyMode>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub fgsm_eps: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct DetectorArgs {
    /// Aleatoric indicator file.
    #[arg(long)]
    pub au: PathBuf,
    /// Epistemic indicator file.
    #[arg(long)]
    pub eu: PathBuf,
    /// logistic, max or linear.
    #[arg(long)]
    pub combiner: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub proxy: ProxyFlags,
}

#[derive(Debug, Args, Serialize)]
pub struct EnsembleArgs {
    /// Detector files, repeated or comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub detector: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub proxy: ProxyFlags,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Scores of in-distribution rows.
    #[arg(long)]
    pub id: PathBuf,
    /// Scores of OOD rows.
    #[arg(long)]
    pub ood: PathBuf,
    #[arg(long)]
    pub tpr: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ReproduceArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub tpr: Option<f64>,
    #[arg(long)]
    pub fgsm_eps: Option<f64>,
    #[command(flatten)]
    pub toy: ToyFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub indicator: IndicatorFlags,
}

fn load_settings(cli: &Cli) -> CliResult<Settings> {
    let mut s = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => Settings::default(),
    };
    if cli.renormalize_softmax {
        s.renormalize_softmax = true;
    }
    Ok(s)
}

fn resolve(cli: &Cli) -> CliResult<Settings> {
    let mut s = load_settings(cli)?;
    match &cli.command {
        Command::GenToy(a) => {
            s.seed = a.seed.unwrap_or(s.seed);
            a.toy.apply(&mut s);
        }
        Command::Train(a) => {
            s.seed = a.seed.unwrap_or(s.seed);
            a.train.apply(&mut s);
        }
        Command::AttackFgsm(a) => {
            s.pipeline.fgsm_epsilon = a.fgsm_eps.unwrap_or(s.pipeline.fgsm_epsilon);
        }
        Command::Fit(a) => a.indicator.apply(&mut s)?,
        Command::Detector(a) => {
            if let Some(c) = &a.combiner {
                s.combiner = c.clone();
            }
            apply_proxy(&a.proxy, &mut s);
        }
        Command::Ensemble(a) => apply_proxy(&a.proxy, &mut s),
        Command::Eval(a) => s.pipeline.tpr = a.tpr.unwrap_or(s.pipeline.tpr),
        Command::ReproduceToy(a) => {
            s.seed = a.seed.unwrap_or(s.seed);
            s.seeds = a.seeds.map_or(s.seeds, |v| v as usize);
            s.pipeline.tpr = a.tpr.unwrap_or(s.pipeline.tpr);
            s.pipeline.fgsm_epsilon = a.fgsm_eps.unwrap_or(s.pipeline.fgsm_epsilon);
            a.toy.apply(&mut s);
            a.train.apply(&mut s);
            a.indicator.apply(&mut s)?;
        }
        Command::Extract(_) | Command::Score(_) => {}
    }
    s.pipeline.validate().map_err(|e| usage(e.to_string()))?;
    s.combiner_spec()?;
    if s.seeds == 0 {
        return Err(usage("seeds must be >= 1"));
    }
    Ok(s)
}

fn apply_proxy(p: &ProxyFlags, s: &mut Settings) {
    if let Some(v) = p.proxy {
        s.proxy = v;
    }
    s.pipeline.fgsm_epsilon = p.fgsm_eps.unwrap_or(s.pipeline.fgsm_epsilon);
}

fn value<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).unwrap_or(serde_json::Value::Null)
}

fn command_args(cmd: &Command) -> (&'static str, serde_json::Value) {
    match cmd {
        Command::GenToy(a) => ("gen-toy", value(a)),
        Command::Train(a) => ("train", value(a)),
        Command::Extract(a) => ("extract", value(a)),
        Command::AttackFgsm(a) => ("attack-fgsm", value(a)),
        Command::Fit(a) => ("fit", value(a)),
        Command::Score(a) => ("score", value(a)),
        Command::Detector(a) => ("detector", value(a)),
        Command::Ensemble(a) => ("ensemble", value(a)),
        Command::Eval(a) => ("eval", value(a)),
        Command::ReproduceToy(a) => ("reproduce-toy", value(a)),
    }
}

/// Resolved settings and arguments, as printed on stderr.
pub fn resolved_config(cli: &Cli) -> CliResult<serde_json::Value> {
    let settings = resolve(cli)?;
    let (name, args) = command_args(&cli.command);
    Ok(serde_json::json!({ "command": name, "args": args, "settings": settings }))
}

fn print_json(value: &impl Serialize) -> CliResult<()> {
    println!("{}", serde_json::to_string_pretty(value).map_err(Error::from)?);
    Ok(())
}

fn load_network(path: &Path) -> CliResult<Arc<MlpModel>> {
    match read_model(path, &Registry::builtin())? {
        Model::Mlp(m) => Ok(Arc::new(m)),
        other => {
            Err(usage(format!("{} holds a '{}' model, expected a classifier (mlp)", path.display(), other.kind())))
        }
    }
}

fn require_model<'a>(model: &'a Option<PathBuf>, what: &str) -> CliResult<&'a Path> {
    model.as_deref().ok_or_else(|| {
        usage(format!(
            "{what} needs --model: it uses gradients of the built-in classifier, \
             which ingested feature files do not carry"
        ))
    })
}

/// Rows as features, or pushed through the network when one is given.
fn load_set(path: &Path, network: Option<&Arc<MlpModel>>, s: &Settings) -> CliResult<SampleSet> {
    let data = read_features_with(path, s.read_options())?;
    Ok(match network {
        Some(net) => SampleSet::through_network(&data, net)?,
        None => SampleSet::from_features(data),
    })
}

fn write_output(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::Data(Error::Io { path: path.to_path_buf(), source: e }))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::Data(Error::Io { path: path.to_path_buf(), source: e }))
}

fn gen_toy(a: &GenToyArgs, s: &Settings) -> CliResult<()> {
    let splits = toy_splits(&s.pipeline, s.seed)?;
    create_dir(&a.out)?;
    let mut files: Vec<(String, FeatureDataset)> = vec![
        ("train.csv".into(), splits.train),
        ("val-id.csv".into(), splits.val_id),
        ("val-ood.csv".into(), splits.val_ood),
        ("test-id.csv".into(), splits.test_id),
    ];
    for tag in CLUSTER_TAGS {
        files.push((format!("ood-{tag}.csv"), splits.test_ood.filter_cluster(tag)));
    }
    files.push(("test-ood.csv".into(), splits.test_ood));
    let mut manifest = Vec::new();
    for (name, ds) in &files {
        let bytes = render_features(ds)?;
        write_output(&a.out.join(name), &bytes)?;
        manifest.push(serde_json::json!({ "file": name, "rows": ds.len(), "content_hash": content_hash(&bytes) }));
    }
    print_json(&serde_json::json!({ "out": a.out, "seed": s.seed, "files": manifest }))
}

fn train(a: &TrainArgs, s: &Settings) -> CliResult<()> {
    let data = read_features_with(&a.data, s.read_options())?;
    if s.pipeline.arch.first() != Some(&data.dim()) {
        return Err(CliError::Data(Error::invalid(format!(
            "{} has {} input columns but --arch starts with {:?}",
            a.data.display(),
            data.dim(),
            s.pipeline.arch.first()
        ))));
    }
    let cfg = crate::classifier::TrainConfig { seed: s.seed, ..s.pipeline.train.clone() };
    let (network, report, attempts) = train_usable_network(&data, &s.pipeline.arch, &cfg)?;
    write_model(&a.out, &Model::Mlp(network))?;
    print_json(&serde_json::json!({
        "out": a.out,
        "accuracy": report.accuracy,
        "final_loss": report.final_loss,
        "attempts": attempts,
    }))
}

fn extract(a: &ExtractArgs, s: &Settings) -> CliResult<()> {
    let network = load_network(&a.model)?;
    let set = load_set(&a.data, Some(&network), s)?;
    write_features(&set.data, &a.out)?;
    print_json(&serde_json::json!({ "out": a.out, "rows": set.len() }))
}

fn attack(a: &AttackArgs, s: &Settings) -> CliResult<()> {
    let network = load_network(require_model(&a.model, "attack-fgsm")?)?;
    let data = read_features_with(&a.data, s.read_options())?;
    let out = fgsm_proxy(&data, &network, s.pipeline.fgsm_epsilon)?;
    write_features(&out, &a.out)?;
    print_json(&serde_json::json!({ "out": a.out, "rows": out.len(), "epsilon": s.pipeline.fgsm_epsilon }))
}

fn fit(a: &FitArgs, s: &Settings) -> CliResult<()> {
    let registry = Registry::builtin();
    if !registry.contains(&a.detector) {
        let kinds: Vec<&str> = registry.kinds().collect();
        return Err(usage(format!("unknown detector '{}' (expected one of {})", a.detector, kinds.join(", "))));
    }
    if a.detector == "odin" {
        require_model(&a.model, "odin")?;
    }
    let network = a.model.as_deref().map(load_network).transpose()?;
    let train = load_set(&a.data, network.as_ref(), s)?;
    let mut params = s.pipeline.indicator_params();
    let mut selection = None;
    if a.detector == "conformance" && a.indicator.k.is_none() {
        if let (Some(vi), Some(vo)) = (&a.val_id, &a.val_ood) {
            let val_id = load_set(vi, network.as_ref(), s)?;
            let val_ood = load_set(vo, network.as_ref(), s)?;
            let (k, curve) = select_k(
                &train.data,
                &val_id.data,
                &val_ood.data,
                &K_CANDIDATES,
                params.deviation,
                params.regularization,
            )?;
            params.k = k;
            selection = Some(curve);
        }
    }
    let ctx = FitContext { network: network.as_ref(), params: &params };
    let indicator = registry.fit(&a.detector, &train, &ctx)?;
    write_model(&a.out, &Model::Indicator(indicator))?;
    let mut report = serde_json::json!({ "out": a.out, "kind": a.detector, "rows": train.len() });
    if let Some(curve) = selection {
        report["k"] = params.k.into();
        report["k_selection"] = serde_json::json!(curve.iter().map(|(k, t)| [*k as f64, *t]).collect::<Vec<_>>());
    }
    print_json(&report)
}

fn uses_odin(model: &Model) -> bool {
    let det = |d: &Detector| d.au.kind() == "odin" || d.eu.kind() == "odin";
    match model {
        Model::Indicator(i) => i.kind() == "odin",
        Model::Detector(d) => det(d),
        Model::Ensemble(e) => e.detectors.iter().any(det),
        Model::Mlp(_) => false,
    }
}

fn score(a: &ScoreArgs, s: &Settings) -> CliResult<()> {
    let model = read_model(&a.detector, &Registry::builtin())?;
    if uses_odin(&model) {
        require_model(&a.model, "scoring with odin")?;
    }
    let network = a.model.as_deref().map(load_network).transpose()?;
    let set = load_set(&a.data, network.as_ref(), s)?;
    let scores = match &model {
        Model::Indicator(i) => i.score_set(&set)?,
        Model::Detector(d) => d.score_set(&set)?,
        Model::Ensemble(e) => e.score_set(&set)?,
        Model::Mlp(_) => return Err(usage(format!("{} is a classifier, not a detector", a.detector.display()))),
    };
    write_scores(&a.out, &set.data.ids, &scores)?;
    print_json(&serde_json::json!({ "out": a.out, "rows": scores.len(), "orientation": "higher = more OOD" }))
}

/// Held-out iD rows and the OOD proxy rows, both in feature space.
fn proxy_sets(p: &ProxyFlags, s: &Settings) -> CliResult<(SampleSet, SampleSet)> {
    let network = match s.proxy {
        ProxyMode::Fgsm => Some(load_network(require_model(&p.model, "--proxy fgsm")?)?),
        ProxyMode::Ood => p.model.as_deref().map(load_network).transpose()?,
    };
    let id = load_set(&p.id, network.as_ref(), s)?;
    let proxy = match s.proxy {
        ProxyMode::Ood => {
            let ood = p.ood.as_deref().ok_or_else(|| usage("--proxy ood needs --ood"))?;
            load_set(ood, network.as_ref(), s)?
        }
        ProxyMode::Fgsm => {
            let net = network.as_ref().expect("loaded above");
            let inputs = read_features_with(&p.id, s.read_options())?;
            SampleSet::through_network(&fgsm_proxy(&inputs, net, s.pipeline.fgsm_epsilon)?, net)?
        }
    };
    Ok((id, proxy))
}

fn load_indicator_file(path: &Path, registry: &Registry) -> CliResult<Arc<dyn Indicator>> {
    match read_model(path, registry)? {
        Model::Indicator(i) => Ok(i.into()),
        other => Err(usage(format!("{} holds a '{}' model, expected an indicator", path.display(), other.kind()))),
    }
}

fn detector(a: &DetectorArgs, s: &Settings) -> CliResult<()> {
    let registry = Registry::builtin();
    let au = load_indicator_file(&a.au, &registry)?;
    let eu = load_indicator_file(&a.eu, &registry)?;
    let (id, proxy) = proxy_sets(&a.proxy, s)?;
    let det = Detector::fit(au, eu, &s.combiner_spec()?, &id, &proxy)?;
    let name = det.name();
    let combiner = serde_json::to_value(&det.combiner).map_err(Error::from)?;
    write_model(&a.out, &Model::Detector(det))?;
    print_json(&serde_json::json!({ "out": a.out, "name": name, "combiner": combiner }))
}

fn ensemble(a: &EnsembleArgs, s: &Settings) -> CliResult<()> {
    let registry = Registry::builtin();
    let mut detectors = Vec::new();
    for path in &a.detector {
        match read_model(path, &registry)? {
            Model::Detector(d) => detectors.push(d),
            other => {
                return Err(usage(format!("{} holds a '{}' model, expected a detector", path.display(), other.kind())))
            }
        }
    }
    let (id, proxy) = proxy_sets(&a.proxy, s)?;
    let ens = Ensemble::fit(detectors, &id, &proxy, &s.pipeline.logistic)?;
    let (weights, intercept) = ens.model.folded();
    let names: Vec<String> = ens.detectors.iter().map(Detector::name).collect();
    write_model(&a.out, &Model::Ensemble(ens))?;
    print_json(&serde_json::json!({ "out": a.out, "detectors": names, "weights": weights, "intercept": intercept }))
}

fn eval(a: &EvalArgs, s: &Settings) -> CliResult<()> {
    let (_, id) = read_scores(&a.id)?;
    let (_, ood) = read_scores(&a.ood)?;
    let report = MetricsReport::from_scores(&id, &ood, s.pipeline.tpr)?;
    if let Some(out) = &a.out {
        write_report(out, &report)?;
    }
    print_json(&report)
}

fn reproduce(a: &ReproduceArgs, s: &Settings) -> CliResult<()> {
    let report = reproduce_toy(&s.pipeline, s.seed, s.seeds)?;
    create_dir(&a.out)?;
    write_output(&a.out.join("results.csv"), report.results_csv().as_bytes())?;
    let mut summary = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    summary.push('\n');
    write_output(&a.out.join("summary.json"), summary.as_bytes())?;
    let table = report.table();
    write_output(&a.out.join("summary.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let config = resolved_config(cli)?;
    eprintln!("{}", serde_json::to_string_pretty(&config).map_err(Error::from)?);
    let s = resolve(cli)?;
    match &cli.command {
        Command::GenToy(a) => gen_toy(a, &s),
        Command::Train(a) => train(a, &s),
        Command::Extract(a) => extract(a, &s),
        Command::AttackFgsm(a) => attack(a, &s),
        Command::Fit(a) => fit(a, &s),
        Command::Score(a) => score(a, &s),
        Command::Detector(a) => detector(a, &s),
        Command::Ensemble(a) => ensemble(a, &s),
        Command::Eval(a) => eval(a, &s),
        Command::ReproduceToy(a) => reproduce(a, &s),
    }
}

/// Parses `std::env::args`, runs the command and maps failures to exit codes.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let label = if matches!(e, CliError::Usage(_)) { "usage error" } else { "error" };
            eprintln!("{label}: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
