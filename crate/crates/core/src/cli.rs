//! Command-line interface and the JSON campaign configuration.
//!
//! Settings resolve as flags, then the `--config` file, then defaults. The
//! output root is `--home`, else `output.root` from the config, else
//! `$PRESTO_HOME`, else `./presto-home`. Datasets and materialized containers
//! live under `<root>/store`.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, AnalysisError, BottleneckVerdict, Report, ReportFormat, StrategyRanking};
use crate::exec::{CpuModel, EngineCosts};
use crate::model::{
    enumerate_strategies, CacheMode, Compression, DType, ObjectiveWeights, OptionGrid, Pipeline, SplitSelection,
    StepSpec,
};
use crate::profiler::{Campaign, EpochSelector, ProfileConfig, ProfileError, Profiler};
use crate::storage::{self, BackendConfig, ProbeReport, Storage, StorageError};
use crate::workloads::{self, DatasetDescriptor, Layout, PresetName, WorkloadError, DEFAULT_SCALE};

pub const HOME_ENV: &str = "PRESTO_HOME";
const DEFAULT_HOME: &str = "presto-home";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("interrupted")]
    Interrupted,
}

impl CliError {
    /// 0 ok, 1 campaign failure, 2 I/O or configuration, 130 interrupted.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Interrupted => 130,
            CliError::Profile(e) if e.is_cancelled() => 130,
            CliError::Profile(ProfileError::Storage(_) | ProfileError::SourceMissing(_)) => 2,
            CliError::Profile(_) | CliError::Analysis(_) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Either a preset or an inline pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PipelineSpec {
    Preset {
        preset: PresetName,
        #[serde(default)]
        scale: Option<f64>,
        #[serde(default)]
        sample_count: Option<u64>,
    },
    Inline {
        source: DatasetDescriptor,
        steps: Vec<StepSpec>,
    },
}

/// A synthetic dataset to generate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub total_bytes: u64,
    pub bytes_per_sample: u64,
    #[serde(default = "default_dtype")]
    pub dtype: DType,
    #[serde(default = "default_layout")]
    pub layout: Layout,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub compressibility: f64,
}

fn default_dtype() -> DType {
    DType::U8
}

fn default_layout() -> Layout {
    Layout::ManySmallFiles
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendName {
    /// Plain filesystem, no throttling.
    Local,
    /// Throttled store at `--bandwidth-mbps` (default 200).
    Simulated,
    /// Throttled store with the storage-cluster profile.
    Cluster,
    /// The cluster profile scaled down 10x.
    Desk,
}

impl BackendName {
    pub fn config(self) -> BackendConfig {
        match self {
            BackendName::Local => BackendConfig::local_fs(),
            BackendName::Simulated => BackendConfig::simulated(200e6),
            BackendName::Cluster => BackendConfig::cluster_profile(),
            BackendName::Desk => BackendConfig::desk_profile(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BackendSpec {
    Named(BackendName),
    Config(BackendConfig),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub epochs: Option<u32>,
    pub runs_total: Option<u32>,
    pub sample_limit: Option<u64>,
    pub memory_budget: Option<u64>,
    pub seed: Option<u64>,
    pub epoch_selector: Option<EpochSelector>,
    pub cpu: Option<CpuModel>,
    pub costs: Option<EngineCosts>,
    pub cleanup: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub root: Option<PathBuf>,
    pub campaign_json: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

/// Everything a campaign needs, as read from `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignConfig {
    pub pipeline: Option<PipelineSpec>,
    pub generate: Option<GenerateRequest>,
    pub backend: Option<BackendSpec>,
    pub grid: Option<OptionGrid>,
    pub run: RunSection,
    pub weights: Option<ObjectiveWeights>,
    pub output: OutputSection,
}

impl CampaignConfig {
    pub fn load(path: &Path) -> Result<CampaignConfig, CliError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: CampaignConfig = serde_json::from_str(&text).map_err(|source| CliError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(p) = &self.pipeline {
            resolve_pipeline(Some(p), None, None, None)?;
        }
        if let Some(g) = &self.generate {
            check_generate(g)?;
        }
        if let Some(b) = &self.backend {
            backend_config(b).validate()?;
        }
        if let Some(w) = self.weights {
            check_weights(w)?;
        }
        Ok(())
    }
}

fn backend_config(spec: &BackendSpec) -> BackendConfig {
    match spec {
        BackendSpec::Named(n) => n.config(),
        BackendSpec::Config(c) => c.clone(),
    }
}

fn check_generate(g: &GenerateRequest) -> Result<(), CliError> {
    if g.total_bytes == 0 {
        return Err(CliError::Config("total size must be positive".into()));
    }
    if g.bytes_per_sample == 0 || g.bytes_per_sample > g.total_bytes {
        return Err(CliError::Config(
            "sample size must be positive and at most the total size".into(),
        ));
    }
    if !(0.0..=1.0).contains(&g.compressibility) {
        return Err(CliError::Config("compressibility must be in [0, 1]".into()));
    }
    Ok(())
}

fn check_weights(w: ObjectiveWeights) -> Result<(), CliError> {
    if !w.is_finite() || w.w_p < 0.0 || w.w_s < 0.0 || w.w_t < 0.0 {
        return Err(CliError::Config(format!(
            "weights must be finite and non-negative, got {},{},{}",
            w.w_p, w.w_s, w.w_t
        )));
    }
    Ok(())
}

fn resolve_pipeline(
    spec: Option<&PipelineSpec>,
    preset_flag: Option<PresetName>,
    scale_flag: Option<f64>,
    samples_flag: Option<u64>,
) -> Result<Pipeline, CliError> {
    let (mut pipeline, config_samples) = match (preset_flag, spec) {
        (Some(name), spec) => {
            let config_scale = match spec {
                Some(PipelineSpec::Preset { preset, scale, .. }) if *preset == name => *scale,
                _ => None,
            };
            let scale = scale_flag.or(config_scale).unwrap_or(DEFAULT_SCALE);
            (preset_pipeline(name, scale)?, None)
        }
        (None, Some(PipelineSpec::Preset {
            preset,
            scale,
            sample_count,
        })) => (
            preset_pipeline(*preset, scale_flag.or(*scale).unwrap_or(DEFAULT_SCALE))?,
            *sample_count,
        ),
        (None, Some(PipelineSpec::Inline { source, steps })) => (
            Pipeline::new(source.clone(), steps.clone()).map_err(|e| CliError::Config(e.to_string()))?,
            None,
        ),
        (None, None) => return Err(CliError::Config("no pipeline: pass --preset or set `pipeline` in the config".into())),
    };
    if let Some(n) = samples_flag.or(config_samples) {
        if n == 0 {
            return Err(CliError::Config("sample count must be positive".into()));
        }
        pipeline.source = pipeline.source.with_sample_count(n);
    }
    pipeline
        .source
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(pipeline)
}

fn preset_pipeline(name: PresetName, scale: f64) -> Result<Pipeline, CliError> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(CliError::Config(format!("scale must be positive, got {scale}")));
    }
    Ok(workloads::preset_scaled(name, scale)?)
}

fn parse_serde<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.trim().to_string())).map_err(|e| e.to_string())
}

fn parse_preset(s: &str) -> Result<PresetName, String> {
    s.parse().map_err(|e: WorkloadError| e.to_string())
}

fn parse_compression(s: &str) -> Result<Compression, String> {
    parse_serde(s)
}

fn parse_cache_mode(s: &str) -> Result<CacheMode, String> {
    parse_serde(s)
}

fn parse_dtype(s: &str) -> Result<DType, String> {
    parse_serde(s)
}

/// `host` or `virtual:<cores>`.
pub fn parse_cpu(s: &str) -> Result<CpuModel, String> {
    match s.split_once(':') {
        None if s == "host" => Ok(CpuModel::Host),
        Some(("virtual", n)) => match n.parse::<u32>() {
            Ok(cores) if cores > 0 => Ok(CpuModel::Virtual { cores }),
            _ => Err(format!("bad core count `{n}`")),
        },
        _ => Err(format!("expected `host` or `virtual:<cores>`, got `{s}`")),
    }
}

/// Three comma-separated non-negative numbers.
pub fn parse_weights(s: &str) -> Result<ObjectiveWeights, CliError> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let nums: Result<Vec<f64>, _> = parts.iter().map(|p| p.parse::<f64>()).collect();
    match nums {
        Ok(v) if v.len() == 3 => {
            let w = ObjectiveWeights::new(v[0], v[1], v[2]);
            check_weights(w)?;
            Ok(w)
        }
        _ => Err(CliError::Config(format!("weights must be `w_p,w_s,w_t`, got `{s}`"))),
    }
}

/// `all` or a comma-separated list of split indices.
pub fn parse_splits(s: &str) -> Result<SplitSelection, String> {
    if s.trim() == "all" {
        return Ok(SplitSelection::All);
    }
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("bad split `{p}`: {e}")))
        .collect::<Result<Vec<_>, _>>()
        .map(SplitSelection::List)
}

#[derive(Debug, Parser)]
#[command(name = "presto", version, about = "Profile preprocessing strategies of ML input pipelines")]
pub struct Cli {
    /// Output root [default: $PRESTO_HOME or ./presto-home]
    #[arg(long, global = true)]
    pub home: Option<PathBuf>,
    /// Campaign configuration JSON.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// More log output; repeat for debug.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic or preset dataset to the store.
    Generate(GenerateArgs),
    /// Measure backend bandwidth and op rate.
    Probe(ProbeArgs),
    /// Materialize and profile every strategy of a pipeline.
    Profile(ProfileArgs),
    /// Rank the strategies of a campaign.
    Rank(RankArgs),
    /// Emit a campaign as CSV or JSON.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum)]
    pub backend: Option<BackendName>,
    /// Aggregate bandwidth of a simulated backend.
    #[arg(long)]
    pub bandwidth_mbps: Option<f64>,
    /// Per-open latency of a simulated backend.
    #[arg(long)]
    pub open_latency_ms: Option<f64>,
    /// Operations per second of a simulated backend.
    #[arg(long)]
    pub iops_cap: Option<f64>,
    /// Refuse writes past this many MB.
    #[arg(long)]
    pub capacity_mb: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<PresetName>,
    /// Fraction of the full-size dataset [default: 1/64].
    #[arg(long)]
    pub scale: Option<f64>,
    /// Override the source sample count.
    #[arg(long)]
    pub samples: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LayoutArg {
    Files,
    Containers,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Total dataset size for synthetic data.
    #[arg(long)]
    pub total_mb: Option<f64>,
    /// Bytes per synthetic sample, in kB.
    #[arg(long)]
    pub sample_kb: Option<f64>,
    #[arg(long, value_parser = parse_dtype)]
    pub dtype: Option<DType>,
    #[arg(long, value_enum)]
    pub layout: Option<LayoutArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fraction of zero bytes per sample.
    #[arg(long)]
    pub compressibility: Option<f64>,
    #[arg(long, default_value_t = 4)]
    pub parallelism: u32,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ProbeArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [1u32, 8])]
    pub workers: Vec<u32>,
    /// Files per worker; 1 is the sequential workload.
    #[arg(long, value_delimiter = ',', default_values_t = [1u32, 100])]
    pub files: Vec<u32>,
    #[arg(long, default_value_t = 16.0)]
    pub mb_per_worker: f64,
    /// Probe JSON [default: <root>/probe.json]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// `all` or a list such as `0,1,3`.
    #[arg(long, value_parser = parse_splits)]
    pub splits: Option<SplitSelection>,
    #[arg(long, value_delimiter = ',', value_parser = parse_compression)]
    pub compressions: Option<Vec<Compression>>,
    #[arg(long, value_delimiter = ',')]
    pub shards: Option<Vec<u32>>,
    #[arg(long, value_delimiter = ',')]
    pub parallelism: Option<Vec<u32>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_cache_mode)]
    pub cache_modes: Option<Vec<CacheMode>>,
    #[arg(long, value_delimiter = ',')]
    pub shuffle: Option<Vec<usize>>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub runs_total: Option<u32>,
    #[arg(long)]
    pub sample_limit: Option<u64>,
    #[arg(long)]
    pub memory_budget_mb: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_serde::<EpochSelector>)]
    pub epoch_selector: Option<EpochSelector>,
    /// `host` or `virtual:<cores>`.
    #[arg(long, value_parser = parse_cpu)]
    pub cpu: Option<CpuModel>,
    /// Delete each strategy's containers once profiled.
    #[arg(long)]
    pub cleanup: bool,
    /// `w_p,w_s,w_t` for the printed ranking.
    #[arg(long)]
    pub weights: Option<String>,
    /// Campaign JSON [default: <root>/campaign.json]
    #[arg(long)]
    pub out_json: Option<PathBuf>,
    /// Campaign CSV [default: <root>/campaign.csv]
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Clone, Args)]
pub struct RankArgs {
    /// Campaign JSON [default: <root>/campaign.json]
    #[arg(long)]
    pub campaign: Option<PathBuf>,
    /// `w_p,w_s,w_t` [default: 0,0,1]
    #[arg(long, allow_hyphen_values = true)]
    pub weights: Option<String>,
    /// Ranking JSON [default: <root>/ranking.json]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub campaign: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
    #[arg(long, allow_hyphen_values = true)]
    pub weights: Option<String>,
    /// Probe JSON; adds I/O versus CPU bottleneck verdicts.
    #[arg(long)]
    pub probe: Option<PathBuf>,
    /// Utilization at or above which a strategy counts as I/O bound.
    #[arg(long, default_value_t = analysis::DEFAULT_IO_THRESHOLD)]
    pub threshold: f64,
    /// Output file [default: standard output]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

struct Context {
    home: PathBuf,
    config: CampaignConfig,
}

impl Context {
    fn new(cli: &Cli) -> Result<Context, CliError> {
        let config = match &cli.config {
            Some(p) => CampaignConfig::load(p)?,
            None => CampaignConfig::default(),
        };
        let home = cli
            .home
            .clone()
            .or_else(|| config.output.root.clone())
            .or_else(|| std::env::var_os(HOME_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_HOME));
        Ok(Context { home, config })
    }

    fn backend_config(&self, args: &BackendArgs) -> Result<BackendConfig, CliError> {
        let mut cfg = match (args.backend, &self.config.backend) {
            (Some(n), _) => n.config(),
            (None, Some(spec)) => backend_config(spec),
            (None, None) => BackendConfig::local_fs(),
        };
        if let Some(mbps) = args.bandwidth_mbps {
            cfg.bandwidth = mbps * 1e6;
        }
        if let Some(ms) = args.open_latency_ms {
            cfg.open_latency = ms / 1e3;
        }
        if let Some(ops) = args.iops_cap {
            cfg.iops_cap = Some(ops);
        }
        if let Some(mb) = args.capacity_mb {
            cfg.capacity = Some((mb * 1e6) as u64);
        }
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    fn open_store(&self, cfg: &BackendConfig) -> Result<Arc<dyn Storage>, CliError> {
        Ok(cfg.open(&self.home.join("store"))?)
    }

    fn weights(&self, flag: Option<&str>) -> Result<ObjectiveWeights, CliError> {
        match flag {
            Some(s) => parse_weights(s),
            None => Ok(self.config.weights.unwrap_or_default()),
        }
    }

    fn campaign_path(&self, flag: Option<&PathBuf>) -> PathBuf {
        flag.cloned()
            .or_else(|| self.config.output.campaign_json.clone())
            .unwrap_or_else(|| self.home.join("campaign.json"))
    }
}

fn create_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(io_err(dir)),
        _ => Ok(()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let ctx = Context::new(cli)?;
    match &cli.command {
        Command::Generate(a) => cmd_generate(&ctx, a),
        Command::Probe(a) => cmd_probe(&ctx, a),
        Command::Profile(a) => cmd_profile(&ctx, a),
        Command::Rank(a) => cmd_rank(&ctx, a),
        Command::Report(a) => cmd_report(&ctx, a),
    }
}

fn mb(x: f64, what: &str) -> Result<u64, CliError> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(CliError::Config(format!("{what} must be positive")));
    }
    Ok((x * 1e6).round() as u64)
}

fn cmd_generate(ctx: &Context, a: &GenerateArgs) -> Result<(), CliError> {
    let preset = a.pipeline.preset.or(match &ctx.config.pipeline {
        Some(PipelineSpec::Preset { preset, .. }) => Some(*preset),
        _ => None,
    });
    let synthetic = a.total_mb.is_some() || a.sample_kb.is_some();
    let datasets: Vec<DatasetDescriptor> = if preset == Some(PresetName::SyntheticGrid) {
        let total = match (a.total_mb, &ctx.config.generate) {
            (Some(t), _) => mb(t, "total size")?,
            (None, Some(g)) => g.total_bytes,
            (None, None) => 256_000_000,
        };
        if total == 0 {
            return Err(CliError::Config("total size must be positive".into()));
        }
        workloads::synthetic_grid(total)?
            .into_iter()
            .map(|d| d.with_seed(a.seed.unwrap_or(0)))
            .collect()
    } else if synthetic || (preset.is_none() && ctx.config.generate.is_some()) {
        let base = ctx.config.generate.clone();
        let total = match a.total_mb {
            Some(t) => mb(t, "total size")?,
            None => base.as_ref().map_or(0, |g| g.total_bytes),
        };
        let bps = match a.sample_kb {
            Some(k) => (k * 1e3).round() as u64,
            None => base.as_ref().map_or(0, |g| g.bytes_per_sample),
        };
        let req = GenerateRequest {
            total_bytes: total,
            bytes_per_sample: bps,
            dtype: a.dtype.or(base.as_ref().map(|g| g.dtype)).unwrap_or(DType::U8),
            layout: match a.layout {
                Some(LayoutArg::Files) => Layout::ManySmallFiles,
                Some(LayoutArg::Containers) => Layout::Containers,
                None => base.as_ref().map_or(Layout::ManySmallFiles, |g| g.layout),
            },
            seed: a.seed.or(base.as_ref().map(|g| g.seed)).unwrap_or(0),
            compressibility: a
                .compressibility
                .or(base.as_ref().map(|g| g.compressibility))
                .unwrap_or(0.0),
        };
        check_generate(&req)?;
        let desc = DatasetDescriptor::for_total(req.total_bytes, req.bytes_per_sample, req.dtype)?
            .with_layout(req.layout)
            .with_seed(req.seed)
            .with_compressibility(req.compressibility);
        vec![desc]
    } else {
        let mut p = resolve_pipeline(
            ctx.config.pipeline.as_ref(),
            a.pipeline.preset,
            a.pipeline.scale,
            a.pipeline.samples,
        )?;
        if let Some(s) = a.seed {
            p.source = p.source.with_seed(s);
        }
        if let Some(c) = a.compressibility {
            p.source = p.source.with_compressibility(c);
        }
        vec![p.source]
    };
    for d in &datasets {
        d.validate().map_err(|e| CliError::Config(e.to_string()))?;
    }
    let store = ctx.open_store(&ctx.backend_config(&a.backend)?)?;
    let mut out = io::stdout().lock();
    for d in &datasets {
        let stats = workloads::generate(&store, d, a.parallelism.max(1))?;
        let _ = writeln!(
            out,
            "{}: {} samples, {} in {:.2} s",
            d.root.display(),
            stats.samples,
            analysis::format_bytes(stats.bytes as f64),
            stats.seconds
        );
    }
    Ok(())
}

fn cmd_probe(ctx: &Context, a: &ProbeArgs) -> Result<(), CliError> {
    if a.workers.iter().chain(&a.files).any(|&n| n == 0) {
        return Err(CliError::Config("workers and files must be positive".into()));
    }
    let bytes = mb(a.mb_per_worker, "mb per worker")?;
    let cfg = ctx.backend_config(&a.backend)?;
    let out_path = a.out.clone().unwrap_or_else(|| ctx.home.join("probe.json"));
    let store = ctx.open_store(&cfg)?;
    let mut rows = Vec::new();
    for &w in &a.workers {
        for &f in &a.files {
            log::info!("probing {w} workers x {f} files");
            rows.push(storage::probe_storage(&store, w, f, bytes)?);
        }
    }
    print!("{}", probe_table(&rows));
    write_json(&out_path, &rows)
}

pub fn probe_table(rows: &[ProbeReport]) -> String {
    let mut s = format!(
        "{:>7}  {:>15}  {:>14}  {:>10}  {:>9}\n",
        "workers", "files/worker", "bandwidth", "iops", "seconds"
    );
    for r in rows {
        s.push_str(&format!(
            "{:>7}  {:>15}  {:>12}/s  {:>10.0}  {:>9.2}\n",
            r.workers,
            r.files_per_worker,
            analysis::format_bytes(r.bandwidth),
            r.iops,
            r.seconds
        ));
    }
    s
}

fn grid_from(ctx: &Context, a: &ProfileArgs) -> OptionGrid {
    let mut g = ctx.config.grid.clone().unwrap_or_default();
    if let Some(s) = &a.splits {
        g.splits = s.clone();
    }
    if let Some(v) = &a.compressions {
        g.compressions = v.clone();
    }
    if let Some(v) = &a.parallelism {
        g.parallelisms = v.clone();
        if a.shards.is_none() && ctx.config.grid.as_ref().is_none() {
            g.shards = v.clone();
        }
    }
    if let Some(v) = &a.shards {
        g.shards = v.clone();
    }
    if let Some(v) = &a.cache_modes {
        g.cache_modes = v.clone();
    }
    if let Some(v) = &a.shuffle {
        g.shuffle_buffers = v.clone();
    }
    g
}

fn profile_config_from(ctx: &Context, a: &ProfileArgs) -> Result<ProfileConfig, CliError> {
    let r = &ctx.config.run;
    let mut cfg = ProfileConfig::default();
    cfg.run.epochs = a.epochs.or(r.epochs).unwrap_or(cfg.run.epochs);
    cfg.runs_total = a.runs_total.or(r.runs_total).unwrap_or(cfg.runs_total);
    cfg.run.sample_limit = a.sample_limit.or(r.sample_limit);
    cfg.run.memory_budget = match a.memory_budget_mb {
        Some(m) => mb(m, "memory budget")?,
        None => r.memory_budget.unwrap_or(cfg.run.memory_budget),
    };
    cfg.run.rng_seed = a.seed.or(r.seed).unwrap_or(0);
    cfg.epoch_selector = a.epoch_selector.or(r.epoch_selector).unwrap_or_default();
    cfg.cpu = a.cpu.or(r.cpu).unwrap_or_default();
    cfg.costs = r.costs.unwrap_or_default();
    cfg.cleanup = a.cleanup || r.cleanup.unwrap_or(false);
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

fn check_grid(g: &OptionGrid) -> Result<(), CliError> {
    let empty = g.compressions.is_empty()
        || g.shards.is_empty()
        || g.parallelisms.is_empty()
        || g.cache_modes.is_empty()
        || g.shuffle_buffers.is_empty();
    if empty {
        return Err(CliError::Config("every grid dimension needs at least one value".into()));
    }
    if g.shards.contains(&0) || g.parallelisms.contains(&0) {
        return Err(CliError::Config("shards and parallelism must be positive".into()));
    }
    Ok(())
}

fn cmd_profile(ctx: &Context, a: &ProfileArgs) -> Result<(), CliError> {
    let pipeline = resolve_pipeline(
        ctx.config.pipeline.as_ref(),
        a.pipeline.preset,
        a.pipeline.scale,
        a.pipeline.samples,
    )?;
    let grid = grid_from(ctx, a);
    check_grid(&grid)?;
    let strategies = enumerate_strategies(&pipeline, &grid);
    if strategies.is_empty() {
        return Err(CliError::Config("the strategy grid selects no legal split".into()));
    }
    let cfg = profile_config_from(ctx, a)?;
    let weights = ctx.weights(a.weights.as_deref())?;
    let backend = ctx.backend_config(&a.backend)?;
    let json_path = a
        .out_json
        .clone()
        .or_else(|| ctx.config.output.campaign_json.clone())
        .unwrap_or_else(|| ctx.home.join("campaign.json"));
    let csv_path = a
        .out_csv
        .clone()
        .or_else(|| ctx.config.output.csv.clone())
        .unwrap_or_else(|| ctx.home.join("campaign.csv"));

    let store = ctx.open_store(&backend)?;
    workloads::ensure_generated(&store, &pipeline.source, 4)?;

    let cancel = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&cancel);
    if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)) {
        log::warn!("cannot install interrupt handler: {e}");
    }
    eprintln!("profiling {} strategies of {} samples", strategies.len(), pipeline.source.sample_count);
    let campaign = Profiler::new(store, cfg)
        .with_cancel(cancel)
        .profile_campaign(&pipeline, &strategies)?;

    write_json(&json_path, &campaign)?;
    let ranking = if campaign.records.is_empty() {
        None
    } else {
        Some(analysis::score_and_rank(&campaign.records, weights)?)
    };
    create_parent(&csv_path)?;
    let file = fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    analysis::emit_report(&campaign.records, ranking.as_ref(), ReportFormat::Csv, io::BufWriter::new(file))?;

    for f in &campaign.failures {
        eprintln!("failed: {}: {}", f.strategy_id, f.error);
    }
    if let Some(r) = &ranking {
        print!("{}", analysis::render_table(r));
    }
    eprintln!("wrote {} and {}", json_path.display(), csv_path.display());
    if campaign.cancelled {
        return Err(CliError::Interrupted);
    }
    Ok(())
}

fn load_campaign(ctx: &Context, flag: Option<&PathBuf>) -> Result<Campaign, CliError> {
    read_json(&ctx.campaign_path(flag))
}

fn rank(records: &[crate::profiler::ProfileRecord], w: ObjectiveWeights) -> Result<StrategyRanking, CliError> {
    analysis::score_and_rank(records, w).map_err(|e| match e {
        AnalysisError::NegativeWeight => CliError::Config(e.to_string()),
        AnalysisError::EmptyVector => CliError::Config("campaign has no records".into()),
        e => e.into(),
    })
}

fn cmd_rank(ctx: &Context, a: &RankArgs) -> Result<(), CliError> {
    let weights = ctx.weights(a.weights.as_deref())?;
    let campaign = load_campaign(ctx, a.campaign.as_ref())?;
    let ranking = rank(&campaign.records, weights)?;
    print!("{}", analysis::render_table(&ranking));
    let out = a.out.clone().unwrap_or_else(|| ctx.home.join("ranking.json"));
    write_json(&out, &ranking)
}

/// The sequential probe row closest to `workers` readers.
fn probe_for(rows: &[ProbeReport], workers: u32) -> Option<&ProbeReport> {
    let seq = rows.iter().filter(|r| r.files_per_worker == 1);
    seq.min_by_key(|r| (r.workers as i64 - workers as i64).abs())
}

fn cmd_report(ctx: &Context, a: &ReportArgs) -> Result<(), CliError> {
    let weights = ctx.weights(a.weights.as_deref())?;
    let probes: Option<Vec<ProbeReport>> = a.probe.as_deref().map(read_json).transpose()?;
    let campaign = load_campaign(ctx, a.campaign.as_ref())?;
    let ranking = if campaign.records.is_empty() {
        None
    } else {
        Some(rank(&campaign.records, weights)?)
    };
    let mut verdicts: Vec<BottleneckVerdict> = Vec::new();
    if let Some(rows) = &probes {
        for r in &campaign.records {
            let probe = probe_for(rows, r.strategy.parallelism);
            verdicts.push(analysis::classify_bottleneck(r, probe, a.threshold)?);
        }
    }
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => {
            create_parent(p)?;
            Box::new(io::BufWriter::new(fs::File::create(p).map_err(io_err(p))?))
        }
        None => Box::new(io::stdout().lock()),
    };
    match a.format {
        FormatArg::Csv => {
            analysis::emit_report(&campaign.records, ranking.as_ref(), ReportFormat::Csv, &mut out)?;
            for v in &verdicts {
                eprintln!(
                    "{}: {:?} ({:.0}% of {}/s)",
                    v.strategy_id,
                    v.verdict,
                    v.utilization * 100.0,
                    analysis::format_bytes(v.probed_bandwidth)
                );
            }
        }
        FormatArg::Json => {
            let report = Report {
                ranking,
                records: campaign.records,
                bottlenecks: verdicts,
            };
            serde_json::to_writer_pretty(&mut out, &report).map_err(|source| CliError::Json {
                path: a.out.clone().unwrap_or_else(|| PathBuf::from("-")),
                source,
            })?;
            writeln!(out).map_err(io_err(Path::new("-")))?;
        }
    }
    out.flush().map_err(io_err(Path::new("-")))?;
    Ok(())
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    init_logging(cli.verbose);
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_parse_and_reject_negative() {
        assert_eq!(parse_weights("0,0,1").unwrap(), ObjectiveWeights::new(0.0, 0.0, 1.0));
        assert!(matches!(parse_weights("1,-1,0"), Err(CliError::Config(_))));
        assert!(matches!(parse_weights("1,2"), Err(CliError::Config(_))));
    }

    #[test]
    fn cpu_and_splits_parse() {
        assert_eq!(parse_cpu("host").unwrap(), CpuModel::Host);
        assert_eq!(parse_cpu("virtual:8").unwrap(), CpuModel::Virtual { cores: 8 });
        assert!(parse_cpu("virtual:0").is_err());
        assert_eq!(parse_splits("all").unwrap(), SplitSelection::All);
        assert_eq!(parse_splits("0, 2").unwrap(), SplitSelection::List(vec![0, 2]));
        assert!(parse_splits("x").is_err());
    }

    #[test]
    fn enum_flags_use_serde_names() {
        assert_eq!(parse_compression("gzip").unwrap(), Compression::Gzip);
        assert_eq!(parse_cache_mode("sample-cache").unwrap(), CacheMode::SampleCache);
        assert_eq!(parse_dtype("f32").unwrap(), DType::F32);
        assert!(parse_compression("lz4").is_err());
    }

    #[test]
    fn config_schema_roundtrip() {
        let text = r#"{
            "pipeline": {"preset": "cv", "scale": 0.001},
            "backend": "desk",
            "grid": {"splits": [0, 1], "compressions": ["none", "gzip"]},
            "run": {"epochs": 2, "runs_total": 5, "cpu": {"kind": "virtual", "cores": 8}},
            "weights": {"w_p": 1.0, "w_s": 0.0, "w_t": 1.0},
            "output": {"root": "out"}
        }"#;
        let cfg: CampaignConfig = serde_json::from_str(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.backend, Some(BackendSpec::Named(BackendName::Desk)));
        assert_eq!(cfg.run.runs_total, Some(5));
        let back: CampaignConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn config_rejects_unknown_fields_and_bad_values() {
        assert!(serde_json::from_str::<CampaignConfig>(r#"{"pipline": {}}"#).is_err());
        let cfg: CampaignConfig = serde_json::from_str(r#"{"weights": {"w_p": -1, "w_s": 0, "w_t": 1}}"#).unwrap();
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
        let cfg: CampaignConfig =
            serde_json::from_str(r#"{"generate": {"total_bytes": 0, "bytes_per_sample": 10}}"#).unwrap();
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn flags_override_config_pipeline() {
        let spec = PipelineSpec::Preset {
            preset: PresetName::Cv,
            scale: Some(0.001),
            sample_count: Some(10),
        };
        let p = resolve_pipeline(Some(&spec), None, None, None).unwrap();
        assert_eq!(p.source.sample_count, 10);
        let p = resolve_pipeline(Some(&spec), None, None, Some(3)).unwrap();
        assert_eq!(p.source.sample_count, 3);
        let p = resolve_pipeline(Some(&spec), Some(PresetName::Nlp), None, Some(4)).unwrap();
        assert_eq!(p.steps.len(), 4);
        assert!(resolve_pipeline(None, None, None, None).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Interrupted.exit_code(), 130);
        assert_eq!(
            CliError::Profile(ProfileError::AllStrategiesFailed {
                count: 1,
                first: "x".into()
            })
            .exit_code(),
            1
        );
        assert_eq!(CliError::Storage(StorageError::StorageFull).exit_code(), 2);
    }
}
