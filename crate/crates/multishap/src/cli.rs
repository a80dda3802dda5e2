//! Command-line interface.
//!
//! Exit codes: 0 success, 1 validation band failure, 2 scorer or protocol
//! failure, 3 coverage failure in strict mode, 4 usage or input error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use clap::{Args, CommandFactory, Parser, Subcommand};
use multishap_core::heatmap::{aggregate_per_patch, overlay, render_grid, HeatmapSpec, Raster};
use multishap_core::{
    estimate, CellMatrix, EstimatorConfig, ExactOracle, FeatureSpace, InteractionEstimate, Mode, Normalization, Scorer,
    ScoreError, DEFAULT_EXHAUSTIVE_LIMIT,
};
use serde::Serialize;

use crate::client::{connect, ClientOptions, EndpointSpec, ProtocolClient};
use crate::config::FileConfig;
use crate::error::{Error, Result};
use crate::image_io::{read_image, write_heatmap};
use crate::manifest::{write_atomic, RunManifest};
use crate::matrix_io::{HeatmapInfo, MatrixDocument};
use crate::protocol::{Meta, SCORER_ENV};
use crate::report;
use crate::synthetic::{serve_http, serve_stdio, Fault, GameSpec, SyntheticScorer, SyntheticService};

pub const DEFAULT_K: usize = 128;
pub const DEFAULT_SEEDS: [u64; 3] = [0, 1, 2];
pub const DEFAULT_SAMPLE: &str = "sample";
pub const DEFAULT_OUT: &str = "multishap-out";

#[derive(Debug, Parser)]
#[command(name = "multishap", version, about = "Cross-modal Shapley interaction attribution for black-box scorers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the patch-token interaction matrix of one sample.
    Explain(ExplainArgs),
    /// Explain many samples over several seeds.
    Batch(BatchArgs),
    /// Compare estimates on a synthetic game against exact values.
    Validate(ValidateArgs),
    /// Summarize matrix documents into MSR and SDR.
    Report(ReportArgs),
    /// Exhaustive interaction and Shapley values for small universes.
    Exact(ExactArgs),
    /// Serve a synthetic game over the scorer protocol.
    ServeSynthetic(ServeArgs),
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// JSON config file or run manifest supplying defaults for any flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct ScorerArgs {
    /// cmd:<command>, http://host:port, or synthetic:<game>.
    #[arg(long)]
    pub scorer: Option<String>,
    /// Patch count for synthetic games.
    #[arg(long)]
    pub m: Option<usize>,
    /// Token count for synthetic games.
    #[arg(long)]
    pub n: Option<usize>,
    /// Patch grid as ROWSxCOLS (default: square if m is a square, else 1xm).
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<[usize; 2]>,
    /// Comma-separated token labels.
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
    /// Coalitions per request.
    #[arg(long)]
    pub max_batch: Option<usize>,
    /// Requests in flight per endpoint.
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    /// Artificial latency per scoring call of synthetic scorers.
    #[arg(long)]
    pub delay_ms: Option<u64>,
}

#[derive(Debug, Args, Default)]
pub struct EstimatorArgs {
    /// Sampled coalitions per run.
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fail with exit 3 when a cell has no evidence.
    #[arg(long)]
    pub strict: bool,
    /// Score repeated coalitions again instead of reusing them.
    #[arg(long)]
    pub no_cache: bool,
}

#[derive(Debug, Args, Default)]
pub struct RenderArgs {
    /// Base image for overlays; dimensions must be divisible by the grid.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Also write one heatmap per token.
    #[arg(long)]
    pub per_token: bool,
    /// Pixels per grid cell for standalone heatmaps.
    #[arg(long)]
    pub cell_px: Option<usize>,
    /// Overlay opacity in [0, 1].
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    pub render: RenderArgs,
    #[arg(long)]
    pub sample: Option<String>,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    pub render: RenderArgs,
    /// Comma-separated sample ids (default: all advertised by the scorer).
    #[arg(long, value_delimiter = ',')]
    pub samples: Option<Vec<String>>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Samples processed concurrently.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// additive, purepair[:...], multilinear:SEED[,density=D], or @fixture.json.
    #[arg(long)]
    pub game: Option<String>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Independent runs with seeds seed, seed+1, ...
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub delay_ms: Option<u64>,
    /// Largest universe the exact oracle may enumerate.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Print JSON lines instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directories (searched recursively) or files of *.phi.json documents.
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// Also write the report as JSON to this path.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Print JSON instead of text.
    #[arg(long)]
    pub as_json: bool,
}

#[derive(Debug, Args)]
pub struct ExactArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub game: Option<String>,
    /// External scorer instead of a synthetic game.
    #[arg(long)]
    pub scorer: Option<String>,
    #[arg(long)]
    pub sample: Option<String>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub normalization: Option<Normalization>,
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub timeout_ms: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub game: String,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    /// stdio or http.
    #[arg(long, default_value = "stdio")]
    pub transport: String,
    /// Listen address for http.
    #[arg(long, default_value = "127.0.0.1:0")]
    pub addr: String,
    /// Restrict and advertise sample ids.
    #[arg(long, value_delimiter = ',')]
    pub samples: Option<Vec<String>>,
    #[arg(long, default_value_t = 0)]
    pub delay_ms: u64,
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
    /// Misbehave on purpose: short, error, wrong-id or stall.
    #[arg(long, hide = true)]
    pub fault: Option<Fault>,
}

fn parse_grid(s: &str) -> std::result::Result<[usize; 2], String> {
    let (r, c) = s.split_once(['x', 'X']).ok_or_else(|| format!("grid `{s}` must look like 7x7"))?;
    let r = r.trim().parse().map_err(|_| format!("bad grid rows `{r}`"))?;
    let c = c.trim().parse().map_err(|_| format!("bad grid cols `{c}`"))?;
    Ok([r, c])
}

fn flag(on: bool) -> Option<bool> {
    on.then_some(true)
}

impl CommonArgs {
    fn file(&self) -> Result<FileConfig> {
        self.config.as_deref().map(FileConfig::load).transpose().map(Option::unwrap_or_default)
    }
}

impl ScorerArgs {
    fn layer(&self) -> FileConfig {
        FileConfig {
            scorer: self.scorer.clone(),
            m: self.m,
            n: self.n,
            grid: self.grid,
            token_labels: self.labels.clone(),
            max_batch: self.max_batch,
            max_in_flight: self.max_in_flight,
            timeout_ms: self.timeout_ms,
            delay_ms: self.delay_ms,
            ..FileConfig::default()
        }
    }
}

impl EstimatorArgs {
    fn layer(&self) -> FileConfig {
        FileConfig {
            k: self.k,
            mode: self.mode,
            seed: self.seed,
            strict: flag(self.strict),
            cache: self.no_cache.then_some(false),
            ..FileConfig::default()
        }
    }
}

impl RenderArgs {
    fn layer(&self) -> FileConfig {
        FileConfig {
            image: self.image.clone(),
            per_token: flag(self.per_token),
            cell_px: self.cell_px,
            alpha: self.alpha,
            ..FileConfig::default()
        }
    }
}

/// Effective settings: command line, then `MULTISHAP_SCORER`, then the
/// config file, then built-in defaults.
#[derive(Debug, Clone)]
pub struct Settings(pub FileConfig);

impl Settings {
    pub fn resolve(cli: FileConfig, env_scorer: Option<String>, file: FileConfig) -> Self {
        let env = FileConfig { scorer: env_scorer, ..FileConfig::default() };
        Settings(cli.or(env).or(file))
    }

    pub fn k(&self) -> usize {
        self.0.k.unwrap_or(DEFAULT_K)
    }

    pub fn mode(&self) -> Mode {
        self.0.mode.unwrap_or_default()
    }

    pub fn seed(&self) -> u64 {
        self.0.seed.unwrap_or(0)
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.0.seeds.clone().unwrap_or_else(|| DEFAULT_SEEDS.to_vec())
    }

    pub fn out(&self) -> PathBuf {
        self.0.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    pub fn estimator(&self, seed: u64) -> EstimatorConfig {
        EstimatorConfig {
            mode: self.mode(),
            samples: self.k(),
            seed,
            strict_missing: self.0.strict.unwrap_or(false),
            max_parallel_scores: self.0.max_in_flight.unwrap_or(1),
            cache: self.0.cache.unwrap_or(true),
        }
    }

    pub fn client(&self) -> ClientOptions {
        let d = ClientOptions::default();
        ClientOptions {
            timeout: self.0.timeout_ms.map(Duration::from_millis).unwrap_or(d.timeout),
            max_batch: self.0.max_batch.unwrap_or(d.max_batch),
            max_in_flight: self.0.max_in_flight.unwrap_or(d.max_in_flight),
            memoize: self.0.cache.unwrap_or(d.memoize),
        }
    }

    pub fn heatmap(&self) -> Result<HeatmapSpec> {
        let d = HeatmapSpec::default();
        let spec = HeatmapSpec { cell_px: self.0.cell_px.unwrap_or(d.cell_px), alpha: self.0.alpha.unwrap_or(d.alpha) };
        if !(0.0..=1.0).contains(&spec.alpha) {
            return Err(Error::usage(format!("--alpha {} outside [0, 1]", spec.alpha)));
        }
        if spec.cell_px == 0 {
            return Err(Error::usage("--cell-px must be at least 1"));
        }
        Ok(spec)
    }

    fn delay(&self) -> Duration {
        Duration::from_millis(self.0.delay_ms.unwrap_or(0))
    }

    fn check(&self) -> Result<()> {
        if self.k() == 0 {
            return Err(Error::usage("--K must be at least 1"));
        }
        if self.0.max_batch == Some(0) || self.0.max_in_flight == Some(0) || self.0.workers == Some(0) {
            return Err(Error::usage("--max-batch, --max-in-flight and --workers must be at least 1"));
        }
        Ok(())
    }

    /// Feature space for a scorer: sizes from its meta, geometry and labels
    /// from the settings.
    pub fn space(&self, meta: &Meta) -> Result<FeatureSpace> {
        if self.0.m.is_some_and(|m| m != meta.m) || self.0.n.is_some_and(|n| n != meta.n) {
            return Err(Error::usage(format!(
                "scorer reports m={}, n={}, which conflicts with --m/--n",
                meta.m, meta.n
            )));
        }
        let [rows, cols] = self.0.grid.unwrap_or_else(|| default_grid(meta.m));
        let mut space = FeatureSpace::new(meta.m, meta.n)?.with_grid(rows, cols)?;
        if let Some(labels) = &self.0.token_labels {
            space = space.with_token_labels(labels.clone())?;
        }
        Ok(space)
    }
}

/// Square grid when `m` is a perfect square, otherwise a single row.
pub fn default_grid(m: usize) -> [usize; 2] {
    let side = (m as f64).sqrt().round() as usize;
    if side * side == m {
        [side, side]
    } else {
        [1, m]
    }
}

/// An opened scorer: a synthetic game in-process or a wire client.
pub enum ScorerHandle {
    Synthetic { scorer: SyntheticScorer, descriptor: String },
    Wire { client: ProtocolClient, descriptor: String },
}

impl ScorerHandle {
    pub fn open(settings: &Settings, sample: &str) -> Result<Self> {
        let raw = settings
            .0
            .scorer
            .as_deref()
            .ok_or_else(|| Error::usage(format!("no scorer: pass --scorer or set {SCORER_ENV}")))?;
        let spec: EndpointSpec = raw.parse()?;
        match &spec {
            EndpointSpec::Synthetic(game) => {
                let game = game.parse::<GameSpec>()?.build(settings.0.m, settings.0.n)?;
                let scorer = SyntheticScorer::new(game).with_delay(settings.delay());
                Ok(ScorerHandle::Synthetic { scorer, descriptor: spec.to_string() })
            }
            _ => {
                let options = settings.client();
                let endpoint = connect(&spec, &options)?;
                let client = ProtocolClient::new(endpoint, sample, &options);
                Ok(ScorerHandle::Wire { client, descriptor: spec.to_string() })
            }
        }
    }

    pub fn meta(&self) -> Meta {
        match self {
            ScorerHandle::Synthetic { scorer, .. } => scorer.meta(),
            ScorerHandle::Wire { client, .. } => client.meta().clone(),
        }
    }

    pub fn descriptor(&self) -> &str {
        match self {
            ScorerHandle::Synthetic { descriptor, .. } | ScorerHandle::Wire { descriptor, .. } => descriptor,
        }
    }

    pub fn set_sample(&mut self, sample: &str) {
        if let ScorerHandle::Wire { client, .. } = self {
            client.set_sample(sample);
        }
    }

    pub fn wire_evals(&self) -> Option<u64> {
        match self {
            ScorerHandle::Synthetic { .. } => None,
            ScorerHandle::Wire { client, .. } => Some(client.wire_evals()),
        }
    }
}

impl Scorer for ScorerHandle {
    fn score(&mut self, coalitions: &[multishap_core::Coalition]) -> std::result::Result<Vec<f64>, ScoreError> {
        match self {
            ScorerHandle::Synthetic { scorer, .. } => scorer.score(coalitions),
            ScorerHandle::Wire { client, .. } => client.score(coalitions),
        }
    }
}

/// Sample id to use against a scorer's advertised sample list.
pub fn pick_sample(requested: Option<&str>, meta: &Meta) -> Result<String> {
    match (requested, meta.sample_ids.as_deref()) {
        (Some(s), Some(ids)) if !ids.iter().any(|i| i == s) => {
            Err(Error::usage(format!("scorer does not serve sample `{s}` (available: {})", ids.join(", "))))
        }
        (Some(s), _) => Ok(s.to_string()),
        (None, Some([only])) => Ok(only.clone()),
        (None, Some(ids)) if ids.len() > 1 => {
            Err(Error::usage(format!("scorer serves {} samples; pick one with --sample", ids.len())))
        }
        (None, _) => Ok(DEFAULT_SAMPLE.to_string()),
    }
}

/// File-name-safe form of a sample id.
pub fn file_stem(sample: &str) -> String {
    sample.chars().map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' }).collect()
}

fn patch_means(phi: &CellMatrix) -> Vec<Option<f64>> {
    (0..phi.rows())
        .map(|r| {
            let row = CellMatrix::from_cells(1, phi.cols(), phi.row(r).to_vec()).expect("row shape");
            aggregate_per_patch(&row).ok().map(|v| v[0])
        })
        .collect()
}

fn draw(values: &[Option<f64>], space: &FeatureSpace, spec: &HeatmapSpec, base: Option<&Raster>) -> Result<(Raster, f64)> {
    let (rows, cols) = space.grid().unwrap_or((1, space.patches()));
    Ok(match base {
        Some(base) => overlay(base, values, rows, cols, spec)?,
        None => render_grid(values, rows, cols, spec)?,
    })
}

pub struct ExplainOutput {
    pub sample_id: String,
    pub estimate: InteractionEstimate,
    pub manifest: RunManifest,
    pub files: Vec<PathBuf>,
}

/// Estimates one sample and writes its matrix, heatmaps and manifest into
/// `out_dir`. A failed run still leaves a manifest describing it.
pub fn explain_sample(
    scorer: &mut ScorerHandle,
    settings: &Settings,
    sample: &str,
    seed: u64,
    out_dir: &Path,
) -> Result<ExplainOutput> {
    let started = Instant::now();
    let stem = file_stem(sample);
    let manifest_path = out_dir.join(format!("{stem}.manifest.json"));
    let meta = scorer.meta();
    let space = settings.space(&meta)?;
    let spec = settings.heatmap()?;
    let base = settings.0.image.as_deref().map(read_image).transpose()?;
    let config = settings.estimator(seed);

    let mut echo = settings.0.clone();
    echo.sample = Some(sample.to_string());
    echo.samples = None;
    echo.seeds = None;
    echo.seed = Some(seed);
    echo.k = Some(config.samples);
    echo.mode = Some(config.mode);
    echo.strict = Some(config.strict_missing);
    echo.cache = Some(config.cache);
    echo.m = Some(space.patches());
    echo.n = Some(space.tokens());
    echo.grid = space.grid().map(|(r, c)| [r, c]);
    echo.cell_px = Some(spec.cell_px);
    echo.alpha = Some(spec.alpha);
    echo.per_token = Some(settings.0.per_token.unwrap_or(false));
    echo.out = Some(out_dir.to_path_buf());
    let mut manifest = RunManifest::new("explain", echo);
    manifest.space = Some(space.clone());
    manifest.scorer = Some(scorer.descriptor().to_string());
    manifest.sample_id = Some(sample.to_string());

    scorer.set_sample(sample);
    let estimate = match estimate(&mut *scorer, &space, &config) {
        Ok(e) => e,
        Err(e) => {
            if let multishap_core::Error::Scorer { evals_used, .. } = &e {
                manifest.evals_used = *evals_used;
            }
            let err = Error::Core(e);
            manifest.wire_evals = scorer.wire_evals();
            manifest.wall_ms = started.elapsed().as_millis() as u64;
            manifest.failed(&err).save(&manifest_path)?;
            return Err(err);
        }
    };

    let mut files = Vec::new();
    let agg = patch_means(&estimate.phi);
    let (raster, agg_bound) = draw(&agg, &space, &spec, base.as_ref())?;
    let agg_path = out_dir.join(format!("{stem}.agg.png"));
    write_heatmap(&agg_path, &raster, agg_bound, "aggregate over tokens, global")?;
    files.push(agg_path);

    let mut token_bounds = Vec::new();
    if settings.0.per_token.unwrap_or(false) {
        for j in 0..space.tokens() {
            let (raster, bound) = draw(&estimate.phi.column(j), &space, &spec, base.as_ref())?;
            let path = out_dir.join(format!("{stem}.tok{j}.png"));
            write_heatmap(&path, &raster, bound, &format!("per token {j}"))?;
            token_bounds.push(bound);
            files.push(path);
        }
    }

    let mut doc = MatrixDocument::from_estimate(sample, &space, &estimate, scorer.descriptor());
    doc.heatmap = Some(HeatmapInfo::new(agg_bound, token_bounds));
    let json_path = out_dir.join(format!("{stem}.phi.json"));
    doc.save(&json_path)?;
    let csv_path = out_dir.join(format!("{stem}.phi.csv"));
    write_atomic(&csv_path, doc.to_csv()?.as_bytes())?;
    files.insert(0, csv_path);
    files.insert(0, json_path);

    manifest.evals_used = estimate.evals_used;
    manifest.wire_evals = scorer.wire_evals();
    manifest.coverage = Some(estimate.coverage());
    manifest.outputs = files.iter().map(|p| p.display().to_string()).collect();
    manifest.wall_ms = started.elapsed().as_millis() as u64;
    manifest.save(&manifest_path)?;
    files.push(manifest_path);
    Ok(ExplainOutput { sample_id: sample.to_string(), estimate, manifest, files })
}

/// Entry point. Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with_env(args, std::env::var(SCORER_ENV).ok().filter(|s| !s.is_empty()), stdout, stderr)
}

pub fn run_with_env<I, T>(args: I, env_scorer: Option<String>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{e}");
                    0
                }
                _ => {
                    let _ = write!(stderr, "{}", e.render());
                    4
                }
            };
        }
    };
    let name = match &cli.command {
        Command::Explain(_) => "explain",
        Command::Batch(_) => "batch",
        Command::Validate(_) => "validate",
        Command::Report(_) => "report",
        Command::Exact(_) => "exact",
        Command::ServeSynthetic(_) => "serve-synthetic",
    };
    let result = match cli.command {
        Command::Explain(a) => cmd_explain(a, env_scorer, stdout),
        Command::Batch(a) => cmd_batch(a, env_scorer, stdout, stderr),
        Command::Validate(a) => cmd_validate(a, stdout),
        Command::Report(a) => cmd_report(a, stdout, stderr),
        Command::Exact(a) => cmd_exact(a, env_scorer, stdout),
        Command::ServeSynthetic(a) => cmd_serve(a, stdout),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if let Error::Usage(_) = e {
                let mut cmd = Cli::command();
                cmd.build();
                if let Some(sub) = cmd.find_subcommand_mut(name) {
                    let _ = write!(stderr, "\n{}", sub.render_usage());
                    let _ = writeln!(stderr);
                }
            }
            e.exit_code()
        }
    }
}

fn write_out(stdout: &mut dyn Write, text: &str) -> Result<()> {
    stdout.write_all(text.as_bytes()).map_err(Error::io("writing output"))
}

fn cmd_explain(a: ExplainArgs, env_scorer: Option<String>, stdout: &mut dyn Write) -> Result<i32> {
    let cli = FileConfig { sample: a.sample.clone(), out: a.common.out.clone(), ..FileConfig::default() }
        .or(a.scorer.layer())
        .or(a.estimator.layer())
        .or(a.render.layer());
    let settings = Settings::resolve(cli, env_scorer, a.common.file()?);
    settings.check()?;
    let requested = settings.0.sample.clone();
    let mut scorer = ScorerHandle::open(&settings, requested.as_deref().unwrap_or(DEFAULT_SAMPLE))?;
    let sample = pick_sample(requested.as_deref(), &scorer.meta())?;
    let out = explain_sample(&mut scorer, &settings, &sample, settings.seed(), &settings.out())?;
    let metrics = multishap_core::instance_metrics(&out.estimate.phi).ok();
    let summary = serde_json::json!({
        "sample_id": out.sample_id,
        "evals_used": out.estimate.evals_used,
        "coverage": out.estimate.coverage(),
        "metrics": metrics,
        "outputs": out.manifest.outputs,
    });
    write_out(stdout, &format!("{summary}\n"))?;
    Ok(0)
}

#[derive(Debug, Serialize)]
struct BatchItem {
    seed: u64,
    sample_id: String,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    exit_code: i32,
    evals_used: u64,
}

fn cmd_batch(a: BatchArgs, env_scorer: Option<String>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let started = Instant::now();
    let cli = FileConfig {
        samples: a.samples.clone(),
        seeds: a.seeds.clone(),
        workers: a.workers,
        out: a.common.out.clone(),
        ..FileConfig::default()
    }
    .or(a.scorer.layer())
    .or(a.estimator.layer())
    .or(a.render.layer());
    let settings = Settings::resolve(cli, env_scorer, a.common.file()?);
    settings.check()?;
    let first = ScorerHandle::open(&settings, DEFAULT_SAMPLE)?;
    let meta = first.meta();
    let samples = match (&settings.0.samples, &meta.sample_ids) {
        (Some(s), _) => {
            for id in s {
                pick_sample(Some(id), &meta)?;
            }
            s.clone()
        }
        (None, Some(ids)) => ids.clone(),
        (None, None) => vec![settings.0.sample.clone().unwrap_or_else(|| DEFAULT_SAMPLE.to_string())],
    };
    if samples.is_empty() {
        return Err(Error::usage("no samples to process"));
    }
    let seeds = settings.seeds();
    let out = settings.out();
    let jobs: Mutex<Vec<(u64, String)>> =
        Mutex::new(seeds.iter().flat_map(|&s| samples.iter().map(move |id| (s, id.clone()))).rev().collect());
    let results: Mutex<Vec<BatchItem>> = Mutex::new(Vec::new());
    let workers = settings.0.workers.unwrap_or(1).min(seeds.len() * samples.len());
    let spare = Mutex::new(Some(first));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                let handle = spare.lock().expect("lock").take();
                let mut handle = match handle {
                    Some(h) => Ok(h),
                    None => ScorerHandle::open(&settings, DEFAULT_SAMPLE),
                };
                loop {
                    let Some((seed, sample)) = jobs.lock().expect("lock").pop() else { break };
                    let outcome = match handle.as_mut() {
                        Ok(h) => explain_sample(h, &settings, &sample, seed, &out.join(format!("seed{seed}"))),
                        Err(e) => Err(Error::Transport(e.to_string())),
                    };
                    let item = match outcome {
                        Ok(o) => BatchItem {
                            seed,
                            sample_id: sample,
                            status: "ok",
                            error: None,
                            exit_code: 0,
                            evals_used: o.estimate.evals_used,
                        },
                        Err(e) => BatchItem {
                            seed,
                            sample_id: sample,
                            status: "failed",
                            error: Some(e.to_string()),
                            exit_code: e.exit_code(),
                            evals_used: 0,
                        },
                    };
                    results.lock().expect("lock").push(item);
                }
            });
        }
    });

    let mut items = results.into_inner().expect("lock");
    items.sort_by(|a, b| (a.seed, &a.sample_id).cmp(&(b.seed, &b.sample_id)));
    for item in items.iter().filter(|i| i.error.is_some()) {
        let _ = writeln!(stderr, "warning: seed {} sample {}: {}", item.seed, item.sample_id, item.error.as_deref().unwrap_or(""));
    }
    let code = items.iter().map(|i| i.exit_code).max().unwrap_or(0);
    let mut echo = settings.0.clone();
    echo.samples = Some(samples);
    echo.seeds = Some(seeds);
    let mut manifest = RunManifest::new("batch", echo);
    manifest.scorer = settings.0.scorer.clone();
    manifest.evals_used = items.iter().map(|i| i.evals_used).sum();
    manifest.outputs = items
        .iter()
        .filter(|i| i.status == "ok")
        .map(|i| out.join(format!("seed{}", i.seed)).join(format!("{}.phi.json", file_stem(&i.sample_id))).display().to_string())
        .collect();
    if code != 0 {
        manifest.status = crate::manifest::Status::Failed;
        manifest.error = Some(format!("{} of {} runs failed", items.iter().filter(|i| i.exit_code != 0).count(), items.len()));
    }
    manifest.wall_ms = started.elapsed().as_millis() as u64;
    manifest.save(&out.join("batch.manifest.json"))?;
    for item in &items {
        write_out(stdout, &format!("{}\n", serde_json::to_string(item)?))?;
    }
    Ok(code)
}

/// Per-cell comparison row printed by `validate`.
#[derive(Debug, Clone, Serialize)]
pub struct CellCheck {
    pub patch: usize,
    pub token: usize,
    pub estimate: Option<f64>,
    pub oracle: f64,
    pub abs_err: Option<f64>,
    pub stderr: f64,
    pub band: f64,
    pub within: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidateSummary {
    pub game: String,
    pub mode: Mode,
    #[serde(rename = "K")]
    pub k: usize,
    pub trials: usize,
    pub oracle: &'static str,
    pub max_abs_err: f64,
    pub mean_stderr: f64,
    pub missing: usize,
    pub violations: usize,
    pub max_evals: u64,
    pub eval_budget: u64,
    pub passed: bool,
}

pub struct Validation {
    pub cells: Vec<CellCheck>,
    pub summary: ValidateSummary,
}

/// Additive slack on the acceptance band so that games whose second-order
/// differences are constant, and whose standard errors are pure rounding,
/// still compare equal.
pub const BAND_FLOOR: f64 = 1e-12;

/// Runs `trials` estimates on `game` and compares the grand mean per cell
/// with the exact value the mode converges to.
pub fn validate_game(game_spec: &str, settings: &Settings) -> Result<Validation> {
    let spec: GameSpec = game_spec.parse()?;
    let game = spec.build(settings.0.m, settings.0.n)?;
    let space = game.space().clone();
    let limit = settings.0.limit.unwrap_or(DEFAULT_EXHAUSTIVE_LIMIT);
    let oracle = ExactOracle::tabulate(&mut game.clone(), &space, limit)?;
    let (truth, oracle_name) = match settings.mode() {
        Mode::Stratified => (oracle.sii_matrix(Normalization::Half), "exact_sii"),
        Mode::Uniform => (oracle.banzhaf_matrix(), "exact_banzhaf"),
    };
    let trials = settings.0.trials.unwrap_or(1);
    if trials == 0 {
        return Err(Error::usage("--trials must be at least 1"));
    }
    let (m, n, total) = (space.patches(), space.tokens(), space.total() as u64);
    let k = settings.k() as u64;
    let budget = k * (1 + total + (m * n) as u64) + 1;
    let mut scorer = SyntheticScorer::new(game).with_delay(settings.delay());
    let mut runs = Vec::with_capacity(trials);
    for t in 0..trials {
        let config = settings.estimator(settings.seed().wrapping_add(t as u64));
        runs.push(estimate(&mut scorer, &space, &config)?);
    }
    let max_evals = runs.iter().map(|r| r.evals_used).max().unwrap_or(0);

    let mut cells = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            let values: Vec<f64> = runs.iter().filter_map(|r| r.phi.get(i, j)).collect();
            let oracle = truth.get(i, j).expect("exact matrix is full");
            let (estimate, stderr) = match values.len() {
                0 => (None, 0.0),
                1 => {
                    let within = runs.iter().find(|r| r.phi.get(i, j).is_some()).and_then(|r| r.stderr.get(i, j));
                    (Some(values[0]), within.unwrap_or(0.0))
                }
                c => {
                    let (mean, std) = multishap_core::mean_std(&values);
                    (Some(mean), std / (c as f64).sqrt())
                }
            };
            let band = 4.0 * stderr + BAND_FLOOR;
            let abs_err = estimate.map(|e| (e - oracle).abs());
            let within = abs_err.is_none_or(|e| e <= band);
            cells.push(CellCheck { patch: i, token: j, estimate, oracle, abs_err, stderr, band, within });
        }
    }
    let missing = cells.iter().filter(|c| c.estimate.is_none()).count();
    let violations = cells.iter().filter(|c| !c.within).count() + usize::from(max_evals > budget);
    let covered: Vec<&CellCheck> = cells.iter().filter(|c| c.estimate.is_some()).collect();
    let summary = ValidateSummary {
        game: game_spec.to_string(),
        mode: settings.mode(),
        k: settings.k(),
        trials,
        oracle: oracle_name,
        max_abs_err: covered.iter().filter_map(|c| c.abs_err).fold(0.0, f64::max),
        mean_stderr: if covered.is_empty() { 0.0 } else { covered.iter().map(|c| c.stderr).sum::<f64>() / covered.len() as f64 },
        missing,
        violations,
        max_evals,
        eval_budget: budget,
        passed: violations == 0,
    };
    Ok(Validation { cells, summary })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:+.6e}")).unwrap_or_else(|| "missing".into())
}

fn cmd_validate(a: ValidateArgs, stdout: &mut dyn Write) -> Result<i32> {
    let started = Instant::now();
    let cli = FileConfig {
        game: a.game.clone(),
        m: a.m,
        n: a.n,
        trials: a.trials,
        delay_ms: a.delay_ms,
        limit: a.limit,
        out: a.common.out.clone(),
        ..FileConfig::default()
    }
    .or(a.estimator.layer());
    let settings = Settings::resolve(cli, None, a.common.file()?);
    settings.check()?;
    let game = settings.0.game.clone().ok_or_else(|| Error::usage("--game is required"))?;
    let v = validate_game(&game, &settings)?;

    let mut text = String::new();
    if a.json {
        for c in &v.cells {
            text.push_str(&serde_json::to_string(c)?);
            text.push('\n');
        }
        text.push_str(&serde_json::to_string(&v.summary)?);
        text.push('\n');
    } else {
        text.push_str(&format!(
            "{:>5} {:>5} {:>14} {:>14} {:>12} {:>12}  {}\n",
            "patch", "token", "estimate", v.summary.oracle, "abs_err", "stderr", "ok"
        ));
        for c in &v.cells {
            text.push_str(&format!(
                "{:>5} {:>5} {:>14} {:>14} {:>12} {:>12.3e}  {}\n",
                c.patch,
                c.token,
                fmt_opt(c.estimate),
                format!("{:+.6e}", c.oracle),
                c.abs_err.map(|e| format!("{e:.3e}")).unwrap_or_else(|| "-".into()),
                c.stderr,
                if c.within { "yes" } else { "NO" }
            ));
        }
        let s = &v.summary;
        text.push_str(&format!(
            "max_abs_err {:.3e}  mean_stderr {:.3e}  missing {}  evals {} (budget {})  {}\n",
            s.max_abs_err,
            s.mean_stderr,
            s.missing,
            s.max_evals,
            s.eval_budget,
            if s.passed { "PASS" } else { "FAIL" }
        ));
    }
    write_out(stdout, &text)?;

    if let Some(out) = &settings.0.out {
        let mut manifest = RunManifest::new("validate", settings.0.clone());
        manifest.evals_used = v.summary.max_evals;
        manifest.wall_ms = started.elapsed().as_millis() as u64;
        if !v.summary.passed {
            manifest.status = crate::manifest::Status::Failed;
            manifest.error = Some(format!("{} violations", v.summary.violations));
        }
        manifest.save(&out.join("validate.manifest.json"))?;
    }
    if settings.0.strict.unwrap_or(false) && v.summary.missing > 0 {
        return Err(Error::Core(multishap_core::Error::MissingCells {
            missing: v.summary.missing,
            total: v.cells.len(),
        }));
    }
    Ok(if v.summary.passed { 0 } else { 1 })
}

fn cmd_report(a: ReportArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let (entries, skipped) = report::collect(&a.inputs)?;
    for s in &skipped {
        let _ = writeln!(stderr, "warning: skipping {}: {}", s.path.display(), s.reason);
    }
    let rep = report::build(&entries, skipped)?;
    let json = serde_json::to_string_pretty(&rep)?;
    if let Some(path) = &a.json {
        write_atomic(path, format!("{json}\n").as_bytes())?;
    }
    if a.as_json {
        write_out(stdout, &format!("{json}\n"))?;
    } else {
        write_out(stdout, &report::render_text(&rep))?;
    }
    Ok(0)
}

#[derive(Serialize)]
struct PairRow {
    pair: [usize; 2],
    sii: f64,
    banzhaf: f64,
}

#[derive(Serialize)]
struct FeatureRow {
    feature: usize,
    shapley: f64,
}

fn cmd_exact(a: ExactArgs, env_scorer: Option<String>, stdout: &mut dyn Write) -> Result<i32> {
    let started = Instant::now();
    let cli = FileConfig {
        game: a.game.clone(),
        scorer: a.scorer.clone(),
        sample: a.sample.clone(),
        m: a.m,
        n: a.n,
        normalization: a.normalization,
        limit: a.limit,
        timeout_ms: a.timeout_ms,
        out: a.common.out.clone(),
        ..FileConfig::default()
    };
    let file = a.common.file()?;
    // A game on the command line beats a scorer from the environment.
    let env = if cli.game.is_some() { None } else { env_scorer };
    let settings = Settings::resolve(cli, env, file);
    let limit = settings.0.limit.unwrap_or(DEFAULT_EXHAUSTIVE_LIMIT);
    let normalization = settings.0.normalization.unwrap_or_default();

    let (oracle, descriptor) = match (&settings.0.game, &settings.0.scorer) {
        (Some(g), _) => {
            let game = g.parse::<GameSpec>()?.build(settings.0.m, settings.0.n)?;
            let space = game.space().clone();
            let mut scorer = game;
            (ExactOracle::tabulate(&mut scorer, &space, limit)?, format!("synthetic:{g}"))
        }
        (None, Some(_)) => {
            let requested = settings.0.sample.clone();
            let mut handle = ScorerHandle::open(&settings, requested.as_deref().unwrap_or(DEFAULT_SAMPLE))?;
            let meta = handle.meta();
            let sample = pick_sample(requested.as_deref(), &meta)?;
            handle.set_sample(&sample);
            let space = FeatureSpace::new(meta.m, meta.n)?;
            if space.total() > limit {
                return Err(Error::Core(multishap_core::Error::TooLarge { total: space.total(), limit }));
            }
            (ExactOracle::tabulate(&mut handle, &space, limit)?, handle.descriptor().to_string())
        }
        (None, None) => return Err(Error::usage("pass --game or --scorer")),
    };

    let space = oracle.space().clone();
    let sii = oracle.sii_matrix(normalization);
    let banzhaf = oracle.banzhaf_matrix();
    let mut text = String::new();
    for i in 0..space.patches() {
        for j in 0..space.tokens() {
            let row = PairRow { pair: [i, j], sii: sii.get(i, j).expect("full"), banzhaf: banzhaf.get(i, j).expect("full") };
            text.push_str(&serde_json::to_string(&row)?);
            text.push('\n');
        }
    }
    for (k, v) in oracle.shapley_values().into_iter().enumerate() {
        text.push_str(&serde_json::to_string(&FeatureRow { feature: k, shapley: v })?);
        text.push('\n');
    }
    write_out(stdout, &text)?;

    if let Some(out) = &settings.0.out {
        let mut manifest = RunManifest::new("exact", settings.0.clone());
        manifest.space = Some(space);
        manifest.scorer = Some(descriptor);
        manifest.evals_used = oracle.evaluations() as u64;
        manifest.wall_ms = started.elapsed().as_millis() as u64;
        manifest.save(&out.join("exact.manifest.json"))?;
    }
    Ok(0)
}

fn cmd_serve(a: ServeArgs, stdout: &mut dyn Write) -> Result<i32> {
    let game = a.game.parse::<GameSpec>()?.build(a.m, a.n)?;
    let service = SyntheticService::new(game)
        .with_samples(a.samples.unwrap_or_default())
        .with_delay(Duration::from_millis(a.delay_ms))
        .with_fault(a.fault);
    match a.transport.as_str() {
        "stdio" => {
            let stdin = std::io::stdin();
            serve_stdio(&service, stdin.lock(), stdout)?;
        }
        "http" => {
            let server = serve_http(service, &a.addr, a.workers)?;
            write_out(stdout, &format!("listening on {}\n", server.url()))?;
            stdout.flush().map_err(Error::io("writing output"))?;
            server.join();
        }
        other => return Err(Error::usage(format!("unknown transport `{other}` (stdio, http)"))),
    }
    Ok(0)
}
