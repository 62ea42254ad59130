//! `layerspec` command-line interface.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::dataset::{HiddenStateDataset, PoolingMode};
use crate::error::{Error, ErrorKind, Result};
use crate::harness::{self, ClsState, CollapseProfile, SweepConfig, SweepKey, SweepRow};
use crate::io::{self, ReportFormat, ReportRow};
use crate::linalg;
use crate::metrics::{self, CcaOptions, CurveOptions, MetricId};
use crate::probe::{self, HeadKind, LogRegConfig, ScoreKind};
use crate::strategy::{self, StrategyKind};

#[derive(Debug, Parser)]
#[command(name = "layerspec", version, about = "Layer-wise task-specialty analysis of hidden-state dumps")]
struct Cli {
    /// Worker threads for per-layer and per-setting work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-layer metric curve of a dump.
    Analyze(AnalyzeArgs),
    /// Per-layer probe scores of a dump.
    Probe(ProbeArgs),
    /// Pearson correlation and least-squares fit of a score curve on a metric curve.
    Correlate(CorrelateArgs),
    /// Best layer, layer-selection plans and their costs.
    Select(SelectArgs),
    /// Generate a synthetic dump with a V-shaped collapse profile.
    Synth(SynthArgs),
    /// Imbalance, scarcity or explicit-count robustness sweep.
    Sweep(SweepArgs),
    /// Convert between JSONL and HSD (direction by file extension).
    Convert(ConvertArgs),
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Report path.
    #[arg(long)]
    out: PathBuf,
    /// Report format; defaults to the output extension (.json or CSV).
    #[arg(long, value_parser = ["csv", "json"])]
    format: Option<String>,
}

impl OutputArgs {
    fn format(&self) -> ReportFormat {
        match self.format.as_deref() {
            Some("json") => ReportFormat::Json,
            Some(_) => ReportFormat::Csv,
            None => ReportFormat::from_path(&self.out),
        }
    }

    fn write(&self, rows: &[ReportRow]) -> Result<()> {
        io::write_report(rows, self.format(), &self.out)
    }
}

#[derive(Debug, Args)]
struct MetricArgs {
    /// Relative pseudo-inverse cutoff (default: D * machine epsilon).
    #[arg(long)]
    rtol: Option<f64>,
    /// Regularization grid for CCA cross-validation, comma separated.
    #[arg(long, value_delimiter = ',')]
    cca_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10)]
    cca_folds: usize,
    #[arg(long, default_value_t = 3)]
    cca_repeats: usize,
    /// Fixed `eps_h,eps_y` instead of cross-validation.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    cca_eps: Option<Vec<f64>>,
    /// k-means clusters for the mi metric (default: number of classes).
    #[arg(long)]
    clusters: Option<usize>,
}

impl MetricArgs {
    fn options(&self, seed: u64) -> Result<CurveOptions> {
        if let Some(r) = self.rtol {
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::InvalidArgument(format!("--rtol {r} must be non-negative")));
            }
        }
        let mut cca = CcaOptions {
            folds: self.cca_folds,
            repeats: self.cca_repeats,
            ..CcaOptions::default()
        };
        if let Some(g) = &self.cca_grid {
            cca.grid = g.clone();
        }
        if let Some(e) = &self.cca_eps {
            cca.fixed = Some((e[0], e[1]));
        }
        Ok(CurveOptions {
            rtol: self.rtol,
            cca,
            mi_clusters: self.clusters,
            seed,
        })
    }
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "nu")]
    metric: String,
    #[arg(long, default_value = "mean")]
    pooling: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    metric_args: MetricArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "lda")]
    head: String,
    #[arg(long, default_value = "acc")]
    score: String,
    #[arg(long, default_value = "mean")]
    pooling: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    logreg: LogRegArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct LogRegArgs {
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
}

impl LogRegArgs {
    fn config(&self) -> LogRegConfig {
        LogRegConfig {
            lr: self.lr,
            epochs: self.epochs,
            l2: self.l2,
            train_fraction: self.train_fraction,
        }
    }
}

#[derive(Debug, Args)]
struct CorrelateArgs {
    #[arg(long)]
    metric_curve: PathBuf,
    #[arg(long)]
    score_curve: PathBuf,
    /// Metric name to read when the metric report holds several.
    #[arg(long)]
    metric: Option<String>,
    /// Metric name to read when the score report holds several.
    #[arg(long)]
    score_metric: Option<String>,
    /// Output JSON path; prints to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[arg(long)]
    curve: PathBuf,
    #[arg(long)]
    metric: Option<String>,
    /// Number of layers of the model (default: curve length).
    #[arg(long = "L", alias = "layers")]
    n_layers: Option<usize>,
    /// down, up, baseline, middle, or all.
    #[arg(long, default_value = "all")]
    kind: String,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 12)]
    layers: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 500)]
    per_class: usize,
    /// Layer (1-based) with the least within-class noise.
    #[arg(long, default_value_t = 6)]
    best_layer: usize,
    #[arg(long, default_value_t = 0.3)]
    min_noise: f64,
    /// Relative noise increase per layer of distance from the best layer.
    #[arg(long, default_value_t = 0.3)]
    slope: f64,
    /// Tokens per sequence; 0 writes pooled states.
    #[arg(long, default_value_t = 0)]
    tokens: usize,
    /// CLS state for token output: noise or copy.
    #[arg(long, default_value = "noise")]
    cls: String,
    #[arg(long, default_value_t = 1.0)]
    cls_noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    input: PathBuf,
    /// imbalance, scarcity or counts.
    #[arg(long)]
    kind: String,
    /// Class-0 fractions for the imbalance sweep.
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.25,0.1,0.05")]
    p: Vec<f64>,
    /// Total samples per setting for the imbalance sweep.
    #[arg(long)]
    n_total: Option<usize>,
    /// Sample sizes for the scarcity sweep.
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    /// Per-class count vectors such as 18000:6000:6000, comma separated.
    #[arg(long, value_delimiter = ',')]
    counts: Vec<String>,
    #[arg(long, default_value = "mean")]
    pooling: String,
    #[arg(long, default_value = "lda")]
    head: String,
    #[arg(long, default_value = "acc")]
    score: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    metric_args: MetricArgs,
    #[command(flatten)]
    logreg: LogRegArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct ConvertArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn is_jsonl(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl" | "json"))
}

/// Loads HSD or, for `.jsonl` paths, JSONL.
pub fn load_dataset(path: &Path) -> Result<HiddenStateDataset> {
    if is_jsonl(path) {
        io::read_jsonl(path)
    } else {
        io::read_hsd(path)
    }
}

fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let metric: MetricId = a.metric.parse()?;
    let pooling: PoolingMode = a.pooling.parse()?;
    let opts = a.metric_args.options(a.seed)?;
    let ds = load_dataset(&a.input)?;
    let curve = metrics::curve(&ds, metric, pooling, &opts)?;
    let mut rows = io::curve_rows(&curve, metric.as_str());
    if metric == MetricId::Mi {
        for r in &mut rows {
            r.aux.insert("unit".into(), "nats".into());
        }
    }
    a.output.write(&rows)
}

fn probe_cmd(a: &ProbeArgs) -> Result<()> {
    let head: HeadKind = a.head.parse()?;
    let score: ScoreKind = a.score.parse()?;
    let pooling: PoolingMode = a.pooling.parse()?;
    let ds = load_dataset(&a.input)?;
    let results = probe::probe_results(&ds, head, score, pooling, a.seed, &a.logreg.config())?;
    let rows: Vec<ReportRow> = results
        .iter()
        .map(|r| {
            ReportRow::new(r.layer, format!("probe-{}", score), r.score)
                .with("head", head.as_str())
                .with("train_fraction", r.train_fraction)
        })
        .collect();
    a.output.write(&rows)
}

fn correlate(a: &CorrelateArgs) -> Result<()> {
    let m = io::curve_from_rows(&io::read_report(&a.metric_curve)?, a.metric.as_deref(), &a.metric_curve)?;
    let s = io::curve_from_rows(&io::read_report(&a.score_curve)?, a.score_metric.as_deref(), &a.score_curve)?;
    if m.len() != s.len() {
        return Err(Error::LengthMismatch(m.len(), s.len()));
    }
    let rho = linalg::pearson(m.values(), s.values())?;
    let fit = linalg::ols_fit(m.values(), s.values())?;
    let out = json!({
        "n_layers": m.len(),
        "pearson": rho,
        "slope": fit.slope,
        "intercept": fit.intercept,
        "r_squared": fit.r_squared,
    });
    let text = serde_json::to_string_pretty(&out).expect("serializable") + "\n";
    match &a.out {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn select(a: &SelectArgs) -> Result<()> {
    let curve = io::curve_from_rows(&io::read_report(&a.curve)?, a.metric.as_deref(), &a.curve)?;
    let n_layers = a.n_layers.unwrap_or(curve.len());
    if n_layers < curve.len() {
        return Err(Error::InvalidArgument(format!(
            "--L {n_layers} is smaller than the curve length {}",
            curve.len()
        )));
    }
    let kinds: Vec<StrategyKind> = if a.kind == "all" {
        vec![StrategyKind::Down, StrategyKind::Up, StrategyKind::Baseline]
    } else {
        vec![a.kind.parse()?]
    };
    let l_star = strategy::best_layer(&curve)?;
    let mut rows = Vec::new();
    for kind in kinds {
        for t in strategy::enumerate_strategies(l_star, n_layers, kind)? {
            let c = strategy::cost_model(&t, n_layers)?;
            rows.push(
                ReportRow::new(l_star, "strategy", c.tuned_fraction)
                    .with("kind", kind.as_str())
                    .with("strategy", t.to_string())
                    .with("tuned_layers", c.tuned_layers)
                    .with("kept_layers", c.kept_layers)
                    .with("dropped_layers", c.dropped_layers)
                    .with("tuned_fraction", c.tuned_fraction)
                    .with("dropped_fraction", c.dropped_fraction)
                    .with("large_saving", if c.large_saving() { 1.0 } else { 0.0 }),
            );
        }
    }
    a.output.write(&rows)
}

fn synth(a: &SynthArgs) -> Result<()> {
    if a.best_layer == 0 || a.best_layer > a.layers {
        return Err(Error::InvalidArgument(format!(
            "--best-layer {} outside 1..={}",
            a.best_layer, a.layers
        )));
    }
    let mut profile = CollapseProfile::v_shaped(
        a.layers,
        a.dim,
        a.classes,
        a.best_layer,
        a.min_noise,
        a.slope,
        a.seed,
    );
    profile.n_tokens = a.tokens;
    profile.cls = match a.cls.as_str() {
        "noise" => ClsState::Noise(a.cls_noise),
        "copy" => ClsState::CopyOfMean,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown --cls {other:?} (expected noise or copy)"
            )))
        }
    };
    let ds = harness::synth_generate(&profile, &vec![a.per_class; a.classes])?;
    if is_jsonl(&a.out) {
        io::write_jsonl(&ds, &a.out)
    } else {
        io::write_hsd(&ds, &a.out)
    }
}

fn parse_counts(s: &str) -> Result<Vec<usize>> {
    s.split(':')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad count vector {s:?}")))
        })
        .collect()
}

fn sweep_rows(rows: &[SweepRow]) -> Vec<ReportRow> {
    let opt = |v: Option<f64>| v.unwrap_or(f64::NAN);
    let mut out = Vec::new();
    for row in rows {
        for (i, &v) in row.nu.values().iter().enumerate() {
            let mut r = ReportRow::new(i + 1, "nu", v);
            r = match &row.key {
                SweepKey::Fraction(p) => r.with("p", *p),
                SweepKey::Total(n) => r.with("N", *n),
                SweepKey::Counts(c) => r.with(
                    "counts",
                    format!("({})", c.iter().map(usize::to_string).collect::<Vec<_>>().join(",")),
                ),
            };
            let probe = row.probe.as_ref().map(|p| p.values()[i]);
            out.push(
                r.with("zeta", opt(row.zeta))
                    .with("abs_rho", opt(row.abs_rho))
                    .with("probe", opt(probe)),
            );
        }
    }
    out
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let ds = load_dataset(&a.input)?;
    let cfg = SweepConfig {
        pooling: a.pooling.parse()?,
        head: a.head.parse()?,
        score: a.score.parse()?,
        curve: a.metric_args.options(a.seed)?,
        logreg: a.logreg.config(),
    };
    let rows = match a.kind.as_str() {
        "imbalance" => {
            let n_total = a.n_total.unwrap_or(ds.n_sequences() / 2);
            harness::sweep_imbalance(&ds, &a.p, n_total, a.seed, &cfg)?
        }
        "scarcity" => {
            if a.n.is_empty() {
                return Err(Error::InvalidArgument("--n is required for a scarcity sweep".into()));
            }
            harness::sweep_scarcity(&ds, &a.n, a.seed, &cfg)?
        }
        "counts" => {
            let counts = a.counts.iter().map(|s| parse_counts(s)).collect::<Result<Vec<_>>>()?;
            if counts.is_empty() {
                return Err(Error::InvalidArgument("--counts is required for a counts sweep".into()));
            }
            harness::sweep_counts(&ds, &counts, a.seed, &cfg)?
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown sweep kind {other:?} (expected imbalance, scarcity or counts)"
            )))
        }
    };
    a.output.write(&sweep_rows(&rows))
}

fn convert(a: &ConvertArgs) -> Result<()> {
    let ds = load_dataset(&a.input)?;
    if is_jsonl(&a.out) {
        io::write_jsonl(&ds, &a.out)
    } else {
        io::write_hsd(&ds, &a.out)
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Probe(a) => probe_cmd(a),
        Command::Correlate(a) => correlate(a),
        Command::Select(a) => select(a),
        Command::Synth(a) => synth(a),
        Command::Sweep(a) => sweep(a),
        Command::Convert(a) => convert(a),
    }
}

#[cfg(feature = "parallel")]
fn with_threads(threads: Option<usize>, f: impl FnOnce() -> Result<()> + Send) -> Result<()> {
    match threads {
        Some(0) => Err(Error::InvalidArgument("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot build thread pool: {e}")))?
            .install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_threads(_threads: Option<usize>, f: impl FnOnce() -> Result<()>) -> Result<()> {
    f()
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Runs the CLI and returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match with_threads(cli.threads, || dispatch(&cli)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            match e.kind() {
                ErrorKind::Usage => EXIT_USAGE,
                ErrorKind::Data => EXIT_DATA,
                ErrorKind::Numerical => EXIT_NUMERICAL,
            }
        }
    }
}
