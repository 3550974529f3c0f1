//! `garlic` command-line front end.
//!
//! Every subcommand accepts `--config FILE`, `--seed`, `--deterministic` and
//! `--threads`. Explicit flags override config-file values. Failures print one line
//! `error: kind=<kind> msg="<message>"` to stderr and exit with status 1 (2 for usage
//! errors).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use garlic::config::RunConfig;
use garlic::eval::{bench_sweep, brute_force_knn, classification_eval, variant_budget, GroundTruth};
use garlic::io::{self, apply_label_noise, synth_mixture};
use garlic::{build_index, fit, search, BucketMode, GarlicError, HyperParams, Index, QueryBudget, VectorSet};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser, Debug)]
#[command(name = "garlic", version, about = "Gaussian-partitioned approximate nearest-neighbor index")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Run configuration file (`key = value` lines, optional sections).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Single-threaded, byte-reproducible output (wall times are reported as 0).
    #[arg(long, global = true)]
    deterministic: bool,
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a labeled Gaussian mixture.
    Synth(SynthArgs),
    /// Train Gaussians and write an index.
    Build(BuildArgs),
    /// Answer kNN queries.
    Query(QueryArgs),
    /// Sweep query budgets against ground truth.
    Eval(EvalArgs),
    /// Majority-vote classification.
    Classify(ClassifyArgs),
    /// Summarize an index file.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    #[arg(long, default_value_t = 32)]
    d: usize,
    #[arg(long, default_value_t = 20)]
    components: usize,
    #[arg(long, default_value_t = 0.2)]
    spread: f64,
    /// Extra points drawn from the same mixture and written as `<stem>.queries.fvecs`
    /// with labels and exact top-10 ground truth (`<stem>.gt.ivecs`).
    #[arg(long, default_value_t = 0)]
    queries: usize,
    /// Fraction of base labels replaced by a random other class.
    #[arg(long, default_value_t = 0.0)]
    label_noise: f64,
    /// Base vectors; labels go to the same stem with a `.labels` extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training log CSV (default: `<out>.train.csv`).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Shorthand for `--epochs-max`.
    #[arg(long)]
    epochs: Option<usize>,
    /// Also write the effective configuration to this file.
    #[arg(long, value_name = "FILE")]
    save_config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Budget {
    /// `argmin`, `threshold:T` or `topk:K`.
    #[arg(long, default_value = "argmin")]
    bucket_mode: BucketMode,
    /// Fraction of bins probed per bucket (default: the index's value).
    #[arg(long)]
    probe_ratio: Option<f64>,
    #[arg(long)]
    max_candidates: Option<usize>,
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[arg(long)]
    index: Option<PathBuf>,
    /// Base vectors (default: the path recorded in the index).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[command(flatten)]
    budget: Budget,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Comma-separated `MODE@RATIO[@MAX_CANDIDATES]` entries, e.g.
    /// `argmin@0.3,topk:3@1.0@1000`. Defaults to every variant at ratios 0.1 to 1.
    #[arg(long)]
    budgets: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    query_labels: Option<PathBuf>,
    /// 1 = nearest Gaussian, 2 = within tau, 3 = top-k Gaussians. Repeatable; all by default.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    variant: Vec<u8>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[arg(long)]
    index: Option<PathBuf>,
}

/// Hyperparameter keys exposed as `build` flags; `seed` is global.
fn hp_flag_keys() -> impl Iterator<Item = &'static str> {
    HyperParams::KEYS.iter().copied().filter(|k| *k != "seed")
}

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn command() -> clap::Command {
    Cli::command().mut_subcommand("build", |mut cmd| {
        let defaults = HyperParams::default().entries();
        for key in hp_flag_keys() {
            let default = defaults.iter().find(|(k, _)| *k == key).map(|(_, v)| v.clone()).unwrap_or_default();
            let id: &'static str = key;
            let long: &'static str = Box::leak(flag_name(key).into_boxed_str());
            let help: &'static str = Box::leak(format!("[default: {default}]").into_boxed_str());
            cmd = cmd.arg(
                clap::Arg::new(id)
                    .long(long)
                    .value_name("VALUE")
                    .help(help)
                    .help_heading("Hyperparameters"),
            );
        }
        cmd
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = match command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: kind=usage msg={first:?}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: kind=usage msg={:?}", e.to_string().trim());
            return ExitCode::from(2);
        }
    };
    match run(cli, &matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<GarlicError>().map(|g| g.kind()).unwrap_or("error");
            eprintln!("error: kind={kind} msg={:?}", format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli, matches: &ArgMatches) -> Result<()> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.global.seed {
        cfg.hp.seed = s;
    }
    if cli.global.deterministic {
        cfg.deterministic = true;
    }
    if let Some(t) = cli.global.threads {
        cfg.threads = Some(t);
    }
    let threads = if cfg.deterministic { Some(1) } else { cfg.threads };
    if let Some(t) = threads {
        if t == 0 {
            bail!(GarlicError::InvalidParameter("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Synth(a) => synth(&cfg, a),
        Command::Build(a) => {
            let sub = matches.subcommand_matches("build").expect("build matches");
            for key in hp_flag_keys() {
                if let Some(v) = sub.get_one::<String>(key) {
                    cfg.hp.set(key, v)?;
                }
            }
            build(cfg, a)
        }
        Command::Query(a) => query(&cfg, a),
        Command::Eval(a) => evaluate(&cfg, a),
        Command::Classify(a) => classify(&cfg, a),
        Command::Inspect(a) => inspect(&cfg, a),
    }
}

fn pick(flag: Option<PathBuf>, cfg: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| cfg.clone())
        .ok_or_else(|| anyhow!(GarlicError::InvalidParameter(format!("missing --{name}"))))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn synth(cfg: &RunConfig, a: SynthArgs) -> Result<()> {
    let out = a.out;
    let total = a.n + a.queries;
    let ds = synth_mixture(total, a.d, a.components, a.spread, cfg.hp.seed)?;
    let labels = ds.labels.expect("mixture samples are labeled");
    let base_ids: Vec<usize> = (0..a.n).collect();
    let base = ds.vectors.subset(&base_ids)?;
    let mut base_labels = labels[..a.n].to_vec();
    if a.label_noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.hp.seed ^ 0x6e01_5e00);
        apply_label_noise(&mut base_labels, a.label_noise, a.components as u32, &mut rng);
    }
    io::write_fvecs(&out, &base)?;
    io::write_labels(&out.with_extension("labels"), &base_labels)?;
    if a.queries > 0 {
        let q_ids: Vec<usize> = (a.n..total).collect();
        let queries = ds.vectors.subset(&q_ids)?;
        io::write_fvecs(&with_suffix(&out, ".queries.fvecs"), &queries)?;
        io::write_labels(&with_suffix(&out, ".queries.labels"), &labels[a.n..])?;
        let gt = brute_force_knn(&base, &queries, 10)?;
        io::write_ivecs(&with_suffix(&out, ".gt.ivecs"), &gt.to_ivecs()?)?;
    }
    info!("wrote {} base and {} query vectors of dimension {}", a.n, a.queries, a.d);
    Ok(())
}

fn build(mut cfg: RunConfig, a: BuildArgs) -> Result<()> {
    if let Some(e) = a.epochs {
        cfg.hp.epochs_max = e;
    }
    cfg.hp.validate()?;
    let data_path = pick(a.data, &cfg.data, "data")?;
    let out = pick(a.out, &cfg.index, "out")?;
    let log_path = a.log.or(cfg.log.clone()).unwrap_or_else(|| with_suffix(&out, ".train.csv"));
    cfg.data = Some(data_path.clone());
    cfg.index = Some(out.clone());
    cfg.log = Some(log_path.clone());
    if let Some(p) = &a.save_config {
        std::fs::write(p, cfg.to_text())?;
    }
    let data = io::load_fvecs(&data_path)?;
    let start = Instant::now();
    let state = fit(&data, &cfg.hp)?;
    info!(
        "trained {} epochs in {:.1}s, {} Gaussians",
        state.epochs,
        start.elapsed().as_secs_f64(),
        state.gaussians.active_count()
    );
    let mut index = build_index(&data, &state.gaussians, &cfg.hp)?;
    index.dataset_path = Some(data_path.to_string_lossy().into_owned());
    index.save(&out)?;
    let mut w = create(&log_path)?;
    state.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

struct Loaded {
    index: Index,
    data: VectorSet,
}

fn load_index(cfg: &RunConfig, index: Option<PathBuf>, data: Option<PathBuf>) -> Result<Loaded> {
    let index_path = pick(index, &cfg.index, "index")?;
    let index = Index::load(&index_path).with_context(|| format!("loading {}", index_path.display()))?;
    let data_path = data
        .or_else(|| cfg.data.clone())
        .or_else(|| index.dataset_path.as_ref().map(PathBuf::from))
        .ok_or_else(|| anyhow!(GarlicError::InvalidParameter("missing --data".into())))?;
    let data = io::load_fvecs(&data_path)?;
    index.check_dataset(&data)?;
    Ok(Loaded { index, data })
}

fn query(cfg: &RunConfig, a: QueryArgs) -> Result<()> {
    let Loaded { index, data } = load_index(cfg, a.index, a.data)?;
    let queries = io::load_fvecs(&pick(a.queries, &cfg.queries, "queries")?)?;
    let mut budget = QueryBudget::new(a.budget.bucket_mode, a.budget.probe_ratio.unwrap_or(index.hp.probe_ratio));
    budget.max_candidates = a.budget.max_candidates;
    budget.validate()?;
    let out = pick(a.out, &cfg.out, "out")?;
    let mut w = create(&out)?;
    writeln!(w, "query,rank,id,distance,candidates_examined,bins_probed,buckets_probed")?;
    for i in 0..queries.len() {
        let r = search(queries.row(i), &index, &data, a.k, &budget)?;
        for (rank, (id, dist)) in r.ids.iter().zip(&r.distances).enumerate() {
            writeln!(
                w,
                "{i},{rank},{id},{dist:?},{},{},{}",
                r.candidates_examined, r.bins_probed, r.buckets_probed
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses `MODE@RATIO[@MAX]` entries separated by commas.
fn parse_budgets(text: &str) -> Result<Vec<QueryBudget>> {
    let mut out = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let parts: Vec<&str> = item.split('@').collect();
        let bad = || GarlicError::InvalidParameter(format!("bad budget {item:?}; expected MODE@RATIO[@MAX]"));
        if parts.len() < 2 || parts.len() > 3 {
            bail!(bad());
        }
        let mode: BucketMode = parts[0].parse()?;
        let ratio: f64 = parts[1].parse().map_err(|_| bad())?;
        let mut b = QueryBudget::new(mode, ratio);
        if let Some(cap) = parts.get(2) {
            b = b.with_max_candidates(cap.parse().map_err(|_| bad())?);
        }
        b.validate()?;
        out.push(b);
    }
    if out.is_empty() {
        bail!(GarlicError::InvalidParameter("empty budget list".into()));
    }
    Ok(out)
}

fn default_budgets(hp: &HyperParams) -> Vec<QueryBudget> {
    let modes = [BucketMode::Argmin, BucketMode::Threshold(hp.tau), BucketMode::TopK(hp.topk_buckets)];
    modes
        .iter()
        .flat_map(|&m| [0.1, 0.2, 0.3, 0.5, 1.0].map(|r| QueryBudget::new(m, r)))
        .collect()
}

fn evaluate(cfg: &RunConfig, a: EvalArgs) -> Result<()> {
    let Loaded { index, data } = load_index(cfg, a.index, a.data)?;
    let queries = io::load_fvecs(&pick(a.queries, &cfg.queries, "queries")?)?;
    let gt = GroundTruth::from_ivecs(&io::load_ivecs(&pick(a.gt, &cfg.gt, "gt")?)?)?;
    let budgets = match &a.budgets {
        Some(text) => parse_budgets(text)?,
        None => default_budgets(&index.hp),
    };
    let report = bench_sweep(&data, &queries, &index, &gt, &budgets, !cfg.deterministic)?;
    let out = pick(a.out, &cfg.out, "out")?;
    let mut w = create(&out)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn classify(cfg: &RunConfig, a: ClassifyArgs) -> Result<()> {
    let Loaded { index, data } = load_index(cfg, a.index, a.data)?;
    let labels = io::load_labels(&pick(a.labels, &cfg.labels, "labels")?)?;
    if labels.len() != data.len() {
        bail!(GarlicError::InvalidInput(format!(
            "{} labels for {} base vectors",
            labels.len(),
            data.len()
        )));
    }
    let queries = io::load_fvecs(&pick(a.queries, &cfg.queries, "queries")?)?;
    let query_labels = io::load_labels(&pick(a.query_labels, &cfg.query_labels, "query-labels")?)?;
    let variants = if a.variant.is_empty() { vec![1, 2, 3] } else { a.variant };
    let budgets = variants
        .iter()
        .map(|&v| Ok((format!("ours-{v}"), variant_budget(v, &index.hp)?)))
        .collect::<Result<Vec<_>>>()?;
    let report = classification_eval(&index, &labels, &data, &queries, &query_labels, &budgets)?;
    let out = pick(a.out, &cfg.out, "out")?;
    let mut w = create(&out)?;
    writeln!(w, "method,accuracy,queries")?;
    for (name, acc) in &report.variants {
        writeln!(w, "{name},{acc:?},{}", queries.len())?;
    }
    writeln!(w, "knn-10,{:?},{}", report.knn_accuracy, queries.len())?;
    w.flush()?;
    Ok(())
}

fn inspect(cfg: &RunConfig, a: InspectArgs) -> Result<()> {
    let path = pick(a.index, &cfg.index, "index")?;
    let index = Index::load(&path)?;
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    writeln!(w, "index: {}", path.display())?;
    writeln!(w, "n: {}  d: {}  checksum: {:08x}", index.len(), index.dim(), index.fingerprint.checksum)?;
    if let Some(p) = &index.dataset_path {
        writeln!(w, "dataset: {p}")?;
    }
    writeln!(w, "K: {}", index.n_buckets())?;
    let degenerate = index.buckets.iter().filter(|b| b.is_degenerate()).count();
    writeln!(w, "degenerate buckets: {degenerate}")?;
    let sizes: Vec<usize> = index.buckets.iter().map(|b| b.members.len()).collect();
    writeln!(w, "bucket cardinality histogram:")?;
    for (lo, hi, count) in log2_histogram(&sizes) {
        writeln!(w, "  [{lo}, {hi}): {count}")?;
    }
    let bins: Vec<usize> = index.buckets.iter().map(|b| b.grid.bins.len()).collect();
    let total: usize = bins.iter().sum();
    writeln!(
        w,
        "bins per bucket: min {} mean {:.1} max {}",
        bins.iter().min().copied().unwrap_or(0),
        total as f64 / bins.len().max(1) as f64,
        bins.iter().max().copied().unwrap_or(0)
    )?;
    Ok(())
}

/// Power-of-two buckets `[lo, hi)` with their counts, empty ranges skipped.
fn log2_histogram(values: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut counts = std::collections::BTreeMap::new();
    for &v in values {
        let lo = if v == 0 { 0 } else { 1usize << v.ilog2() };
        *counts.entry(lo).or_insert(0usize) += 1;
    }
    counts.into_iter().map(|(lo, c)| (lo, if lo == 0 { 1 } else { lo * 2 }, c)).collect()
}
