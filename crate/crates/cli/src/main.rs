//! `crossalign`: align, evaluate and refine cross-lingual embedding maps.
//!
//! Every command writes exactly one run manifest (JSON) next to its primary
//! output. The manifest records the full argument vector, so
//! `crossalign replay <manifest>` re-executes the run.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crossalign::evaluation::{
    evaluate_mapping, knn_sweep, lexicon_size_sweep, render_table, Benchmark, EvalReport, Method,
};
use crossalign::rcsls::{grid_search, train_rcsls, NeighborPools};
use crossalign::refinement::{refine, PairingRule, RefinementConfig};
use crossalign::{
    least_squares_fit, procrustes_fit, BilingualLexicon, ConstraintDomain, Criterion,
    EmbeddingMatrix, LossVariant, MappingMatrix, RetrievalOptions, TrainConfig,
};

const THREADS_ENV: &str = "CROSSALIGN_THREADS";

#[derive(Parser, Debug)]
#[command(name = "crossalign", version, about = "Supervised alignment of word-embedding spaces")]
struct Cli {
    /// Worker-thread cap. Results do not depend on it.
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,

    /// `key=value` file supplying defaults for flags not given on the
    /// command line (keys are flag names without the leading dashes).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Where to write the run manifest. Defaults to
    /// `<primary output>.manifest.json`.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn a mapping from a seed lexicon.
    Align(AlignArgs),
    /// Score a mapping on an evaluation lexicon.
    Evaluate(EvaluateArgs),
    /// Grow the lexicon from the map's own translations and refit.
    Refine(RefineArgs),
    /// Re-run the command recorded in a manifest.
    Replay { manifest_path: PathBuf },
}

#[derive(Args, Debug, Clone)]
struct EmbeddingArgs {
    #[arg(long)]
    src_emb: PathBuf,
    #[arg(long)]
    tgt_emb: PathBuf,
    /// Mean-center each space before normalizing.
    #[arg(long)]
    center: bool,
    #[arg(long)]
    max_vocab: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum MethodArg {
    Lsq,
    Procrustes,
    Rcsls,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum ConstraintArg {
    None,
    Spectral,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum LossArg {
    Linear,
    Logsumexp,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum CriterionArg {
    Nn,
    Csls,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum SweepArg {
    None,
    Lexsize,
    Knn,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum FormatArg {
    Json,
    Table,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum PairingArg {
    Best,
    Mutual,
}

#[derive(Args, Debug)]
struct AlignArgs {
    #[command(flatten)]
    emb: EmbeddingArgs,
    #[arg(long)]
    lexicon: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "none")]
    constraint: ConstraintArg,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Learning rate(s); more than one value triggers a validation grid search.
    #[arg(long, value_delimiter = ',', default_value = "1,10,25,50")]
    lr: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "10,20")]
    epochs: Vec<usize>,
    /// Compute the RCSLS neighbourhoods over the full vocabularies.
    #[arg(long)]
    extended_norm: bool,
    #[arg(long, value_enum, default_value = "linear")]
    loss: LossArg,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    l2_reg: f64,
    /// Validation lexicon for the grid search. Without it a fraction of the
    /// training sources is held out.
    #[arg(long)]
    valid_lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    valid_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_map: Option<PathBuf>,
    /// Write the mapped, renormalized source vectors here.
    #[arg(long)]
    out_aligned: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    aligned_precision: usize,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    emb: EmbeddingArgs,
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    eval_lexicon: PathBuf,
    #[arg(long, value_enum, default_value = "csls")]
    criterion: CriterionArg,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Drop evaluation pairs whose source and target strings are identical.
    #[arg(long)]
    drop_exact_matches: bool,
    #[arg(long, value_enum, default_value = "none")]
    sweep: SweepArg,
    /// k values for `--sweep knn`.
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,20,50")]
    ks: Vec<usize>,
    /// Training-lexicon sizes for `--sweep lexsize`.
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
    /// Training lexicon for sweeps.
    #[arg(long)]
    train_lexicon: Option<PathBuf>,
    /// Method retrained by `--sweep lexsize`.
    #[arg(long, value_enum, default_value = "procrustes")]
    method: MethodArg,
    #[arg(long, default_value_t = 1.0)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long)]
    extended_norm: bool,
    #[arg(long, default_value = "")]
    label: String,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    /// Report destination; stdout when absent.
    #[arg(long)]
    out_report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RefineArgs {
    #[command(flatten)]
    emb: EmbeddingArgs,
    /// Seed lexicon.
    #[arg(long)]
    lexicon: PathBuf,
    /// Initial map.
    #[arg(long)]
    map: PathBuf,
    #[arg(long, default_value_t = 5)]
    rounds: usize,
    #[arg(long, default_value_t = 10_000)]
    pool_size: usize,
    #[arg(long, value_enum, default_value = "mutual")]
    pairing: PairingArg,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    out_map: Option<PathBuf>,
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    argv: Vec<String>,
    config: Value,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
    seed: Option<u64>,
    version: &'static str,
    timings_secs: Value,
    results: Value,
}

#[derive(Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

struct Timer {
    start: Instant,
    marks: serde_json::Map<String, Value>,
    last: Instant,
}

impl Timer {
    fn new() -> Self {
        let now = Instant::now();
        Timer {
            start: now,
            marks: serde_json::Map::new(),
            last: now,
        }
    }

    fn mark(&mut self, name: &str) {
        let now = Instant::now();
        self.marks
            .insert(name.into(), json!((now - self.last).as_secs_f64()));
        self.last = now;
    }

    fn finish(mut self) -> Value {
        self.marks
            .insert("total".into(), json!(self.start.elapsed().as_secs_f64()));
        Value::Object(self.marks)
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn digests(paths: &[&Path]) -> Result<Vec<InputDigest>> {
    paths
        .iter()
        .map(|p| {
            Ok(InputDigest {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

fn manifest_path(explicit: Option<&Path>, primary: Option<&Path>, command: &str) -> PathBuf {
    match (explicit, primary) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(out)) => {
            let mut s = out.as_os_str().to_owned();
            s.push(".manifest.json");
            PathBuf::from(s)
        }
        (None, None) => PathBuf::from(format!("crossalign-{command}.manifest.json")),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut out = BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn load_pair(args: &EmbeddingArgs) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    let prep = |path: &Path| -> Result<EmbeddingMatrix> {
        let raw = EmbeddingMatrix::load_text(path, args.max_vocab)
            .with_context(|| format!("loading {}", path.display()))?;
        Ok(if args.center {
            raw.center_then_normalize()
        } else {
            raw.l2_normalize()
        })
    };
    let src = prep(&args.src_emb)?;
    let tgt = prep(&args.tgt_emb)?;
    if src.dim() != tgt.dim() {
        bail!(
            "source vectors have dimension {}, target vectors {}",
            src.dim(),
            tgt.dim()
        );
    }
    log::info!(
        "loaded {} source and {} target vectors of dimension {}",
        src.len(),
        tgt.len(),
        src.dim()
    );
    Ok((src, tgt))
}

fn load_lexicon(path: &Path, src: &EmbeddingMatrix, tgt: &EmbeddingMatrix) -> Result<BilingualLexicon> {
    let lex = BilingualLexicon::load(path, src.vocab(), tgt.vocab())
        .with_context(|| format!("loading lexicon {}", path.display()))?;
    log::info!(
        "{}: {} pairs, coverage {:.3}",
        path.display(),
        lex.len(),
        lex.coverage()
    );
    Ok(lex)
}

fn loss_variant(l: LossArg) -> LossVariant {
    match l {
        LossArg::Linear => LossVariant::Linear,
        LossArg::Logsumexp => LossVariant::LogSumExp,
    }
}

fn method(m: MethodArg) -> Method {
    match m {
        MethodArg::Lsq => Method::Lsq,
        MethodArg::Procrustes => Method::Procrustes,
        MethodArg::Rcsls => Method::Rcsls,
    }
}

fn criterion(c: CriterionArg) -> Criterion {
    match c {
        CriterionArg::Nn => Criterion::Nn,
        CriterionArg::Csls => Criterion::Csls,
    }
}

fn cmd_align(args: &AlignArgs, argv: &[String], manifest: Option<&Path>) -> Result<()> {
    let mut timer = Timer::new();
    let (src, tgt) = load_pair(&args.emb)?;
    let lexicon = load_lexicon(&args.lexicon, &src, &tgt)?;
    timer.mark("load");

    if args.method != MethodArg::Rcsls && args.constraint != ConstraintArg::None {
        bail!("--constraint applies to --method rcsls only");
    }
    let config = TrainConfig {
        learning_rates: args.lr.clone(),
        epochs_grid: args.epochs.clone(),
        k: args.k,
        constraint: match args.constraint {
            ConstraintArg::None => ConstraintDomain::Unconstrained,
            ConstraintArg::Spectral => ConstraintDomain::SpectralBall,
        },
        extended_normalization: args.extended_norm,
        batch_size: args.batch_size,
        l2_reg: args.l2_reg,
        loss_variant: loss_variant(args.loss),
        seed: args.seed,
        ..TrainConfig::default()
    };

    let mut results = serde_json::Map::new();
    results.insert("train_pairs".into(), json!(lexicon.len()));
    results.insert("lexicon_coverage".into(), json!(lexicon.coverage()));
    let mut extra_inputs: Vec<&Path> = Vec::new();
    let map = match args.method {
        MethodArg::Lsq | MethodArg::Procrustes => {
            let x = src.gather(&lexicon.sources());
            let y = tgt.gather(&lexicon.targets());
            if args.method == MethodArg::Lsq {
                least_squares_fit(x.view(), y.view())?
            } else {
                procrustes_fit(x.view(), y.view())?
            }
        }
        MethodArg::Rcsls => {
            config.validate()?;
            if config.learning_rates.len() == 1 && config.epochs_grid.len() == 1 {
                let pools = NeighborPools::for_training(&src, &tgt, &lexicon, config.extended_normalization);
                let (map, trace) = train_rcsls(&src, &tgt, &lexicon, &pools, &config)?;
                results.insert("trace".into(), serde_json::to_value(&trace)?);
                map
            } else {
                let (train, valid) = match &args.valid_lexicon {
                    Some(path) => {
                        extra_inputs.push(path);
                        (lexicon.clone(), load_lexicon(path, &src, &tgt)?)
                    }
                    None => lexicon.split_validation(args.valid_fraction, args.seed)?,
                };
                let res = grid_search(&src, &tgt, &train, &valid, &config)?;
                results.insert("selected".into(), json!({
                    "learning_rate": res.config.learning_rates[0],
                    "epochs": res.config.epochs_grid[0],
                }));
                results.insert("grid".into(), serde_json::to_value(&res.points)?);
                results.insert("trace".into(), serde_json::to_value(&res.trace)?);
                res.map
            }
        }
    };
    timer.mark("train");
    results.insert("constraint".into(), json!(map.constraint().to_string()));
    results.insert("spectral_norm".into(), json!(map.spectral_norm()));

    let mut outputs = Vec::new();
    match &args.out_map {
        Some(path) => {
            map.save(path).with_context(|| format!("writing {}", path.display()))?;
            outputs.push(path.display().to_string());
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            map.write(&mut lock)?;
        }
    }
    if let Some(path) = &args.out_aligned {
        src.map_and_normalize(map.matrix())?
            .save_text(path, args.aligned_precision)
            .with_context(|| format!("writing {}", path.display()))?;
        outputs.push(path.display().to_string());
    }
    timer.mark("write");

    let mut inputs: Vec<&Path> = vec![&args.emb.src_emb, &args.emb.tgt_emb, &args.lexicon];
    inputs.extend(extra_inputs);
    let manifest_file = manifest_path(manifest, args.out_map.as_deref(), "align");
    write_json(
        &manifest_file,
        &Manifest {
            command: "align".into(),
            argv: argv.to_vec(),
            config: json!({
                "method": args.method,
                "train": config,
                "center": args.emb.center,
                "max_vocab": args.emb.max_vocab,
                "valid_fraction": args.valid_fraction,
            }),
            inputs: digests(&inputs)?,
            outputs,
            seed: Some(args.seed),
            version: env!("CARGO_PKG_VERSION"),
            timings_secs: timer.finish(),
            results: Value::Object(results),
        },
    )
}

fn emit_report(value: &impl Serialize, table: Option<String>, out: Option<&Path>) -> Result<()> {
    let text = match table {
        Some(t) => t,
        None => serde_json::to_string_pretty(value)? + "\n",
    };
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs, argv: &[String], manifest: Option<&Path>) -> Result<()> {
    let mut timer = Timer::new();
    let (src, tgt) = load_pair(&args.emb)?;
    let map = MappingMatrix::load(&args.map).with_context(|| format!("loading map {}", args.map.display()))?;
    if map.dim() != src.dim() {
        bail!("map is {0}x{0} but vectors have dimension {1}", map.dim(), src.dim());
    }
    let mut eval = load_lexicon(&args.eval_lexicon, &src, &tgt)?;
    if args.drop_exact_matches {
        let before = eval.eval_map().len();
        eval = eval
            .filter_exact_matches(src.vocab(), tgt.vocab())
            .context("no evaluable pairs remain after dropping exact string matches")?;
        log::info!("dropped exact matches: {before} -> {} source words", eval.eval_map().len());
    }
    timer.mark("load");

    let opts = RetrievalOptions::default();
    let config = TrainConfig {
        k: args.k,
        extended_normalization: args.extended_norm,
        ..TrainConfig::default().at(args.lr, args.epochs)
    };
    let mut inputs: Vec<&Path> = vec![&args.emb.src_emb, &args.emb.tgt_emb, &args.map, &args.eval_lexicon];
    let report: EvalReport = match args.sweep {
        SweepArg::None => evaluate_mapping(&map, &src, &tgt, &eval, criterion(args.criterion), args.k, &opts)?
            .with_method("map")
            .with_label(args.label.as_str()),
        SweepArg::Lexsize | SweepArg::Knn => {
            let Some(train_path) = &args.train_lexicon else {
                bail!("--sweep requires --train-lexicon");
            };
            inputs.push(train_path);
            let train = load_lexicon(train_path, &src, &tgt)?;
            let bench = Benchmark {
                label: &args.label,
                source: &src,
                target: &tgt,
                train: &train,
                test: &eval,
            };
            if args.sweep == SweepArg::Knn {
                knn_sweep(&args.ks, &bench, &config, &opts)?
            } else {
                let sizes = if args.sizes.is_empty() { vec![train.len()] } else { args.sizes.clone() };
                lexicon_size_sweep(&sizes, method(args.method), &bench, &config, &opts)?
            }
        }
    };
    let report = report.with_config(json!({
        "criterion": args.criterion,
        "k": args.k,
        "drop_exact_matches": args.drop_exact_matches,
        "sweep": args.sweep,
        "center": args.emb.center,
        "max_vocab": args.emb.max_vocab,
    }));
    timer.mark("evaluate");

    let table = (args.format == FormatArg::Table).then(|| render_table(std::slice::from_ref(&report)));
    emit_report(&report, table, args.out_report.as_deref())?;
    let manifest_file = manifest_path(manifest, args.out_report.as_deref(), "evaluate");
    write_json(
        &manifest_file,
        &Manifest {
            command: "evaluate".into(),
            argv: argv.to_vec(),
            config: report.config.clone(),
            inputs: digests(&inputs)?,
            outputs: args.out_report.iter().map(|p| p.display().to_string()).collect(),
            seed: None,
            version: env!("CARGO_PKG_VERSION"),
            timings_secs: timer.finish(),
            results: json!({
                "accuracy": report.accuracy,
                "n_evaluated": report.n_evaluated,
                "skipped_oov": report.skipped_oov,
            }),
        },
    )
}

fn cmd_refine(args: &RefineArgs, argv: &[String], manifest: Option<&Path>) -> Result<()> {
    let mut timer = Timer::new();
    let (src, tgt) = load_pair(&args.emb)?;
    let seeds = load_lexicon(&args.lexicon, &src, &tgt)?;
    let w0 = MappingMatrix::load(&args.map).with_context(|| format!("loading map {}", args.map.display()))?;
    timer.mark("load");

    let config = RefinementConfig {
        rounds: args.rounds,
        candidate_pool_size: args.pool_size,
        pairing_rule: match args.pairing {
            PairingArg::Best => PairingRule::BestInferred,
            PairingArg::Mutual => PairingRule::MutualCsls,
        },
        criterion_k: args.k,
    };
    let outcome = refine(&w0, &src, &tgt, &seeds, &config, &RetrievalOptions::default())?;
    timer.mark("refine");

    let mut outputs = Vec::new();
    match &args.out_map {
        Some(path) => {
            outcome.map.save(path).with_context(|| format!("writing {}", path.display()))?;
            outputs.push(path.display().to_string());
        }
        None => outcome.map.write(&mut io::stdout().lock())?,
    }
    let manifest_file = manifest_path(manifest, args.out_map.as_deref(), "refine");
    write_json(
        &manifest_file,
        &Manifest {
            command: "refine".into(),
            argv: argv.to_vec(),
            config: json!({
                "refinement": config,
                "center": args.emb.center,
                "max_vocab": args.emb.max_vocab,
            }),
            inputs: digests(&[&args.emb.src_emb, &args.emb.tgt_emb, &args.lexicon, &args.map])?,
            outputs,
            seed: None,
            version: env!("CARGO_PKG_VERSION"),
            timings_secs: timer.finish(),
            results: json!({
                "rounds": outcome.lexicon_sizes.len(),
                "lexicon_sizes": outcome.lexicon_sizes,
            }),
        },
    )
}

/// Appends `--key value` for every `key=value` line of the config file whose
/// flag is not already on the command line.
fn apply_config_file(argv: &mut Vec<String>, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{}:{}: expected key=value", path.display(), n + 1);
        };
        let flag = format!("--{}", key.trim().replace('_', "-"));
        let present = argv
            .iter()
            .any(|a| a == &flag || a.starts_with(&format!("{flag}=")));
        if present {
            continue;
        }
        match value.trim() {
            "true" => argv.push(flag),
            "false" => {}
            v => {
                argv.push(flag);
                argv.push(v.to_string());
            }
        }
    }
    Ok(())
}

fn config_path(argv: &[String]) -> Option<PathBuf> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    Ok(())
}

fn parse(argv: Vec<String>) -> Result<(Cli, Vec<String>), clap::Error> {
    let cli = Cli::try_parse_from(&argv)?;
    Ok((cli, argv))
}

fn run(cli: Cli, argv: &[String]) -> Result<()> {
    configure_threads(cli.threads)?;
    let manifest = cli.manifest.as_deref();
    match &cli.command {
        Command::Align(a) => cmd_align(a, argv, manifest),
        Command::Evaluate(a) => cmd_evaluate(a, argv, manifest),
        Command::Refine(a) => cmd_refine(a, argv, manifest),
        Command::Replay { manifest_path } => {
            let text = std::fs::read_to_string(manifest_path)
                .with_context(|| format!("reading {}", manifest_path.display()))?;
            let recorded: Value = serde_json::from_str(&text)?;
            let argv: Vec<String> = serde_json::from_value(recorded["argv"].clone())
                .context("manifest has no argv")?;
            let (cli, argv) = parse(argv).map_err(|e| anyhow::anyhow!("recorded arguments no longer parse: {e}"))?;
            if matches!(cli.command, Command::Replay { .. }) {
                bail!("refusing to replay a replay");
            }
            run(cli, &argv)
        }
    }
}

fn main() -> ExitCode {
    let mut argv: Vec<String> = std::env::args().collect();
    // The config file may supply required flags, so merge it before clap sees argv.
    if let Some(path) = config_path(&argv) {
        if let Err(e) = apply_config_file(&mut argv, &path) {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    }
    let (cli, argv) = match parse(argv) {
        Ok(parsed) => parsed,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
