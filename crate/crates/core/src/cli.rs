//! The `dedup-forge` command line.
//!
//! Every successful run writes one manifest JSON describing the command, its
//! configuration, the SHA-256 of each input and output file and the tool
//! version. Worker count (`--threads`) is deliberately left out of the
//! manifest because it never changes an output byte.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 deduplication hit
//! its pass cap.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::corpus::{
    flatten_units, parse_corpus, parse_samples, write_samples, write_units, CorpusSchema,
    DialogueUnit, FlattenMode, Sample, SampleKey, SplitRule, TokenizerConfig, Utterance,
    DEFAULT_WINDOW,
};
use crate::dedup::{dedup_to_convergence, DedupAudit, DedupConfig, Removal};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, parse_predictions, write_predictions, EvalPair, MetricReport, Smoothing};
use crate::overlap::{
    overlap_histogram, parse_records, similarity_self_join, write_records, OverlapHistogram,
    SampleIndex, Threshold, DEFAULT_BIN_WIDTH,
};
use crate::report::{lookup_model, render, stratified_eval, EvalSpec, Format, StratifiedReport, DEFAULT_CUT};
use crate::split::{check_split_contracts, remove_exact_duplicates, resplit, SizeBasis, SplitSpec};

pub const TOOL_NAME: &str = "dedup-forge";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "dedup-forge", version, about = "Overlap auditing, unit-level deduplication and leakage-stratified evaluation for dialogue corpora")]
struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "DEDUP_FORGE_THREADS", default_value_t = 0)]
    threads: usize,

    /// Where to write the run manifest. Commands with --outdir always use
    /// <outdir>/manifest.json.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Overlap of every test sample against the training set.
    Analyze(AnalyzeArgs),
    /// Remove near-duplicate units until no pair meets the threshold.
    Dedup(DedupArgs),
    /// Seeded train/valid/test split with exact duplicate removal.
    Split(SplitArgs),
    /// Score predictions, optionally stratified by overlap.
    Eval(EvalArgs),
    /// Re-emit a report, histogram or audit in another format.
    Report(ReportArgs),
    /// Dedup, re-split, flatten and drop exact duplicates in one run.
    Pipeline(PipelineArgs),
}

fn enum_arg<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(Value::String(s.to_owned())).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Args, Serialize)]
struct TokenizerArgs {
    /// Lowercase tokens after splitting.
    #[arg(long)]
    lowercase: bool,

    /// whitespace | unicode_word
    #[arg(long, default_value = "whitespace", value_parser = enum_arg::<SplitRule>)]
    split_rule: SplitRule,
}

impl TokenizerArgs {
    fn config(&self) -> TokenizerConfig {
        TokenizerConfig {
            lowercase: self.lowercase,
            split_rule: self.split_rule,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
struct FlattenArgs {
    /// single_turn | multi_turn
    #[arg(long, default_value = "multi_turn", value_parser = enum_arg::<FlattenMode>)]
    mode: FlattenMode,

    /// Context utterances per sample in multi_turn mode.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
struct CorpusArgs {
    /// unit_per_line | turn_per_line
    #[arg(long, default_value = "unit_per_line", value_parser = enum_arg::<CorpusSchema>)]
    schema: CorpusSchema,

    #[command(flatten)]
    #[serde(flatten)]
    tokenizer: TokenizerArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
struct ThresholdArgs {
    /// Unit overlap ratio at which a unit counts as a near-duplicate.
    #[arg(long, default_value_t = 0.8)]
    threshold: f64,

    /// Only ratios strictly above the threshold count.
    #[arg(long)]
    strict: bool,

    #[arg(long, default_value_t = 100)]
    max_passes: usize,
}

impl ThresholdArgs {
    fn config(&self) -> Result<DedupConfig> {
        Ok(DedupConfig {
            threshold: Threshold::new(self.threshold, self.strict)?,
            max_passes: self.max_passes,
        })
    }
}

#[derive(Debug, Clone, Args, Serialize)]
struct SplitSizeArgs {
    /// Validation split size.
    #[arg(long)]
    valid: usize,

    /// Test split size.
    #[arg(long)]
    test: usize,

    /// units | samples
    #[arg(long, default_value = "units", value_parser = enum_arg::<SizeBasis>)]
    basis: SizeBasis,

    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SplitSizeArgs {
    fn spec(&self) -> SplitSpec {
        SplitSpec {
            valid_size: self.valid,
            test_size: self.test,
            size_basis: self.basis,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct AnalyzeArgs {
    #[arg(long)]
    train: PathBuf,

    #[arg(long)]
    test: PathBuf,

    /// Inputs are flattened sample files rather than corpora.
    #[arg(long)]
    samples: bool,

    #[command(flatten)]
    #[serde(flatten)]
    corpus: CorpusArgs,

    #[command(flatten)]
    #[serde(flatten)]
    flatten: FlattenArgs,

    #[arg(long, default_value_t = DEFAULT_BIN_WIDTH)]
    bin_width: f64,

    /// json | csv
    #[arg(long, default_value = "json", value_parser = enum_arg::<Format>)]
    format: Format,

    /// Histogram output.
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,

    /// Per-sample overlap records; defaults to <out stem>.records.jsonl.
    #[arg(long)]
    #[serde(skip)]
    records: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct DedupArgs {
    #[arg(long = "in")]
    input: PathBuf,

    #[command(flatten)]
    #[serde(flatten)]
    corpus: CorpusArgs,

    #[command(flatten)]
    #[serde(flatten)]
    threshold: ThresholdArgs,

    /// Kept units, one per line.
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,

    /// Removal audit, one JSON object per removal.
    #[arg(long)]
    #[serde(skip)]
    audit: Option<PathBuf>,

    /// Pass count, removals and final size as JSON.
    #[arg(long)]
    #[serde(skip)]
    summary: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct SplitArgs {
    #[arg(long = "in")]
    input: PathBuf,

    #[command(flatten)]
    #[serde(flatten)]
    corpus: CorpusArgs,

    #[command(flatten)]
    #[serde(flatten)]
    sizes: SplitSizeArgs,

    #[command(flatten)]
    #[serde(flatten)]
    flatten: FlattenArgs,

    #[arg(long)]
    #[serde(skip)]
    outdir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[group(id = "hypotheses", required = true, multiple = false, args = ["predictions", "lookup_train"])]
struct EvalArgs {
    /// Reference samples (flattened sample file).
    #[arg(long)]
    references: PathBuf,

    /// Predictions, `{"unit_id", "turn_index", "hypothesis"}` per line.
    #[arg(long)]
    predictions: Option<PathBuf>,

    /// Generate hypotheses with the lookup model over these train samples.
    #[arg(long)]
    lookup_train: Option<PathBuf>,

    /// Overlap records for stratification. Computed against --lookup-train
    /// when absent.
    #[arg(long)]
    records: Option<PathBuf>,

    #[arg(long, default_value_t = DEFAULT_CUT)]
    cut: f64,

    #[arg(long, value_delimiter = ',', default_value = "2,4")]
    bleu: Vec<usize>,

    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    dist: Vec<usize>,

    /// none | add-one | exp-decay
    #[arg(long, default_value = "add-one", value_parser = enum_arg::<Smoothing>)]
    smoothing: Smoothing,

    #[arg(long, default_value_t = DEFAULT_BIN_WIDTH)]
    bin_width: f64,

    #[command(flatten)]
    #[serde(flatten)]
    tokenizer: TokenizerArgs,

    /// json | csv
    #[arg(long, default_value = "json", value_parser = enum_arg::<Format>)]
    format: Format,

    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,

    /// Also write the hypotheses that were scored.
    #[arg(long)]
    #[serde(skip)]
    write_predictions: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ReportArgs {
    /// A report, histogram or audit written by another subcommand.
    #[arg(long = "in")]
    input: PathBuf,

    /// json | csv
    #[arg(long, default_value = "csv", value_parser = enum_arg::<Format>)]
    format: Format,

    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct PipelineArgs {
    #[arg(long = "in")]
    input: PathBuf,

    #[command(flatten)]
    #[serde(flatten)]
    corpus: CorpusArgs,

    #[command(flatten)]
    #[serde(flatten)]
    threshold: ThresholdArgs,

    #[command(flatten)]
    #[serde(flatten)]
    sizes: SplitSizeArgs,

    #[command(flatten)]
    #[serde(flatten)]
    flatten: FlattenArgs,

    #[arg(long)]
    #[serde(skip)]
    outdir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub counts: BTreeMap<String, Value>,
    pub duration_ms: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Files read and written by one run, with their digests.
struct Ledger {
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    counts: BTreeMap<String, Value>,
    /// Output paths are recorded relative to this directory when set.
    base: Option<PathBuf>,
}

impl Ledger {
    fn new(base: Option<PathBuf>) -> Self {
        Ledger {
            inputs: Vec::new(),
            outputs: Vec::new(),
            counts: BTreeMap::new(),
            base,
        }
    }

    fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<String> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        let shown = match &self.base {
            Some(base) => path.strip_prefix(base).unwrap_or(path),
            None => path,
        };
        let sha256 = sha256_hex(bytes);
        self.outputs.push(FileDigest {
            path: shown.display().to_string(),
            sha256: sha256.clone(),
        });
        log::info!("wrote {}", path.display());
        Ok(sha256)
    }

    fn count(&mut self, name: &str, value: impl Into<Value>) {
        self.counts.insert(name.to_owned(), value.into());
    }
}

fn to_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory cannot fail");
    buf
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .try_init();

    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start {} worker threads: {e}", cli.threads);
            return 1;
        }
    };
    let started = Instant::now();
    match pool.install(|| execute(&cli, started)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::ConvergenceCapped { .. } => 3,
        Error::InvalidConfig(_) | Error::BadBinWidth(_) => 1,
        _ => 2,
    }
}

fn execute(cli: &Cli, started: Instant) -> Result<()> {
    let (name, config, ledger, manifest_path) = match &cli.command {
        Command::Analyze(a) => {
            let mut ledger = Ledger::new(None);
            analyze(a, &mut ledger)?;
            ("analyze", json!(a), ledger, default_manifest(cli, &a.out))
        }
        Command::Dedup(a) => {
            let mut ledger = Ledger::new(None);
            dedup(a, &mut ledger)?;
            ("dedup", json!(a), ledger, default_manifest(cli, &a.out))
        }
        Command::Split(a) => {
            let mut ledger = Ledger::new(Some(a.outdir.clone()));
            split(a, &mut ledger)?;
            ("split", json!(a), ledger, a.outdir.join(MANIFEST_FILE))
        }
        Command::Eval(a) => {
            let mut ledger = Ledger::new(None);
            eval(a, &mut ledger)?;
            ("eval", json!(a), ledger, default_manifest(cli, &a.out))
        }
        Command::Report(a) => {
            let mut ledger = Ledger::new(None);
            report(a, &mut ledger)?;
            ("report", json!(a), ledger, default_manifest(cli, &a.out))
        }
        Command::Pipeline(a) => {
            let mut ledger = Ledger::new(Some(a.outdir.clone()));
            pipeline(a, &mut ledger)?;
            ("pipeline", json!(a), ledger, a.outdir.join(MANIFEST_FILE))
        }
    };
    let manifest = RunManifest {
        tool: TOOL_NAME.to_owned(),
        version: env!("CARGO_PKG_VERSION").to_owned(),
        command: name.to_owned(),
        config,
        inputs: ledger.inputs,
        outputs: ledger.outputs,
        counts: ledger.counts,
        duration_ms: started.elapsed().as_millis() as u64,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))
}

fn default_manifest(cli: &Cli, out: &Path) -> PathBuf {
    cli.manifest.clone().unwrap_or_else(|| {
        let mut name = out.as_os_str().to_owned();
        name.push(".manifest.json");
        PathBuf::from(name)
    })
}

fn load_corpus(path: &Path, args: &CorpusArgs, ledger: &mut Ledger) -> Result<Vec<DialogueUnit>> {
    let bytes = ledger.read(path)?;
    let source = path.display().to_string();
    let parsed = parse_corpus(&bytes[..], args.schema, &source, &args.tokenizer.config())?;
    if parsed.dropped > 0 {
        log::warn!("{source}: dropped {} record(s) with fewer than two utterances", parsed.dropped);
    }
    log::info!("{source}: {} units", parsed.units.len());
    ledger.count("input_units", parsed.units.len());
    ledger.count("dropped_short_units", parsed.dropped);
    Ok(parsed.units)
}

fn load_samples(path: &Path, cfg: &TokenizerConfig, ledger: &mut Ledger) -> Result<Vec<Sample>> {
    let bytes = ledger.read(path)?;
    parse_samples(&bytes[..], &path.display().to_string(), cfg)
}

fn analyze(a: &AnalyzeArgs, ledger: &mut Ledger) -> Result<()> {
    let load = |path: &Path, ledger: &mut Ledger| -> Result<Vec<Sample>> {
        if a.samples {
            load_samples(path, &a.corpus.tokenizer.config(), ledger)
        } else {
            let units = load_corpus(path, &a.corpus, ledger)?;
            flatten_units(&units, a.flatten.mode, a.flatten.window)
        }
    };
    let train = load(&a.train, ledger)?;
    let test = load(&a.test, ledger)?;
    ledger.counts.remove("input_units");
    ledger.counts.remove("dropped_short_units");
    let index = SampleIndex::build(&train)?;
    let records = index.max_overlap_all(&test)?;
    let hist = overlap_histogram(&records, a.bin_width)?;
    log::info!(
        "{} of {} test samples ({:.2}%) have an exact match in train",
        hist.exact_match_count,
        hist.total,
        100.0 * hist.exact_fraction()
    );

    ledger.write(&a.out, render(&hist, a.format).as_bytes())?;
    let records_path = a.records.clone().unwrap_or_else(|| {
        let stem = a.out.file_stem().unwrap_or_default().to_string_lossy();
        a.out.with_file_name(format!("{stem}.records.jsonl"))
    });
    ledger.write(&records_path, &to_bytes(|b| write_records(b, &records)))?;
    ledger.count("train_samples", train.len());
    ledger.count("test_samples", test.len());
    ledger.count("exact_matches", hist.exact_match_count);
    ledger.count("exact_fraction", hist.exact_fraction());
    Ok(())
}

fn dedup(a: &DedupArgs, ledger: &mut Ledger) -> Result<()> {
    let cfg = a.threshold.config()?;
    let units = load_corpus(&a.input, &a.corpus, ledger)?;
    let (kept, audit) = match dedup_to_convergence(&units, &cfg) {
        Ok(done) => done,
        Err(Error::ConvergenceCapped { max_passes, audit }) => {
            // Keep the partial audit for inspection before failing.
            if let Some(path) = &a.audit {
                ledger.write(path, &to_bytes(|b| audit.write_jsonl(b)))?;
            }
            return Err(Error::ConvergenceCapped { max_passes, audit });
        }
        Err(e) => return Err(e),
    };
    log::info!(
        "kept {} of {} units after {} pass(es)",
        kept.len(),
        units.len(),
        audit.passes
    );
    ledger.write(&a.out, &to_bytes(|b| write_units(b, &kept)))?;
    if let Some(path) = &a.audit {
        ledger.write(path, &to_bytes(|b| audit.write_jsonl(b)))?;
    }
    let summary = audit.summary(kept.len());
    if let Some(path) = &a.summary {
        let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
        text.push('\n');
        ledger.write(path, text.as_bytes())?;
    }
    ledger.count("passes", summary.passes);
    ledger.count("removed_units", summary.total_removed);
    ledger.count("kept_units", summary.final_count);
    Ok(())
}

/// Resplits `units`, removes exact duplicates, checks the split contracts
/// and writes the six split files into `outdir`.
fn split_and_write(
    units: &[DialogueUnit],
    sizes: &SplitSizeArgs,
    flatten: &FlattenArgs,
    outdir: &Path,
    ledger: &mut Ledger,
) -> Result<()> {
    let bundle = resplit(units, &sizes.spec())?;
    let (views, dups) = remove_exact_duplicates(&bundle, flatten.mode, flatten.window)?;
    check_split_contracts(&bundle, &views)?;
    let parts = [
        ("train", &bundle.train, &views.train),
        ("valid", &bundle.valid, &views.valid),
        ("test", &bundle.test, &views.test),
    ];
    for (name, split_units, samples) in parts {
        ledger.write(
            &outdir.join(format!("{name}.jsonl")),
            &to_bytes(|b| write_units(b, split_units)),
        )?;
        ledger.write(
            &outdir.join(format!("{name}.samples.jsonl")),
            &to_bytes(|b| write_samples(b, samples.iter())),
        )?;
        ledger.count(&format!("{name}_units"), split_units.len());
        ledger.count(&format!("{name}_samples"), samples.len());
    }
    ledger.count("exact_duplicates", json!(dups));
    ledger.count("exact_duplicates_total", dups.total());
    log::info!(
        "split {}/{}/{} units, {}/{}/{} samples, {} exact duplicates dropped",
        bundle.train.len(),
        bundle.valid.len(),
        bundle.test.len(),
        views.train.len(),
        views.valid.len(),
        views.test.len(),
        dups.total()
    );
    Ok(())
}

fn split(a: &SplitArgs, ledger: &mut Ledger) -> Result<()> {
    let units = load_corpus(&a.input, &a.corpus, ledger)?;
    split_and_write(&units, &a.sizes, &a.flatten, &a.outdir, ledger)
}

fn pipeline(a: &PipelineArgs, ledger: &mut Ledger) -> Result<()> {
    let cfg = a.threshold.config()?;
    let units = load_corpus(&a.input, &a.corpus, ledger)?;
    let (kept, audit) = dedup_to_convergence(&units, &cfg)?;
    let leftover = similarity_self_join(&kept, cfg.threshold, false);
    if let Some(p) = leftover.pairs.first() {
        return Err(Error::Invariant(format!(
            "units `{}` and `{}` survived deduplication with ratio {:.6}",
            p.a, p.b, p.ratio
        )));
    }
    log::info!("dedup kept {} of {} units", kept.len(), units.len());
    let audit_sha = ledger.write(&a.outdir.join("audit.jsonl"), &to_bytes(|b| audit.write_jsonl(b)))?;
    ledger.count("dedup_passes", audit.passes);
    ledger.count("dedup_removed_units", audit.removals.len());
    ledger.count("dedup_kept_units", kept.len());
    ledger.count("dedup_audit_sha256", audit_sha);
    split_and_write(&kept, &a.sizes, &a.flatten, &a.outdir, ledger)
}

fn eval(a: &EvalArgs, ledger: &mut Ledger) -> Result<()> {
    let cfg = a.tokenizer.config();
    let references = load_samples(&a.references, &cfg, ledger)?;
    let spec = EvalSpec {
        bleu_ns: a.bleu.clone(),
        dist_ns: a.dist.clone(),
        smoothing: a.smoothing,
        bin_width: a.bin_width,
    };

    let mut train = None;
    let hypotheses: Vec<Utterance> = if let Some(path) = &a.predictions {
        let bytes = ledger.read(path)?;
        let preds = parse_predictions(&bytes[..], &path.display().to_string(), &cfg)?;
        let by_key: HashMap<SampleKey, Utterance> = preds.into_iter().collect();
        let mut unmatched = Vec::new();
        let hyps = references
            .iter()
            .map(|r| {
                by_key.get(&r.key()).cloned().unwrap_or_else(|| {
                    unmatched.push(r.key().to_string());
                    Utterance::empty()
                })
            })
            .collect();
        if !unmatched.is_empty() {
            unmatched.sort();
            return Err(Error::Join { unmatched });
        }
        hyps
    } else {
        let path = a.lookup_train.as_ref().expect("clap requires one hypothesis source");
        let samples = load_samples(path, &cfg, ledger)?;
        let contexts: Vec<Vec<Utterance>> = references.iter().map(|s| s.context.clone()).collect();
        let hyps = lookup_model(&samples, &contexts)?;
        train = Some(samples);
        hyps
    };

    let pairs: Vec<EvalPair> = references
        .iter()
        .zip(&hypotheses)
        .map(|(r, h)| EvalPair {
            hypothesis: h.clone(),
            reference: r.response.clone(),
            key: r.key(),
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyEval);
    }

    let records = match (&a.records, &train) {
        (Some(path), _) => {
            let bytes = ledger.read(path)?;
            Some(parse_records(&bytes[..], &path.display().to_string())?)
        }
        (None, Some(train)) => Some(SampleIndex::build(train)?.max_overlap_all(&references)?),
        (None, None) => None,
    };
    let text = match records {
        Some(records) => {
            let report = stratified_eval(&pairs, &records, a.cut, &spec)?;
            ledger.count("overlapping_pairs", report.overlapping.pair_count);
            ledger.count("clean_pairs", report.clean.pair_count);
            render(&report, a.format)
        }
        None => render(&evaluate(&pairs, &spec.bleu_ns, &spec.dist_ns, spec.smoothing)?, a.format),
    };
    ledger.count("pairs", pairs.len());
    ledger.write(&a.out, text.as_bytes())?;
    if let Some(path) = &a.write_predictions {
        let bytes = to_bytes(|b| write_predictions(b, pairs.iter().map(|p| (&p.key, &p.hypothesis))));
        ledger.write(path, &bytes)?;
    }
    Ok(())
}

/// What a JSON artifact handed to `report` turned out to be.
enum Artifact {
    Stratified(StratifiedReport),
    Histogram(OverlapHistogram),
    Audit(DedupAudit),
    Metrics(MetricReport),
}

fn detect(text: &str, source: &str) -> Result<Artifact> {
    let bad = |message: String| Error::Parse {
        source_name: source.to_owned(),
        line: 1,
        message,
    };
    let value: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(_) => {
            // An audit written as one removal per line.
            let removals = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(format!("not a report, histogram or audit: {e}")))?;
            let passes = removals.iter().map(|r: &Removal| r.pass).max().unwrap_or(0);
            return Ok(Artifact::Audit(DedupAudit { passes, removals }));
        }
    };
    let has = |k: &str| value.get(k).is_some();
    let convert = |e: serde_json::Error| bad(e.to_string());
    if has("cut") && has("overall") {
        serde_json::from_value(value).map(Artifact::Stratified).map_err(convert)
    } else if has("bin_width") && has("counts") {
        serde_json::from_value(value).map(Artifact::Histogram).map_err(convert)
    } else if has("removals") {
        serde_json::from_value(value).map(Artifact::Audit).map_err(convert)
    } else if has("pair_count") {
        serde_json::from_value(value).map(Artifact::Metrics).map_err(convert)
    } else if value.as_object().is_some_and(|o| o.contains_key("removed")) {
        let removal: Removal = serde_json::from_value(value).map_err(convert)?;
        Ok(Artifact::Audit(DedupAudit {
            passes: removal.pass,
            removals: vec![removal],
        }))
    } else {
        Err(bad("not a report, histogram or audit".into()))
    }
}

fn report(a: &ReportArgs, ledger: &mut Ledger) -> Result<()> {
    let bytes = ledger.read(&a.input)?;
    let source = a.input.display().to_string();
    let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
        source_name: source.clone(),
        line: 1,
        message: e.to_string(),
    })?;
    let rendered = match detect(&text, &source)? {
        Artifact::Stratified(r) => render(&r, a.format),
        Artifact::Histogram(h) => render(&h, a.format),
        Artifact::Audit(audit) => render(&audit, a.format),
        Artifact::Metrics(m) => render(&m, a.format),
    };
    ledger.write(&a.out, rendered.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["dedup-forge", "--bogus"]), 1);
        assert_eq!(run(["dedup-forge", "dedup", "--in", "x.jsonl"]), 1);
        assert_eq!(run(["dedup-forge", "analyze", "--train", "a", "--test", "b", "--out", "c", "--mode", "zigzag"]), 1);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run(["dedup-forge", "--help"]), 0);
        assert_eq!(run(["dedup-forge", "--version"]), 0);
    }

    #[test]
    fn missing_input_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o.jsonl");
        let code = run([
            "dedup-forge".as_ref(),
            "dedup".as_ref(),
            "--in".as_ref(),
            dir.path().join("missing.jsonl").as_os_str(),
            "--out".as_ref(),
            out.as_os_str(),
        ] as [&std::ffi::OsStr; 6]);
        assert_eq!(code, 2);
    }

    #[test]
    fn enum_flags_use_snake_case() {
        assert_eq!(enum_arg::<FlattenMode>("single_turn"), Ok(FlattenMode::SingleTurn));
        assert_eq!(enum_arg::<Smoothing>("exp-decay"), Ok(Smoothing::ExpDecay));
        assert!(enum_arg::<SizeBasis>("bytes").is_err());
    }

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
