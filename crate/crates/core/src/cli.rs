//! Command-line surface: argument types, [`RunConfig`] and one function per
//! subcommand. The `dmel` binary only parses arguments and calls [`run`].

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::catalog::{load_schemas, schema_candidates, CandidateSet, EntityCatalog};
use crate::decoder::{calibrate_threshold, DecodeOptions, DEFAULT_BEAM, DEFAULT_MAX_LEN};
use crate::error::Error;
use crate::eval::{emit_report, report_paths, write_atomic, EvalReport};
use crate::link::{dev_points, load_results, save_results, LinkOptions, Linker, ResultsHeader, SearchMode, RESULTS_FORMAT};
use crate::preprocess::{load_instances, AssembleOptions, MentionInstance, ModalitySet, Task, DEFAULT_TABLE_TOKEN_CAP};
use crate::scorer::{protocol, timeout_from_env, Endpoint, ExternalScorer, LexicalParams, LexicalScorer, MockScorer, Scorer};
use crate::synth;
use crate::tokenizer::{TokenSeq, Vocabulary};
use crate::trie::EntityTrie;

/// Which scorer to run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerSpec {
    Mock,
    Lexical(LexicalParams),
    External { endpoint: String },
}

impl FromStr for ScorerSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(ScorerSpec::Mock),
            "lexical" => Ok(ScorerSpec::Lexical(LexicalParams::default())),
            _ => match s.strip_prefix("external:") {
                Some(ep) => {
                    Endpoint::from_str(ep).map_err(|e| e.to_string())?;
                    Ok(ScorerSpec::External { endpoint: ep.to_string() })
                }
                None => Err(format!("unknown scorer {s:?}; expected mock, lexical or external:<host:port|stdio:cmd>")),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

fn parse_threshold(s: &str) -> Result<f64, String> {
    let t: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if t.is_nan() {
        return Err("threshold must not be NaN".into());
    }
    Ok(t)
}

/// Flags shared by every command that links.
#[derive(Clone, Debug, Args)]
pub struct RunArgs {
    /// mock | lexical | external:<host:port|stdio:cmd>
    #[arg(long, default_value = "mock")]
    pub scorer: ScorerSpec,
    #[arg(long, default_value_t = DEFAULT_BEAM)]
    pub beam: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    pub max_len: usize,
    /// Nil threshold on the best log-score.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_threshold)]
    pub threshold: Option<f64>,
    /// JSON file with a "threshold" field, as written by `calibrate`.
    #[arg(long, conflicts_with = "threshold")]
    pub config_patch: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "off")]
    pub task_prefix: OnOff,
    /// Modalities to drop, e.g. "V" or "V,U".
    #[arg(long, default_value = "")]
    pub mask: ModalitySet,
    #[arg(long, default_value_t = DEFAULT_TABLE_TOKEN_CAP)]
    pub table_token_cap: usize,
    /// Rank by log-score divided by length.
    #[arg(long)]
    pub length_normalize: bool,
    /// Score every candidate instead of beam search.
    #[arg(long)]
    pub exhaustive: bool,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    /// Add-k smoothing constant of the lexical scorer.
    #[arg(long = "smoothing", default_value_t = 0.1)]
    pub k: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

impl Default for RunArgs {
    fn default() -> Self {
        RunArgs {
            scorer: ScorerSpec::Mock,
            beam: DEFAULT_BEAM,
            max_len: DEFAULT_MAX_LEN,
            threshold: None,
            config_patch: None,
            task_prefix: OnOff::Off,
            mask: ModalitySet::EMPTY,
            table_token_cap: DEFAULT_TABLE_TOKEN_CAP,
            length_normalize: false,
            exhaustive: false,
            lambda: 0.5,
            alpha: 2.0,
            k: 0.1,
            seed: 0,
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunPaths {
    pub vocab: Option<PathBuf>,
    pub trie: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub schemas: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

/// Everything that determines a run's output. Serialized into the header
/// of every results file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scorer: ScorerSpec,
    pub beam: usize,
    pub max_len: usize,
    #[serde(with = "crate::serde_ext::opt_score")]
    pub threshold: Option<f64>,
    pub task_prefix: bool,
    pub mask: ModalitySet,
    pub table_token_cap: usize,
    pub length_normalize: bool,
    pub search: SearchMode,
    pub paths: RunPaths,
    pub seed: u64,
    /// Worker threads; does not affect output.
    #[serde(skip)]
    pub jobs: usize,
}

/// A partial config written by `calibrate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigPatch {
    #[serde(with = "crate::serde_ext::opt_score")]
    pub threshold: Option<f64>,
}

impl RunConfig {
    pub fn from_args(args: &RunArgs, paths: RunPaths) -> Result<Self, Error> {
        let scorer = match &args.scorer {
            ScorerSpec::Lexical(_) => {
                let p = LexicalParams { lambda: args.lambda, alpha: args.alpha, k: args.k };
                p.validate()?;
                ScorerSpec::Lexical(p)
            }
            other => other.clone(),
        };
        let threshold = match &args.config_patch {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
                let patch: ConfigPatch = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
                patch.threshold
            }
            None => args.threshold,
        };
        let config = RunConfig {
            scorer,
            beam: args.beam,
            max_len: args.max_len,
            threshold,
            task_prefix: args.task_prefix == OnOff::On,
            mask: args.mask,
            table_token_cap: args.table_token_cap,
            length_normalize: args.length_normalize,
            search: if args.exhaustive { SearchMode::Exhaustive } else { SearchMode::Beam },
            paths,
            seed: args.seed,
            jobs: args.jobs.max(1),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.beam == 0 {
            return Err(Error::Precondition("--beam must be at least 1".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Precondition("--max-len must be at least 1".into()));
        }
        for p in [&self.paths.vocab, &self.paths.trie, &self.paths.catalog, &self.paths.schemas, &self.paths.dataset]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                return Err(Error::io(
                    format!("input {}", p.display()),
                    io::Error::new(io::ErrorKind::NotFound, "no such file"),
                ));
            }
        }
        Ok(())
    }

    pub fn link_options(&self) -> LinkOptions {
        LinkOptions {
            decode: DecodeOptions { beam: self.beam, max_len: self.max_len, length_normalize: self.length_normalize },
            assemble: AssembleOptions {
                task_prefix: self.task_prefix,
                mask: self.mask,
                table_token_cap: self.table_token_cap,
            },
            threshold: self.threshold,
            mode: self.search,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dmel", version, about = "Trie-constrained generative entity linking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a vocabulary covering corpus lines plus any catalog or dataset given.
    BuildVocab(BuildVocabArgs),
    /// Build the binary trie over a catalog's names.
    BuildTrie(BuildTrieArgs),
    /// Link every instance of a dataset and write results JSONL.
    Link(LinkArgs),
    /// Choose the nil threshold maximizing micro-F1 on a dev set.
    Calibrate(LinkArgs),
    /// Score a results file against gold labels.
    Eval(EvalArgs),
    /// Measure trie build time and linking throughput on synthetic catalogs.
    Bench(BenchArgs),
    /// Serve a built-in scorer over the DMSCORE/1 protocol.
    Serve(ServeArgs),
}

#[derive(Clone, Debug, Default, Args)]
pub struct BuildVocabArgs {
    /// Plain text files, one segment per line.
    #[arg(long)]
    pub corpus: Vec<PathBuf>,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Instance JSONL whose texts and candidates (table cells included) are added.
    #[arg(long)]
    pub dataset: Vec<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    pub max_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct BuildTrieArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct LinkArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Candidate space for instances without explicit candidates.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Prebuilt trie over the catalog.
    #[arg(long, requires = "catalog")]
    pub trie: Option<PathBuf>,
    /// Schema JSON; candidate space for schema-linking instances.
    #[arg(long)]
    pub schemas: Option<PathBuf>,
    /// Results JSONL for `link`, threshold patch JSON for `calibrate`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Clone, Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Needed to grade instances without explicit candidates.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Writes <out>.json and <out>.txt.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct BenchArgs {
    /// Catalog sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1000,100000")]
    pub sizes: Vec<usize>,
    /// Instances linked per size.
    #[arg(long, default_value_t = 1000)]
    pub instances: usize,
    /// Distinct words in the synthetic lexicon.
    #[arg(long, default_value_t = 20_000)]
    pub lexicon: usize,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Clone, Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    /// mock or lexical.
    #[arg(long, default_value = "mock")]
    pub scorer: ScorerSpec,
    /// Training names for the lexical scorer.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// host:port to listen on; stdio when absent.
    #[arg(long)]
    pub listen: Option<String>,
}

fn load_vocab(path: &Path) -> Result<Vocabulary, Error> {
    Ok(Vocabulary::load(path)?)
}

fn load_catalog(path: &Path) -> Result<EntityCatalog, Error> {
    Ok(EntityCatalog::load(path)?)
}

/// Text always added to a built vocabulary: row indices and task prefixes.
pub const BUILTIN_CORPUS: [&str; 3] = ["0 1 2 3 4 5 6 7 8 9", "entity linking", "schema linking"];

pub fn cmd_build_vocab(args: &BuildVocabArgs) -> Result<Vocabulary, Error> {
    let mut lines: Vec<String> = BUILTIN_CORPUS.iter().map(|s| s.to_string()).collect();
    for path in &args.corpus {
        let f = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        for line in BufReader::new(f).lines() {
            lines.push(line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?);
        }
    }
    if let Some(path) = &args.catalog {
        lines.extend(load_catalog(path)?.names());
    }
    for path in &args.dataset {
        for inst in load_instances(path)? {
            lines.push(inst.text);
            if let Some(t) = inst.table {
                lines.extend(t.headers);
                lines.extend(t.rows.into_iter().flatten());
            }
            lines.extend(inst.candidates.unwrap_or_default());
        }
    }
    let vocab = Vocabulary::build(lines.iter().map(String::as_str), args.max_size)?;
    vocab.save(&args.out)?;
    log::info!("wrote {} tokens to {} (hash {})", vocab.len(), args.out.display(), vocab.hash());
    Ok(vocab)
}

pub fn cmd_build_trie(args: &BuildTrieArgs) -> Result<EntityTrie, Error> {
    let vocab = load_vocab(&args.vocab)?;
    let catalog = load_catalog(&args.catalog)?;
    let names: Vec<TokenSeq> = catalog.names().iter().map(|n| vocab.tokenize(n)).collect();
    let trie = EntityTrie::build(vocab.hash(), &names)?;
    trie.save(&args.out)?;
    log::info!("wrote trie with {} entities and {} nodes to {}", trie.entity_count(), trie.node_count(), args.out.display());
    Ok(trie)
}

/// Names the lexical scorer is trained on: catalog names, schema candidates
/// and every explicit candidate, deduplicated and sorted.
fn lexical_training_names(
    catalog: Option<&EntityCatalog>,
    schema: Option<&CandidateSet>,
    instances: &[MentionInstance],
) -> Vec<String> {
    let mut names: BTreeSet<String> = BTreeSet::new();
    if let Some(c) = catalog {
        names.extend(c.names());
    }
    if let Some(s) = schema {
        names.extend(s.candidates().iter().cloned());
    }
    for inst in instances {
        if let Some(c) = &inst.candidates {
            names.extend(c.iter().map(|n| crate::normalize::normalize_name(n)));
        }
    }
    names.into_iter().collect()
}

/// Instantiates the configured scorer. `names` trains the lexical scorer.
pub fn build_scorer(spec: &ScorerSpec, vocab: &Vocabulary, names: &[String], pool: usize) -> Result<Box<dyn Scorer>, Error> {
    Ok(match spec {
        ScorerSpec::Mock => Box::new(MockScorer),
        ScorerSpec::Lexical(params) => {
            let seqs: Vec<TokenSeq> = names.iter().map(|n| vocab.tokenize(n)).collect();
            Box::new(LexicalScorer::new(vocab, &seqs, *params)?)
        }
        ScorerSpec::External { endpoint } => {
            let ep = Endpoint::from_str(endpoint)?;
            Box::new(ExternalScorer::connect(ep, vocab.hash(), pool.max(1), timeout_from_env())?)
        }
    })
}

/// Loads every input of a link-style command, checks vocabulary agreement,
/// then links.
fn link_dataset(args: &LinkArgs, config: &RunConfig) -> Result<Vec<crate::decoder::LinkResult>, Error> {
    let vocab = load_vocab(&args.vocab)?;
    let instances = load_instances(&args.dataset)?;
    let catalog = args.catalog.as_deref().map(load_catalog).transpose()?;
    let trie = match &args.trie {
        Some(p) => {
            let t = EntityTrie::load(p)?;
            vocab.check_hash(t.vocab_hash())?;
            Some(t)
        }
        None => None,
    };
    let schema = match &args.schemas {
        Some(p) => Some(schema_candidates("schema", &load_schemas(p)?)?),
        None => None,
    };
    if instances.iter().any(|i| i.candidates.is_none() && i.task == Task::SchemaLinking) && schema.is_none() && catalog.is_none() {
        return Err(Error::Precondition("schema-linking instances without candidates need --schemas".into()));
    }

    let names = lexical_training_names(catalog.as_ref(), schema.as_ref(), &instances);
    let scorer = build_scorer(&config.scorer, &vocab, &names, config.jobs)?;
    let mut linker = Linker::new(&vocab, scorer.as_ref(), config.link_options())?;
    if let Some(c) = &catalog {
        linker = linker.with_catalog(c, trie)?;
    }
    if let Some(s) = schema {
        linker = linker.with_schema_candidates(s)?;
    }
    let start = Instant::now();
    let results = linker.link_all(&instances, config.jobs)?;
    let secs = start.elapsed().as_secs_f64();
    log::info!("linked {} instances in {:.3}s ({:.0}/s)", results.len(), secs, results.len() as f64 / secs.max(1e-9));
    Ok(results)
}

fn link_paths(args: &LinkArgs) -> RunPaths {
    RunPaths {
        vocab: Some(args.vocab.clone()),
        trie: args.trie.clone(),
        catalog: args.catalog.clone(),
        schemas: args.schemas.clone(),
        dataset: Some(args.dataset.clone()),
        output: Some(args.out.clone()),
    }
}

pub fn cmd_link(args: &LinkArgs) -> Result<Vec<crate::decoder::LinkResult>, Error> {
    let config = RunConfig::from_args(&args.run, link_paths(args))?;
    let results = link_dataset(args, &config)?;
    let vocab_hash = Vocabulary::load(&args.vocab)?.hash();
    let header = ResultsHeader {
        format: RESULTS_FORMAT.to_string(),
        vocab: vocab_hash.to_string(),
        config: serde_json::to_value(&config).map_err(|e| Error::json("run config", e))?,
    };
    save_results(&args.out, &header, &results)?;
    Ok(results)
}

/// Links the dev set without a threshold, picks θ*, prints it and writes a
/// [`ConfigPatch`] to `args.out`.
pub fn cmd_calibrate(args: &LinkArgs) -> Result<f64, Error> {
    let mut config = RunConfig::from_args(&args.run, link_paths(args))?;
    config.threshold = None;
    let results = link_dataset(args, &config)?;
    let instances = load_instances(&args.dataset)?;
    let points = dev_points(&results, &instances)?;
    if points.is_empty() {
        return Err(Error::Precondition("calibration needs a non-empty dev set".into()));
    }
    let theta = calibrate_threshold(&points);
    let patch = ConfigPatch { threshold: Some(theta) };
    let json = serde_json::to_string_pretty(&patch).map_err(|e| Error::json("config patch", e))? + "\n";
    write_atomic(&args.out, json.as_bytes()).map_err(|e| Error::io(format!("writing {}", args.out.display()), e))?;
    println!("threshold {theta}");
    Ok(theta)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport, Error> {
    let (_, results) = load_results(&args.results)?;
    let dataset = load_instances(&args.dataset)?;
    let catalog = match &args.catalog {
        Some(p) => load_catalog(p)?,
        None => EntityCatalog::default(),
    };
    let report = emit_report(&results, &dataset, &catalog, &args.out)?;
    let (json, text) = report_paths(&args.out);
    log::info!("wrote {} and {}", json.display(), text.display());
    print!("{}", report.to_text());
    Ok(report)
}

/// One row of the `bench` table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub entities: usize,
    pub trie_nodes: usize,
    pub build_secs: f64,
    pub instances: usize,
    pub link_secs: f64,
    pub instances_per_sec: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub scorer_calls_per_instance: f64,
}

/// Synthetic instances whose contexts quote a random catalog name.
pub fn bench_instances(seed: u64, names: &[String], n: usize) -> Vec<MentionInstance> {
    use rand::Rng;
    let mut r = synth::rng(seed);
    (0..n)
        .map(|i| {
            let name = &names[r.gen_range(0..names.len())];
            let text = format!("about {name} today");
            MentionInstance {
                id: format!("b{i:07}"),
                mention: crate::preprocess::Span { start: 6, end: 6 + name.len() },
                text,
                table: None,
                image_ref: None,
                candidates: None,
                gold: Some(name.clone()),
                task: Task::EntityLinking,
            }
        })
        .collect()
}

pub fn cmd_bench(args: &BenchArgs) -> Result<Vec<BenchRow>, Error> {
    let config = RunConfig::from_args(&args.run, RunPaths::default())?;
    if args.instances == 0 {
        return Err(Error::Precondition("--instances must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for &size in &args.sizes {
        let names = synth::entity_names(config.seed, size, args.lexicon);
        let instances = bench_instances(config.seed.wrapping_add(1), &names, args.instances);
        let mut lines: Vec<&str> = names.iter().map(String::as_str).collect();
        lines.extend(BUILTIN_CORPUS);
        let vocab = Vocabulary::build(lines, usize::MAX)?;

        let start = Instant::now();
        let seqs: Vec<TokenSeq> = names.iter().map(|n| vocab.tokenize(n)).collect();
        let trie = EntityTrie::build(vocab.hash(), &seqs)?;
        let build_secs = start.elapsed().as_secs_f64();

        let scorer = build_scorer(&config.scorer, &vocab, &names, 1)?;
        let catalog = synth::catalog_from_names(&names);
        let linker = Linker::new(&vocab, scorer.as_ref(), config.link_options())?.with_catalog(&catalog, Some(trie.clone()))?;

        let counter = CountingScorer::new(scorer.as_ref());
        let counting = Linker::new(&vocab, &counter, config.link_options())?.with_catalog(&catalog, Some(trie.clone()))?;
        let sampled = instances.len().min(100);
        for inst in &instances[..sampled] {
            counting.link_one(inst)?;
        }
        let calls = counter.calls() as f64 / sampled as f64;

        let mut latencies = Vec::with_capacity(instances.len());
        let start = Instant::now();
        for inst in &instances {
            let t = Instant::now();
            linker.link_one(inst)?;
            latencies.push(t.elapsed().as_secs_f64() * 1e3);
        }
        let link_secs = start.elapsed().as_secs_f64();
        latencies.sort_by(f64::total_cmp);
        let pct = |q: f64| latencies[((latencies.len() - 1) as f64 * q).round() as usize];
        rows.push(BenchRow {
            entities: size,
            trie_nodes: trie.node_count(),
            build_secs,
            instances: instances.len(),
            link_secs,
            instances_per_sec: instances.len() as f64 / link_secs.max(1e-9),
            p50_ms: pct(0.5),
            p99_ms: pct(0.99),
            scorer_calls_per_instance: calls,
        });
    }
    Ok(rows)
}

pub fn bench_table(rows: &[BenchRow]) -> String {
    let mut s = format!(
        "{:>10} {:>10} {:>9} {:>9} {:>11} {:>8} {:>8} {:>12}\n",
        "entities", "nodes", "build_s", "instances", "inst/s", "p50_ms", "p99_ms", "calls/inst"
    );
    for r in rows {
        s.push_str(&format!(
            "{:>10} {:>10} {:>9.3} {:>9} {:>11.1} {:>8.3} {:>8.3} {:>12.2}\n",
            r.entities, r.trie_nodes, r.build_secs, r.instances, r.instances_per_sec, r.p50_ms, r.p99_ms, r.scorer_calls_per_instance
        ));
    }
    s
}

/// Wraps a scorer and counts queries.
pub struct CountingScorer<'a> {
    inner: &'a dyn Scorer,
    calls: std::sync::atomic::AtomicUsize,
}

impl<'a> CountingScorer<'a> {
    pub fn new(inner: &'a dyn Scorer) -> Self {
        CountingScorer { inner, calls: Default::default() }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(std::sync::atomic::Ordering::Relaxed)
    }
}

impl Scorer for CountingScorer<'_> {
    fn logprobs(&self, request: &crate::scorer::ScoreRequest<'_>) -> Result<Vec<f64>, crate::scorer::ScoreError> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        self.inner.logprobs(request)
    }
}

pub fn cmd_serve(args: &ServeArgs) -> Result<(), Error> {
    let vocab = load_vocab(&args.vocab)?;
    let names = match (&args.scorer, &args.catalog) {
        (ScorerSpec::Lexical(_), Some(p)) => load_catalog(p)?.names(),
        (ScorerSpec::Lexical(_), None) => return Err(Error::Precondition("the lexical scorer needs --catalog".into())),
        (ScorerSpec::External { .. }, _) => return Err(Error::Precondition("serve hosts mock or lexical only".into())),
        _ => Vec::new(),
    };
    let scorer = build_scorer(&args.scorer, &vocab, &names, 1)?;
    let hash = Some(vocab.hash());
    match &args.listen {
        None => {
            let stdin = io::stdin().lock();
            let stdout = io::stdout().lock();
            protocol::serve(scorer.as_ref(), hash, stdin, stdout).map_err(|e| Error::io("serving stdio", e))?;
        }
        Some(addr) => {
            let listener = TcpListener::bind(addr).map_err(|e| Error::io(format!("binding {addr}"), e))?;
            log::info!("serving on {}", listener.local_addr().map(|a| a.to_string()).unwrap_or_default());
            let scorer: std::sync::Arc<dyn Scorer> = std::sync::Arc::from(scorer);
            for stream in listener.incoming() {
                let stream = stream.map_err(|e| Error::io("accepting", e))?;
                let scorer = scorer.clone();
                std::thread::spawn(move || {
                    let Ok(reader) = stream.try_clone() else { return };
                    if let Err(e) = protocol::serve(scorer.as_ref(), hash, BufReader::new(reader), stream) {
                        log::warn!("connection closed: {e}");
                    }
                });
            }
        }
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::BuildVocab(a) => cmd_build_vocab(&a).map(drop),
        Command::BuildTrie(a) => cmd_build_trie(&a).map(drop),
        Command::Link(a) => cmd_link(&a).map(drop),
        Command::Calibrate(a) => cmd_calibrate(&a).map(drop),
        Command::Eval(a) => cmd_eval(&a).map(drop),
        Command::Bench(a) => cmd_bench(&a).map(|rows| print!("{}", bench_table(&rows))),
        Command::Serve(a) => cmd_serve(&a),
    }
}

/// Parses `std::env::args`, runs, and returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(io::stderr(), "dmel: {e}");
            e.exit_code()
        }
    }
}
