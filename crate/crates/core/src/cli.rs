//! The `kbin` command-line tool.
//!
//! Every subcommand writes a JSON run manifest next to its main output with
//! the command line, the effective configuration, seeds, SHA-256 digests of
//! the inputs and the wall-clock time.
//!
//! Options can also come from a JSON object passed with `--config`; keys are
//! flag names without the leading dashes. Flags on the command line win over
//! the file, the file wins over built-in defaults.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read as IoRead, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::binning::{
    calibrate_threshold, hungarian_align, kmedoid_cluster, render_histogram, score, BinModel,
    ClusterAssignment, KmedoidConfig, SimilarityKind,
};
use crate::error::{Error, Result};
use crate::formats::{self, EmbeddingMatrix, KBEM_MAGIC, KBNL_MAGIC};
use crate::identifiability::{self, Reading};
use crate::kmer::{self, KmerConfig};
use crate::linear::{fit_poisson, KmerEmbeddings, PoissonTrainConfig};
use crate::nonlinear::{self, InputMode, LossKind, NlTrainConfig};
use crate::optim::AdamConfig;
use crate::seqio::{self, Dataset, FilterConfig, GeneratorSpec, SyntheticGenomes};

/// Version line with the binary format versions.
pub const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (formats: KBPF v1, KBEM v1, KBNL v1)"
);

#[derive(Parser, Debug, Serialize)]
#[command(name = "kbin", version = VERSION, about = "k-mer read embeddings and metagenomic binning")]
pub struct Cli {
    /// Worker threads for parallel stages; 1 gives bit-exact reruns
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// JSON file with option defaults
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
pub enum Command {
    /// Generate labeled reads from synthetic Markov genomes
    Gen(GenArgs),
    /// Truncate long reads, drop short reads and rare species
    Filter(FilterArgs),
    /// Write k-mer count profiles (TSV, or KBPF for a .kbpf output)
    Profile(ProfileArgs),
    /// Decide whether each read is determined by its k-mer profile
    Check(CheckArgs),
    /// Test the Hamming/profile distance bounds on random read pairs
    VerifyLipschitz(LipschitzArgs),
    /// Train Poisson k-mer embeddings
    TrainPois(TrainPoisArgs),
    /// Train the non-linear read embedder
    TrainNl(TrainNlArgs),
    /// Embed reads with a trained model or as raw profiles
    Embed(EmbedArgs),
    /// Cluster read embeddings
    Bin(BinArgs),
    /// Score cluster assignments against ground truth
    Eval(EvalArgs),
    /// Generate or ingest, train, embed, bin and evaluate in one go
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct GenArgs {
    #[arg(long, default_value_t = 8)]
    pub genomes: usize,
    #[arg(long, default_value_t = 20_000)]
    pub genome_length: usize,
    #[arg(long, default_value_t = 100)]
    pub reads_per_genome: usize,
    #[arg(long, default_value_t = 2_000)]
    pub read_length: usize,
    #[arg(long, default_value_t = 1)]
    pub order: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Draw reads with this seed from the genomes of `--seed`
    #[arg(long)]
    pub read_seed: Option<u64>,
    /// Prefix for read ids
    #[arg(long, default_value = "")]
    pub prefix: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Labels TSV; defaults to <out>.labels.tsv
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct FilterArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Labels TSV; without it the species floor is not applied
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub labels_out: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub max_len: usize,
    #[arg(long, default_value_t = 2_500)]
    pub min_len: usize,
    #[arg(long, default_value_t = 10)]
    pub min_per_species: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct ProfileArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    /// Merge each k-mer with its reverse complement
    #[arg(long)]
    pub canonical: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadingArg {
    Effective,
    Literal,
}

#[derive(Args, Debug, Serialize)]
pub struct CheckArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long)]
    pub report: PathBuf,
    /// Whether a repeat swap must change the read to count
    #[arg(long, value_enum, default_value = "effective")]
    pub reading: ReadingArg,
}

#[derive(Args, Debug, Serialize)]
pub struct LipschitzArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainPoisArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 256)]
    pub dim: usize,
    #[arg(long, default_value_t = 4)]
    pub window: usize,
    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 10_000)]
    pub reads_sampled: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossArg {
    Bernoulli,
    Poisson,
    Hinge,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Bernoulli => LossKind::Bernoulli,
            LossArg::Poisson => LossKind::Poisson,
            LossArg::Hinge => LossKind::Hinge,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct TrainNlArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10_000)]
    pub batch: usize,
    #[arg(long, default_value_t = 200)]
    pub neg: usize,
    #[arg(long, value_enum, default_value = "bernoulli")]
    pub loss: LossArg,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 512)]
    pub hidden: usize,
    #[arg(long, default_value_t = 256)]
    pub d_out: usize,
    #[arg(long, default_value_t = 0.2)]
    pub dropout: f64,
    /// Feed raw counts instead of frequencies
    #[arg(long)]
    pub raw_counts: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct EmbedArgs {
    /// KBNL network or KBEM k-mer embeddings
    #[arg(long, required_unless_present = "profile_k", conflicts_with = "profile_k")]
    pub model: Option<PathBuf>,
    /// Emit raw k-mer count profiles instead of a learned embedding
    #[arg(long)]
    pub profile_k: Option<usize>,
    #[arg(long)]
    pub input: PathBuf,
    /// KBEM output; read ids go to <out>.ids
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SimArg {
    Cosine,
    Expl1,
    Negeuclid,
}

impl From<SimArg> for SimilarityKind {
    fn from(s: SimArg) -> Self {
        match s {
            SimArg::Cosine => SimilarityKind::Cosine,
            SimArg::Expl1 => SimilarityKind::ExpL1,
            SimArg::Negeuclid => SimilarityKind::NegEuclidean,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct BinArgs {
    #[arg(long)]
    pub emb: PathBuf,
    #[arg(long, value_enum, default_value = "cosine")]
    pub sim: SimArg,
    /// Fixed similarity threshold (for expl1 a value of exp(-l1))
    #[arg(long, conflicts_with_all = ["calib", "calib_labels"])]
    pub threshold: Option<f64>,
    /// Labeled calibration embeddings
    #[arg(long, requires = "calib_labels")]
    pub calib: Option<PathBuf>,
    #[arg(long, requires = "calib")]
    pub calib_labels: Option<PathBuf>,
    #[arg(long, default_value_t = 70.0)]
    pub percentile: f64,
    /// Assignments TSV; defaults to <emb>.assignments.tsv
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub assignments: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ModelArg {
    #[value(name = "kmer-cosine")]
    #[serde(rename = "kmer-cosine")]
    KmerCosine,
    #[value(name = "kmer-l1")]
    #[serde(rename = "kmer-l1")]
    KmerL1,
    #[value(name = "pois")]
    #[serde(rename = "pois")]
    Pois,
    #[value(name = "nl")]
    #[serde(rename = "nl")]
    Nl,
}

#[derive(Args, Debug, Serialize)]
pub struct PipelineArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "nl")]
    pub model: ModelArg,
    /// Reads to bin instead of generated ones (needs --labels and a calibration split)
    #[arg(long, requires_all = ["labels", "calib", "calib_labels"])]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub calib: Option<PathBuf>,
    #[arg(long)]
    pub calib_labels: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub genomes: usize,
    #[arg(long, default_value_t = 20_000)]
    pub genome_length: usize,
    #[arg(long, default_value_t = 50)]
    pub reads_per_genome: usize,
    #[arg(long, default_value_t = 10)]
    pub calib_per_genome: usize,
    #[arg(long, default_value_t = 2_000)]
    pub read_length: usize,
    #[arg(long, default_value_t = 1)]
    pub order: usize,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 512)]
    pub batch: usize,
    #[arg(long, default_value_t = 20)]
    pub neg: usize,
    #[arg(long, value_enum, default_value = "bernoulli")]
    pub loss: LossArg,
    #[arg(long, default_value_t = 512)]
    pub hidden: usize,
    #[arg(long, default_value_t = 256)]
    pub d_out: usize,
    #[arg(long, default_value_t = 200)]
    pub pois_epochs: usize,
    #[arg(long, default_value_t = 256)]
    pub pois_dim: usize,
    #[arg(long, default_value_t = 70.0)]
    pub percentile: f64,
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command_line: Vec<String>,
    pub config: Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<String>,
    pub results: Value,
    pub wall_clock_seconds: f64,
}

/// What a subcommand touched, for the manifest.
#[derive(Default)]
struct Outcome {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seeds: Vec<u64>,
    results: Value,
    manifest: PathBuf,
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv = match apply_config_file(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("kbin: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let command_line = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match execute(&cli, command_line) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("kbin: {e}");
            e.exit_code()
        }
    }
}

/// Appends options from a `--config` JSON object that are not already on
/// the command line.
fn apply_config_file(mut argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(pos) = argv.iter().position(|a| a == "--config") else {
        return Ok(argv);
    };
    let path = argv
        .get(pos + 1)
        .ok_or_else(|| Error::Usage("--config needs a file".into()))?
        .clone();
    let text = fs::read_to_string(&path).map_err(|e| io_error(Path::new(&path), e))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("config file: {e}")))?;
    let Value::Object(map) = value else {
        return Err(Error::Format("config file must hold a JSON object".into()));
    };
    let present: Vec<String> = argv
        .iter()
        .filter_map(|a| a.to_str())
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();
    for (key, v) in map {
        let flag = key.replace('_', "-");
        if present.contains(&flag) {
            continue;
        }
        match v {
            Value::Bool(true) => argv.push(format!("--{flag}").into()),
            Value::Bool(false) | Value::Null => {}
            Value::String(s) => {
                argv.push(format!("--{flag}").into());
                argv.push(s.into());
            }
            other => {
                argv.push(format!("--{flag}").into());
                argv.push(other.to_string().into());
            }
        }
    }
    Ok(argv)
}

fn execute(cli: &Cli, command_line: Vec<String>) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
    let start = Instant::now();
    let outcome = pool.install(|| dispatch(&cli.command))?;
    let manifest = RunManifest {
        tool: "kbin",
        version: VERSION,
        command_line,
        config: serde_json::to_value(cli).map_err(|e| Error::Format(e.to_string()))?,
        seeds: outcome.seeds,
        inputs: outcome
            .inputs
            .iter()
            .map(|p| {
                Ok(FileDigest {
                    path: p.display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<_>>()?,
        outputs: outcome
            .outputs
            .iter()
            .map(|p| p.display().to_string())
            .collect(),
        results: outcome.results,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&outcome.manifest, &manifest)
}

fn dispatch(cmd: &Command) -> Result<Outcome> {
    match cmd {
        Command::Gen(a) => cmd_gen(a),
        Command::Filter(a) => cmd_filter(a),
        Command::Profile(a) => cmd_profile(a),
        Command::Check(a) => cmd_check(a),
        Command::VerifyLipschitz(a) => cmd_lipschitz(a),
        Command::TrainPois(a) => cmd_train_pois(a),
        Command::TrainNl(a) => cmd_train_nl(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Bin(a) => cmd_bin(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Pipeline(a) => cmd_pipeline(a),
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        Error::FileNotFound(path.display().to_string())
    } else {
        Error::Io(e)
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| io_error(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut f = open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// `<path><suffix>`, e.g. `emb.kbem` + `.ids`.
fn beside(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn manifest_for(path: &Path) -> PathBuf {
    beside(path, ".manifest.json")
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    seqio::parse_fasta(open(path)?)
}

fn read_labeled(path: &Path, labels: Option<&Path>) -> Result<Dataset> {
    let d = read_dataset(path)?;
    match labels {
        Some(l) => seqio::load_labels(open(l)?, d),
        None => Ok(d),
    }
}

fn write_dataset(d: &Dataset, fasta: &Path, labels: &Path) -> Result<()> {
    let mut w = create(fasta)?;
    seqio::write_fasta(d, &mut w)?;
    w.flush()?;
    let mut w = create(labels)?;
    seqio::write_labels(d, &mut w)?;
    w.flush()?;
    Ok(())
}

fn write_embeddings(ids: &[String], m: &EmbeddingMatrix, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    formats::write_kbem(m, &mut w)?;
    w.flush()?;
    let mut w = create(&beside(path, ".ids"))?;
    for id in ids {
        writeln!(w, "{id}")?;
    }
    w.flush()?;
    Ok(())
}

fn read_embeddings(path: &Path) -> Result<(Vec<String>, EmbeddingMatrix)> {
    let m = formats::read_kbem(open(path)?)?;
    let ids_path = beside(path, ".ids");
    let ids = formats::read_ids(open(&ids_path)?)?;
    if ids.len() != m.rows() {
        return Err(Error::Format(format!(
            "{} lists {} ids for {} embedding rows",
            ids_path.display(),
            ids.len(),
            m.rows()
        )));
    }
    Ok((ids, m))
}

fn ids_of(d: &Dataset) -> Vec<String> {
    d.reads().iter().map(|r| r.id.clone()).collect()
}

fn cmd_gen(a: &GenArgs) -> Result<Outcome> {
    let spec = GeneratorSpec {
        genome_count: a.genomes,
        genome_length: a.genome_length,
        reads_per_genome: a.reads_per_genome,
        read_length: a.read_length,
        markov_order: a.order,
        seed: a.seed,
    };
    let d = match a.read_seed {
        None if a.prefix.is_empty() => seqio::generate_synthetic(&spec)?,
        seed => SyntheticGenomes::generate(&spec)?.sample_reads(
            a.reads_per_genome,
            a.read_length,
            seed.unwrap_or(spec.seed ^ seqio::READ_STREAM),
            &a.prefix,
        )?,
    };
    let labels = a.labels.clone().unwrap_or_else(|| beside(&a.out, ".labels.tsv"));
    write_dataset(&d, &a.out, &labels)?;
    Ok(Outcome {
        outputs: vec![a.out.clone(), labels],
        seeds: [Some(a.seed), a.read_seed].into_iter().flatten().collect(),
        results: json!({ "reads": d.len(), "species": d.species_count() }),
        manifest: manifest_for(&a.out),
        ..Default::default()
    })
}

fn cmd_filter(a: &FilterArgs) -> Result<Outcome> {
    let d = read_labeled(&a.input, a.labels.as_deref())?;
    let before = d.len();
    let cfg = FilterConfig {
        max_len: a.max_len,
        min_len: a.min_len,
        min_per_species: a.min_per_species,
    };
    let kept = seqio::filter_dataset(d, &cfg);
    let mut w = create(&a.out)?;
    seqio::write_fasta(&kept, &mut w)?;
    w.flush()?;
    let mut outputs = vec![a.out.clone()];
    if let Some(l) = &a.labels_out {
        let mut w = create(l)?;
        seqio::write_labels(&kept, &mut w)?;
        w.flush()?;
        outputs.push(l.clone());
    }
    let mut inputs = vec![a.input.clone()];
    inputs.extend(a.labels.clone());
    Ok(Outcome {
        inputs,
        outputs,
        results: json!({ "reads_in": before, "reads_out": kept.len() }),
        manifest: manifest_for(&a.out),
        ..Default::default()
    })
}

fn cmd_profile(a: &ProfileArgs) -> Result<Outcome> {
    let d = read_dataset(&a.input)?;
    let mut cfg = KmerConfig::new(a.k)?;
    if a.canonical {
        cfg = cfg.folded();
    }
    let profiles = d
        .reads()
        .iter()
        .map(|r| kmer::profile(r, &cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut w = create(&a.out)?;
    if a.out.extension().is_some_and(|e| e == "kbpf") {
        formats::write_kbpf(&profiles, a.k, &mut w)?;
    } else {
        formats::write_profile_tsv(&ids_of(&d), &profiles, a.k, &mut w)?;
    }
    w.flush()?;
    Ok(Outcome {
        inputs: vec![a.input.clone()],
        outputs: vec![a.out.clone()],
        results: json!({ "reads": d.len(), "dim": cfg.dim() }),
        manifest: manifest_for(&a.out),
        ..Default::default()
    })
}

fn cmd_check(a: &CheckArgs) -> Result<Outcome> {
    let d = read_dataset(&a.input)?;
    let reading = match a.reading {
        ReadingArg::Effective => Reading::Effective,
        ReadingArg::Literal => Reading::Literal,
    };
    let mut w = create(&a.report)?;
    writeln!(w, "read_id\tidentifiable\tviolated_condition\twitnesses")?;
    let mut identifiable = 0usize;
    for r in d.reads() {
        let v = identifiability::check_conditions_with(&r.bases, a.k, reading)?;
        identifiable += v.identifiable as usize;
        let cond = v.violated_condition.map(|c| c.to_string()).unwrap_or_default();
        let wit = v
            .witness_indices
            .as_ref()
            .map(|w| {
                w.iter()
                    .map(|i| i.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .unwrap_or_default();
        writeln!(w, "{}\t{}\t{}\t{}", r.id, v.identifiable, cond, wit)?;
    }
    w.flush()?;
    Ok(Outcome {
        inputs: vec![a.input.clone()],
        outputs: vec![a.report.clone()],
        results: json!({ "reads": d.len(), "identifiable": identifiable }),
        manifest: manifest_for(&a.report),
        ..Default::default()
    })
}

fn cmd_lipschitz(a: &LipschitzArgs) -> Result<Outcome> {
    let d = read_dataset(&a.input)?;
    let check = identifiability::verify_lipschitz(&d, a.k, a.trials, a.seed)?;
    write_json(&a.report, &check)?;
    Ok(Outcome {
        inputs: vec![a.input.clone()],
        outputs: vec![a.report.clone()],
        seeds: vec![a.seed],
        results: json!({ "violations": check.violations, "pairs": check.pairs_checked }),
        manifest: manifest_for(&a.report),
    })
}

fn cmd_train_pois(a: &TrainPoisArgs) -> Result<Outcome> {
    let d = read_dataset(&a.input)?;
    let cfg = PoissonTrainConfig {
        epochs: a.epochs,
        dim: a.dim,
        window: a.window,
        reads_sampled: a.reads_sampled,
        seed: a.seed,
        adam: AdamConfig {
            learning_rate: a.lr,
            ..Default::default()
        },
        ..Default::default()
    };
    let fit = fit_poisson(&d, a.k, &cfg)?;
    let mut w = create(&a.out)?;
    formats::write_kbem(&fit.embeddings.to_matrix(), &mut w)?;
    w.flush()?;
    Ok(Outcome {
        inputs: vec![a.input.clone()],
        outputs: vec![a.out.clone()],
        seeds: vec![a.seed],
        results: json!({
            "initial_loss": fit.trace.first(),
            "final_loss": fit.trace.last(),
        }),
        manifest: manifest_for(&a.out),
    })
}

fn nl_config(a: &TrainNlArgs) -> NlTrainConfig {
    NlTrainConfig {
        k: a.k,
        hidden: a.hidden,
        d_out: a.d_out,
        epochs: a.epochs,
        minibatch: a.batch,
        negatives_per_positive: a.neg,
        dropout: a.dropout,
        loss: a.loss.into(),
        input: if a.raw_counts {
            InputMode::RawCounts
        } else {
            InputMode::Frequencies
        },
        seed: a.seed,
        adam: AdamConfig {
            learning_rate: a.lr,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn cmd_train_nl(a: &TrainNlArgs) -> Result<Outcome> {
    let d = read_dataset(&a.input)?;
    let fit = nonlinear::train_nl(&d, &nl_config(a))?;
    for w in &fit.warnings {
        eprintln!("kbin: warning: {w}");
    }
    let mut w = create(&a.out)?;
    nonlinear::write_kbnl(&fit.params, &mut w)?;
    w.flush()?;
    Ok(Outcome {
        inputs: vec![a.input.clone()],
        outputs: vec![a.out.clone()],
        seeds: vec![a.seed],
        results: json!({ "loss_trace": fit.trace, "warnings": fit.warnings }),
        manifest: manifest_for(&a.out),
    })
}

fn load_model(path: &Path) -> Result<BinModel> {
    let mut magic = [0u8; 4];
    open(path)?
        .read_exact(&mut magic)
        .map_err(|_| Error::Format(format!("{} is too short", path.display())))?;
    if &magic == KBNL_MAGIC {
        Ok(BinModel::Nl(nonlinear::read_kbnl(open(path)?)?))
    } else if &magic == KBEM_MAGIC {
        let m = formats::read_kbem(open(path)?)?;
        Ok(BinModel::Pois(KmerEmbeddings::from_matrix(m)?))
    } else {
        Err(Error::Format(format!(
            "{} is neither a KBNL model nor KBEM k-mer embeddings",
            path.display()
        )))
    }
}

fn model_k(m: &BinModel) -> usize {
    match m {
        BinModel::KmerCosine { k } | BinModel::KmerL1 { k } => *k,
        BinModel::Pois(e) => e.k,
        BinModel::Nl(p) => p.k,
    }
}

fn cmd_embed(a: &EmbedArgs) -> Result<Outcome> {
    let (model, mut inputs) = match (&a.model, a.profile_k) {
        (Some(p), _) => (load_model(p)?, vec![p.clone()]),
        (None, Some(k)) => (BinModel::KmerCosine { k }, vec![]),
        (None, None) => return Err(Error::Usage("either --model or --profile-k is required".into())),
    };
    let d = read_dataset(&a.input)?;
    inputs.push(a.input.clone());
    let values = model.embed(d.reads())?;
    let m = EmbeddingMatrix {
        k: model_k(&model),
        values,
    };
    write_embeddings(&ids_of(&d), &m, &a.out)?;
    Ok(Outcome {
        inputs,
        outputs: vec![a.out.clone(), beside(&a.out, ".ids")],
        results: json!({ "rows": m.rows(), "dim": m.dim() }),
        manifest: manifest_for(&a.out),
        ..Default::default()
    })
}

/// Rows of `ids` looked up in a label table.
fn labels_for(ids: &[String], table: &[(String, String)], what: &Path) -> Result<Vec<String>> {
    let map: std::collections::HashMap<&str, &str> = table
        .iter()
        .map(|(a, b)| (a.as_str(), b.as_str()))
        .collect();
    ids.iter()
        .map(|id| {
            map.get(id.as_str())
                .map(|s| s.to_string())
                .ok_or_else(|| Error::data(format!("{} has no label for {id}", what.display())))
        })
        .collect()
}

fn write_assignments(ids: &[String], a: &ClusterAssignment, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    for (id, c) in ids.iter().zip(&a.cluster_of) {
        writeln!(w, "{id}\t{c}")?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_bin(a: &BinArgs) -> Result<Outcome> {
    let (ids, m) = read_embeddings(&a.emb)?;
    let kind: SimilarityKind = a.sim.into();
    let mut inputs = vec![a.emb.clone()];
    let threshold = match (a.threshold, &a.calib, &a.calib_labels) {
        (Some(t), _, _) => kind.to_score(t),
        (None, Some(c), Some(l)) => {
            let (cids, cm) = read_embeddings(c)?;
            let table = seqio::parse_label_table(open(l)?)?;
            let labels = labels_for(&cids, &table, l)?;
            inputs.extend([c.clone(), l.clone()]);
            calibrate_threshold(cm.values.view(), &labels, kind, a.percentile)?
        }
        _ => {
            return Err(Error::Usage(
                "give --threshold or --calib with --calib-labels".into(),
            ))
        }
    };
    let assignment = kmedoid_cluster(m.values.view(), kind, threshold, &KmedoidConfig::default())?;
    let out = a.out.clone().unwrap_or_else(|| beside(&a.emb, ".assignments.tsv"));
    write_assignments(&ids, &assignment, &out)?;
    Ok(Outcome {
        inputs,
        outputs: vec![out.clone()],
        results: json!({
            "threshold_score": threshold,
            "threshold_similarity": kind.to_similarity(threshold),
            "clusters": assignment.cluster_count(),
        }),
        manifest: manifest_for(&out),
        ..Default::default()
    })
}

/// Reads `read_id<TAB>cluster`; cluster labels are renumbered densely in
/// order of first appearance and each cluster's first read stands in for
/// its medoid.
fn read_assignments<R: BufRead>(r: R) -> Result<(Vec<String>, ClusterAssignment)> {
    let mut ids = Vec::new();
    let mut cluster_of = Vec::new();
    let mut medoid_of = Vec::new();
    let mut dense: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, c) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: "expected read_id<TAB>cluster".into(),
        })?;
        let next = dense.len();
        let c = *dense.entry(c.trim().to_string()).or_insert(next);
        if c == medoid_of.len() {
            medoid_of.push(ids.len());
        }
        ids.push(id.to_string());
        cluster_of.push(c);
    }
    Ok((
        ids,
        ClusterAssignment {
            cluster_of,
            medoid_of,
        },
    ))
}

fn cmd_eval(a: &EvalArgs) -> Result<Outcome> {
    let (ids, assignment) = read_assignments(open(&a.assignments)?)?;
    let table = seqio::parse_label_table(open(&a.truth)?)?;
    let truth = labels_for(&ids, &table, &a.truth)?;
    let alignment = hungarian_align(&assignment, &truth);
    let report = score(&assignment, &truth, &alignment);
    write_json(&a.report, &report)?;
    print!("{}", render_histogram(&report));
    Ok(Outcome {
        inputs: vec![a.assignments.clone(), a.truth.clone()],
        outputs: vec![a.report.clone()],
        results: json!({ "detected_high_quality": report.detected_high_quality }),
        manifest: manifest_for(&a.report),
        ..Default::default()
    })
}

fn cmd_pipeline(a: &PipelineArgs) -> Result<Outcome> {
    let dir = &a.out_dir;
    fs::create_dir_all(dir)?;
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    let (reads, calib, train) = match &a.input {
        Some(input) => {
            let labels = a.labels.as_deref().expect("clap requires labels");
            let calib_path = a.calib.as_deref().expect("clap requires calib");
            let calib_labels = a.calib_labels.as_deref().expect("clap requires calib labels");
            inputs.extend([
                input.clone(),
                labels.to_path_buf(),
                calib_path.to_path_buf(),
                calib_labels.to_path_buf(),
            ]);
            let reads = read_labeled(input, Some(labels))?;
            let calib = read_labeled(calib_path, Some(calib_labels))?;
            // self-supervised models train on the reads being binned
            let train = reads.clone();
            (reads, calib, train)
        }
        None => {
            let spec = GeneratorSpec {
                genome_count: a.genomes,
                genome_length: a.genome_length,
                reads_per_genome: a.reads_per_genome,
                read_length: a.read_length,
                markov_order: a.order,
                seed: a.seed,
            };
            spec.validate()?;
            let genomes = SyntheticGenomes::generate(&spec)?;
            let reads = genomes.sample_reads(a.reads_per_genome, a.read_length, a.seed ^ 1, "")?;
            let calib = genomes.sample_reads(a.calib_per_genome, a.read_length, a.seed ^ 2, "cal_")?;
            let train = genomes.sample_reads(a.reads_per_genome, a.read_length, a.seed ^ 3, "tr_")?;
            for (d, name) in [(&reads, "reads"), (&calib, "calib"), (&train, "train")] {
                let fasta = dir.join(format!("{name}.fasta"));
                let labels = dir.join(format!("{name}.labels.tsv"));
                write_dataset(d, &fasta, &labels)?;
                outputs.extend([fasta, labels]);
            }
            (reads, calib, train)
        }
    };
    let mut results = serde_json::Map::new();
    let model = match a.model {
        ModelArg::KmerCosine => BinModel::KmerCosine { k: a.k },
        ModelArg::KmerL1 => BinModel::KmerL1 { k: a.k },
        ModelArg::Pois => {
            let fit = fit_poisson(
                &train,
                a.k,
                &PoissonTrainConfig {
                    epochs: a.pois_epochs,
                    dim: a.pois_dim,
                    seed: a.seed,
                    ..Default::default()
                },
            )?;
            let path = dir.join("pois.kbem");
            let mut w = create(&path)?;
            formats::write_kbem(&fit.embeddings.to_matrix(), &mut w)?;
            w.flush()?;
            outputs.push(path);
            results.insert("loss_trace".into(), json!(fit.trace.last()));
            BinModel::Pois(fit.embeddings)
        }
        ModelArg::Nl => {
            let cfg = NlTrainConfig {
                k: a.k,
                hidden: a.hidden,
                d_out: a.d_out,
                epochs: a.epochs,
                minibatch: a.batch,
                negatives_per_positive: a.neg,
                loss: a.loss.into(),
                seed: a.seed,
                ..Default::default()
            };
            let fit = nonlinear::train_nl(&train, &cfg)?;
            let path = dir.join("model.kbnl");
            let mut w = create(&path)?;
            nonlinear::write_kbnl(&fit.params, &mut w)?;
            w.flush()?;
            outputs.push(path);
            results.insert("loss_trace".into(), json!(fit.trace));
            BinModel::Nl(fit.params)
        }
    };
    let kind = model.similarity();
    let k = model_k(&model);
    let emb = model.embed(reads.reads())?;
    let calib_emb = model.embed(calib.reads())?;
    for (m, d, name) in [(&emb, &reads, "emb.kbem"), (&calib_emb, &calib, "calib.kbem")] {
        let path = dir.join(name);
        write_embeddings(
            &ids_of(d),
            &EmbeddingMatrix {
                k,
                values: m.clone(),
            },
            &path,
        )?;
        outputs.extend([beside(&path, ".ids"), path]);
    }
    let calib_labels = label_vec(&calib)?;
    let truth = label_vec(&reads)?;
    let threshold = calibrate_threshold(calib_emb.view(), &calib_labels, kind, a.percentile)?;
    let assignment = kmedoid_cluster(emb.view(), kind, threshold, &KmedoidConfig::default())?;
    let assignments = dir.join("assignments.tsv");
    write_assignments(&ids_of(&reads), &assignment, &assignments)?;
    let report = score(&assignment, &truth, &hungarian_align(&assignment, &truth));
    let report_path = dir.join("report.json");
    write_json(&report_path, &report)?;
    print!("{}", render_histogram(&report));
    outputs.extend([assignments, report_path]);
    results.insert("threshold_score".into(), json!(threshold));
    results.insert("detected_high_quality".into(), json!(report.detected_high_quality));
    Ok(Outcome {
        inputs,
        outputs,
        seeds: vec![a.seed],
        results: Value::Object(results),
        manifest: dir.join("manifest.json"),
    })
}

fn label_vec(d: &Dataset) -> Result<Vec<String>> {
    d.reads()
        .iter()
        .map(|r| r.label.clone())
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::data("ground truth required for scoring"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_lists_formats() {
        assert!(VERSION.contains(&format!("KBPF v{}", formats::KBPF_VERSION)));
        assert!(VERSION.contains(&format!("KBEM v{}", formats::KBEM_VERSION)));
        assert!(VERSION.contains(&format!("KBNL v{}", formats::KBNL_VERSION)));
    }

    #[test]
    fn help_exits_zero_and_bad_flag_one() {
        assert_eq!(run(["kbin", "--help"]), 0);
        assert_eq!(run(["kbin", "profile", "--bogus"]), 1);
        assert_eq!(run(["kbin"]), 1);
    }

    #[test]
    fn missing_file_exits_two() {
        assert_eq!(run(["kbin", "bin", "--emb", "/nonexistent/missing.kbem", "--threshold", "0.5"]), 2);
    }

    #[test]
    fn assignments_are_renumbered() {
        let (ids, a) = read_assignments("r1\t7\nr2\t3\nr3\t7\n".as_bytes()).unwrap();
        assert_eq!(ids, vec!["r1", "r2", "r3"]);
        assert_eq!(a.cluster_of, vec![0, 1, 0]);
        assert_eq!(a.medoid_of, vec![0, 1]);
    }

    #[test]
    fn config_file_fills_missing_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, r#"{"k": 3, "canonical": true, "input": "x.fa"}"#).unwrap();
        let argv: Vec<OsString> = ["kbin", "profile", "--config", cfg.to_str().unwrap(), "--k", "2"]
            .into_iter()
            .map(Into::into)
            .collect();
        let out = apply_config_file(argv).unwrap();
        let out: Vec<String> = out.iter().map(|s| s.to_string_lossy().into_owned()).collect();
        assert!(out.contains(&"--canonical".to_string()));
        assert!(out.windows(2).any(|w| w == ["--input", "x.fa"]));
        assert_eq!(out.iter().filter(|a| *a == "--k").count(), 1);
    }
}
