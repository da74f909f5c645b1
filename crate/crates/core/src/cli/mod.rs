//! The `pisa` command line: data generation, single runs, sweeps over
//! sparsity and length grids, the invariant suite, and wall-clock benchmarks.
//!
//! Exit codes: 0 success, 1 invariant failure, 2 usage or validation error,
//! 3 I/O or file-format error. `PISA_THREADS` sets the worker pool size.

mod bench;
mod run;
mod sweep;
pub mod verify;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{Map, Value};

use crate::attention::{Accum, AttentionConfig};
use crate::error::{PisaError, Result};
use crate::pisa::PisaVariant;
use crate::router::{RouterConfig, Strategy, DEFAULT_EPSILON};
use crate::tensor_io::{gen_clustered, gen_gaussian, read_bundle, write_bundle, ClusterParams, Dtype, TensorBundle};

pub use sweep::{SweepSpec, SWEEP_COLUMNS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "pisa", version, about = "Piecewise sparse attention toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic Q/K/V bundle to a PQKV file.
    Gen(GenArgs),
    /// Run one variant at one sparsity and report errors against dense attention.
    Run(RunArgs),
    /// Sweep lengths x sparsities x variants x seeds into a CSV file.
    Sweep(SweepArgs),
    /// Run the invariant suite and print a pass/fail table.
    Verify(VerifyArgs),
    /// Time dense, block-sparse and fused piecewise attention.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Gaussian,
    Clustered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DtypeArg {
    F32,
    F64,
}

impl DtypeArg {
    pub fn dtype(self) -> Dtype {
        match self {
            DtypeArg::F32 => Dtype::F32,
            DtypeArg::F64 => Dtype::F64,
        }
    }

    pub fn accum(self) -> Accum {
        match self {
            DtypeArg::F32 => Accum::F32,
            DtypeArg::F64 => Accum::F64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Plain,
    CovarianceAware,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Plain => Strategy::Plain,
            StrategyArg::CovarianceAware => Strategy::CovarianceAware,
        }
    }
}

/// Synthetic data description shared by every command that generates inputs.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long, value_enum, default_value_t = Kind::Clustered)]
    pub kind: Kind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub heads: usize,
    #[arg(long = "len", default_value_t = 1024)]
    pub seq_len: usize,
    #[arg(long = "dim", default_value_t = 64)]
    pub head_dim: usize,
    /// Entry standard deviation of the gaussian generator.
    #[arg(long, default_value_t = 1.0)]
    pub std: f64,
    #[arg(long, default_value_t = ClusterParams::default().n_clusters)]
    pub clusters: usize,
    #[arg(long, default_value_t = ClusterParams::default().concentration)]
    pub concentration: f64,
    #[arg(long, default_value_t = ClusterParams::default().noise_std)]
    pub noise: f64,
    #[arg(long, value_enum, default_value_t = DtypeArg::F64)]
    pub dtype: DtypeArg,
}

impl DataArgs {
    pub fn generate(&self, seed: u64, seq_len: usize) -> Result<TensorBundle> {
        let b = match self.kind {
            Kind::Gaussian => gen_gaussian(seed, self.heads, seq_len, self.head_dim, self.std)?,
            Kind::Clustered => gen_clustered(
                seed,
                self.heads,
                seq_len,
                self.head_dim,
                self.clusters,
                self.concentration,
                self.noise,
            )?,
        };
        Ok(b.into_dtype(self.dtype.dtype()))
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Reject lengths that are not a multiple of this block size.
    #[arg(long)]
    pub block: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Accepted for uniformity; generation is always deterministic.
    #[arg(long)]
    pub deterministic: bool,
}

/// Attention and routing settings shared by run, sweep and bench.
#[derive(Debug, Clone, Args)]
pub struct AttnArgs {
    #[arg(long = "block", default_value_t = 64)]
    pub block_size: usize,
    #[arg(long = "group", default_value_t = 8)]
    pub group_size: usize,
    #[arg(long, value_enum, default_value_t = StrategyArg::Plain)]
    pub strategy: StrategyArg,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Always compute the query block's own key block exactly.
    #[arg(long)]
    pub force_diagonal: bool,
    /// Fixed-order reductions and zeroed wall times, for byte-identical output.
    #[arg(long)]
    pub deterministic: bool,
}

impl AttnArgs {
    pub fn attention(&self, accum: Accum) -> AttentionConfig {
        AttentionConfig {
            block_size: self.block_size,
            group_size: self.group_size,
            scale: None,
            accum,
            deterministic: self.deterministic,
        }
    }

    pub fn router(&self) -> RouterConfig {
        RouterConfig {
            strategy: self.strategy.into(),
            epsilon: self.epsilon,
            force_diagonal: self.force_diagonal,
            ..RouterConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Input PQKV file; without it, data is generated from the data flags.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub attn: AttnArgs,
    #[arg(long, value_parser = parse_variant, default_value = "hybrid")]
    pub variant: PisaVariant,
    #[arg(long, default_value_t = 0.875)]
    pub sparsity: f64,
    /// Use the fused kernel for Hybrid instead of the two-pass reference.
    #[arg(long)]
    pub streaming: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Pin one input file instead of generating data per (seed, length).
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub attn: AttnArgs,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1024usize, 2048])]
    pub lengths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.5f64, 0.875])]
    pub sparsities: Vec<f64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_variant, default_value = "sparse_only,zeroth,hybrid")]
    pub variants: Vec<PisaVariant>,
    /// Comma-separated seeds; `a-b` is an inclusive range.
    #[arg(long, default_value = "0-4")]
    pub seeds: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// Comma-separated subset of checks to run.
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<String>,
    /// Seeds per check, overriding each check's default.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// First seed of every check.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Accepted for uniformity; the suite is always deterministic.
    #[arg(long)]
    pub deterministic: bool,
    /// Print the check names and exit.
    #[arg(long)]
    pub list: bool,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub attn: AttnArgs,
    #[arg(long, value_enum, default_value_t = Kind::Gaussian)]
    pub kind: Kind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "len", default_value_t = 16384)]
    pub seq_len: usize,
    #[arg(long = "dim", default_value_t = 64)]
    pub head_dim: usize,
    #[arg(long, default_value_t = 0.875)]
    pub sparsity: f64,
    #[arg(long, value_enum, default_value_t = DtypeArg::F32)]
    pub dtype: DtypeArg,
    /// Timed repetitions after one warmup; at least 5.
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
}

fn parse_variant(s: &str) -> std::result::Result<PisaVariant, String> {
    PisaVariant::parse(s).ok_or_else(|| {
        let names: Vec<&str> = PisaVariant::ALL.iter().map(|v| v.as_str()).collect();
        format!("unknown variant '{s}', expected one of {}", names.join(", "))
    })
}

/// Parses `0,3,5-7` into `[0, 3, 5, 6, 7]`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || PisaError::InvalidDimension(format!("bad seed list '{s}'"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: u64 = a.trim().parse().map_err(|_| bad())?;
                let b: u64 = b.trim().parse().map_err(|_| bad())?;
                if b < a {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

/// Exit code for a library error.
pub fn exit_code(e: &PisaError) -> i32 {
    match e {
        PisaError::Io { .. }
        | PisaError::BadMagic { .. }
        | PisaError::UnsupportedVersion(_)
        | PisaError::UnsupportedDtype(_)
        | PisaError::MalformedFile { .. } => EXIT_IO,
        PisaError::NumericalOverflow { .. } => EXIT_FAILURE,
        _ => EXIT_USAGE,
    }
}

pub(crate) fn open_bundle(path: &Path) -> Result<TensorBundle> {
    let f = File::open(path).map_err(|e| PisaError::Io { offset: 0, source: e })?;
    read_bundle(&mut BufReader::new(f))
}

pub(crate) fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| PisaError::Io { offset: 0, source: e })
}

pub(crate) fn print_json(obj: Map<String, Value>) {
    println!("{}", Value::Object(obj));
}

pub(crate) fn ms(d: std::time::Duration, deterministic: bool) -> f64 {
    if deterministic {
        0.0
    } else {
        d.as_secs_f64() * 1e3
    }
}

fn cmd_gen(args: &GenArgs) -> Result<i32> {
    if let Some(b) = args.block {
        crate::mat::check_divisible(args.data.seq_len, b)?;
    }
    let bundle = args.data.generate(args.data.seed, args.data.seq_len)?;
    let mut w = create_file(&args.out)?;
    let bytes = write_bundle(&bundle, &mut w)?;
    w.flush().map_err(|e| PisaError::Io { offset: bytes, source: e })?;
    let mut obj = Map::new();
    obj.insert("path".into(), args.out.display().to_string().into());
    obj.insert("magic".into(), "PQKV".into());
    obj.insert("version".into(), crate::tensor_io::VERSION.into());
    obj.insert("dtype".into(), format!("{:?}", bundle.dtype()).to_lowercase().into());
    obj.insert("num_heads".into(), bundle.num_heads().into());
    obj.insert("seq_len".into(), bundle.seq_len().into());
    obj.insert("head_dim".into(), bundle.head_dim().into());
    obj.insert("bytes".into(), bytes.into());
    print_json(obj);
    Ok(EXIT_OK)
}

fn configure_threads() {
    if let Some(n) = std::env::var("PISA_THREADS").ok().and_then(|s| s.trim().parse::<usize>().ok()) {
        if n > 0 {
            // Fails only if a pool already exists, in which case it is kept.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    configure_threads();
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Run(a) => run::cmd_run(a),
        Command::Sweep(a) => sweep::cmd_sweep(a),
        Command::Verify(a) => verify::cmd_verify(a),
        Command::Bench(a) => bench::cmd_bench(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {} ({})", e, e.name());
            exit_code(&e)
        }
    }
}
