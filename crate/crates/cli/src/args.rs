use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use satnet_core::datasets::{gen_parity, perceptron_toyset, Dataset, ParityCount, PARITY16_POSITIONS, PARITY8_POSITIONS};
use satnet_core::driver::{Curriculum, SolverConfig};
use satnet_core::encoder::NetworkSpec;
use satnet_core::params::{Hyperparams, MarginRule};

/// Environment variable overriding the solver command template.
pub const SOLVER_ENV: &str = "SATNET_SOLVER";

#[derive(Parser)]
#[command(name = "satnet", version, about = "Train fixed-point neural networks with a SAT solver")]
pub struct Cli {
    /// Solver command template; `{input}` and `{seed}` are substituted.
    #[arg(long, global = true, env = SOLVER_ENV)]
    pub solver: Option<String>,
    /// More log output (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a dataset cache file.
    GenData(GenDataArgs),
    /// Write one DIMACS file per batch plus variable maps and a job manifest.
    Encode(EncodeArgs),
    /// Run the full training pipeline.
    Train(TrainArgs),
    /// Run clause learning only and write the learned clause sets.
    LearnClauses(TrainArgs),
    /// Evaluate saved models on a test set and print a CSV row.
    Eval(EvalArgs),
    /// Summarize run manifests as min/median/max rows.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    #[command(subcommand)]
    pub kind: GenKind,
}

#[derive(Subcommand)]
pub enum GenKind {
    /// Binary vectors labeled by the XOR of selected positions.
    Parity {
        #[arg(long)]
        dim: usize,
        /// Comma-separated bit positions.
        #[arg(long, required = true, value_delimiter = ',')]
        positions: Vec<usize>,
        /// Enumerate all 2^dim vectors.
        #[arg(long, conflicts_with = "count")]
        exhaustive: bool,
        /// Number of distinct vectors to sample.
        #[arg(long, required_unless_present = "exhaustive")]
        count: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// The 16-point linearly separable toy set.
    Perceptron {
        #[arg(long)]
        out: PathBuf,
    },
    /// Two-class images from IDX files, pooled and discretized.
    Images {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Class mapped to +1.
        #[arg(long)]
        positive: u8,
        /// Class mapped to -1; every other class when omitted.
        #[arg(long)]
        negative: Option<u8>,
        #[arg(long, value_enum, default_value_t = Scheme::Vanilla)]
        scheme: Scheme,
        /// Examples per class; all when omitted.
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long, default_value_t = 2)]
        alpha: u32,
        #[arg(long, default_value_t = 4)]
        num_bits: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Scheme {
    Vanilla,
    Kernelised,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum MarginArg {
    Threshold,
    BitPattern,
}

/// Hyperparameters; unset flags fall back to the config file, then defaults.
#[derive(Args, Default)]
pub struct HpArgs {
    /// `key = value` file with hyperparameter and solver settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub num_bits: Option<u32>,
    #[arg(long)]
    pub slack_bits: Option<u32>,
    #[arg(long)]
    pub regret_bits: Option<u32>,
    #[arg(long)]
    pub cost_bits: Option<u32>,
    #[arg(long)]
    pub product_magnitude_bits: Option<u32>,
    #[arg(long, value_enum)]
    pub margin: Option<MarginArg>,
    #[arg(long)]
    pub alpha: Option<u32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub num_batches: Option<usize>,
}

#[derive(Args, Default)]
pub struct NetArgs {
    /// Comma-separated hidden layer widths.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Vec<usize>,
    /// Kernelised first layer over a square input grid.
    #[arg(long)]
    pub kernelised: bool,
    #[arg(long, default_value_t = 3)]
    pub window_size: usize,
    #[arg(long, default_value_t = 1)]
    pub window_stride: usize,
}

#[derive(Args, Default)]
pub struct SolverArgs {
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    #[arg(long)]
    pub max_parallel: Option<usize>,
    #[arg(long)]
    pub probes_per_round: Option<usize>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    #[arg(long)]
    pub max_clauses: Option<usize>,
    #[arg(long)]
    pub chunk_floor: Option<usize>,
}

#[derive(Args)]
pub struct EncodeArgs {
    /// Builtin name (parity8, parity16, parity8-test, perceptron) or cache file.
    #[arg(long)]
    pub dataset: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub hp: HpArgs,
    #[command(flatten)]
    pub net: NetArgs,
    /// Mode written to the job manifest.
    #[arg(long, default_value = "assume:1")]
    pub mode: String,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: String,
    /// Held-out set used to rank models.
    #[arg(long)]
    pub test: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Learn implied clauses per batch and conjoin them everywhere.
    #[arg(long)]
    pub share_clauses: bool,
    /// Models requested per batch.
    #[arg(long, default_value_t = 1)]
    pub num_sols: usize,
    /// Do not fall back to a plain solve when probing finds nothing.
    #[arg(long)]
    pub no_fallback: bool,
    #[command(flatten)]
    pub hp: HpArgs,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Directory of model files (or a single model file).
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub test: String,
    /// Label for the CSV row; defaults to the models path.
    #[arg(long)]
    pub config: Option<String>,
    /// Append the row to this CSV file (header written when new).
    #[arg(long)]
    pub append: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub manifests: Vec<PathBuf>,
}

/// Builtin dataset names or a cache file path.
pub fn load_dataset(name: &str) -> Result<Dataset> {
    Ok(match name {
        "parity8" | "parity8-test" => gen_parity(8, &PARITY8_POSITIONS, ParityCount::Exhaustive, 0)?,
        "parity16" | "parity16-test" => gen_parity(16, &PARITY16_POSITIONS, ParityCount::Exhaustive, 0)?,
        "perceptron" => perceptron_toyset(),
        path => Dataset::load(Path::new(path))?,
    })
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("config line {}: expected `key = value`", i + 1);
        };
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

const HP_KEYS: &[&str] = &[
    "num_bits",
    "slack_bits",
    "regret_bits",
    "cost_bits",
    "product_magnitude_bits",
    "margin",
    "alpha",
    "batch_size",
    "num_batches",
];
const SOLVER_KEYS: &[&str] = &[
    "timeout_secs",
    "max_parallel",
    "probes_per_round",
    "max_rounds",
    "max_clauses",
    "chunk_floor",
];

#[derive(Default)]
pub struct ConfigFile(BTreeMap<String, String>);

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<ConfigFile> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let map = parse_config(&text)?;
        if let Some(k) = map.keys().find(|k| !HP_KEYS.contains(&k.as_str()) && !SOLVER_KEYS.contains(&k.as_str())) {
            bail!("unknown config key `{k}`");
        }
        Ok(ConfigFile(map))
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.0
            .get(key)
            .map(|v| v.parse::<T>().map_err(|_| anyhow::anyhow!("config key `{key}`: bad value `{v}`")))
            .transpose()
    }
}

impl HpArgs {
    pub fn resolve(&self, file: &ConfigFile) -> Result<Hyperparams> {
        let d = Hyperparams::default();
        let margin = match (self.margin, file.0.get("margin").map(String::as_str)) {
            (Some(MarginArg::Threshold), _) | (None, Some("threshold")) => MarginRule::Threshold,
            (Some(MarginArg::BitPattern), _) | (None, Some("bit-pattern")) => MarginRule::BitPattern,
            (None, None) => d.margin,
            (None, Some(other)) => bail!("config key `margin`: bad value `{other}`"),
        };
        let hp = Hyperparams {
            num_bits: self.num_bits.or(file.get("num_bits")?).unwrap_or(d.num_bits),
            slack_bits: self.slack_bits.or(file.get("slack_bits")?).unwrap_or(d.slack_bits),
            regret_bits: self.regret_bits.or(file.get("regret_bits")?).unwrap_or(d.regret_bits),
            cost_bits: self.cost_bits.or(file.get("cost_bits")?).unwrap_or(d.cost_bits),
            margin,
            product_magnitude_bits: self
                .product_magnitude_bits
                .or(file.get("product_magnitude_bits")?)
                .unwrap_or(d.product_magnitude_bits),
            alpha: self.alpha.or(file.get("alpha")?).unwrap_or(d.alpha),
            batch_size: self.batch_size.or(file.get("batch_size")?).unwrap_or(d.batch_size),
            num_batches: self.num_batches.or(file.get("num_batches")?).unwrap_or(d.num_batches),
        };
        hp.validate()?;
        Ok(hp)
    }
}

impl NetArgs {
    pub fn resolve(&self, input_dim: usize) -> Result<NetworkSpec> {
        let net = if self.kernelised {
            let side = (input_dim as f64).sqrt().round() as usize;
            if side * side != input_dim {
                bail!("kernelised networks need a square input, got dimension {input_dim}");
            }
            NetworkSpec::kernelised(side, self.window_size, self.window_stride, self.hidden.clone())
        } else {
            NetworkSpec::vanilla(input_dim, self.hidden.clone())
        };
        net.validate()?;
        Ok(net)
    }
}

impl SolverArgs {
    pub fn resolve(&self, command: String, file: &ConfigFile) -> Result<SolverConfig> {
        let c = Curriculum::default();
        let parallel = std::thread::available_parallelism().map_or(1, |n| n.get());
        let cfg = SolverConfig {
            solver_command: command,
            timeout: Duration::from_secs(self.timeout_secs.or(file.get("timeout_secs")?).unwrap_or(180)),
            seed: 0,
            max_parallel: self.max_parallel.or(file.get("max_parallel")?).unwrap_or(parallel),
            curriculum: Curriculum {
                probes_per_round: self
                    .probes_per_round
                    .or(file.get("probes_per_round")?)
                    .unwrap_or(c.probes_per_round),
                max_rounds: self.max_rounds.or(file.get("max_rounds")?).unwrap_or(c.max_rounds),
                max_clauses: self.max_clauses.or(file.get("max_clauses")?).unwrap_or(c.max_clauses),
                chunk_floor: self.chunk_floor.or(file.get("chunk_floor")?).unwrap_or(c.chunk_floor),
                decay: c.decay,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Solver template: `--solver`/env override, else the bundled backend next
/// to this executable.
pub fn solver_command(explicit: Option<&str>) -> String {
    if let Some(cmd) = explicit {
        return cmd.to_string();
    }
    let bundled = std::env::current_exe()
        .ok()
        .and_then(|exe| exe.parent().map(|d| d.join("satnet-cadical")))
        .unwrap_or_else(|| PathBuf::from("satnet-cadical"));
    format!("{} --seed {{seed}} {{input}}", bundled.display())
}
