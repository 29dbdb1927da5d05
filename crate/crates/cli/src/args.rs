use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sibprefix_core::detect::Metric;
use sibprefix_core::tuner::TunerMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Jaccard,
    Dice,
    Overlap,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Jaccard => Metric::Jaccard,
            MetricArg::Dice => Metric::Dice,
            MetricArg::Overlap => Metric::Overlap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Ms,
    Ls,
}

impl From<ModeArg> for TunerMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ms => TunerMode::MoreSpecific,
            ModeArg::Ls => TunerMode::LessSpecific,
        }
    }
}

/// Detect, tune, annotate and compare IPv4/IPv6 sibling prefixes.
#[derive(Debug, Parser)]
#[command(name = "sibprefix", version)]
pub struct Cli {
    /// TOML file with input paths and defaults; flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory (default: current directory).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub metric: Option<MetricArg>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long = "v4-thresh", global = true, value_name = "LEN")]
    pub v4_thresh: Option<u8>,
    #[arg(long = "v6-thresh", global = true, value_name = "LEN")]
    pub v6_thresh: Option<u8>,
    /// Skip malformed input rows instead of failing.
    #[arg(long, global = true)]
    pub lenient: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Find sibling prefix pairs in a resolution snapshot.
    Detect(DetectArgs),
    /// Refine the CIDR sizes of detected pairs.
    Tune(TuneArgs),
    /// Annotate pairs with organization, ROV, HG/CDN and business data.
    Enrich(EnrichArgs),
    /// Compare two pair files.
    Diff(DiffArgs),
    /// Aggregate tables over pairs and snapshot series.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct InputArgs {
    /// Resolution snapshot CSV (repeatable; parts of one snapshot).
    #[arg(long = "snapshot", value_name = "PATH")]
    pub snapshots: Vec<PathBuf>,
    /// Routing table CSV (repeatable, e.g. one per family).
    #[arg(long = "routes", value_name = "PATH")]
    pub routes: Vec<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    /// Include the shared domain names in every record.
    #[arg(long)]
    pub with_domains: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    /// Pair file written by `detect`.
    #[arg(long, value_name = "PATH")]
    pub pairs: Option<PathBuf>,
    /// Also run the threshold sweep.
    #[arg(long)]
    pub sweep: bool,
    #[arg(long, value_name = "N")]
    pub ls_v4_levels: Option<u8>,
    #[arg(long, value_name = "N")]
    pub ls_v6_levels: Option<u8>,
}

#[derive(Debug, Clone, Args)]
pub struct EnrichArgs {
    #[arg(long, value_name = "PATH")]
    pub pairs: Option<PathBuf>,
    /// CSV `asn,org_name`.
    #[arg(long, value_name = "PATH")]
    pub as_org: Option<PathBuf>,
    /// CSV `prefix,max_length,asn,trust_anchor`.
    #[arg(long, value_name = "PATH")]
    pub roas: Option<PathBuf>,
    /// Newline-separated hypergiant organization names.
    #[arg(long, value_name = "PATH")]
    pub hypergiants: Option<PathBuf>,
    /// Newline-separated CDN organization names.
    #[arg(long, value_name = "PATH")]
    pub cdns: Option<PathBuf>,
    /// CSV `asn,category`.
    #[arg(long, value_name = "PATH")]
    pub asdb: Option<PathBuf>,
    /// Keep pairs whose two prefixes share an origin AS in business tables.
    #[arg(long)]
    pub include_same_asn: bool,
    #[arg(long, value_name = "N")]
    pub min_pair_count: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct DiffArgs {
    /// Reference (older) pair file.
    #[arg(long, value_name = "PATH")]
    pub old: PathBuf,
    /// Current pair file.
    #[arg(long, value_name = "PATH")]
    pub new: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    #[arg(long, value_name = "PATH")]
    pub pairs: Option<PathBuf>,
    /// CSV `address,label` of scan results, compared against the pairs.
    #[arg(long, value_name = "PATH")]
    pub scan_labels: Option<PathBuf>,
    #[arg(long = "routes", value_name = "PATH")]
    pub routes: Vec<PathBuf>,
    /// One snapshot file per date, in any order, for visibility/stability.
    #[arg(long = "series", value_name = "PATH")]
    pub series: Vec<PathBuf>,
    /// Compare each lookback snapshot with the reference alone.
    #[arg(long)]
    pub pointwise: bool,
}
