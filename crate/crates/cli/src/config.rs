//! Effective configuration: command-line flags over a TOML file over
//! built-in defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sibprefix_core::detect::Metric;
use sibprefix_core::tuner::{TunerConfig, TunerMode};

use crate::args::{Cli, Command};
use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    out: Option<PathBuf>,
    workers: Option<usize>,
    metric: Option<Metric>,
    strict: Option<bool>,
    with_domains: Option<bool>,
    drop_documentation: Option<bool>,
    #[serde(default)]
    inputs: InputSection,
    #[serde(default)]
    tune: TuneSection,
    #[serde(default)]
    enrich: EnrichSection,
    #[serde(default)]
    stats: StatsSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct InputSection {
    #[serde(default)]
    snapshots: Vec<PathBuf>,
    #[serde(default)]
    routes: Vec<PathBuf>,
    pairs: Option<PathBuf>,
    as_org: Option<PathBuf>,
    roas: Option<PathBuf>,
    hypergiants: Option<PathBuf>,
    cdns: Option<PathBuf>,
    asdb: Option<PathBuf>,
    scan_labels: Option<PathBuf>,
    #[serde(default)]
    series: Vec<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TuneSection {
    mode: Option<TunerMode>,
    v4_thresh: Option<u8>,
    v6_thresh: Option<u8>,
    ls_v4_levels_up: Option<u8>,
    ls_v6_levels_up: Option<u8>,
    sweep: Option<bool>,
    sweep_v4: Option<Vec<u8>>,
    sweep_v6: Option<Vec<u8>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnrichSection {
    include_same_asn: Option<bool>,
    min_pair_count: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct StatsSection {
    pointwise: Option<bool>,
}

pub const DEFAULT_SWEEP_V4: [u8; 4] = [16, 20, 24, 28];
pub const DEFAULT_SWEEP_V6: [u8; 4] = [32, 48, 64, 96];

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub out: PathBuf,
    pub workers: Option<usize>,
    pub metric: Metric,
    pub strict: bool,
    pub with_domains: bool,
    pub drop_documentation: bool,
    pub snapshots: Vec<PathBuf>,
    pub routes: Vec<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub as_org: Option<PathBuf>,
    pub roas: Option<PathBuf>,
    pub hypergiants: Option<PathBuf>,
    pub cdns: Option<PathBuf>,
    pub asdb: Option<PathBuf>,
    pub scan_labels: Option<PathBuf>,
    pub series: Vec<PathBuf>,
    pub tuner: TunerConfig,
    pub sweep: bool,
    pub sweep_v4: Vec<u8>,
    pub sweep_v6: Vec<u8>,
    pub include_same_asn: bool,
    pub min_pair_count: usize,
    pub pointwise: bool,
    pub diff_old: Option<PathBuf>,
    pub diff_new: Option<PathBuf>,
}

fn load_file(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut cfg: FileConfig =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    // Paths inside the file are relative to the file.
    let base = path.parent().unwrap_or(Path::new(""));
    let fix = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    let i = &mut cfg.inputs;
    i.snapshots.iter_mut().chain(i.routes.iter_mut()).chain(i.series.iter_mut()).for_each(fix);
    for p in
        [&mut i.pairs, &mut i.as_org, &mut i.roas, &mut i.hypergiants, &mut i.cdns, &mut i.asdb, &mut i.scan_labels]
            .into_iter()
            .flatten()
    {
        fix(p);
    }
    if let Some(out) = cfg.out.as_mut() {
        fix(out);
    }
    Ok(cfg)
}

fn pick_vec(flag: &[PathBuf], file: Vec<PathBuf>) -> Vec<PathBuf> {
    if flag.is_empty() {
        file
    } else {
        flag.to_vec()
    }
}

impl PipelineConfig {
    pub fn resolve(cli: &Cli) -> Result<Self, CliError> {
        let file = match &cli.config {
            Some(p) => load_file(p)?,
            None => FileConfig::default(),
        };
        let i = file.inputs;
        let t = file.tune;
        let mut cfg = PipelineConfig {
            out: cli.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from(".")),
            workers: cli.workers.or(file.workers),
            metric: cli.metric.map(Metric::from).or(file.metric).unwrap_or_default(),
            strict: !cli.lenient && file.strict.unwrap_or(true),
            with_domains: file.with_domains.unwrap_or(false),
            drop_documentation: file.drop_documentation.unwrap_or(false),
            snapshots: i.snapshots,
            routes: i.routes,
            pairs: i.pairs,
            as_org: i.as_org,
            roas: i.roas,
            hypergiants: i.hypergiants,
            cdns: i.cdns,
            asdb: i.asdb,
            scan_labels: i.scan_labels,
            series: i.series,
            tuner: TunerConfig {
                mode: cli.mode.map(TunerMode::from).or(t.mode).unwrap_or(TunerMode::MoreSpecific),
                v4_len_thresh: cli.v4_thresh.or(t.v4_thresh).unwrap_or(28),
                v6_len_thresh: cli.v6_thresh.or(t.v6_thresh).unwrap_or(96),
                ls_v4_levels_up: t.ls_v4_levels_up.unwrap_or(1),
                ls_v6_levels_up: t.ls_v6_levels_up.unwrap_or(4),
            },
            sweep: t.sweep.unwrap_or(false),
            sweep_v4: t.sweep_v4.unwrap_or_else(|| DEFAULT_SWEEP_V4.to_vec()),
            sweep_v6: t.sweep_v6.unwrap_or_else(|| DEFAULT_SWEEP_V6.to_vec()),
            include_same_asn: file.enrich.include_same_asn.unwrap_or(false),
            min_pair_count: file.enrich.min_pair_count.unwrap_or(50),
            pointwise: file.stats.pointwise.unwrap_or(false),
            diff_old: None,
            diff_new: None,
        };

        match &cli.command {
            Command::Detect(a) => {
                cfg.snapshots = pick_vec(&a.inputs.snapshots, cfg.snapshots);
                cfg.routes = pick_vec(&a.inputs.routes, cfg.routes);
                cfg.with_domains |= a.with_domains;
            }
            Command::Tune(a) => {
                cfg.snapshots = pick_vec(&a.inputs.snapshots, cfg.snapshots);
                cfg.routes = pick_vec(&a.inputs.routes, cfg.routes);
                cfg.pairs = a.pairs.clone().or(cfg.pairs);
                cfg.sweep |= a.sweep;
                if let Some(n) = a.ls_v4_levels {
                    cfg.tuner.ls_v4_levels_up = n;
                }
                if let Some(n) = a.ls_v6_levels {
                    cfg.tuner.ls_v6_levels_up = n;
                }
            }
            Command::Enrich(a) => {
                cfg.pairs = a.pairs.clone().or(cfg.pairs);
                cfg.as_org = a.as_org.clone().or(cfg.as_org);
                cfg.roas = a.roas.clone().or(cfg.roas);
                cfg.hypergiants = a.hypergiants.clone().or(cfg.hypergiants);
                cfg.cdns = a.cdns.clone().or(cfg.cdns);
                cfg.asdb = a.asdb.clone().or(cfg.asdb);
                cfg.include_same_asn |= a.include_same_asn;
                cfg.min_pair_count = a.min_pair_count.unwrap_or(cfg.min_pair_count);
            }
            Command::Diff(a) => {
                cfg.diff_old = Some(a.old.clone());
                cfg.diff_new = Some(a.new.clone());
            }
            Command::Stats(a) => {
                cfg.pairs = a.pairs.clone().or(cfg.pairs);
                cfg.scan_labels = a.scan_labels.clone().or(cfg.scan_labels);
                cfg.routes = pick_vec(&a.routes, cfg.routes);
                cfg.series = pick_vec(&a.series, cfg.series);
                cfg.pointwise |= a.pointwise;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.workers == Some(0) {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        self.tuner.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let bad4 = self.sweep_v4.iter().find(|&&l| l > 32);
        let bad6 = self.sweep_v6.iter().find(|&&l| l > 128);
        if let Some(l) = bad4.or(bad6) {
            return Err(CliError::Config(format!("sweep threshold /{l} is out of range")));
        }
        let singles = [
            &self.pairs,
            &self.as_org,
            &self.roas,
            &self.hypergiants,
            &self.cdns,
            &self.asdb,
            &self.scan_labels,
            &self.diff_old,
            &self.diff_new,
        ];
        let all = self.snapshots.iter().chain(&self.routes).chain(&self.series).chain(singles.into_iter().flatten());
        for p in all {
            if !p.is_file() {
                return Err(CliError::Config(format!("input file {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}
