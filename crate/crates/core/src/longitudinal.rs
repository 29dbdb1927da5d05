//! Multi-snapshot analyses: domain visibility, prefix and address stability,
//! and diffs between two sibling pair sets.

use std::collections::{BTreeMap, BTreeSet};
use std::net::IpAddr;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::ingest::{ResolutionSnapshot, RouteTable};
use crate::prefix::{IpPrefix, IpVersion};
use crate::record::PairRecord;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LongitudinalError {
    #[error("a series needs at least one snapshot")]
    Empty,
    #[error("snapshot dates must strictly increase: {prev} then {next}")]
    NotIncreasing { prev: NaiveDate, next: NaiveDate },
    #[error("pair {v4} / {v6} appears twice in the {side} set")]
    DuplicateKey { v4: IpPrefix, v6: IpPrefix, side: &'static str },
}

pub struct SeriesEntry<'a> {
    pub date: NaiveDate,
    pub snapshot: &'a ResolutionSnapshot,
    pub routes: &'a RouteTable,
}

/// Snapshots ordered by strictly increasing date.
pub struct SnapshotSeries<'a> {
    entries: Vec<SeriesEntry<'a>>,
}

impl<'a> SnapshotSeries<'a> {
    pub fn new(entries: Vec<SeriesEntry<'a>>) -> Result<Self, LongitudinalError> {
        if entries.is_empty() {
            return Err(LongitudinalError::Empty);
        }
        for w in entries.windows(2) {
            if w[0].date >= w[1].date {
                return Err(LongitudinalError::NotIncreasing { prev: w[0].date, next: w[1].date });
            }
        }
        Ok(SnapshotSeries { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[SeriesEntry<'a>] {
        &self.entries
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.entries.iter().map(|e| e.date).collect()
    }
}

fn is_ds(snapshot: &ResolutionSnapshot, domain: &str) -> bool {
    snapshot.id_of(domain).is_some_and(|id| snapshot.addrs(id).is_dual_stack())
}

/// Number of snapshots in which `domain` is dual-stack.
pub fn visibility_frequency(series: &SnapshotSeries<'_>, domain: &str) -> usize {
    series.entries.iter().filter(|e| is_ds(e.snapshot, domain)).count()
}

/// Visibility of every domain that is dual-stack at least once.
pub fn visibility_counts(series: &SnapshotSeries<'_>) -> BTreeMap<String, usize> {
    let per: Vec<Vec<&str>> = series
        .entries
        .par_iter()
        .map(|e| e.snapshot.domains().filter(|(_, _, a)| a.is_dual_stack()).map(|(_, n, _)| n).collect())
        .collect();
    let mut out = BTreeMap::new();
    for names in per {
        for n in names {
            *out.entry(n.to_string()).or_insert(0) += 1;
        }
    }
    out
}

/// Domains dual-stack in every snapshot of the series, sorted.
pub fn consistent_domains(series: &SnapshotSeries<'_>) -> Vec<String> {
    let n = series.len();
    visibility_counts(series).into_iter().filter(|(_, c)| *c == n).map(|(d, _)| d).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StabilityMode {
    /// Stable at offset k only if equal to the reference at every offset up to k.
    #[default]
    Cumulative,
    /// Compare the snapshot at offset k with the reference alone.
    Pointwise,
}

/// What one domain looks like in one snapshot. Unrouted addresses show up
/// as `None` so a route appearing or vanishing counts as a prefix change.
#[derive(Debug, Clone, PartialEq, Eq)]
struct View {
    v4: BTreeSet<Option<IpPrefix>>,
    v6: BTreeSet<Option<IpPrefix>>,
    addrs: BTreeSet<IpAddr>,
}

fn view(entry: &SeriesEntry<'_>, domain: &str) -> Option<View> {
    let id = entry.snapshot.id_of(domain)?;
    let a = entry.snapshot.addrs(id);
    let pfx = |v: IpVersion| a.of(v).iter().map(|ip| entry.routes.lookup(ip).map(|r| r.prefix)).collect();
    Some(View { v4: pfx(IpVersion::V4), v6: pfx(IpVersion::V6), addrs: a.all().collect() })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DomainStability {
    pub domain: String,
    pub visibility: usize,
    /// Index `k - 1` holds the flag for lookback offset `k`.
    pub prefix_v4: Vec<bool>,
    pub prefix_v6: Vec<bool>,
    pub address: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityPoint {
    pub offset: usize,
    pub date: NaiveDate,
    pub prefix_v4: f64,
    pub prefix_v6: f64,
    pub address: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub mode: StabilityMode,
    pub reference: NaiveDate,
    pub domains: Vec<DomainStability>,
    pub curve: Vec<StabilityPoint>,
}

/// Stability of each domain's prefixes and addresses relative to the last
/// snapshot, for every lookback offset `1..len`.
pub fn stability(series: &SnapshotSeries<'_>, consistent: &[String], mode: StabilityMode) -> StabilityReport {
    let n = series.len();
    let last = &series.entries[n - 1];
    let mut domains: Vec<DomainStability> = consistent
        .par_iter()
        .map(|d| {
            let reference = view(last, d);
            let mut flags = [Vec::with_capacity(n - 1), Vec::with_capacity(n - 1), Vec::with_capacity(n - 1)];
            for k in 1..n {
                let other = view(&series.entries[n - 1 - k], d);
                let same = match (&reference, &other) {
                    (Some(r), Some(o)) => [r.v4 == o.v4, r.v6 == o.v6, r.addrs == o.addrs],
                    _ => [false; 3],
                };
                for (f, s) in flags.iter_mut().zip(same) {
                    let prev = f.last().copied().unwrap_or(true);
                    f.push(match mode {
                        StabilityMode::Cumulative => prev && s,
                        StabilityMode::Pointwise => s,
                    });
                }
            }
            let [prefix_v4, prefix_v6, address] = flags;
            DomainStability {
                domain: d.clone(),
                visibility: visibility_frequency(series, d),
                prefix_v4,
                prefix_v6,
                address,
            }
        })
        .collect();
    domains.sort_by(|a, b| a.domain.cmp(&b.domain));
    domains.dedup_by(|a, b| a.domain == b.domain);

    let total = domains.len();
    let frac = |k: usize, pick: fn(&DomainStability) -> &Vec<bool>| {
        if total == 0 {
            0.0
        } else {
            domains.iter().filter(|d| pick(d)[k]).count() as f64 / total as f64
        }
    };
    let curve = (1..n)
        .map(|k| StabilityPoint {
            offset: k,
            date: series.entries[n - 1 - k].date,
            prefix_v4: frac(k - 1, |d| &d.prefix_v4),
            prefix_v6: frac(k - 1, |d| &d.prefix_v6),
            address: frac(k - 1, |d| &d.address),
        })
        .collect();
    StabilityReport { mode, reference: last.date, domains, curve }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DiffCategory {
    New,
    Changed,
    Unchanged,
}

impl DiffCategory {
    pub const ALL: [DiffCategory; 3] = [DiffCategory::New, DiffCategory::Changed, DiffCategory::Unchanged];

    pub fn name(self) -> &'static str {
        match self {
            DiffCategory::New => "new",
            DiffCategory::Changed => "changed",
            DiffCategory::Unchanged => "unchanged",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DiffEntry {
    pub v4: IpPrefix,
    pub v6: IpPrefix,
    pub category: DiffCategory,
    /// Reduced Jaccard in the reference set, when the key was there.
    pub old_jaccard: Option<(u64, u64)>,
    pub new_jaccard: (u64, u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RetiredEntry {
    pub v4: IpPrefix,
    pub v6: IpPrefix,
    pub old_jaccard: (u64, u64),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SiblingDiff {
    /// One entry per current pair, sorted by key.
    pub entries: Vec<DiffEntry>,
    pub retired: Vec<RetiredEntry>,
}

impl SiblingDiff {
    pub fn count(&self, category: DiffCategory) -> usize {
        self.entries.iter().filter(|e| e.category == category).count()
    }
}

fn keyed<'r>(
    records: &'r [PairRecord],
    side: &'static str,
) -> Result<BTreeMap<(IpPrefix, IpPrefix), &'r PairRecord>, LongitudinalError> {
    let mut map = BTreeMap::new();
    for r in records {
        if map.insert(r.key(), r).is_some() {
            return Err(LongitudinalError::DuplicateKey { v4: r.v4, v6: r.v6, side });
        }
    }
    Ok(map)
}

fn same_ratio(a: (u64, u64), b: (u64, u64)) -> bool {
    a.0 as u128 * b.1 as u128 == b.0 as u128 * a.1 as u128
}

/// Classifies every pair in `new` against the reference set `old`.
pub fn diff_sibling_sets(old: &[PairRecord], new: &[PairRecord]) -> Result<SiblingDiff, LongitudinalError> {
    let old = keyed(old, "old")?;
    let new = keyed(new, "new")?;
    let entries = new
        .iter()
        .map(|(k, r)| {
            let now = r.jaccard_ratio();
            let before = old.get(k).map(|o| o.jaccard_ratio());
            let category = match before {
                None => DiffCategory::New,
                Some(b) if same_ratio(b, now) => DiffCategory::Unchanged,
                Some(_) => DiffCategory::Changed,
            };
            DiffEntry { v4: k.0, v6: k.1, category, old_jaccard: before, new_jaccard: now }
        })
        .collect();
    let retired = old
        .iter()
        .filter(|(k, _)| !new.contains_key(k))
        .map(|(k, r)| RetiredEntry { v4: k.0, v6: k.1, old_jaccard: r.jaccard_ratio() })
        .collect();
    Ok(SiblingDiff { entries, retired })
}
