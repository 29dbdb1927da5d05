//! Sibling prefix detection.
//!
//! Dual-stack domains are grouped under the announced prefix of each of
//! their addresses. Every IPv4/IPv6 prefix pair that shares at least one
//! domain is scored, and each prefix keeps the counterpart(s) with the
//! highest score. Scores are carried as exact counts so ties are detected
//! without floating-point noise.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Read;
use std::net::IpAddr;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{DomainId, IngestError, ResolutionSnapshot, RouteTable, RowIssue};
use crate::prefix::{IpPrefix, IpVersion};
use crate::trie::PrefixTrie;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DetectError {
    #[error("{metric} is undefined for sets of sizes {a} and {b}")]
    Undefined { metric: Metric, a: u64, b: u64 },
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Jaccard,
    Dice,
    Overlap,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Jaccard, Metric::Dice, Metric::Overlap];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Jaccard => "jaccard",
            Metric::Dice => "dice",
            Metric::Overlap => "overlap",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = DetectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jaccard" => Ok(Metric::Jaccard),
            "dice" => Ok(Metric::Dice),
            "overlap" => Ok(Metric::Overlap),
            _ => Err(DetectError::UnknownMetric(s.to_string())),
        }
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Similarity of two finite sets, kept as the counts it was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SimilarityScore {
    pub metric: Metric,
    pub intersection: u64,
    pub size_a: u64,
    pub size_b: u64,
}

impl SimilarityScore {
    pub fn from_counts(metric: Metric, intersection: u64, size_a: u64, size_b: u64) -> Result<Self, DetectError> {
        debug_assert!(intersection <= size_a.min(size_b));
        let undefined = match metric {
            Metric::Jaccard | Metric::Dice => size_a + size_b == 0,
            Metric::Overlap => size_a.min(size_b) == 0,
        };
        if undefined {
            return Err(DetectError::Undefined { metric, a: size_a, b: size_b });
        }
        Ok(SimilarityScore { metric, intersection, size_a, size_b })
    }

    pub fn union(&self) -> u64 {
        self.size_a + self.size_b - self.intersection
    }

    /// Unreduced `(numerator, denominator)` of the metric.
    pub fn ratio(&self) -> (u64, u64) {
        match self.metric {
            Metric::Jaccard => (self.intersection, self.union()),
            Metric::Dice => (2 * self.intersection, self.size_a + self.size_b),
            Metric::Overlap => (self.intersection, self.size_a.min(self.size_b)),
        }
    }

    /// The metric value as a fraction in lowest terms.
    pub fn reduced(&self) -> (u64, u64) {
        let (n, d) = self.ratio();
        let g = gcd(n, d).max(1);
        (n / g, d / g)
    }

    pub fn value(&self) -> f64 {
        let (n, d) = self.ratio();
        n as f64 / d as f64
    }

    pub fn with_metric(&self, metric: Metric) -> Result<Self, DetectError> {
        Self::from_counts(metric, self.intersection, self.size_a, self.size_b)
    }

    pub fn is_perfect(&self) -> bool {
        let (n, d) = self.ratio();
        n == d
    }

    pub fn is_zero(&self) -> bool {
        self.intersection == 0
    }

    /// Exact comparison of metric values.
    pub fn cmp_value(&self, other: &Self) -> Ordering {
        let (a, b) = self.ratio();
        let (c, d) = other.ratio();
        (a as u128 * d as u128).cmp(&(c as u128 * b as u128))
    }
}

fn intersection_count<T: Ord>(a: &[T], b: &[T]) -> u64 {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Similarity of two sorted, deduplicated slices.
pub fn similarity<T: Ord>(a: &[T], b: &[T], metric: Metric) -> Result<SimilarityScore, DetectError> {
    debug_assert!(a.windows(2).all(|w| w[0] < w[1]) && b.windows(2).all(|w| w[0] < w[1]));
    SimilarityScore::from_counts(metric, intersection_count(a, b), a.len() as u64, b.len() as u64)
}

pub fn similarity_sets<T: Ord>(
    a: &BTreeSet<T>,
    b: &BTreeSet<T>,
    metric: Metric,
) -> Result<SimilarityScore, DetectError> {
    let inter = a.intersection(b).count() as u64;
    SimilarityScore::from_counts(metric, inter, a.len() as u64, b.len() as u64)
}

/// Domains with at least one address in each family.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DsDomainSet {
    ids: Vec<DomainId>,
}

impl DsDomainSet {
    pub fn from_ids(mut ids: Vec<DomainId>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        DsDomainSet { ids }
    }

    pub fn ids(&self) -> &[DomainId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: DomainId) -> bool {
        self.ids.binary_search(&id).is_ok()
    }
}

pub fn identify_ds_domains(snapshot: &ResolutionSnapshot) -> DsDomainSet {
    DsDomainSet { ids: snapshot.domains().filter(|(_, _, a)| a.is_dual_stack()).map(|(id, _, _)| id).collect() }
}

/// Routed prefixes of one dual-stack domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainPrefixes {
    pub domain: DomainId,
    pub v4: Vec<IpPrefix>,
    pub v6: Vec<IpPrefix>,
}

/// Per-family prefix → domain-set maps.
#[derive(Debug, Clone, Default)]
pub struct PrefixDomainIndex {
    v4: BTreeMap<IpPrefix, Vec<DomainId>>,
    v6: BTreeMap<IpPrefix, Vec<DomainId>>,
    origins: BTreeMap<IpPrefix, u32>,
    domains: Vec<DomainPrefixes>,
    /// DS domains lacking a routed address in at least one family.
    pub dropped_unrouted: u64,
    /// Addresses of DS domains with no covering route.
    pub unrouted_addresses: u64,
}

impl PrefixDomainIndex {
    pub fn family(&self, version: IpVersion) -> &BTreeMap<IpPrefix, Vec<DomainId>> {
        match version {
            IpVersion::V4 => &self.v4,
            IpVersion::V6 => &self.v6,
        }
    }

    pub fn domains_of(&self, prefix: &IpPrefix) -> &[DomainId] {
        self.family(prefix.version()).get(prefix).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn origin(&self, prefix: &IpPrefix) -> Option<u32> {
        self.origins.get(prefix).copied()
    }

    /// Domains that survived route mapping, ascending.
    pub fn retained(&self) -> impl Iterator<Item = &DomainPrefixes> + '_ {
        self.domains.iter()
    }

    pub fn retained_ids(&self) -> DsDomainSet {
        DsDomainSet { ids: self.domains.iter().map(|d| d.domain).collect() }
    }
}

fn routed_prefixes(
    addrs: &[IpAddr],
    routes: &RouteTable,
    origins: &mut Vec<(IpPrefix, u32)>,
    unrouted: &mut u64,
) -> Vec<IpPrefix> {
    let mut out = Vec::with_capacity(addrs.len());
    for addr in addrs {
        match routes.lookup(addr) {
            Some(route) => {
                out.push(route.prefix);
                origins.push((route.prefix, route.origin_asn));
            }
            None => *unrouted += 1,
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

pub fn build_prefix_domain_index(
    snapshot: &ResolutionSnapshot,
    ds: &DsDomainSet,
    routes: &RouteTable,
) -> PrefixDomainIndex {
    struct Mapped {
        entry: Option<DomainPrefixes>,
        origins: Vec<(IpPrefix, u32)>,
        unrouted: u64,
    }
    let mapped: Vec<Mapped> = ds
        .ids()
        .par_iter()
        .map(|&id| {
            let addrs = snapshot.addrs(id);
            let mut origins = Vec::new();
            let mut unrouted = 0;
            let v4 = routed_prefixes(&addrs.of(IpVersion::V4), routes, &mut origins, &mut unrouted);
            let v6 = routed_prefixes(&addrs.of(IpVersion::V6), routes, &mut origins, &mut unrouted);
            let entry = (!v4.is_empty() && !v6.is_empty()).then_some(DomainPrefixes { domain: id, v4, v6 });
            Mapped { entry, origins, unrouted }
        })
        .collect();

    let mut index = PrefixDomainIndex::default();
    for m in mapped {
        index.unrouted_addresses += m.unrouted;
        let Some(entry) = m.entry else {
            index.dropped_unrouted += 1;
            continue;
        };
        for (prefix, asn) in m.origins {
            index.origins.insert(prefix, asn);
        }
        for p in &entry.v4 {
            index.v4.entry(*p).or_default().push(entry.domain);
        }
        for p in &entry.v6 {
            index.v6.entry(*p).or_default().push(entry.domain);
        }
        index.domains.push(entry);
    }
    index
}

/// A prefix pair sharing at least one domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CandidatePair {
    pub v4: IpPrefix,
    pub v6: IpPrefix,
    pub shared: u64,
}

/// All pairs with a non-empty domain intersection, sorted by `(v4, v6)`.
///
/// Pairs are produced by joining each domain's IPv4 prefixes with its IPv6
/// prefixes, so the count per pair is exactly the intersection size.
pub fn enumerate_candidate_pairs(index: &PrefixDomainIndex) -> Vec<CandidatePair> {
    let mut counts: HashMap<(IpPrefix, IpPrefix), u64> = HashMap::new();
    for d in &index.domains {
        for p4 in &d.v4 {
            for p6 in &d.v6 {
                *counts.entry((*p4, *p6)).or_default() += 1;
            }
        }
    }
    let mut pairs: Vec<CandidatePair> =
        counts.into_iter().map(|((v4, v6), shared)| CandidatePair { v4, v6, shared }).collect();
    pairs.par_sort_unstable();
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoredPair {
    pub v4: IpPrefix,
    pub v6: IpPrefix,
    pub score: SimilarityScore,
}

pub fn score_candidates(index: &PrefixDomainIndex, candidates: &[CandidatePair], metric: Metric) -> Vec<ScoredPair> {
    candidates
        .par_iter()
        .map(|c| {
            let a = index.domains_of(&c.v4).len() as u64;
            let b = index.domains_of(&c.v6).len() as u64;
            let score = SimilarityScore::from_counts(metric, c.shared, a, b)
                .expect("candidate prefixes hold at least one domain");
            ScoredPair { v4: c.v4, v6: c.v6, score }
        })
        .collect()
}

/// Keeps, for every prefix on either side, the pair(s) attaining its maximum
/// score. The result is the union of both sides' winners, sorted by
/// `(v4, v6)`; zero scores never appear.
pub fn select_best_matches(scored: &[ScoredPair]) -> Vec<ScoredPair> {
    let mut best4: HashMap<IpPrefix, SimilarityScore> = HashMap::new();
    let mut best6: HashMap<IpPrefix, SimilarityScore> = HashMap::new();
    for s in scored.iter().filter(|s| !s.score.is_zero()) {
        for (map, key) in [(&mut best4, s.v4), (&mut best6, s.v6)] {
            map.entry(key)
                .and_modify(|cur| {
                    if s.score.cmp_value(cur) == Ordering::Greater {
                        *cur = s.score;
                    }
                })
                .or_insert(s.score);
        }
    }
    let mut out: Vec<ScoredPair> = scored
        .iter()
        .filter(|s| !s.score.is_zero())
        .filter(|s| {
            best4[&s.v4].cmp_value(&s.score) == Ordering::Equal || best6[&s.v6].cmp_value(&s.score) == Ordering::Equal
        })
        .copied()
        .collect();
    out.sort_by_key(|p| (p.v4, p.v6));
    out.dedup_by(|a, b| (a.v4, a.v6) == (b.v4, b.v6));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Default,
    Tuned,
    Branch,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Default => "default",
            Provenance::Tuned => "tuned",
            Provenance::Branch => "branch",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiblingPair {
    pub v4: IpPrefix,
    pub v6: IpPrefix,
    pub score: SimilarityScore,
    pub provenance: Provenance,
    /// `(asn_v4, asn_v6)` when known.
    pub origin: Option<(u32, u32)>,
    /// Names of the shared domains, when requested.
    pub shared_domains: Option<Vec<String>>,
}

impl SiblingPair {
    pub fn key(&self) -> (IpPrefix, IpPrefix) {
        (self.v4, self.v6)
    }
}

/// Output of the full detection pipeline on one snapshot.
#[derive(Debug, Clone)]
pub struct Detection {
    pub ds_domains: usize,
    pub index: PrefixDomainIndex,
    pub candidates: Vec<CandidatePair>,
    pub pairs: Vec<SiblingPair>,
}

impl Detection {
    /// Best matches under another metric, over the same candidates.
    pub fn rescore(&self, metric: Metric) -> Vec<ScoredPair> {
        select_best_matches(&score_candidates(&self.index, &self.candidates, metric))
    }
}

fn shared_names(snapshot: &ResolutionSnapshot, index: &PrefixDomainIndex, v4: &IpPrefix, v6: &IpPrefix) -> Vec<String> {
    let a = index.domains_of(v4);
    let b: BTreeSet<_> = index.domains_of(v6).iter().collect();
    a.iter().filter(|d| b.contains(d)).map(|d| snapshot.name(*d).to_string()).collect()
}

/// Steps 1-4: dual-stack domains, prefix grouping, scoring, best matches.
pub fn detect(snapshot: &ResolutionSnapshot, routes: &RouteTable, metric: Metric, with_domains: bool) -> Detection {
    let ds = identify_ds_domains(snapshot);
    let index = build_prefix_domain_index(snapshot, &ds, routes);
    let candidates = enumerate_candidate_pairs(&index);
    let best = select_best_matches(&score_candidates(&index, &candidates, metric));
    let pairs = best
        .into_iter()
        .map(|s| SiblingPair {
            v4: s.v4,
            v6: s.v6,
            score: s.score,
            provenance: Provenance::Default,
            origin: index.origin(&s.v4).zip(index.origin(&s.v6)),
            shared_domains: with_domains.then(|| shared_names(snapshot, &index, &s.v4, &s.v6)),
        })
        .collect();
    Detection { ds_domains: ds.len(), index, candidates, pairs }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LabelStats {
    pub rows: u64,
    pub stored: u64,
    pub malformed: u64,
    pub unrouted: u64,
    pub issues: Vec<RowIssue>,
}

/// Prefix → label-set index built from scan results (e.g. open ports).
#[derive(Debug, Clone, Default)]
pub struct LabelIndex {
    by_route: BTreeMap<IpPrefix, BTreeSet<String>>,
    by_addr: PrefixTrie<BTreeSet<String>>,
    pub stats: LabelStats,
}

impl LabelIndex {
    /// Labels grouped under the announced prefix of each address.
    pub fn family(&self, version: IpVersion) -> impl Iterator<Item = (&IpPrefix, &BTreeSet<String>)> + '_ {
        self.by_route.iter().filter(move |(p, _)| p.version() == version)
    }

    pub fn labels_of_route(&self, prefix: &IpPrefix) -> Option<&BTreeSet<String>> {
        self.by_route.get(prefix)
    }

    /// Union of labels of every address inside `prefix`, which need not be
    /// an announced prefix (tuned pairs are usually more specific).
    pub fn labels_under(&self, prefix: &IpPrefix) -> BTreeSet<String> {
        self.by_addr.iter_within(prefix).into_iter().flat_map(|(_, labels)| labels.iter().cloned()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.by_route.is_empty()
    }
}

pub fn build_label_index<I>(rows: I, routes: &RouteTable) -> LabelIndex
where
    I: IntoIterator<Item = (IpAddr, String)>,
{
    let mut index = LabelIndex::default();
    for (addr, label) in rows {
        index.stats.rows += 1;
        let Some(route) = routes.lookup(&addr) else {
            index.stats.unrouted += 1;
            continue;
        };
        index.stats.stored += 1;
        index.by_route.entry(route.prefix).or_default().insert(label.clone());
        index.by_addr.get_or_insert_with(IpPrefix::host(addr), BTreeSet::new).insert(label);
    }
    index
}

/// Parses an `address,label` scan file. Bad rows are skipped and reported.
pub fn load_scan_labels<R: Read>(source: R) -> Result<(Vec<(IpAddr, String)>, LabelStats), IngestError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if !header.is_empty() && header != ["address", "label"] && !(header.len() == 1 && header[0].is_empty()) {
        return Err(IngestError::Header { expected: vec!["address".into(), "label".into()], found: header });
    }
    let mut rows = Vec::new();
    let mut stats = LabelStats::default();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let parsed = (rec.len() == 2)
            .then(|| rec[0].trim().parse::<IpAddr>().ok())
            .flatten()
            .filter(|_| !rec[1].trim().is_empty());
        match parsed {
            Some(addr) => rows.push((addr, rec[1].trim().to_string())),
            None => {
                stats.malformed += 1;
                if stats.issues.len() < 1000 {
                    stats.issues.push(RowIssue { line, message: format!("bad scan row {:?}", rec.as_slice()) });
                }
            }
        }
    }
    Ok((rows, stats))
}
