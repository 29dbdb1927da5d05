//! CIDR-size refinement of sibling prefix pairs.
//!
//! Both variants work on per-family tries of the dual-stack domains'
//! individual addresses, so the domain set of any prefix is the union of the
//! address leaves beneath it.
//!
//! * More-specific (MS): from the current pair, look at the nearest occupied
//!   sub-prefixes on each side (clipped to the length thresholds), move to
//!   the child combination with the highest Jaccard as long as it is not
//!   lower than the current one, and repeat. Children left behind become
//!   branch candidates: each is matched against the other side's leftovers
//!   plus the pre-move counterpart, and the winners are tuned the same way.
//!   A branch with no overlapping counterpart is reported as unmatched.
//! * Less-specific (LS): move one bit up on either or both sides while the
//!   Jaccard strictly improves, the origin AS of the widened prefix stays the
//!   same, and the per-family level budget is not exhausted.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::rc::Rc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{similarity, DsDomainSet, Metric, Provenance, SiblingPair, SimilarityScore};
use crate::ingest::{DomainId, ResolutionSnapshot, RouteTable};
use crate::prefix::{IpPrefix, IpVersion};
use crate::trie::PrefixTrie;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TunerError {
    #[error("pair {v4} / {v6} has no shared domains in the tuning tries")]
    InconsistentInput { v4: IpPrefix, v6: IpPrefix },
    #[error("{version} threshold /{len} is out of range")]
    BadThreshold { version: IpVersion, len: u8 },
    #[error("tuner configured for {configured} but {requested} was requested")]
    WrongMode { configured: TunerMode, requested: TunerMode },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TunerMode {
    #[serde(rename = "ms")]
    MoreSpecific,
    #[serde(rename = "ls")]
    LessSpecific,
}

impl fmt::Display for TunerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TunerMode::MoreSpecific => "ms",
            TunerMode::LessSpecific => "ls",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TunerConfig {
    pub mode: TunerMode,
    pub v4_len_thresh: u8,
    pub v6_len_thresh: u8,
    pub ls_v4_levels_up: u8,
    pub ls_v6_levels_up: u8,
}

impl Default for TunerConfig {
    fn default() -> Self {
        TunerConfig::more_specific(28, 96)
    }
}

impl TunerConfig {
    pub fn more_specific(v4_len_thresh: u8, v6_len_thresh: u8) -> Self {
        TunerConfig {
            mode: TunerMode::MoreSpecific,
            v4_len_thresh,
            v6_len_thresh,
            ls_v4_levels_up: 1,
            ls_v6_levels_up: 4,
        }
    }

    pub fn less_specific(ls_v4_levels_up: u8, ls_v6_levels_up: u8) -> Self {
        TunerConfig { mode: TunerMode::LessSpecific, ls_v4_levels_up, ls_v6_levels_up, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), TunerError> {
        if self.v4_len_thresh > 32 {
            return Err(TunerError::BadThreshold { version: IpVersion::V4, len: self.v4_len_thresh });
        }
        if self.v6_len_thresh > 128 {
            return Err(TunerError::BadThreshold { version: IpVersion::V6, len: self.v6_len_thresh });
        }
        Ok(())
    }

    fn threshold(&self, version: IpVersion) -> u8 {
        match version {
            IpVersion::V4 => self.v4_len_thresh,
            IpVersion::V6 => self.v6_len_thresh,
        }
    }
}

/// Address-level tries of dual-stack domains, one leaf per address.
#[derive(Debug, Clone, Default)]
pub struct TuningTries {
    trie: PrefixTrie<Vec<DomainId>>,
}

pub fn build_tuning_tries(snapshot: &ResolutionSnapshot, ds: &DsDomainSet) -> TuningTries {
    let mut trie: PrefixTrie<Vec<DomainId>> = PrefixTrie::new();
    for &id in ds.ids() {
        for addr in snapshot.addrs(id).all() {
            trie.get_or_insert_with(IpPrefix::host(addr), Vec::new).push(id);
        }
    }
    TuningTries { trie }
}

impl TuningTries {
    pub fn trie(&self) -> &PrefixTrie<Vec<DomainId>> {
        &self.trie
    }

    pub fn is_empty(&self) -> bool {
        self.trie.is_empty()
    }

    /// Sorted domains with an address inside `prefix`.
    pub fn domains_under(&self, prefix: &IpPrefix) -> Vec<DomainId> {
        let mut out: Vec<DomainId> =
            self.trie.iter_within(prefix).into_iter().flat_map(|(_, d)| d.iter().copied()).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Nearest occupied sub-prefixes, clipped to `max_len`.
    pub fn children(&self, prefix: &IpPrefix, max_len: u8) -> Vec<IpPrefix> {
        self.trie.next_subprefixes(prefix, max_len).into_iter().map(|s| s.prefix).collect()
    }
}

/// A refined pair together with the input pair it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TunedPair {
    pub input: usize,
    pub pair: SiblingPair,
}

/// A branch prefix that overlapped no counterpart; its domains are kept
/// here so that no domain of an input pair disappears.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnmatchedBranch {
    pub input: usize,
    pub prefix: IpPrefix,
    pub domains: Vec<DomainId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TunedPairSet {
    /// Jaccard of each input pair as seen by the tries.
    pub input_scores: Vec<SimilarityScore>,
    pub pairs: Vec<TunedPair>,
    pub unmatched: Vec<UnmatchedBranch>,
}

impl TunedPairSet {
    pub fn outputs_of(&self, input: usize) -> impl Iterator<Item = &SiblingPair> + '_ {
        self.pairs.iter().filter(move |t| t.input == input).map(|t| &t.pair)
    }

    /// Distinct output pairs by `(v4, v6)`, sorted; the first input wins.
    pub fn unique_pairs(&self) -> Vec<SiblingPair> {
        let mut seen = BTreeSet::new();
        let mut out: Vec<SiblingPair> =
            self.pairs.iter().filter(|t| seen.insert(t.pair.key())).map(|t| t.pair.clone()).collect();
        out.sort_by_key(|p| p.key());
        out
    }

    pub fn jaccard_values(&self) -> Vec<f64> {
        self.unique_pairs().iter().map(|p| p.score.value()).collect()
    }

    pub fn perfect_fraction(&self) -> Option<f64> {
        let pairs = self.unique_pairs();
        (!pairs.is_empty()).then(|| pairs.iter().filter(|p| p.score.is_perfect()).count() as f64 / pairs.len() as f64)
    }
}

/// Per-run memo of prefix → domain set.
struct DomainCache<'t> {
    tries: &'t TuningTries,
    memo: HashMap<IpPrefix, Rc<Vec<DomainId>>>,
}

impl<'t> DomainCache<'t> {
    fn new(tries: &'t TuningTries) -> Self {
        DomainCache { tries, memo: HashMap::new() }
    }

    fn get(&mut self, prefix: &IpPrefix) -> Rc<Vec<DomainId>> {
        self.memo.entry(*prefix).or_insert_with(|| Rc::new(self.tries.domains_under(prefix))).clone()
    }

    fn jaccard(&mut self, v4: &IpPrefix, v6: &IpPrefix) -> Option<SimilarityScore> {
        let a = self.get(v4);
        let b = self.get(v6);
        similarity(&a, &b, Metric::Jaccard).ok()
    }
}

/// Orders candidate moves: higher Jaccard, then more shared domains, then
/// the lexicographically smaller pair.
fn better(a: &(IpPrefix, IpPrefix, SimilarityScore), b: &(IpPrefix, IpPrefix, SimilarityScore)) -> bool {
    match a.2.cmp_value(&b.2) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => match a.2.intersection.cmp(&b.2.intersection) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => (a.0, a.1) < (b.0, b.1),
        },
    }
}

/// LS ordering: higher Jaccard, then the smaller widening, then [`better`].
fn widens_less(a: &(IpPrefix, IpPrefix, SimilarityScore), b: &(IpPrefix, IpPrefix, SimilarityScore)) -> bool {
    let span = |m: &(IpPrefix, IpPrefix, SimilarityScore)| m.0.len() as u16 + m.1.len() as u16;
    match a.2.cmp_value(&b.2) {
        Ordering::Equal => match span(a).cmp(&span(b)) {
            Ordering::Equal => better(a, b),
            ord => ord == Ordering::Greater,
        },
        ord => ord == Ordering::Greater,
    }
}

fn tuned_pair(
    input: &SiblingPair,
    v4: IpPrefix,
    v6: IpPrefix,
    score: SimilarityScore,
    provenance: Provenance,
) -> SiblingPair {
    SiblingPair { v4, v6, score, provenance, origin: input.origin, shared_domains: None }
}

struct MsOutcome {
    input_score: SimilarityScore,
    pairs: Vec<SiblingPair>,
    unmatched: Vec<(IpPrefix, Vec<DomainId>)>,
}

fn tune_ms_one(input: &SiblingPair, tries: &TuningTries, cfg: &TunerConfig) -> Result<MsOutcome, TunerError> {
    let mut cache = DomainCache::new(tries);
    let inconsistent = || TunerError::InconsistentInput { v4: input.v4, v6: input.v6 };
    let input_score = cache.jaccard(&input.v4, &input.v6).filter(|s| !s.is_zero()).ok_or_else(inconsistent)?;

    let mut queue: VecDeque<(IpPrefix, IpPrefix, Provenance)> = VecDeque::new();
    let mut queued: BTreeSet<(IpPrefix, IpPrefix)> = BTreeSet::new();
    queue.push_back((input.v4, input.v6, Provenance::Tuned));
    queued.insert((input.v4, input.v6));

    let mut finals: Vec<SiblingPair> = Vec::new();
    let mut emitted: BTreeSet<(IpPrefix, IpPrefix)> = BTreeSet::new();
    let mut unmatched: Vec<(IpPrefix, Vec<DomainId>)> = Vec::new();
    let mut unmatched_seen: BTreeSet<IpPrefix> = BTreeSet::new();

    while let Some((mut c4, mut c6, provenance)) = queue.pop_front() {
        let mut current = cache.jaccard(&c4, &c6).expect("queued pairs hold domains");
        loop {
            let kids4 = tries.children(&c4, cfg.threshold(IpVersion::V4));
            let kids6 = tries.children(&c6, cfg.threshold(IpVersion::V6));
            if kids4.is_empty() && kids6.is_empty() {
                break;
            }
            let opts4 = if kids4.is_empty() { vec![c4] } else { kids4.clone() };
            let opts6 = if kids6.is_empty() { vec![c6] } else { kids6.clone() };

            let mut best: Option<(IpPrefix, IpPrefix, SimilarityScore)> = None;
            for o4 in &opts4 {
                for o6 in &opts6 {
                    let Some(score) = cache.jaccard(o4, o6).filter(|s| !s.is_zero()) else {
                        continue;
                    };
                    let cand = (*o4, *o6, score);
                    if best.as_ref().is_none_or(|b| better(&cand, b)) {
                        best = Some(cand);
                    }
                }
            }
            let Some((b4, b6, score)) = best else { break };
            if score.cmp_value(&current) == Ordering::Less {
                break;
            }

            let left4: Vec<IpPrefix> = kids4.into_iter().filter(|k| *k != b4).collect();
            let left6: Vec<IpPrefix> = kids6.into_iter().filter(|k| *k != b6).collect();
            if !left4.is_empty() || !left6.is_empty() {
                let matched = pair_branches(&mut cache, &left4, &left6, c4, c6);
                for (x4, x6) in &matched {
                    if queued.insert((*x4, *x6)) {
                        queue.push_back((*x4, *x6, Provenance::Branch));
                    }
                }
                for b in left4.iter().chain(&left6) {
                    let used = matched.iter().any(|(x4, x6)| x4 == b || x6 == b);
                    if !used && unmatched_seen.insert(*b) {
                        unmatched.push((*b, cache.get(b).to_vec()));
                    }
                }
            }
            c4 = b4;
            c6 = b6;
            current = score;
        }
        if emitted.insert((c4, c6)) {
            finals.push(tuned_pair(input, c4, c6, current, provenance));
        }
    }

    // A branch reported unmatched early may still be covered by a pair
    // reached later through another route; keep only the truly orphaned.
    unmatched.retain(|(b, _)| !finals.iter().any(|p| p.v4.covers(b) || p.v6.covers(b)));
    finals.sort_by_key(|p| p.key());
    unmatched.sort_by_key(|(b, _)| *b);
    Ok(MsOutcome { input_score, pairs: finals, unmatched })
}

/// Best-match pairing of leftover branches. Each leftover IPv4 branch is
/// scored against the leftover IPv6 branches and the pre-move IPv6 prefix,
/// and symmetrically; every branch keeps its best-scoring counterpart(s).
fn pair_branches(
    cache: &mut DomainCache<'_>,
    left4: &[IpPrefix],
    left6: &[IpPrefix],
    parent4: IpPrefix,
    parent6: IpPrefix,
) -> Vec<(IpPrefix, IpPrefix)> {
    let mut chosen: BTreeSet<(IpPrefix, IpPrefix)> = BTreeSet::new();
    let mut pick = |cache: &mut DomainCache<'_>, pairs: Vec<(IpPrefix, IpPrefix)>| {
        let scored: Vec<_> = pairs
            .into_iter()
            .filter_map(|(a, b)| cache.jaccard(&a, &b).filter(|s| !s.is_zero()).map(|s| (a, b, s)))
            .collect();
        let Some(top) = scored.iter().map(|s| s.2).max_by(|a, b| a.cmp_value(b)) else {
            return;
        };
        for (a, b, s) in scored {
            if s.cmp_value(&top) == Ordering::Equal {
                chosen.insert((a, b));
            }
        }
    };
    for b4 in left4 {
        let partners = left6.iter().copied().chain(std::iter::once(parent6));
        pick(cache, partners.map(|p6| (*b4, p6)).collect());
    }
    for b6 in left6 {
        let partners = left4.iter().copied().chain(std::iter::once(parent4));
        pick(cache, partners.map(|p4| (p4, *b6)).collect());
    }
    chosen.into_iter().collect()
}

fn collect(results: Vec<MsOutcome>) -> TunedPairSet {
    let mut set = TunedPairSet::default();
    for (input, out) in results.into_iter().enumerate() {
        set.input_scores.push(out.input_score);
        set.pairs.extend(out.pairs.into_iter().map(|pair| TunedPair { input, pair }));
        set.unmatched.extend(out.unmatched.into_iter().map(|(prefix, domains)| UnmatchedBranch {
            input,
            prefix,
            domains,
        }));
    }
    set
}

/// More-specific refinement of every input pair.
pub fn sp_tuner_ms(pairs: &[SiblingPair], tries: &TuningTries, cfg: &TunerConfig) -> Result<TunedPairSet, TunerError> {
    if cfg.mode != TunerMode::MoreSpecific {
        return Err(TunerError::WrongMode { configured: cfg.mode, requested: TunerMode::MoreSpecific });
    }
    cfg.validate()?;
    let results: Result<Vec<MsOutcome>, TunerError> = pairs.par_iter().map(|p| tune_ms_one(p, tries, cfg)).collect();
    Ok(collect(results?))
}

/// Origin AS of the addresses inside `prefix`: the covering route plus every
/// route announced inside it. `None` when they disagree or nothing covers it.
fn uniform_origin(routes: &RouteTable, prefix: &IpPrefix) -> Option<u32> {
    let mut origins: BTreeSet<u32> = routes.routes_within(prefix).iter().map(|r| r.origin_asn).collect();
    if let Some(cover) = routes.covering_route(prefix) {
        origins.insert(cover.origin_asn);
    }
    (origins.len() == 1).then(|| *origins.iter().next().unwrap())
}

fn tune_ls_one(
    input: &SiblingPair,
    tries: &TuningTries,
    routes: &RouteTable,
    cfg: &TunerConfig,
) -> Result<MsOutcome, TunerError> {
    let mut cache = DomainCache::new(tries);
    let input_score = cache
        .jaccard(&input.v4, &input.v6)
        .filter(|s| !s.is_zero())
        .ok_or(TunerError::InconsistentInput { v4: input.v4, v6: input.v6 })?;
    let asn4 = input.origin.map(|o| o.0).or_else(|| routes.covering_route(&input.v4).map(|r| r.origin_asn));
    let asn6 = input.origin.map(|o| o.1).or_else(|| routes.covering_route(&input.v6).map(|r| r.origin_asn));
    let same_origin = |p: &IpPrefix, asn: Option<u32>| asn.is_some() && uniform_origin(routes, p) == asn;

    let (mut c4, mut c6, mut current) = (input.v4, input.v6, input_score);
    let (mut up4, mut up6) = (0u8, 0u8);
    loop {
        let m4 = (up4 < cfg.ls_v4_levels_up && c4.len() > 0)
            .then(|| c4.supernet(1).unwrap())
            .filter(|p| same_origin(p, asn4));
        let m6 = (up6 < cfg.ls_v6_levels_up && c6.len() > 0)
            .then(|| c6.supernet(1).unwrap())
            .filter(|p| same_origin(p, asn6));
        let mut moves = Vec::new();
        if let Some(m4) = m4 {
            moves.push((m4, c6));
        }
        if let Some(m6) = m6 {
            moves.push((c4, m6));
        }
        if let (Some(m4), Some(m6)) = (m4, m6) {
            moves.push((m4, m6));
        }
        let mut best: Option<(IpPrefix, IpPrefix, SimilarityScore)> = None;
        for (o4, o6) in moves {
            let Some(score) = cache.jaccard(&o4, &o6) else { continue };
            if score.cmp_value(&current) != Ordering::Greater {
                continue;
            }
            let cand = (o4, o6, score);
            if best.as_ref().is_none_or(|b| widens_less(&cand, b)) {
                best = Some(cand);
            }
        }
        let Some((b4, b6, score)) = best else { break };
        if b4 != c4 {
            up4 += 1;
        }
        if b6 != c6 {
            up6 += 1;
        }
        (c4, c6, current) = (b4, b6, score);
    }
    Ok(MsOutcome {
        input_score,
        pairs: vec![tuned_pair(input, c4, c6, current, Provenance::Tuned)],
        unmatched: Vec::new(),
    })
}

/// Less-specific refinement of every input pair.
pub fn sp_tuner_ls(
    pairs: &[SiblingPair],
    tries: &TuningTries,
    routes: &RouteTable,
    cfg: &TunerConfig,
) -> Result<TunedPairSet, TunerError> {
    if cfg.mode != TunerMode::LessSpecific {
        return Err(TunerError::WrongMode { configured: cfg.mode, requested: TunerMode::LessSpecific });
    }
    let results: Result<Vec<MsOutcome>, TunerError> =
        pairs.par_iter().map(|p| tune_ls_one(p, tries, routes, cfg)).collect();
    Ok(collect(results?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepCell {
    pub v4_thresh: u8,
    pub v6_thresh: u8,
    pub mean_jaccard: f64,
    pub std_jaccard: f64,
    pub pair_count: usize,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs MS for every threshold combination, row-major by IPv4 threshold.
pub fn threshold_sweep(
    pairs: &[SiblingPair],
    tries: &TuningTries,
    v4_range: &[u8],
    v6_range: &[u8],
) -> Result<Vec<SweepCell>, TunerError> {
    let grid: Vec<(u8, u8)> = v4_range.iter().flat_map(|&a| v6_range.iter().map(move |&b| (a, b))).collect();
    grid.par_iter()
        .map(|&(t4, t6)| {
            let set = sp_tuner_ms(pairs, tries, &TunerConfig::more_specific(t4, t6))?;
            let values = set.jaccard_values();
            let (mean, std) = mean_std(&values);
            Ok(SweepCell {
                v4_thresh: t4,
                v6_thresh: t6,
                mean_jaccard: mean,
                std_jaccard: std,
                pair_count: values.len(),
            })
        })
        .collect()
}
