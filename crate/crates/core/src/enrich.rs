//! Annotation of sibling pairs: organization relation of the origin ASes,
//! RPKI route origin validation, hypergiant/CDN membership and ASdb
//! business categories.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read};

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::detect::SiblingPair;
use crate::ingest::{IngestError, RowIssue};
use crate::prefix::IpPrefix;
use crate::trie::PrefixTrie;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RoaError {
    #[error("max length {max_length} is outside /{len}../{bits} for {prefix}")]
    MaxLength { prefix: IpPrefix, len: u8, max_length: u8, bits: u8 },
}

/// Rows read and rejected while loading a side table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TableStats {
    pub rows: u64,
    pub malformed: u64,
    pub issues: Vec<RowIssue>,
}

impl TableStats {
    fn reject(&mut self, line: u64, message: String) {
        self.malformed += 1;
        if self.issues.len() < 1000 {
            self.issues.push(RowIssue { line, message });
        }
    }
}

pub fn normalize_org(name: &str) -> String {
    name.trim().to_lowercase()
}

fn parse_asn(text: &str) -> Option<u32> {
    let t = text.trim();
    let t = t.strip_prefix("AS").or_else(|| t.strip_prefix("as")).unwrap_or(t);
    t.parse().ok()
}

/// Reads a headed CSV, handing each data row with its line number to `row`.
fn read_table<R: Read>(
    source: R,
    header: &[&str],
    mut row: impl FnMut(&csv::StringRecord, &mut TableStats, u64),
) -> Result<TableStats, IngestError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    let found: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let empty = found.is_empty() || (found.len() == 1 && found[0].is_empty());
    if !empty && found != header {
        return Err(IngestError::Header { expected: header.iter().map(|s| s.to_string()).collect(), found });
    }
    let mut stats = TableStats::default();
    let mut rec = csv::StringRecord::new();
    while reader.read_record(&mut rec)? {
        stats.rows += 1;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != header.len() {
            stats.reject(line, format!("expected {} fields, found {}", header.len(), rec.len()));
            continue;
        }
        row(&rec, &mut stats, line);
    }
    Ok(stats)
}

/// ASN → organization name, with the inverse sibling-AS view.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AsOrgTable {
    asn_org: BTreeMap<u32, String>,
    org_asns: BTreeMap<String, BTreeSet<u32>>,
}

impl AsOrgTable {
    pub fn insert(&mut self, asn: u32, org: &str) {
        let org = normalize_org(org);
        if let Some(old) = self.asn_org.insert(asn, org.clone()) {
            if let Some(set) = self.org_asns.get_mut(&old) {
                set.remove(&asn);
                if set.is_empty() {
                    self.org_asns.remove(&old);
                }
            }
        }
        self.org_asns.entry(org).or_default().insert(asn);
    }

    pub fn org_of(&self, asn: u32) -> Option<&str> {
        self.asn_org.get(&asn).map(|s| s.as_str())
    }

    /// ASes registered to the same organization (including `asn`).
    pub fn siblings(&self, asn: u32) -> Option<&BTreeSet<u32>> {
        self.org_of(asn).and_then(|o| self.org_asns.get(o))
    }

    pub fn len(&self) -> usize {
        self.asn_org.len()
    }

    pub fn is_empty(&self) -> bool {
        self.asn_org.is_empty()
    }

    /// Loads `asn,org_name` rows; later rows override earlier ones.
    pub fn load<R: Read>(source: R) -> Result<(Self, TableStats), IngestError> {
        let mut table = AsOrgTable::default();
        let stats =
            read_table(source, &["asn", "org_name"], |rec, stats, line| match (parse_asn(&rec[0]), rec[1].trim()) {
                (Some(asn), org) if !org.is_empty() => table.insert(asn, org),
                _ => stats.reject(line, format!("bad as-org row {:?}", rec.as_slice())),
            })?;
        Ok((table, stats))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrgRelation {
    SameOrg,
    DifferentOrg,
    Unknown,
}

impl fmt::Display for OrgRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OrgRelation::SameOrg => "same_org",
            OrgRelation::DifferentOrg => "different_org",
            OrgRelation::Unknown => "unknown",
        })
    }
}

pub fn classify_org_relation(pair: &SiblingPair, table: &AsOrgTable) -> OrgRelation {
    let Some((a4, a6)) = pair.origin else {
        return OrgRelation::Unknown;
    };
    if a4 == a6 {
        return OrgRelation::SameOrg;
    }
    match (table.org_of(a4), table.org_of(a6)) {
        (Some(o4), Some(o6)) if o4 == o6 => OrgRelation::SameOrg,
        (Some(_), Some(_)) => OrgRelation::DifferentOrg,
        _ => OrgRelation::Unknown,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Roa {
    pub prefix: IpPrefix,
    pub max_length: u8,
    pub asn: u32,
    pub trust_anchor: Option<String>,
}

impl Roa {
    pub fn new(prefix: IpPrefix, max_length: u8, asn: u32, trust_anchor: Option<String>) -> Result<Self, RoaError> {
        let bits = prefix.version().bit_len();
        if max_length < prefix.len() || max_length > bits {
            return Err(RoaError::MaxLength { prefix, len: prefix.len(), max_length, bits });
        }
        Ok(Roa { prefix, max_length, asn, trust_anchor })
    }
}

/// ROAs indexed by prefix for covering lookups.
#[derive(Debug, Clone, Default)]
pub struct RoaSet {
    trie: PrefixTrie<Vec<Roa>>,
    count: usize,
}

impl RoaSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, roa: Roa) {
        self.trie.get_or_insert_with(roa.prefix, Vec::new).push(roa);
        self.count += 1;
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// ROAs whose prefix covers `prefix`.
    pub fn covering(&self, prefix: &IpPrefix) -> impl Iterator<Item = &Roa> + '_ {
        self.trie.covering(prefix).into_iter().flat_map(|(_, v)| v.iter())
    }

    /// Loads `prefix,max_length,asn,trust_anchor` rows.
    pub fn load<R: Read>(source: R) -> Result<(Self, TableStats), IngestError> {
        let mut set = RoaSet::new();
        let stats = read_table(source, &["prefix", "max_length", "asn", "trust_anchor"], |rec, stats, line| {
            let roa = IpPrefix::parse(&rec[0], false).map_err(|e| e.to_string()).and_then(|prefix| {
                let max_length: u8 = rec[1].trim().parse().map_err(|_| format!("bad max_length {:?}", &rec[1]))?;
                let asn = parse_asn(&rec[2]).ok_or_else(|| format!("bad asn {:?}", &rec[2]))?;
                let ta = Some(rec[3].trim().to_string()).filter(|s| !s.is_empty());
                Roa::new(prefix, max_length, asn, ta).map_err(|e| e.to_string())
            });
            match roa {
                Ok(roa) => set.insert(roa),
                Err(msg) => stats.reject(line, msg),
            }
        })?;
        Ok((set, stats))
    }
}

impl FromIterator<Roa> for RoaSet {
    fn from_iter<I: IntoIterator<Item = Roa>>(iter: I) -> Self {
        let mut set = RoaSet::new();
        for roa in iter {
            set.insert(roa);
        }
        set
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RovStatus {
    Valid,
    Invalid,
    NotFound,
}

impl fmt::Display for RovStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RovStatus::Valid => "valid",
            RovStatus::Invalid => "invalid",
            RovStatus::NotFound => "not_found",
        })
    }
}

/// Route origin validation of one announcement.
///
/// Not found without a covering ROA; valid when some covering ROA names the
/// origin and allows the announced length; invalid otherwise. A ROA for
/// AS0 never validates anything.
pub fn validate_rov(prefix: &IpPrefix, origin: u32, roas: &RoaSet) -> RovStatus {
    let mut covered = false;
    for roa in roas.covering(prefix) {
        covered = true;
        if roa.asn != 0 && roa.asn == origin && prefix.len() <= roa.max_length {
            return RovStatus::Valid;
        }
    }
    if covered {
        RovStatus::Invalid
    } else {
        RovStatus::NotFound
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairRovCategory {
    BothValid,
    ValidNotFound,
    ValidInvalid,
    InvalidNotFound,
    BothInvalid,
    BothNotFound,
}

impl PairRovCategory {
    pub const ALL: [PairRovCategory; 6] = [
        PairRovCategory::BothValid,
        PairRovCategory::ValidNotFound,
        PairRovCategory::ValidInvalid,
        PairRovCategory::InvalidNotFound,
        PairRovCategory::BothInvalid,
        PairRovCategory::BothNotFound,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PairRovCategory::BothValid => "both_valid",
            PairRovCategory::ValidNotFound => "valid_not_found",
            PairRovCategory::ValidInvalid => "valid_invalid",
            PairRovCategory::InvalidNotFound => "invalid_not_found",
            PairRovCategory::BothInvalid => "both_invalid",
            PairRovCategory::BothNotFound => "both_not_found",
        }
    }
}

impl fmt::Display for PairRovCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn pair_rov_category(a: RovStatus, b: RovStatus) -> PairRovCategory {
    use RovStatus::*;
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    match (lo, hi) {
        (Valid, Valid) => PairRovCategory::BothValid,
        (Valid, NotFound) => PairRovCategory::ValidNotFound,
        (Valid, Invalid) => PairRovCategory::ValidInvalid,
        (Invalid, NotFound) => PairRovCategory::InvalidNotFound,
        (Invalid, Invalid) => PairRovCategory::BothInvalid,
        (NotFound, NotFound) => PairRovCategory::BothNotFound,
        _ => unreachable!("statuses are ordered"),
    }
}

/// Hypergiant and CDN organization lists plus ASdb categories.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrgCatalog {
    pub hypergiants: BTreeSet<String>,
    pub cdns: BTreeSet<String>,
    /// Organizations with fewer pairs fall into "other-HG-CDN".
    pub min_pair_count: usize,
    pub asdb: BTreeMap<u32, BTreeSet<String>>,
}

impl Default for OrgCatalog {
    fn default() -> Self {
        OrgCatalog { hypergiants: BTreeSet::new(), cdns: BTreeSet::new(), min_pair_count: 50, asdb: BTreeMap::new() }
    }
}

/// Reads a newline-delimited name list; blank lines and `#` comments skipped.
pub fn load_name_list<R: Read>(source: R) -> Result<BTreeSet<String>, IngestError> {
    let mut out = BTreeSet::new();
    for line in BufReader::new(source).lines() {
        let line = line?;
        let name = line.trim();
        if name.is_empty() || name.starts_with('#') {
            continue;
        }
        out.insert(normalize_org(name));
    }
    Ok(out)
}

/// Reads `asn,category` rows; repeated ASNs accumulate categories.
pub fn load_asdb<R: Read>(source: R) -> Result<(BTreeMap<u32, BTreeSet<String>>, TableStats), IngestError> {
    let mut map: BTreeMap<u32, BTreeSet<String>> = BTreeMap::new();
    let stats =
        read_table(source, &["asn", "category"], |rec, stats, line| match (parse_asn(&rec[0]), rec[1].trim()) {
            (Some(asn), cat) if !cat.is_empty() => {
                map.entry(asn).or_default().insert(cat.to_string());
            }
            _ => stats.reject(line, format!("bad asdb row {:?}", rec.as_slice())),
        })?;
    Ok((map, stats))
}

impl OrgCatalog {
    pub fn is_hg_or_cdn(&self, org: &str) -> bool {
        self.hypergiants.contains(org) || self.cdns.contains(org)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HgCdnBucket {
    Org(String),
    OtherHgCdn,
    NonCdnHg,
    /// Two different organizations, at least one of them HG/CDN.
    MixedOrg,
}

impl fmt::Display for HgCdnBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HgCdnBucket::Org(name) => f.write_str(name),
            HgCdnBucket::OtherHgCdn => f.write_str("other-HG-CDN"),
            HgCdnBucket::NonCdnHg => f.write_str("non-CDN-HG"),
            HgCdnBucket::MixedOrg => f.write_str("excluded-mixed-org"),
        }
    }
}

impl Serialize for HgCdnBucket {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

/// HG/CDN organization shared by both origins, or the reason there is none.
fn hg_cdn_org(pair: &SiblingPair, table: &AsOrgTable, cat: &OrgCatalog) -> Result<String, HgCdnBucket> {
    let Some((a4, a6)) = pair.origin else {
        return Err(HgCdnBucket::NonCdnHg);
    };
    let o4 = table.org_of(a4);
    let o6 = table.org_of(a6);
    let listed = |o: Option<&str>| o.is_some_and(|o| cat.is_hg_or_cdn(o));
    match classify_org_relation(pair, table) {
        OrgRelation::SameOrg => match o4.or(o6) {
            Some(org) if cat.is_hg_or_cdn(org) => Ok(org.to_string()),
            _ => Err(HgCdnBucket::NonCdnHg),
        },
        OrgRelation::DifferentOrg | OrgRelation::Unknown => {
            if listed(o4) || listed(o6) {
                Err(HgCdnBucket::MixedOrg)
            } else {
                Err(HgCdnBucket::NonCdnHg)
            }
        }
    }
}

/// Pairs per HG/CDN organization, counting same-organization pairs only.
pub fn hg_cdn_pair_counts(pairs: &[SiblingPair], table: &AsOrgTable, cat: &OrgCatalog) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for p in pairs {
        if let Ok(org) = hg_cdn_org(p, table, cat) {
            *counts.entry(org).or_default() += 1;
        }
    }
    counts
}

pub fn classify_hg_cdn(
    pair: &SiblingPair,
    table: &AsOrgTable,
    cat: &OrgCatalog,
    counts: &BTreeMap<String, usize>,
) -> HgCdnBucket {
    match hg_cdn_org(pair, table, cat) {
        Ok(org) if counts.get(&org).copied().unwrap_or(0) >= cat.min_pair_count => HgCdnBucket::Org(org),
        Ok(_) => HgCdnBucket::OtherHgCdn,
        Err(bucket) => bucket,
    }
}

/// Buckets for a whole pair set, in input order.
pub fn assign_hg_cdn_buckets(pairs: &[SiblingPair], table: &AsOrgTable, cat: &OrgCatalog) -> Vec<HgCdnBucket> {
    let counts = hg_cdn_pair_counts(pairs, table, cat);
    pairs.iter().map(|p| classify_hg_cdn(p, table, cat, &counts)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BusinessType {
    Pair { v4: String, v6: String },
    MultiCategory,
    Unclassified,
    SameAsn,
    NoOrigin,
}

impl BusinessType {
    pub fn filter_reason(&self) -> Option<&'static str> {
        match self {
            BusinessType::Pair { .. } => None,
            BusinessType::MultiCategory => Some("multi_category"),
            BusinessType::Unclassified => Some("unclassified"),
            BusinessType::SameAsn => Some("same_asn"),
            BusinessType::NoOrigin => Some("no_origin"),
        }
    }
}

/// Business categories of both origin ASes, if each has exactly one.
pub fn business_type_pair(pair: &SiblingPair, cat: &OrgCatalog, include_same_asn: bool) -> BusinessType {
    let Some((a4, a6)) = pair.origin else {
        return BusinessType::NoOrigin;
    };
    if a4 == a6 && !include_same_asn {
        return BusinessType::SameAsn;
    }
    let single = |asn: u32| -> Result<&String, BusinessType> {
        match cat.asdb.get(&asn) {
            None => Err(BusinessType::Unclassified),
            Some(c) if c.len() == 1 => Ok(c.iter().next().unwrap()),
            Some(_) => Err(BusinessType::MultiCategory),
        }
    };
    match (single(a4), single(a6)) {
        (Ok(c4), Ok(c6)) => BusinessType::Pair { v4: c4.clone(), v6: c6.clone() },
        (Err(BusinessType::MultiCategory), _) | (_, Err(BusinessType::MultiCategory)) => BusinessType::MultiCategory,
        _ => BusinessType::Unclassified,
    }
}
