//! Loading DNS resolution snapshots and routing tables from flat files.
//!
//! Snapshot rows look like `date,query_name,rr_type,response_name,address`.
//! Records are grouped by `response_name`: CNAME chains are expected to be
//! flattened upstream, so the response name is the name that actually holds
//! the address. Routing tables are `prefix,origin_asn` rows. Either file may
//! be gzip-compressed; compression is detected from the magic bytes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read};
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::path::Path;

use chrono::NaiveDate;
use flate2::read::GzDecoder;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::prefix::{IpPrefix, IpVersion};
use crate::special::{FilterPolicy, SpecialKind};
use crate::trie::PrefixTrie;

pub const SNAPSHOT_HEADER: [&str; 5] = ["date", "query_name", "rr_type", "response_name", "address"];
pub const ROUTES_HEADER: [&str; 2] = ["prefix", "origin_asn"];

/// Cap on per-row diagnostics kept in memory; counters are always exact.
const MAX_ISSUES: usize = 1000;

/// Index of a domain within a [`ResolutionSnapshot`].
pub type DomainId = u32;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("unexpected header {found:?}, expected {expected:?}")]
    Header { expected: Vec<String>, found: Vec<String> },
    #[error("cannot merge snapshots dated {0} and {1}")]
    DateConflict(NaiveDate, NaiveDate),
}

/// Opens a file, transparently decompressing single-stream gzip.
pub fn open_input(path: &Path) -> io::Result<Box<dyn Read + Send>> {
    let file = File::open(path)?;
    maybe_gunzip(file)
}

pub fn maybe_gunzip<R: Read + Send + 'static>(inner: R) -> io::Result<Box<dyn Read + Send>> {
    let mut reader = BufReader::with_capacity(1 << 16, inner);
    let head = reader.fill_buf()?;
    if head.len() >= 2 && head[0] == 0x1f && head[1] == 0x8b {
        Ok(Box::new(BufReader::new(GzDecoder::new(reader))))
    } else {
        Ok(Box::new(reader))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DropReason {
    Special(SpecialKind),
    Malformed,
    Duplicate,
    TypeMismatch,
    DateMismatch,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DropReason::Special(kind) => kind.fmt(f),
            DropReason::Malformed => f.write_str("malformed"),
            DropReason::Duplicate => f.write_str("duplicate"),
            DropReason::TypeMismatch => f.write_str("type_mismatch"),
            DropReason::DateMismatch => f.write_str("date_mismatch"),
        }
    }
}

impl Serialize for DropReason {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowIssue {
    pub line: u64,
    pub message: String,
}

impl fmt::Display for RowIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

fn push_issue(issues: &mut Vec<RowIssue>, line: u64, message: String) {
    if issues.len() < MAX_ISSUES {
        issues.push(RowIssue { line, message });
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadStats {
    pub rows: u64,
    pub stored: u64,
    pub dropped: BTreeMap<DropReason, u64>,
    pub issues: Vec<RowIssue>,
}

impl LoadStats {
    pub fn dropped_total(&self) -> u64 {
        self.dropped.values().sum()
    }

    pub fn malformed(&self) -> u64 {
        self.dropped.get(&DropReason::Malformed).copied().unwrap_or(0)
    }

    fn drop(&mut self, reason: DropReason) {
        *self.dropped.entry(reason).or_default() += 1;
    }
}

/// One parsed snapshot row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolutionRecord {
    pub snapshot_date: NaiveDate,
    pub query_name: String,
    pub response_name: String,
    pub address: IpAddr,
    pub version: IpVersion,
}

/// Lowercases a DNS name and strips the trailing root dot.
pub fn normalize_name(name: &str) -> Option<String> {
    let name = name.trim();
    let name = name.strip_suffix('.').unwrap_or(name);
    if name.is_empty() || name.contains(|c: char| c.is_whitespace() || c == ',') {
        return None;
    }
    Some(name.to_ascii_lowercase())
}

fn parse_row(fields: &csv::StringRecord) -> Result<ResolutionRecord, (DropReason, String)> {
    let malformed = |msg: String| (DropReason::Malformed, msg);
    if fields.len() != SNAPSHOT_HEADER.len() {
        return Err(malformed(format!("expected 5 fields, found {}", fields.len())));
    }
    let date = NaiveDate::parse_from_str(fields[0].trim(), "%Y-%m-%d")
        .map_err(|_| malformed(format!("bad date {:?}", &fields[0])))?;
    let query_name = normalize_name(&fields[1]).ok_or_else(|| malformed(format!("bad query name {:?}", &fields[1])))?;
    let response_name =
        normalize_name(&fields[3]).ok_or_else(|| malformed(format!("bad response name {:?}", &fields[3])))?;
    let version = match fields[2].trim() {
        t if t.eq_ignore_ascii_case("A") => IpVersion::V4,
        t if t.eq_ignore_ascii_case("AAAA") => IpVersion::V6,
        other => return Err(malformed(format!("unknown rr_type {other:?}"))),
    };
    let address: IpAddr = fields[4].trim().parse().map_err(|_| malformed(format!("bad address {:?}", &fields[4])))?;
    if IpVersion::of(&address) != version {
        return Err((DropReason::TypeMismatch, format!("{} record holds {}", &fields[2], address)));
    }
    Ok(ResolutionRecord { snapshot_date: date, query_name, response_name, address, version })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DomainAddrs {
    pub v4: BTreeSet<Ipv4Addr>,
    pub v6: BTreeSet<Ipv6Addr>,
}

impl DomainAddrs {
    pub fn is_dual_stack(&self) -> bool {
        !self.v4.is_empty() && !self.v6.is_empty()
    }

    /// All addresses, IPv4 first.
    pub fn all(&self) -> impl Iterator<Item = IpAddr> + '_ {
        self.v4.iter().map(|a| IpAddr::V4(*a)).chain(self.v6.iter().map(|a| IpAddr::V6(*a)))
    }

    pub fn of(&self, version: IpVersion) -> Vec<IpAddr> {
        match version {
            IpVersion::V4 => self.v4.iter().map(|a| IpAddr::V4(*a)).collect(),
            IpVersion::V6 => self.v6.iter().map(|a| IpAddr::V6(*a)).collect(),
        }
    }

    fn insert(&mut self, addr: IpAddr) -> bool {
        match addr {
            IpAddr::V4(a) => self.v4.insert(a),
            IpAddr::V6(a) => self.v6.insert(a),
        }
    }
}

/// One dated set of response-name → address mappings.
///
/// Domains are stored sorted by name, and a [`DomainId`] is the position in
/// that order, so ids are stable for a given input.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResolutionSnapshot {
    pub date: Option<NaiveDate>,
    names: Vec<String>,
    addrs: Vec<DomainAddrs>,
    pub stats: LoadStats,
}

impl ResolutionSnapshot {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: DomainId) -> &str {
        &self.names[id as usize]
    }

    pub fn addrs(&self, id: DomainId) -> &DomainAddrs {
        &self.addrs[id as usize]
    }

    pub fn id_of(&self, name: &str) -> Option<DomainId> {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).ok().map(|i| i as DomainId)
    }

    pub fn domains(&self) -> impl Iterator<Item = (DomainId, &str, &DomainAddrs)> + '_ {
        self.names.iter().zip(&self.addrs).enumerate().map(|(i, (n, a))| (i as DomainId, n.as_str(), a))
    }

    /// Builds a snapshot directly from records, bypassing CSV parsing.
    pub fn from_records<I>(records: I, policy: &FilterPolicy) -> Self
    where
        I: IntoIterator<Item = ResolutionRecord>,
    {
        let mut builder = SnapshotBuilder::new(*policy);
        for (i, rec) in records.into_iter().enumerate() {
            builder.add(Ok(rec), i as u64 + 2);
        }
        builder.finish()
    }

    /// Merges shards loaded separately. All shards must share one date.
    pub fn merge(parts: Vec<ResolutionSnapshot>) -> Result<Self, IngestError> {
        let mut date: Option<NaiveDate> = None;
        let mut stats = LoadStats::default();
        let mut map: BTreeMap<String, DomainAddrs> = BTreeMap::new();
        for part in parts {
            match (date, part.date) {
                (Some(a), Some(b)) if a != b => return Err(IngestError::DateConflict(a, b)),
                (None, d) => date = d,
                _ => {}
            }
            stats.rows += part.stats.rows;
            for (reason, n) in part.stats.dropped {
                *stats.dropped.entry(reason).or_default() += n;
            }
            stats.issues.extend(part.stats.issues);
            for (name, addrs) in part.names.into_iter().zip(part.addrs) {
                let entry = map.entry(name).or_default();
                for addr in addrs.all() {
                    if entry.insert(addr) {
                        stats.stored += 1;
                    } else {
                        stats.drop(DropReason::Duplicate);
                    }
                }
            }
        }
        stats.issues.truncate(MAX_ISSUES);
        let (names, addrs) = map.into_iter().unzip();
        Ok(ResolutionSnapshot { date, names, addrs, stats })
    }
}

struct SnapshotBuilder {
    policy: FilterPolicy,
    date: Option<NaiveDate>,
    map: HashMap<String, DomainAddrs>,
    stats: LoadStats,
}

impl SnapshotBuilder {
    fn new(policy: FilterPolicy) -> Self {
        SnapshotBuilder { policy, date: None, map: HashMap::new(), stats: LoadStats::default() }
    }

    fn add(&mut self, row: Result<ResolutionRecord, (DropReason, String)>, line: u64) {
        self.stats.rows += 1;
        let rec = match row {
            Ok(rec) => rec,
            Err((reason, msg)) => {
                self.stats.drop(reason);
                push_issue(&mut self.stats.issues, line, msg);
                return;
            }
        };
        match self.date {
            None => self.date = Some(rec.snapshot_date),
            Some(d) if d != rec.snapshot_date => {
                self.stats.drop(DropReason::DateMismatch);
                push_issue(
                    &mut self.stats.issues,
                    line,
                    format!("row dated {} in snapshot dated {}", rec.snapshot_date, d),
                );
                return;
            }
            _ => {}
        }
        if let Some(kind) = self.policy.reject(&rec.address) {
            self.stats.drop(DropReason::Special(kind));
            return;
        }
        let entry = match self.map.get_mut(&rec.response_name) {
            Some(e) => e,
            None => self.map.entry(rec.response_name).or_default(),
        };
        if entry.insert(rec.address) {
            self.stats.stored += 1;
        } else {
            self.stats.drop(DropReason::Duplicate);
        }
    }

    fn finish(self) -> ResolutionSnapshot {
        let mut pairs: Vec<(String, DomainAddrs)> = self.map.into_iter().collect();
        pairs.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        let (names, addrs) = pairs.into_iter().unzip();
        ResolutionSnapshot { date: self.date, names, addrs, stats: self.stats }
    }
}

fn check_header<R: Read>(reader: &mut csv::Reader<R>, expected: &[&str]) -> Result<(), IngestError> {
    let header = reader.headers()?;
    let found: Vec<String> = header.iter().map(|h| h.trim().to_string()).collect();
    if found.len() < expected.len() || found.iter().zip(expected).any(|(f, e)| f != e) || found.len() > expected.len() {
        // An empty file has no header row at all; treat it as empty input.
        if found.is_empty() || (found.len() == 1 && found[0].is_empty()) {
            return Ok(());
        }
        return Err(IngestError::Header { expected: expected.iter().map(|s| s.to_string()).collect(), found });
    }
    Ok(())
}

fn csv_reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(source)
}

/// Loads one snapshot file. Bad rows are skipped and counted; only I/O and
/// header problems are errors.
pub fn load_snapshot<R: Read>(source: R, policy: &FilterPolicy) -> Result<ResolutionSnapshot, IngestError> {
    let mut reader = csv_reader(source);
    check_header(&mut reader, &SNAPSHOT_HEADER)?;
    let mut builder = SnapshotBuilder::new(*policy);
    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(true) => {
                let line = record.position().map(|p| p.line()).unwrap_or(0);
                builder.add(parse_row(&record), line);
            }
            Ok(false) => break,
            Err(e) if matches!(e.kind(), csv::ErrorKind::Utf8 { .. }) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                builder.add(Err((DropReason::Malformed, "invalid UTF-8".into())), line);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(builder.finish())
}

/// Loads several snapshot shards in parallel and merges them.
pub fn load_snapshot_files(paths: &[&Path], policy: &FilterPolicy) -> Result<ResolutionSnapshot, IngestError> {
    use rayon::prelude::*;
    let parts: Result<Vec<_>, IngestError> = paths.par_iter().map(|p| load_snapshot(open_input(p)?, policy)).collect();
    let mut parts = parts?;
    if parts.len() == 1 {
        return Ok(parts.pop().unwrap());
    }
    ResolutionSnapshot::merge(parts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct RouteEntry {
    pub prefix: IpPrefix,
    pub origin_asn: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RouteStats {
    pub rows: u64,
    pub loaded: u64,
    pub conflicts: u64,
    pub duplicates: u64,
    pub malformed: u64,
    pub issues: Vec<RowIssue>,
}

/// Prefix → origin AS table for both families.
#[derive(Debug, Clone, Default)]
pub struct RouteTable {
    trie: PrefixTrie<RouteEntry>,
    pub stats: RouteStats,
}

fn parse_asn(text: &str) -> Option<u32> {
    let t = text.trim();
    let t = t.strip_prefix("AS").or_else(|| t.strip_prefix("as")).unwrap_or(t);
    match t.parse::<u32>() {
        Ok(0) | Err(_) => None,
        Ok(n) => Some(n),
    }
}

impl RouteTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn trie(&self) -> &PrefixTrie<RouteEntry> {
        &self.trie
    }

    pub fn len(&self) -> usize {
        self.trie.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trie.is_empty()
    }

    /// Adds a route; an existing prefix keeps its first origin.
    pub fn add(&mut self, prefix: IpPrefix, origin_asn: u32) {
        let mut fresh = false;
        let entry = self.trie.get_or_insert_with(prefix, || {
            fresh = true;
            RouteEntry { prefix, origin_asn }
        });
        if fresh {
            self.stats.loaded += 1;
        } else if entry.origin_asn != origin_asn {
            self.stats.conflicts += 1;
        } else {
            self.stats.duplicates += 1;
        }
    }

    /// Appends rows from a `prefix,origin_asn` file.
    pub fn load<R: Read>(&mut self, source: R) -> Result<(), IngestError> {
        let mut reader = csv_reader(source);
        check_header(&mut reader, &ROUTES_HEADER)?;
        let mut record = csv::StringRecord::new();
        while reader.read_record(&mut record)? {
            self.stats.rows += 1;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let parsed = if record.len() == 2 {
                IpPrefix::parse(&record[0], true).map_err(|e| e.to_string()).and_then(|p| {
                    parse_asn(&record[1]).map(|a| (p, a)).ok_or_else(|| format!("bad ASN {:?}", &record[1]))
                })
            } else {
                Err(format!("expected 2 fields, found {}", record.len()))
            };
            match parsed {
                Ok((prefix, asn)) => self.add(prefix, asn),
                Err(msg) => {
                    self.stats.malformed += 1;
                    push_issue(&mut self.stats.issues, line, msg);
                }
            }
        }
        Ok(())
    }

    pub fn lookup(&self, addr: &IpAddr) -> Option<&RouteEntry> {
        self.trie.lpm(addr).map(|(_, e)| e)
    }

    /// The route covering a whole prefix, if any.
    pub fn covering_route(&self, prefix: &IpPrefix) -> Option<&RouteEntry> {
        self.trie.lpm_prefix(prefix).map(|(_, e)| e)
    }

    pub fn routes_within(&self, prefix: &IpPrefix) -> Vec<&RouteEntry> {
        self.trie.iter_within(prefix).into_iter().map(|(_, e)| e).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RouteEntry> + '_ {
        self.trie.iter().map(|(_, e)| e)
    }
}

pub fn load_routing_table<R: Read>(source: R) -> Result<RouteTable, IngestError> {
    let mut table = RouteTable::new();
    table.load(source)?;
    Ok(table)
}

/// Longest-prefix match of an address to its announced prefix and origin.
pub fn map_address_to_origin(routes: &RouteTable, addr: &IpAddr) -> Option<(IpPrefix, u32)> {
    routes.lookup(addr).map(|e| (e.prefix, e.origin_asn))
}
