//! Line-delimited JSON pair records and small report formatting helpers.

use std::io::{BufRead, BufReader, Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::detect::{Metric, Provenance, SiblingPair, SimilarityScore};
use crate::prefix::IpPrefix;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Json { line: u64, message: String },
    #[error("line {line}: schema version {found}, expected {}", SCHEMA_VERSION)]
    Schema { line: u64, found: u64 },
    #[error("line {line}: {message}")]
    Inconsistent { line: u64, message: String },
}

/// One sibling pair as written to disk.
///
/// The `jaccard*` fields are always the Jaccard index, whatever metric
/// selected the pair; the domain counts make the record lossless.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub schema_version: u32,
    pub date: Option<NaiveDate>,
    pub v4: IpPrefix,
    pub v6: IpPrefix,
    pub jaccard_num: u64,
    pub jaccard_den: u64,
    pub jaccard: f64,
    pub metric: Metric,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domains: Option<Vec<String>>,
    pub asn_v4: Option<u32>,
    pub asn_v6: Option<u32>,
    pub v4_domains: u64,
    pub v6_domains: u64,
    pub shared_domains: u64,
    #[serde(default)]
    pub annotations: Map<String, Value>,
}

impl PairRecord {
    pub fn from_pair(pair: &SiblingPair, date: Option<NaiveDate>) -> Self {
        let s = pair.score;
        let j = SimilarityScore { metric: Metric::Jaccard, ..s };
        let (jaccard_num, jaccard_den) = j.reduced();
        PairRecord {
            schema_version: SCHEMA_VERSION,
            date,
            v4: pair.v4,
            v6: pair.v6,
            jaccard_num,
            jaccard_den,
            jaccard: j.value(),
            metric: s.metric,
            provenance: pair.provenance,
            domains: pair.shared_domains.clone(),
            asn_v4: pair.origin.map(|o| o.0),
            asn_v6: pair.origin.map(|o| o.1),
            v4_domains: s.size_a,
            v6_domains: s.size_b,
            shared_domains: s.intersection,
            annotations: Map::new(),
        }
    }

    pub fn key(&self) -> (IpPrefix, IpPrefix) {
        (self.v4, self.v6)
    }

    pub fn jaccard_ratio(&self) -> (u64, u64) {
        (self.jaccard_num, self.jaccard_den)
    }

    pub fn score(&self) -> SimilarityScore {
        SimilarityScore {
            metric: self.metric,
            intersection: self.shared_domains,
            size_a: self.v4_domains,
            size_b: self.v6_domains,
        }
    }

    pub fn to_pair(&self) -> SiblingPair {
        SiblingPair {
            v4: self.v4,
            v6: self.v6,
            score: self.score(),
            provenance: self.provenance,
            origin: self.asn_v4.zip(self.asn_v6),
            shared_domains: self.domains.clone(),
        }
    }

    fn check(&self) -> Result<(), String> {
        if !self.v4.is_v4() || self.v6.is_v4() {
            return Err(format!("pair {} / {} has the wrong address families", self.v4, self.v6));
        }
        let s = self.score();
        if s.intersection > s.size_a.min(s.size_b) || s.size_a == 0 || s.size_b == 0 {
            return Err(format!("impossible domain counts {}/{}/{}", s.intersection, s.size_a, s.size_b));
        }
        let (n, d) = SimilarityScore { metric: Metric::Jaccard, ..s }.reduced();
        if (n, d) != (self.jaccard_num, self.jaccard_den) {
            return Err(format!("jaccard {}/{} disagrees with the domain counts", self.jaccard_num, self.jaccard_den));
        }
        Ok(())
    }
}

/// Writes records one per line, sorted by pair key.
pub fn write_records<W: Write>(mut out: W, records: &[PairRecord]) -> std::io::Result<()> {
    let mut order: Vec<&PairRecord> = records.iter().collect();
    order.sort_by(|a, b| a.key().cmp(&b.key()).then(a.provenance.cmp(&b.provenance)));
    for r in order {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Reads and validates records; blank lines are skipped.
pub fn read_records<R: Read>(source: R) -> Result<Vec<PairRecord>, RecordError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(source).lines().enumerate() {
        let line = line?;
        let n = i as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(&line).map_err(|e| RecordError::Json { line: n, message: e.to_string() })?;
        match value.get("schema_version").and_then(Value::as_u64) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(found) => return Err(RecordError::Schema { line: n, found }),
            None => return Err(RecordError::Json { line: n, message: "missing schema_version".into() }),
        }
        let rec: PairRecord =
            serde_json::from_value(value).map_err(|e| RecordError::Json { line: n, message: e.to_string() })?;
        rec.check().map_err(|message| RecordError::Inconsistent { line: n, message })?;
        out.push(rec);
    }
    Ok(out)
}

/// `100 * num / den` with two decimals, rounding half to even.
pub fn percent(num: u64, den: u64) -> String {
    if den == 0 {
        return "0.00".to_string();
    }
    let scaled = num as u128 * 10_000;
    let (den, mut q, r) = (den as u128, scaled / den as u128, scaled % den as u128);
    if 2 * r > den || (2 * r == den && q % 2 == 1) {
        q += 1;
    }
    format!("{}.{:02}", q / 100, q % 100)
}

/// Empirical CDF: each distinct value with the fraction of samples `<=` it.
pub fn cdf_points(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *x => last.1 = frac,
            _ => out.push((*x, frac)),
        }
    }
    out
}
