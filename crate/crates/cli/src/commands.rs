use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sibprefix_core::detect::{
    self, build_label_index, build_prefix_domain_index, identify_ds_domains, load_scan_labels, Metric, Provenance,
    SiblingPair, SimilarityScore,
};
use sibprefix_core::enrich::{
    assign_hg_cdn_buckets, business_type_pair, classify_org_relation, load_asdb, load_name_list, pair_rov_category,
    validate_rov, AsOrgTable, BusinessType, HgCdnBucket, OrgCatalog, OrgRelation, PairRovCategory, RoaSet, TableStats,
};
use sibprefix_core::ingest::{load_snapshot, open_input, ResolutionSnapshot, RouteTable, RowIssue};
use sibprefix_core::longitudinal::{
    consistent_domains, diff_sibling_sets, stability, visibility_counts, DiffCategory, SeriesEntry, SnapshotSeries,
    StabilityMode,
};
use sibprefix_core::record::{percent, read_records, write_records, PairRecord};
use sibprefix_core::special::FilterPolicy;
use sibprefix_core::tuner::{
    build_tuning_tries, mean_std, sp_tuner_ls, sp_tuner_ms, threshold_sweep, TunedPairSet, TunerConfig, TunerError,
    TunerMode, TuningTries,
};
use sibprefix_core::IpPrefix;

use crate::config::PipelineConfig;
use crate::report;
use crate::{CliError, Outputs};

fn open(path: &Path) -> Result<Box<dyn Read + Send>, CliError> {
    open_input(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn parse_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Parse(format!("{}: {e}", path.display()))
}

fn require(ok: bool, msg: &str) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(msg.to_string()))
    }
}

fn row_error(path: &Path, issue: &RowIssue) -> CliError {
    CliError::Parse(format!("{}:{}: {}", path.display(), issue.line, issue.message))
}

/// In strict mode the first bad row of a file is fatal; otherwise it is
/// reported as a warning with the count of skipped rows.
fn check_rows(
    cfg: &PipelineConfig,
    out: &mut Outputs,
    path: &Path,
    bad: u64,
    issues: &[RowIssue],
) -> Result<(), CliError> {
    if bad == 0 {
        return Ok(());
    }
    match issues.first() {
        Some(first) if cfg.strict => Err(row_error(path, first)),
        _ => {
            out.warn(format!("{}: skipped {bad} bad row(s)", path.display()));
            Ok(())
        }
    }
}

fn policy(cfg: &PipelineConfig) -> FilterPolicy {
    FilterPolicy { drop_documentation: cfg.drop_documentation }
}

fn load_one_snapshot(cfg: &PipelineConfig, path: &Path) -> Result<ResolutionSnapshot, CliError> {
    load_snapshot(open(path)?, &policy(cfg)).map_err(|e| parse_err(path, e))
}

fn snapshot_checks(
    cfg: &PipelineConfig,
    out: &mut Outputs,
    path: &Path,
    s: &ResolutionSnapshot,
) -> Result<(), CliError> {
    // Every dropped row that carries a diagnostic is a data error; policy
    // filters (special ranges, duplicates) are silent.
    let bad = s.stats.issues.len() as u64;
    check_rows(cfg, out, path, bad.max(s.stats.malformed()), &s.stats.issues)
}

/// Loads the shards of one snapshot in parallel and merges them.
fn load_snapshots(cfg: &PipelineConfig, paths: &[PathBuf], out: &mut Outputs) -> Result<ResolutionSnapshot, CliError> {
    let parts: Vec<Result<ResolutionSnapshot, CliError>> =
        paths.par_iter().map(|p| load_one_snapshot(cfg, p)).collect();
    let mut loaded = Vec::with_capacity(parts.len());
    for (path, part) in paths.iter().zip(parts) {
        let part = part?;
        snapshot_checks(cfg, out, path, &part)?;
        loaded.push(part);
    }
    if loaded.len() == 1 {
        return Ok(loaded.pop().unwrap());
    }
    ResolutionSnapshot::merge(loaded).map_err(|e| CliError::Parse(e.to_string()))
}

fn load_routes(cfg: &PipelineConfig, paths: &[PathBuf], out: &mut Outputs) -> Result<RouteTable, CliError> {
    let mut table = RouteTable::new();
    for path in paths {
        let (bad_before, issues_before) = (table.stats.malformed, table.stats.issues.len());
        table.load(open(path)?).map_err(|e| parse_err(path, e))?;
        let bad = table.stats.malformed - bad_before;
        check_rows(cfg, out, path, bad, &table.stats.issues[issues_before..])?;
    }
    if table.stats.conflicts > 0 {
        out.warn(format!("{} route(s) announced with conflicting origins; first origin kept", table.stats.conflicts));
    }
    Ok(table)
}

fn load_pairs(path: &Path) -> Result<Vec<PairRecord>, CliError> {
    read_records(open(path)?).map_err(|e| parse_err(path, e))
}

fn jsonl(records: &[PairRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_records(&mut buf, records).expect("in-memory write");
    buf
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serializable summary");
    v.push(b'\n');
    v
}

fn perfect_count<'a>(scores: impl IntoIterator<Item = &'a SimilarityScore>) -> u64 {
    scores.into_iter().filter(|s| s.is_perfect()).count() as u64
}

fn fraction(n: u64, d: u64) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

fn mean_or_null(values: &[f64]) -> Value {
    if values.is_empty() {
        Value::Null
    } else {
        json!(mean_std(values).0)
    }
}

pub fn detect(cfg: &PipelineConfig) -> Result<Outputs, CliError> {
    require(!cfg.snapshots.is_empty(), "detect needs at least one --snapshot")?;
    require(!cfg.routes.is_empty(), "detect needs at least one --routes table")?;
    let mut out = Outputs::default();
    let snapshot = load_snapshots(cfg, &cfg.snapshots, &mut out)?;
    let routes = load_routes(cfg, &cfg.routes, &mut out)?;
    if snapshot.is_empty() {
        out.warn("snapshot holds no usable records; writing empty outputs");
    }

    let det = detect::detect(&snapshot, &routes, cfg.metric, cfg.with_domains);
    let mut keys = BTreeSet::new();
    for p in &det.pairs {
        if p.score.is_zero() || !keys.insert(p.key()) || p.score.metric != cfg.metric {
            return Err(CliError::Invariant(format!("detection emitted an invalid pair {} / {}", p.v4, p.v6)));
        }
    }
    let records: Vec<PairRecord> = det.pairs.iter().map(|p| PairRecord::from_pair(p, snapshot.date)).collect();

    let mut cdfs = Vec::new();
    let mut cdf_json = BTreeMap::new();
    for m in Metric::ALL {
        let values: Vec<f64> = if m == cfg.metric {
            det.pairs.iter().map(|p| p.score.value()).collect()
        } else {
            det.rescore(m).iter().map(|s| s.score.value()).collect()
        };
        cdf_json.insert(m.name(), sibprefix_core::record::cdf_points(&values));
        cdfs.push((m.name().to_string(), values));
    }

    let jaccards: Vec<f64> = records.iter().map(|r| r.jaccard).collect();
    let perfect = records.iter().filter(|r| r.jaccard_num == r.jaccard_den).count() as u64;
    let n = records.len() as u64;
    let dropped: BTreeMap<String, u64> = snapshot.stats.dropped.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let summary = json!({
        "date": snapshot.date.map(|d| d.to_string()),
        "metric": cfg.metric.name(),
        "snapshot_rows": snapshot.stats.rows,
        "stored_records": snapshot.stats.stored,
        "dropped_rows": dropped,
        "domains": snapshot.len(),
        "ds_domains": det.ds_domains,
        "retained_ds_domains": det.index.retained().count(),
        "dropped_unrouted_domains": det.index.dropped_unrouted,
        "unrouted_addresses": det.index.unrouted_addresses,
        "v4_prefixes_with_ds_domains": det.index.family(sibprefix_core::IpVersion::V4).len(),
        "v6_prefixes_with_ds_domains": det.index.family(sibprefix_core::IpVersion::V6).len(),
        "candidate_pairs": det.candidates.len(),
        "sibling_pairs": n,
        "unique_v4_prefixes": records.iter().map(|r| r.v4).collect::<BTreeSet<_>>().len(),
        "unique_v6_prefixes": records.iter().map(|r| r.v6).collect::<BTreeSet<_>>().len(),
        "perfect_pairs": perfect,
        "perfect_fraction": fraction(perfect, n),
        "perfect_percent": percent(perfect, n),
        "mean_jaccard": mean_or_null(&jaccards),
        "routes": {
            "loaded": routes.stats.loaded,
            "conflicts": routes.stats.conflicts,
            "duplicates": routes.stats.duplicates,
            "malformed": routes.stats.malformed,
        },
        "cdf": cdf_json,
    });

    out.add("pairs.jsonl", jsonl(&records));
    out.add("detect_summary.json", pretty(&summary));
    out.add("jaccard_cdf.csv", report::cdf_table("metric", "value", &cdfs));
    out.summary =
        format!("detect: {} DS domains, {} sibling pairs ({}% perfect)", det.ds_domains, n, percent(perfect, n));
    Ok(out)
}

/// Checks the tuner's guarantees on one run; a failure is a bug.
pub fn check_tuned(
    inputs: &[SiblingPair],
    set: &TunedPairSet,
    tries: &TuningTries,
    cfg: &TunerConfig,
) -> Result<(), String> {
    if set.input_scores.len() != inputs.len() {
        return Err("tuner dropped input pairs".into());
    }
    for (i, input) in inputs.iter().enumerate() {
        let before = set.input_scores[i];
        let mut covered: BTreeSet<u32> = BTreeSet::new();
        for p in set.outputs_of(i) {
            if p.provenance == Provenance::Tuned && p.score.cmp_value(&before) == std::cmp::Ordering::Less {
                return Err(format!("pair {} / {} worsened to {} / {}", input.v4, input.v6, p.v4, p.v6));
            }
            if cfg.mode == TunerMode::MoreSpecific {
                let max4 = cfg.v4_len_thresh.max(input.v4.len());
                let max6 = cfg.v6_len_thresh.max(input.v6.len());
                if p.v4.len() > max4 || p.v6.len() > max6 {
                    return Err(format!("output {} / {} exceeds the thresholds", p.v4, p.v6));
                }
            }
            covered.extend(tries.domains_under(&p.v4));
            covered.extend(tries.domains_under(&p.v6));
        }
        for u in set.unmatched.iter().filter(|u| u.input == i) {
            covered.extend(u.domains.iter().copied());
        }
        let lost = tries
            .domains_under(&input.v4)
            .into_iter()
            .chain(tries.domains_under(&input.v6))
            .find(|d| !covered.contains(d));
        if lost.is_some() {
            return Err(format!("pair {} / {} lost domains during tuning", input.v4, input.v6));
        }
    }
    Ok(())
}

fn shared_names(snapshot: &ResolutionSnapshot, tries: &TuningTries, v4: &IpPrefix, v6: &IpPrefix) -> Vec<String> {
    let b: BTreeSet<u32> = tries.domains_under(v6).into_iter().collect();
    tries.domains_under(v4).into_iter().filter(|d| b.contains(d)).map(|d| snapshot.name(d).to_string()).collect()
}

pub fn tune(cfg: &PipelineConfig) -> Result<Outputs, CliError> {
    let pairs_path = cfg.pairs.as_ref().ok_or_else(|| CliError::Config("tune needs --pairs".into()))?;
    require(!cfg.snapshots.is_empty(), "tune needs the --snapshot the pairs were detected on")?;
    require(!cfg.routes.is_empty(), "tune needs at least one --routes table")?;
    let mut out = Outputs::default();
    let records = load_pairs(pairs_path)?;
    let snapshot = load_snapshots(cfg, &cfg.snapshots, &mut out)?;
    let routes = load_routes(cfg, &cfg.routes, &mut out)?;

    // Tune over the same domains detection kept: dual-stack and routed in
    // both families.
    let ds = identify_ds_domains(&snapshot);
    let retained = build_prefix_domain_index(&snapshot, &ds, &routes).retained_ids();
    let tries = build_tuning_tries(&snapshot, &retained);
    let inputs: Vec<SiblingPair> = records.iter().map(|r| r.to_pair()).collect();

    let tuner_err = |e: TunerError| match e {
        TunerError::InconsistentInput { .. } => {
            CliError::Parse(format!("{}: {e}; was it detected on this snapshot?", pairs_path.display()))
        }
        other => CliError::Config(other.to_string()),
    };
    let set = match cfg.tuner.mode {
        TunerMode::MoreSpecific => sp_tuner_ms(&inputs, &tries, &cfg.tuner),
        TunerMode::LessSpecific => sp_tuner_ls(&inputs, &tries, &routes, &cfg.tuner),
    }
    .map_err(tuner_err)?;
    check_tuned(&inputs, &set, &tries, &cfg.tuner).map_err(CliError::Invariant)?;

    let drifted = records
        .iter()
        .zip(&set.input_scores)
        .filter(|(r, s)| {
            let j = SimilarityScore { metric: Metric::Jaccard, ..**s };
            r.jaccard_ratio() != j.reduced()
        })
        .count();
    if drifted > 0 {
        out.warn(format!("{drifted} input pair(s) have a different Jaccard on this snapshot than recorded"));
    }

    let want_names = cfg.with_domains || records.iter().any(|r| r.domains.is_some());
    let tuned: Vec<PairRecord> = set
        .unique_pairs()
        .into_iter()
        .map(|mut p| {
            if want_names {
                p.shared_domains = Some(shared_names(&snapshot, &tries, &p.v4, &p.v6));
            }
            PairRecord::from_pair(&p, snapshot.date)
        })
        .collect();

    let n_in = inputs.len() as u64;
    let n_out = tuned.len() as u64;
    let perfect_before = perfect_count(&set.input_scores);
    let perfect_after = tuned.iter().filter(|r| r.jaccard_num == r.jaccard_den).count() as u64;
    let before: Vec<f64> = set.input_scores.iter().map(|s| s.value()).collect();
    let after: Vec<f64> = tuned.iter().map(|r| r.jaccard).collect();
    let mut summary = json!({
        "mode": cfg.tuner.mode.to_string(),
        "input_pairs": n_in,
        "output_pairs": n_out,
        "branch_pairs": tuned.iter().filter(|r| r.provenance == Provenance::Branch).count(),
        "unmatched_branches": set.unmatched.len(),
        "perfect_before": perfect_before,
        "perfect_after": perfect_after,
        "perfect_fraction_before": fraction(perfect_before, n_in),
        "perfect_fraction_after": fraction(perfect_after, n_out),
        "perfect_percent_before": percent(perfect_before, n_in),
        "perfect_percent_after": percent(perfect_after, n_out),
        "mean_jaccard_before": mean_or_null(&before),
        "mean_jaccard_after": mean_or_null(&after),
    });
    match cfg.tuner.mode {
        TunerMode::MoreSpecific => {
            summary["v4_thresh"] = json!(cfg.tuner.v4_len_thresh);
            summary["v6_thresh"] = json!(cfg.tuner.v6_len_thresh);
        }
        TunerMode::LessSpecific => {
            summary["ls_v4_levels_up"] = json!(cfg.tuner.ls_v4_levels_up);
            summary["ls_v6_levels_up"] = json!(cfg.tuner.ls_v6_levels_up);
        }
    }

    let unmatched = set.unmatched.iter().map(|u| {
        let input = &inputs[u.input];
        vec![input.v4.to_string(), input.v6.to_string(), u.prefix.to_string(), u.domains.len().to_string()]
    });
    out.add("tuned_pairs.jsonl", jsonl(&tuned));
    out.add("tune_summary.json", pretty(&summary));
    out.add("unmatched_branches.csv", report::csv_bytes(&["input_v4", "input_v6", "branch", "domains"], unmatched));

    if cfg.sweep {
        let cells = threshold_sweep(&inputs, &tries, &cfg.sweep_v4, &cfg.sweep_v6).map_err(tuner_err)?;
        let rows = cells.iter().map(|c| {
            vec![
                c.v4_thresh.to_string(),
                c.v6_thresh.to_string(),
                c.pair_count.to_string(),
                c.mean_jaccard.to_string(),
                c.std_jaccard.to_string(),
            ]
        });
        out.add(
            "sweep.csv",
            report::csv_bytes(&["v4_thresh", "v6_thresh", "pairs", "mean_jaccard", "std_jaccard"], rows),
        );
    }
    out.summary = format!(
        "tune ({}): {} -> {} pairs, perfect {}% -> {}%",
        cfg.tuner.mode,
        n_in,
        n_out,
        percent(perfect_before, n_in),
        percent(perfect_after, n_out)
    );
    Ok(out)
}

fn load_table<T>(
    cfg: &PipelineConfig,
    out: &mut Outputs,
    path: &Path,
    load: impl FnOnce(Box<dyn Read + Send>) -> Result<(T, TableStats), sibprefix_core::ingest::IngestError>,
) -> Result<T, CliError> {
    let (value, stats) = load(open(path)?).map_err(|e| parse_err(path, e))?;
    check_rows(cfg, out, path, stats.malformed, &stats.issues)?;
    Ok(value)
}

fn tally<K: Ord>(items: impl IntoIterator<Item = K>) -> BTreeMap<K, u64> {
    let mut m = BTreeMap::new();
    for k in items {
        *m.entry(k).or_insert(0) += 1;
    }
    m
}

pub fn enrich(cfg: &PipelineConfig) -> Result<Outputs, CliError> {
    let pairs_path = cfg.pairs.as_ref().ok_or_else(|| CliError::Config("enrich needs --pairs".into()))?;
    let mut out = Outputs::default();
    let mut records = load_pairs(pairs_path)?;

    let orgs = match &cfg.as_org {
        Some(p) => Some(load_table(cfg, &mut out, p, AsOrgTable::load)?),
        None => None,
    };
    let roas = match &cfg.roas {
        Some(p) => Some(load_table(cfg, &mut out, p, RoaSet::load)?),
        None => None,
    };
    let list = |p: &Option<PathBuf>| -> Result<BTreeSet<String>, CliError> {
        match p {
            Some(p) => load_name_list(open(p)?).map_err(|e| parse_err(p, e)),
            None => Ok(BTreeSet::new()),
        }
    };
    let mut catalog = OrgCatalog { min_pair_count: cfg.min_pair_count, ..OrgCatalog::default() };
    catalog.hypergiants = list(&cfg.hypergiants)?;
    catalog.cdns = list(&cfg.cdns)?;
    let has_asdb = cfg.asdb.is_some();
    if let Some(p) = &cfg.asdb {
        catalog.asdb = load_table(cfg, &mut out, p, load_asdb)?;
    }
    for (present, what) in [(orgs.is_some(), "AS-org table"), (roas.is_some(), "ROA table"), (has_asdb, "ASdb table")] {
        if !present {
            out.warn(format!("no {what} given; the matching annotations are \"unknown\""));
        }
    }

    let pairs: Vec<SiblingPair> = records.iter().map(|r| r.to_pair()).collect();
    let empty_orgs = AsOrgTable::default();
    let org_table = orgs.as_ref().unwrap_or(&empty_orgs);
    let buckets = assign_hg_cdn_buckets(&pairs, org_table, &catalog);

    let mut relations = Vec::new();
    let mut rov_cats: Vec<Option<PairRovCategory>> = Vec::new();
    let mut business = Vec::new();
    for ((rec, pair), bucket) in records.iter_mut().zip(&pairs).zip(&buckets) {
        let a = &mut rec.annotations;
        let relation = orgs.as_ref().map(|t| classify_org_relation(pair, t));
        relations.push(relation);
        a.insert("org_relation".into(), json!(relation.map_or("unknown".to_string(), |r| r.to_string())));
        a.insert("org_v4".into(), json!(rec.asn_v4.and_then(|x| org_table.org_of(x))));
        a.insert("org_v6".into(), json!(rec.asn_v6.and_then(|x| org_table.org_of(x))));

        let statuses = match (&roas, pair.origin) {
            (Some(set), Some((a4, a6))) => Some((validate_rov(&pair.v4, a4, set), validate_rov(&pair.v6, a6, set))),
            _ => None,
        };
        let cat = statuses.map(|(s4, s6)| pair_rov_category(s4, s6));
        rov_cats.push(cat);
        a.insert("rov_v4".into(), json!(statuses.map_or("unknown".to_string(), |s| s.0.to_string())));
        a.insert("rov_v6".into(), json!(statuses.map_or("unknown".to_string(), |s| s.1.to_string())));
        a.insert("rov_category".into(), json!(cat.map_or("unknown", |c| c.name())));
        a.insert("hg_cdn_bucket".into(), json!(bucket.to_string()));

        let bt = has_asdb.then(|| business_type_pair(pair, &catalog, cfg.include_same_asn));
        match &bt {
            Some(BusinessType::Pair { v4, v6 }) => {
                a.insert("business_v4".into(), json!(v4));
                a.insert("business_v6".into(), json!(v6));
            }
            Some(other) => {
                a.insert("business_filtered".into(), json!(other.filter_reason()));
            }
            None => {
                a.insert("business_v4".into(), json!("unknown"));
                a.insert("business_v6".into(), json!("unknown"));
            }
        }
        business.push(bt);
    }

    let rel_counts = tally(relations.iter().map(|r| r.map_or("unknown".to_string(), |r| r.to_string())));
    let rel_rows: Vec<(String, u64)> = [OrgRelation::SameOrg, OrgRelation::DifferentOrg, OrgRelation::Unknown]
        .iter()
        .map(|r| (r.to_string(), rel_counts.get(&r.to_string()).copied().unwrap_or(0)))
        .collect();

    let rov_counts = tally(rov_cats.iter().flatten().copied());
    let rov_rows: Vec<(String, u64)> =
        PairRovCategory::ALL.iter().map(|c| (c.name().to_string(), rov_counts.get(c).copied().unwrap_or(0))).collect();

    let bucket_counts = tally(buckets.iter().cloned());
    let mut bucket_rows: Vec<(String, u64)> = bucket_counts
        .iter()
        .filter(|(b, _)| matches!(b, HgCdnBucket::Org(_)))
        .map(|(b, n)| (b.to_string(), *n))
        .collect();
    for b in [HgCdnBucket::OtherHgCdn, HgCdnBucket::NonCdnHg, HgCdnBucket::MixedOrg] {
        bucket_rows.push((b.to_string(), bucket_counts.get(&b).copied().unwrap_or(0)));
    }

    let biz_pairs = tally(business.iter().flatten().filter_map(|b| match b {
        BusinessType::Pair { v4, v6 } => Some((v4.clone(), v6.clone())),
        _ => None,
    }));
    let biz_total: u64 = biz_pairs.values().sum();
    let biz_rows =
        biz_pairs.iter().map(|((a, b), n)| vec![a.clone(), b.clone(), n.to_string(), percent(*n, biz_total)]);
    let filtered = tally(business.iter().flatten().filter_map(|b| b.filter_reason()));

    let summary = json!({
        "pairs": records.len(),
        "org_relation": rel_counts,
        "rov_pairs_validated": rov_cats.iter().flatten().count(),
        "hg_cdn_min_pair_count": cfg.min_pair_count,
        "business_classified": biz_total,
        "business_filtered": filtered,
        "include_same_asn": cfg.include_same_asn,
    });

    out.add("enriched_pairs.jsonl", jsonl(&records));
    out.add("org_relation.csv", report::count_table("relation", &rel_rows));
    out.add("rov_categories.csv", report::count_table("category", &rov_rows));
    out.add("hg_cdn_buckets.csv", report::count_table("bucket", &bucket_rows));
    out.add("business_types.csv", report::csv_bytes(&["v4_category", "v6_category", "pairs", "percent"], biz_rows));
    out.add("enrich_summary.json", pretty(&summary));
    out.summary = format!("enrich: annotated {} pairs", records.len());
    Ok(out)
}

fn ratio_cols(r: Option<(u64, u64)>) -> [String; 3] {
    match r {
        Some((n, d)) => [n.to_string(), d.to_string(), (n as f64 / d as f64).to_string()],
        None => [String::new(), String::new(), String::new()],
    }
}

pub fn diff(cfg: &PipelineConfig) -> Result<Outputs, CliError> {
    let (old_path, new_path) = match (&cfg.diff_old, &cfg.diff_new) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(CliError::Config("diff needs --old and --new".into())),
    };
    let old = load_pairs(old_path)?;
    let new = load_pairs(new_path)?;
    let d = diff_sibling_sets(&old, &new).map_err(|e| CliError::Parse(e.to_string()))?;
    if d.entries.len() != new.len() {
        return Err(CliError::Invariant("diff categories do not partition the current pairs".into()));
    }

    let rows = d.entries.iter().map(|e| {
        let mut row = vec![e.v4.to_string(), e.v6.to_string(), e.category.name().to_string()];
        row.extend(ratio_cols(e.old_jaccard));
        row.extend(ratio_cols(Some(e.new_jaccard)));
        row
    });
    let header = [
        "v4",
        "v6",
        "category",
        "old_jaccard_num",
        "old_jaccard_den",
        "old_jaccard",
        "new_jaccard_num",
        "new_jaccard_den",
        "new_jaccard",
    ];
    let retired = d.retired.iter().map(|r| {
        let mut row = vec![r.v4.to_string(), r.v6.to_string()];
        row.extend(ratio_cols(Some(r.old_jaccard)));
        row
    });
    let mut series: Vec<(String, Vec<f64>)> = DiffCategory::ALL
        .iter()
        .map(|c| {
            let vals =
                d.entries.iter().filter(|e| e.category == *c).map(|e| e.new_jaccard.0 as f64 / e.new_jaccard.1 as f64);
            (c.name().to_string(), vals.collect())
        })
        .collect();
    series
        .push(("retired".into(), d.retired.iter().map(|r| r.old_jaccard.0 as f64 / r.old_jaccard.1 as f64).collect()));

    let total = d.entries.len() as u64;
    let mut summary = serde_json::Map::new();
    summary.insert("current_pairs".into(), json!(total));
    summary.insert("reference_pairs".into(), json!(old.len()));
    for c in DiffCategory::ALL {
        let n = d.count(c) as u64;
        summary.insert(c.name().into(), json!({ "pairs": n, "percent": percent(n, total) }));
    }
    summary.insert("retired".into(), json!(d.retired.len()));

    let mut out = Outputs::default();
    out.add("diff.csv", report::csv_bytes(&header, rows));
    out.add("retired.csv", report::csv_bytes(&["v4", "v6", "jaccard_num", "jaccard_den", "jaccard"], retired));
    out.add("diff_cdf.csv", report::cdf_table("category", "jaccard", &series));
    out.add("diff_summary.json", pretty(&Value::Object(summary)));
    out.summary = format!(
        "diff: {} new, {} changed, {} unchanged, {} retired",
        d.count(DiffCategory::New),
        d.count(DiffCategory::Changed),
        d.count(DiffCategory::Unchanged),
        d.retired.len()
    );
    Ok(out)
}

pub fn stats(cfg: &PipelineConfig) -> Result<Outputs, CliError> {
    require(cfg.pairs.is_some() || !cfg.series.is_empty(), "stats needs --pairs and/or --series")?;
    require(cfg.scan_labels.is_none() || cfg.pairs.is_some(), "--scan-labels needs --pairs")?;
    let needs_routes = cfg.scan_labels.is_some() || !cfg.series.is_empty();
    require(!needs_routes || !cfg.routes.is_empty(), "--scan-labels and --series need --routes")?;

    let mut out = Outputs::default();
    let mut summary = serde_json::Map::new();
    let records = match &cfg.pairs {
        Some(p) => Some(load_pairs(p)?),
        None => None,
    };
    let routes = if needs_routes { Some(load_routes(cfg, &cfg.routes, &mut out)?) } else { None };

    if let Some(records) = &records {
        out.add("domain_bins.csv", report::domain_bins_table(records));
        out.add("cidr_sizes.csv", report::cidr_sizes_table(records));
        summary.insert("pairs".into(), json!(records.len()));
    }

    if let (Some(path), Some(records), Some(routes)) = (&cfg.scan_labels, &records, &routes) {
        let (rows, stats) = load_scan_labels(open(path)?).map_err(|e| parse_err(path, e))?;
        check_rows(cfg, &mut out, path, stats.malformed, &stats.issues)?;
        let index = build_label_index(rows, routes);
        let (table, skipped) = report::scan_matrix(records, &index);
        out.add("scan_matrix.csv", table);
        summary.insert("scan_pairs_without_labels".into(), json!(skipped));
        summary.insert("scan_unrouted_addresses".into(), json!(index.stats.unrouted));
    }

    if let (false, Some(routes)) = (cfg.series.is_empty(), &routes) {
        let loaded: Vec<Result<ResolutionSnapshot, CliError>> =
            cfg.series.par_iter().map(|p| load_one_snapshot(cfg, p)).collect();
        let mut snaps = Vec::new();
        for (path, s) in cfg.series.iter().zip(loaded) {
            let s = s?;
            snapshot_checks(cfg, &mut out, path, &s)?;
            let date =
                s.date.ok_or_else(|| CliError::Parse(format!("{}: snapshot has no dated rows", path.display())))?;
            snaps.push((date, s));
        }
        snaps.sort_by_key(|(d, _)| *d);
        let entries = snaps.iter().map(|(date, s)| SeriesEntry { date: *date, snapshot: s, routes }).collect();
        let series = SnapshotSeries::new(entries).map_err(|e| CliError::Parse(e.to_string()))?;

        let counts = visibility_counts(&series);
        let by_level = tally(counts.values().copied());
        let total = counts.len() as u64;
        let mut cum = 0;
        let vis_rows = (1..=series.len()).map(|v| {
            let n = by_level.get(&v).copied().unwrap_or(0);
            cum += n;
            vec![v.to_string(), n.to_string(), percent(n, total), fraction(cum, total).to_string()]
        });
        out.add(
            "visibility.csv",
            report::csv_bytes(&["snapshots", "domains", "percent", "cdf"], vis_rows.collect::<Vec<_>>()),
        );

        let consistent = consistent_domains(&series);
        let mode = if cfg.pointwise { StabilityMode::Pointwise } else { StabilityMode::Cumulative };
        let rep = stability(&series, &consistent, mode);
        let st_rows = rep.curve.iter().map(|p| {
            vec![
                p.offset.to_string(),
                p.date.to_string(),
                p.prefix_v4.to_string(),
                p.prefix_v6.to_string(),
                p.address.to_string(),
            ]
        });
        out.add("stability.csv", report::csv_bytes(&["offset", "date", "prefix_v4", "prefix_v6", "address"], st_rows));
        summary.insert("snapshots".into(), json!(series.len()));
        summary.insert("ds_domains_seen".into(), json!(total));
        summary.insert("consistent_domains".into(), json!(consistent.len()));
        summary.insert("stability_mode".into(), json!(mode));
        summary.insert("reference_date".into(), json!(rep.reference.to_string()));
    }

    out.add("stats_summary.json", pretty(&Value::Object(summary)));
    out.summary = format!("stats: wrote {} table(s)", out.files.len() - 1);
    Ok(out)
}
