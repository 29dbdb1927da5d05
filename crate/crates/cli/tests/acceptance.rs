//! Acceptance criteria 1-9. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line, then exits non-zero if any
//! failed.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::net::{IpAddr, Ipv4Addr};
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use sibprefix_core::detect::{
    build_prefix_domain_index, detect, identify_ds_domains, similarity, Metric, Provenance, SiblingPair,
    SimilarityScore,
};
use sibprefix_core::enrich::{pair_rov_category, validate_rov, PairRovCategory, Roa, RoaSet, RovStatus};
use sibprefix_core::ingest::{ResolutionRecord, ResolutionSnapshot, RouteTable};
use sibprefix_core::longitudinal::{
    diff_sibling_sets, visibility_counts, visibility_frequency, DiffCategory, SeriesEntry, SnapshotSeries,
};
use sibprefix_core::record::PairRecord;
use sibprefix_core::special::FilterPolicy;
use sibprefix_core::tuner::{build_tuning_tries, sp_tuner_ls, sp_tuner_ms, threshold_sweep, TunerConfig, TuningTries};
use sibprefix_core::{IpPrefix, IpVersion};

use common::{fixture, in_prefix, lpm_scan, random_instance, reduce, Instance};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1 & 2

/// Naive counts through hash sets.
fn naive_counts(a: &[u32], b: &[u32]) -> (u64, u64, u64) {
    let sa: HashSet<u32> = a.iter().copied().collect();
    let sb: HashSet<u32> = b.iter().copied().collect();
    (sa.intersection(&sb).count() as u64, sa.len() as u64, sb.len() as u64)
}

/// Oracle value of each metric as an unreduced (num, den), None if undefined.
fn naive_metric(m: Metric, i: u64, a: u64, b: u64) -> Option<(u64, u64)> {
    match m {
        Metric::Jaccard => (a + b > 0).then(|| (i, a + b - i)),
        Metric::Dice => (a + b > 0).then(|| (2 * i, a + b)),
        Metric::Overlap => (a.min(b) > 0).then(|| (i, a.min(b))),
    }
}

fn random_set(rng: &mut StdRng, max: usize) -> Vec<u32> {
    let n = rng.gen_range(0..=max);
    let mut v: Vec<u32> = (0..n).map(|_| rng.gen_range(0..80)).collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn criterion_1() -> Outcome {
    let mut rng = StdRng::seed_from_u64(1);
    let start = Instant::now();
    let mut checked = 0;
    for case in 0..1000 {
        let a = random_set(&mut rng, 50);
        let b = random_set(&mut rng, 50);
        let (i, na, nb) = naive_counts(&a, &b);
        let mut values = Vec::new();
        for m in Metric::ALL {
            let got = similarity(&a, &b, m);
            match (naive_metric(m, i, na, nb), got) {
                (None, Err(_)) => {}
                (Some((n, d)), Ok(s)) => {
                    ensure(s.reduced() == reduce(n, d), || format!("case {case}: {m} {:?} vs {n}/{d}", s.reduced()))?;
                    let exact = n as f64 / d as f64;
                    ensure((s.value() - exact).abs() <= 1e-12, || format!("case {case}: {m} float drift"))?;
                    values.push((n, d));
                    checked += 1;
                }
                (want, got) => return Err(format!("case {case}: {m} defined-ness differs ({want:?} vs {got:?})")),
            }
        }
        if values.len() == 3 {
            let le = |x: (u64, u64), y: (u64, u64)| x.0 as u128 * y.1 as u128 <= y.0 as u128 * x.1 as u128;
            ensure(le(values[0], values[1]) && le(values[1], values[2]), || format!("case {case}: ordering broken"))?;
        }
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(1), || format!("took {took:?}"))?;
    Ok(format!("1000 set pairs, {checked} metric values exact, ordering holds, {took:.2?}"))
}

fn criterion_2() -> Outcome {
    let mut rng = StdRng::seed_from_u64(2);
    for case in 0..500 {
        let b = {
            let mut v = random_set(&mut rng, 50);
            if v.is_empty() {
                v.push(7);
            }
            v
        };
        let a: Vec<u32> = b.iter().copied().filter(|_| rng.gen_bool(0.6)).collect();
        let a = if a.is_empty() { vec![b[0]] } else { a };
        let ov = similarity(&a, &b, Metric::Overlap).map_err(|e| e.to_string())?;
        ensure(ov.is_perfect(), || format!("case {case}: subset overlap {:?}", ov.reduced()))?;
        for m in Metric::ALL {
            ensure(similarity(&b, &b, m).unwrap().is_perfect(), || format!("case {case}: A=B {m} not 1"))?;
        }
        let c: Vec<u32> = b.iter().map(|x| x + 1000).collect();
        for m in Metric::ALL {
            ensure(similarity(&b, &c, m).unwrap().is_zero(), || format!("case {case}: disjoint {m} not 0"))?;
        }
    }
    Ok("500 cases: subset overlap = 1, identical = 1, disjoint = 0".into())
}

// ---------------------------------------------------------------------- 3

/// Best matches by brute force over the full route cross product.
fn brute_force_pairs(inst: &Instance) -> BTreeMap<(IpPrefix, IpPrefix), (u64, u64, u64)> {
    let mut sets: BTreeMap<IpPrefix, BTreeSet<&str>> = BTreeMap::new();
    for (d, addrs) in inst.retained() {
        for a in addrs {
            if let Some((p, _)) = lpm_scan(&inst.routes, &a) {
                sets.entry(p).or_default().insert(d);
            }
        }
    }
    let v4: Vec<IpPrefix> = inst.routes.iter().map(|r| r.0).filter(|p| p.is_v4()).collect();
    let v6: Vec<IpPrefix> = inst.routes.iter().map(|r| r.0).filter(|p| !p.is_v4()).collect();
    let empty = BTreeSet::new();
    let mut score: BTreeMap<(IpPrefix, IpPrefix), (u64, u64, u64)> = BTreeMap::new();
    for p4 in &v4 {
        for p6 in &v6 {
            let a = sets.get(p4).unwrap_or(&empty);
            let b = sets.get(p6).unwrap_or(&empty);
            let i = a.intersection(b).count() as u64;
            if i > 0 {
                score.insert((*p4, *p6), (i, a.len() as u64, b.len() as u64));
            }
        }
    }
    let j = |s: &(u64, u64, u64)| (s.0, s.1 + s.2 - s.0);
    let gt = |x: (u64, u64), y: (u64, u64)| x.0 as u128 * y.1 as u128 > y.0 as u128 * x.1 as u128;
    let mut best: BTreeMap<(bool, IpPrefix), (u64, u64)> = BTreeMap::new();
    for ((p4, p6), s) in &score {
        for key in [(true, *p4), (false, *p6)] {
            let e = best.entry(key).or_insert(j(s));
            if gt(j(s), *e) {
                *e = j(s);
            }
        }
    }
    let eq = |x: (u64, u64), y: (u64, u64)| x.0 as u128 * y.1 as u128 == y.0 as u128 * x.1 as u128;
    score.into_iter().filter(|((p4, p6), s)| eq(j(s), best[&(true, *p4)]) || eq(j(s), best[&(false, *p6)])).collect()
}

fn criterion_3() -> Outcome {
    let mut rng = StdRng::seed_from_u64(3);
    let start = Instant::now();
    let mut total_pairs = 0;
    for case in 0..50 {
        let inst = random_instance(&mut rng, 500, 60);
        let want = brute_force_pairs(&inst);
        let det = detect(&inst.snapshot(), &inst.route_table(), Metric::Jaccard, false);
        let got: BTreeMap<(IpPrefix, IpPrefix), (u64, u64, u64)> =
            det.pairs.iter().map(|p| (p.key(), (p.score.intersection, p.score.size_a, p.score.size_b))).collect();
        ensure(got.len() == det.pairs.len(), || format!("case {case}: duplicate pairs"))?;
        ensure(got == want, || format!("case {case}: detect {} pairs, brute force {}", got.len(), want.len()))?;
        total_pairs += want.len();
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(30), || format!("took {took:?}"))?;
    Ok(format!("50 snapshots, {total_pairs} best-match pairs identical to brute force, {took:.2?}"))
}

// ---------------------------------------------------------------------- 4

struct Tunable {
    inst: Instance,
    snapshot: ResolutionSnapshot,
    routes: RouteTable,
    tries: TuningTries,
    pairs: Vec<SiblingPair>,
}

fn tunable(inst: Instance) -> Tunable {
    let snapshot = inst.snapshot();
    let routes = inst.route_table();
    let ds = identify_ds_domains(&snapshot);
    let retained = build_prefix_domain_index(&snapshot, &ds, &routes).retained_ids();
    let tries = build_tuning_tries(&snapshot, &retained);
    let pairs = detect(&snapshot, &routes, Metric::Jaccard, false).pairs;
    Tunable { inst, snapshot, routes, tries, pairs }
}

/// Domains with an address in `p`, by scanning the retained rows.
fn domains_in<'a>(retained: &BTreeMap<&'a str, Vec<IpAddr>>, p: &IpPrefix) -> BTreeSet<&'a str> {
    retained.iter().filter(|(_, addrs)| addrs.iter().any(|a| in_prefix(p, a))).map(|(d, _)| *d).collect()
}

fn jaccard_of(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> (u64, u64) {
    let i = a.intersection(b).count() as u64;
    (i, a.len() as u64 + b.len() as u64 - i)
}

fn ge(x: (u64, u64), y: (u64, u64)) -> bool {
    x.0 as u128 * y.1 as u128 >= y.0 as u128 * x.1 as u128
}

fn mean_output_jaccard(t: &Tunable, t4: u8, t6: u8) -> f64 {
    let set = sp_tuner_ms(&t.pairs, &t.tries, &TunerConfig::more_specific(t4, t6)).unwrap();
    let v = set.jaccard_values();
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_4() -> Outcome {
    let mut rng = StdRng::seed_from_u64(4);
    let mut instances = 0;
    let (mut outputs, mut branches, mut below) = (0, 0, 0);
    while instances < 100 {
        let t = tunable(random_instance(&mut rng, 150, 20));
        if t.pairs.is_empty() {
            continue;
        }
        instances += 1;
        let (t4, t6) = (rng.gen_range(16..=32u8), rng.gen_range(32..=128u8));
        let cfg = TunerConfig::more_specific(t4, t6);
        let set = sp_tuner_ms(&t.pairs, &t.tries, &cfg).map_err(|e| e.to_string())?;
        let retained = t.inst.retained();
        let names = |ids: &[u32]| -> BTreeSet<&str> {
            ids.iter().map(|&d| retained.get_key_value(t.snapshot.name(d)).unwrap().0).copied().collect()
        };
        for (i, input) in t.pairs.iter().enumerate() {
            let d4 = domains_in(&retained, &input.v4);
            let d6 = domains_in(&retained, &input.v6);
            let input_j = jaccard_of(&d4, &d6);
            let want: BTreeSet<&str> = d4.union(&d6).copied().collect();
            let mut got: BTreeSet<&str> = BTreeSet::new();
            for p in set.outputs_of(i) {
                outputs += 1;
                let (o4, o6) = (domains_in(&retained, &p.v4), domains_in(&retained, &p.v6));
                got.extend(o4.iter().chain(&o6));
                let j = jaccard_of(&o4, &o6);
                ensure(j == (p.score.intersection, p.score.union()), || {
                    format!("{} / {}: score mismatch", p.v4, p.v6)
                })?;
                ensure(p.v4.len() <= t4.max(input.v4.len()) && p.v6.len() <= t6.max(input.v6.len()), || {
                    format!("{} / {} exceeds ({t4},{t6})", p.v4, p.v6)
                })?;
                match p.provenance {
                    Provenance::Branch => {
                        branches += 1;
                        below += usize::from(!ge(j, input_j));
                    }
                    _ => ensure(ge(j, input_j), || format!("{} / {} below its input", p.v4, p.v6))?,
                }
            }
            for u in set.unmatched.iter().filter(|u| u.input == i) {
                got.extend(names(&u.domains));
            }
            ensure(got == want, || format!("input {} / {}: domain union changed", input.v4, input.v6))?;
        }
    }

    // Threshold trend on the bundled uplift corpus.
    let grid = [(16u8, 32u8), (20, 48), (24, 48), (28, 96)];
    let t = tunable(load_fixture("uplift"));
    let means: Vec<f64> = grid.iter().map(|&(a, b)| mean_output_jaccard(&t, a, b)).collect();
    ensure(means.windows(2).all(|w| w[1] >= w[0] - 1e-12), || format!("mean Jaccard not monotone: {means:?}"))?;
    let sweep = threshold_sweep(&t.pairs, &t.tries, &[grid[3].0], &[grid[3].1]).unwrap();
    ensure((sweep[0].mean_jaccard - means[3]).abs() < 1e-12, || "sweep disagrees with direct run".into())?;
    let trend: Vec<String> = means.iter().map(|m| format!("{m:.3}")).collect();
    Ok(format!(
        "100 instances, {outputs} outputs ({branches} branch, {below} branch below input), no domain loss; fixture mean J {}",
        trend.join(" -> ")
    ))
}

fn load_fixture(name: &str) -> Instance {
    let dir = fixture(name);
    let snap = std::fs::read_to_string(dir.join("snapshot.csv")).unwrap();
    let rows = snap
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[3].to_string(), f[4].parse().unwrap())
        })
        .collect();
    let routes_text = std::fs::read_to_string(dir.join("routes.csv")).unwrap();
    let routes = routes_text
        .lines()
        .skip(1)
        .map(|l| {
            let (p, a) = l.split_once(',').unwrap();
            (p.parse().unwrap(), a.parse().unwrap())
        })
        .collect();
    Instance { rows, routes }
}

// ---------------------------------------------------------------------- 5

fn run_cli(args: &[&str]) -> Result<(), String> {
    let mut full = vec!["sibprefix"];
    full.extend_from_slice(args);
    match sibprefix_cli::run(full) {
        0 => Ok(()),
        code => Err(format!("sibprefix {} exited {code}", args.join(" "))),
    }
}

fn read_json(path: &std::path::Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn criterion_5() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().to_str().unwrap();
    let snap = fixture("uplift/snapshot.csv");
    let routes = fixture("uplift/routes.csv");
    let (snap, routes) = (snap.to_str().unwrap(), routes.to_str().unwrap());
    run_cli(&["--out", out, "detect", "--snapshot", snap, "--routes", routes])?;
    let pairs = sibprefix_core::record::read_records(std::fs::File::open(dir.path().join("pairs.jsonl")).unwrap())
        .map_err(|e| e.to_string())?;
    let got: BTreeSet<String> = pairs.iter().map(|r| format!("{} {}", r.v4, r.v6)).collect();
    let want: BTreeSet<String> = (1..=5)
        .flat_map(|i| [format!("81.0.{i}.0/24 2a02:{i}::/48"), format!("81.1.{i}.0/24 2a03:{i}::/48")])
        .collect();
    ensure(got == want, || format!("detect recovered {got:?}"))?;
    let before = read_json(&dir.path().join("detect_summary.json"))["perfect_fraction"].as_f64().unwrap();
    ensure(before == 0.5, || format!("perfect fraction before tuning {before}"))?;

    let pairs_path = dir.path().join("pairs.jsonl");
    run_cli(&[
        "--out",
        out,
        "tune",
        "--mode",
        "ms",
        "--v4-thresh",
        "28",
        "--v6-thresh",
        "96",
        "--pairs",
        pairs_path.to_str().unwrap(),
        "--snapshot",
        snap,
        "--routes",
        routes,
    ])?;
    let s = read_json(&dir.path().join("tune_summary.json"));
    let (b, a) = (s["perfect_fraction_before"].as_f64().unwrap(), s["perfect_fraction_after"].as_f64().unwrap());
    ensure(b == 0.5 && a == 1.0, || format!("perfect fraction {b} -> {a}"))?;
    Ok(format!(
        "detect recovers all 10 planted pairs; perfect fraction {b} -> {a} over {} tuned pairs",
        s["output_pairs"]
    ))
}

// ---------------------------------------------------------------------- 6

fn ls_case(
    extra: &[(&str, &str, &str)],
    routes: &[(&str, u32)],
    pair: (&str, &str),
    cfg: TunerConfig,
) -> Result<(SiblingPair, SimilarityScore), String> {
    let rows: Vec<(String, IpAddr)> = extra
        .iter()
        .flat_map(|(d, a4, a6)| [(d.to_string(), a4.parse().unwrap()), (d.to_string(), a6.parse().unwrap())])
        .collect();
    let inst = Instance { rows, routes: routes.iter().map(|(p, a)| (p.parse().unwrap(), *a)).collect() };
    let t = tunable(inst);
    let v4: IpPrefix = pair.0.parse().unwrap();
    let v6: IpPrefix = pair.1.parse().unwrap();
    let origin = (t.routes.covering_route(&v4).unwrap().origin_asn, t.routes.covering_route(&v6).unwrap().origin_asn);
    let input = SiblingPair {
        v4,
        v6,
        score: SimilarityScore::from_counts(Metric::Jaccard, 0, 1, 1).unwrap(),
        provenance: Provenance::Default,
        origin: Some(origin),
        shared_domains: None,
    };
    let set = sp_tuner_ls(&[input], &t.tries, &t.routes, &cfg).map_err(|e| e.to_string())?;
    ensure(set.pairs.len() == 1, || "LS must emit one pair per input".into())?;
    let out = set.pairs[0].pair.clone();
    ensure(out.score.cmp_value(&set.input_scores[0]).is_ge(), || "LS output below input".into())?;
    Ok((out, set.input_scores[0]))
}

fn criterion_6() -> Outcome {
    let base = [("d1", "81.5.0.1", "2a05::1"), ("d2", "81.5.0.2", "2a05::2"), ("d3", "81.5.1.1", "2a05::3")];
    let uniform = [("81.5.0.0/16", 64500), ("81.5.0.0/24", 64500), ("81.5.1.0/24", 64500), ("2a05::/32", 64500)];
    let ls = TunerConfig::less_specific(1, 4);

    // (a) The /23 supernet pulls in d3: 2/3 -> 1.
    let (a, a_in) = ls_case(&base, &uniform, ("81.5.0.0/24", "2a05::/48"), ls)?;
    ensure(a.v4.to_string() == "81.5.0.0/23" && a.v6.to_string() == "2a05::/48" && a.score.is_perfect(), || {
        format!("(a) got {} / {} {:?}", a.v4, a.v6, a.score.reduced())
    })?;
    ensure(a_in.reduced() == (2, 3), || "(a) input score".into())?;

    // (b) Same data, but the neighbouring /24 belongs to another AS.
    let split = [("81.5.0.0/16", 64500), ("81.5.0.0/24", 64500), ("81.5.1.0/24", 64501), ("2a05::/32", 64500)];
    let (b, _) = ls_case(&base, &split, ("81.5.0.0/24", "2a05::/48"), ls)?;
    ensure(
        b.v4.to_string() == "81.5.0.0/24" && b.v6.to_string() == "2a05::/48" && b.score.reduced() == (2, 3),
        || format!("(b) got {} / {} {:?}", b.v4, b.v6, b.score.reduced()),
    )?;

    // (c) Each IPv6 level up adds one domain; the budget caps the climb.
    let ladder = [
        ("d1", "81.5.0.1", "2a05::1"),
        ("d2", "81.5.0.2", "2a05::2"),
        ("d3", "81.5.0.3", "2a05:0:1::1"),
        ("d4", "81.5.0.4", "2a05:0:2::1"),
        ("d5", "81.5.0.5", "2a05:0:4::1"),
        ("d6", "81.5.0.6", "2a05:0:8::1"),
        ("d7", "81.5.0.7", "2a05:0:10::1"),
    ];
    let (c4, _) = ls_case(&ladder, &uniform, ("81.5.0.0/24", "2a05::/48"), ls)?;
    ensure(
        c4.v4.to_string() == "81.5.0.0/24" && c4.v6.to_string() == "2a05::/44" && c4.score.reduced() == (6, 7),
        || format!("(c) limit 4 got {} / {} {:?}", c4.v4, c4.v6, c4.score.reduced()),
    )?;
    let (c5, _) = ls_case(&ladder, &uniform, ("81.5.0.0/24", "2a05::/48"), TunerConfig::less_specific(1, 5))?;
    ensure(c5.v6.to_string() == "2a05::/43" && c5.score.is_perfect(), || format!("(c) limit 5 got {}", c5.v6))?;
    let (c0, _) = ls_case(&ladder, &uniform, ("81.5.0.0/24", "2a05::/48"), TunerConfig::less_specific(1, 0))?;
    ensure(c0.v6.to_string() == "2a05::/48", || "(c) zero budget moved".into())?;

    // No LS output below its input over random instances.
    let mut rng = StdRng::seed_from_u64(6);
    let mut n = 0;
    for _ in 0..50 {
        let t = tunable(random_instance(&mut rng, 150, 20));
        let set = sp_tuner_ls(&t.pairs, &t.tries, &t.routes, &ls).map_err(|e| e.to_string())?;
        for tp in &set.pairs {
            n += 1;
            ensure(tp.pair.score.cmp_value(&set.input_scores[tp.input]).is_ge(), || {
                format!("{} / {} worsened", tp.pair.v4, tp.pair.v6)
            })?;
        }
    }
    Ok(format!("supernet, AS-boundary and level-limit fixtures as expected; {n} random LS outputs never worse"))
}

// ---------------------------------------------------------------------- 7

fn toy(bits: u16, len: u8) -> IpPrefix {
    IpPrefix::new(IpAddr::V4(Ipv4Addr::from((bits as u32) << 16)), len).unwrap()
}

fn toy_covers(outer: (u16, u8), inner: (u16, u8)) -> bool {
    outer.1 <= inner.1 && (outer.1 == 0 || outer.0 >> (16 - outer.1) == inner.0 >> (16 - outer.1))
}

fn rov_oracle(roas: &[(u16, u8, u8, u32)], ann: (u16, u8), origin: u32) -> RovStatus {
    let covering: Vec<_> = roas.iter().filter(|r| toy_covers((r.0, r.1), ann)).collect();
    if covering.is_empty() {
        RovStatus::NotFound
    } else if covering.iter().any(|r| r.3 != 0 && r.3 == origin && ann.1 <= r.2) {
        RovStatus::Valid
    } else {
        RovStatus::Invalid
    }
}

fn criterion_7() -> Outcome {
    // Every announcement: all prefixes of length <= 12 in the 16-bit space.
    let anns: Vec<(u16, u8)> =
        (0..=12u8).flat_map(|len| (0..1u32 << len).map(move |i| (((i << (16 - len as u32)) as u16), len))).collect();
    // ROA sets: every single ROA over prefixes of length <= 3 with three
    // max-length choices and three ASNs (AS0 included), plus random sets of
    // two and three ROAs anywhere in the space.
    let mut sets: Vec<Vec<(u16, u8, u8, u32)>> = vec![vec![]];
    for len in 0..=3u8 {
        for i in 0..1u32 << len {
            let b = (i << (16 - len as u32)) as u16;
            for ml in [len, (len + 12) / 2, 12] {
                for asn in [0, 1, 2] {
                    sets.push(vec![(b, len, ml, asn)]);
                }
            }
        }
    }
    let mut rng = StdRng::seed_from_u64(7);
    for k in [2, 3] {
        for _ in 0..150 {
            let set = (0..k)
                .map(|_| {
                    let (b, len) = anns[rng.gen_range(0..anns.len())];
                    (b, len, rng.gen_range(len..=12), rng.gen_range(0..=2))
                })
                .collect();
            sets.push(set);
        }
    }
    let mut checks = 0u64;
    for set in &sets {
        let roas: RoaSet = set.iter().map(|&(b, l, m, a)| Roa::new(toy(b, l), m, a, None).unwrap()).collect();
        for &(b, l) in &anns {
            let p = toy(b, l);
            for origin in [1, 2] {
                let want = rov_oracle(set, (b, l), origin);
                let got = validate_rov(&p, origin, &roas);
                ensure(got == want, || format!("{set:?} announcing {p} from AS{origin}: {got} vs {want}"))?;
                checks += 1;
            }
        }
    }

    // Exhaustive: every combination of up to three ROAs drawn from an
    // alphabet of 42 (prefixes of length <= 2, max length exact or 6, AS0/1/2)
    // against every announcement of length <= 7.
    let alphabet: Vec<(u16, u8, u8, u32)> = anns
        .iter()
        .filter(|a| a.1 <= 2)
        .flat_map(|&(b, l)| [l, 6].into_iter().flat_map(move |m| [0, 1, 2].map(|asn| (b, l, m, asn))))
        .collect();
    let short: Vec<(u16, u8)> = anns.iter().copied().filter(|a| a.1 <= 7).collect();
    let n = alphabet.len();
    let mut combos = 0u64;
    for i in 0..=n {
        for j in i..=n {
            for k in j..=n {
                // Index n stands for "no ROA", giving the smaller combinations.
                let set: Vec<_> = [i, j, k].iter().filter(|&&x| x < n).map(|&x| alphabet[x]).collect();
                let roas: RoaSet = set.iter().map(|&(b, l, m, a)| Roa::new(toy(b, l), m, a, None).unwrap()).collect();
                combos += 1;
                for &(b, l) in &short {
                    let p = toy(b, l);
                    for origin in [1, 2] {
                        let want = rov_oracle(&set, (b, l), origin);
                        let got = validate_rov(&p, origin, &roas);
                        ensure(got == want, || format!("{set:?} announcing {p} from AS{origin}: {got} vs {want}"))?;
                        checks += 1;
                    }
                }
            }
        }
    }

    let statuses = [RovStatus::Valid, RovStatus::Invalid, RovStatus::NotFound];
    let mut counts: BTreeMap<PairRovCategory, u64> = BTreeMap::new();
    for _ in 0..10_000 {
        let (a, b) = (*statuses.choose(&mut rng).unwrap(), *statuses.choose(&mut rng).unwrap());
        let c = pair_rov_category(a, b);
        ensure(c == pair_rov_category(b, a), || format!("asymmetric on {a}/{b}"))?;
        let hits = PairRovCategory::ALL.iter().filter(|x| **x == c).count();
        ensure(hits == 1, || "category outside the partition".into())?;
        *counts.entry(c).or_default() += 1;
    }
    ensure(counts.values().sum::<u64>() == 10_000 && counts.len() == 6, || format!("partition counts {counts:?}"))?;
    Ok(format!(
        "{} sampled ROA sets x {} announcements + {combos} exhaustive combinations x {}: {checks} checks, 0 mismatches; 10000 status pairs over 6 categories",
        sets.len(),
        anns.len(),
        short.len()
    ))
}

// ---------------------------------------------------------------------- 8

fn record(v4: IpPrefix, v6: IpPrefix, i: u64, a: u64, b: u64) -> PairRecord {
    PairRecord::from_pair(
        &SiblingPair {
            v4,
            v6,
            score: SimilarityScore::from_counts(Metric::Jaccard, i, a, b).unwrap(),
            provenance: Provenance::Default,
            origin: None,
            shared_domains: None,
        },
        None,
    )
}

fn criterion_8() -> Outcome {
    let mut rng = StdRng::seed_from_u64(8);
    let mut totals = [0usize; 3];
    for case in 0..100 {
        let keys: Vec<(IpPrefix, IpPrefix)> =
            (0..60).map(|k| (toy(k * 256, 24), format!("2a06:{k:x}::/48").parse().unwrap())).collect();
        let counts = |rng: &mut StdRng| {
            let a = rng.gen_range(1..6u64);
            let b = rng.gen_range(1..6u64);
            (rng.gen_range(1..=a.min(b)), a, b)
        };
        let mut old = Vec::new();
        let mut new = Vec::new();
        for &(k4, k6) in &keys {
            let o = counts(&mut rng);
            let in_old = rng.gen_bool(0.6);
            if in_old {
                old.push(record(k4, k6, o.0, o.1, o.2));
            }
            if rng.gen_bool(0.7) {
                // Same counts, scaled counts (same rational) or fresh ones.
                let n = match rng.gen_range(0..3) {
                    0 if in_old => o,
                    1 if in_old => (o.0 * 2, o.1 * 2, o.2 * 2),
                    _ => counts(&mut rng),
                };
                new.push(record(k4, k6, n.0, n.1, n.2));
            }
        }
        old.shuffle(&mut rng);
        new.shuffle(&mut rng);
        let d = diff_sibling_sets(&old, &new).map_err(|e| e.to_string())?;
        let by_key: BTreeMap<_, _> = old.iter().map(|r| (r.key(), r)).collect();
        let [n, c, u] = [DiffCategory::New, DiffCategory::Changed, DiffCategory::Unchanged].map(|x| d.count(x));
        ensure(n + c + u == new.len(), || format!("case {case}: {n}+{c}+{u} != {}", new.len()))?;
        for e in &d.entries {
            let now = new.iter().find(|r| r.key() == (e.v4, e.v6)).unwrap();
            let expect = match by_key.get(&(e.v4, e.v6)) {
                None => DiffCategory::New,
                Some(o)
                    if reduce(o.shared_domains, o.v4_domains + o.v6_domains - o.shared_domains)
                        == reduce(now.shared_domains, now.v4_domains + now.v6_domains - now.shared_domains) =>
                {
                    DiffCategory::Unchanged
                }
                Some(_) => DiffCategory::Changed,
            };
            ensure(e.category == expect, || format!("case {case}: {} / {} is {:?}", e.v4, e.v6, e.category))?;
            if e.category == DiffCategory::Unchanged {
                let o = by_key[&(e.v4, e.v6)];
                ensure(
                    o.jaccard_ratio() == now.jaccard_ratio() && o.jaccard.to_bits() == now.jaccard.to_bits(),
                    || format!("case {case}: unchanged pair differs in bits"),
                )?;
            }
        }
        totals[0] += n;
        totals[1] += c;
        totals[2] += u;
    }

    // Visibility against a recount straight from the generated rows.
    let routes = RouteTable::new();
    for case in 0..20 {
        let months = rng.gen_range(2..=8u32);
        let mut raw: Vec<Vec<(String, IpAddr)>> = Vec::new();
        for _ in 0..months {
            let rows = (0..150)
                .flat_map(|d| {
                    let name = format!("v{}.example", rng.gen_range(0..60) + d % 2);
                    let a: IpAddr = if rng.gen_bool(0.5) {
                        IpAddr::V4(Ipv4Addr::new(81, 9, (d % 200) as u8, 1))
                    } else {
                        format!("2a06::{d:x}").parse().unwrap()
                    };
                    [(name, a)]
                })
                .collect();
            raw.push(rows);
        }
        let snaps: Vec<ResolutionSnapshot> = raw
            .iter()
            .enumerate()
            .map(|(m, rows)| {
                let date = chrono::NaiveDate::from_ymd_opt(2023, m as u32 + 1, 1).unwrap();
                let recs = rows.iter().map(|(n, a)| ResolutionRecord {
                    snapshot_date: date,
                    query_name: n.clone(),
                    response_name: n.clone(),
                    address: *a,
                    version: IpVersion::of(a),
                });
                ResolutionSnapshot::from_records(recs, &FilterPolicy::default())
            })
            .collect();
        let series = SnapshotSeries::new(
            snaps.iter().map(|s| SeriesEntry { date: s.date.unwrap(), snapshot: s, routes: &routes }).collect(),
        )
        .map_err(|e| e.to_string())?;
        let mut oracle: BTreeMap<String, usize> = BTreeMap::new();
        for rows in &raw {
            let mut fam: BTreeMap<&str, (bool, bool)> = BTreeMap::new();
            for (n, a) in rows {
                let e = fam.entry(n.as_str()).or_default();
                if a.is_ipv4() {
                    e.0 = true
                } else {
                    e.1 = true
                }
            }
            for (n, (v4, v6)) in fam {
                if v4 && v6 {
                    *oracle.entry(n.to_string()).or_default() += 1;
                }
            }
        }
        let got = visibility_counts(&series);
        ensure(got == oracle, || format!("case {case}: visibility counts differ"))?;
        for (n, c) in &oracle {
            ensure(visibility_frequency(&series, n) == *c, || format!("case {case}: {n}"))?;
        }
    }
    Ok(format!(
        "100 diff fixtures: {} new + {} changed + {} unchanged partition every current set; 20 series recounted",
        totals[0], totals[1], totals[2]
    ))
}

// ---------------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let snap = dir.path().join("snapshot.csv");
    let routes = dir.path().join("routes.csv");
    {
        use std::io::Write;
        let mut rng = StdRng::seed_from_u64(9);
        let mut w = std::io::BufWriter::new(std::fs::File::create(&snap).unwrap());
        writeln!(w, "date,query_name,rr_type,response_name,address").unwrap();
        // 250k domains x (2 A + 2 AAAA) = 1M records over 4096 sites.
        for d in 0..250_000u32 {
            let site = rng.gen_range(0..4096u32);
            let s6 = if rng.gen_bool(0.9) { site } else { rng.gen_range(0..4096) };
            for _ in 0..2 {
                writeln!(
                    w,
                    "2024-03-01,d{d}.example,A,d{d}.example,81.{}.{}.{}",
                    site >> 8,
                    site & 255,
                    rng.gen_range(1..255)
                )
                .unwrap();
            }
            for _ in 0..2 {
                writeln!(w, "2024-03-01,d{d}.example,AAAA,d{d}.example,2a07:{:x}::{:x}", s6, rng.gen::<u16>()).unwrap();
            }
        }
        let mut r = std::io::BufWriter::new(std::fs::File::create(&routes).unwrap());
        writeln!(r, "prefix,origin_asn").unwrap();
        for s in 0..4096u32 {
            writeln!(r, "81.{}.{}.0/24,{}", s >> 8, s & 255, 64500 + s % 100).unwrap();
            writeln!(r, "2a07:{:x}::/32,{}", s, 64500 + s % 100).unwrap();
        }
    }
    let (snap, routes) = (snap.to_str().unwrap(), routes.to_str().unwrap());
    let mut times = Vec::new();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let start = Instant::now();
        run_cli(&["--out", out.to_str().unwrap(), "detect", "--snapshot", snap, "--routes", routes])?;
        times.push(start.elapsed());
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap())
            .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
            .collect();
        files.sort();
        outputs.push(files);
    }
    ensure(outputs[0] == outputs[1], || "outputs differ between runs".into())?;
    let pairs =
        outputs[0].iter().find(|f| f.0 == "pairs.jsonl").map_or(0, |f| f.1.iter().filter(|&&b| b == b'\n').count());
    let slowest = *times.iter().max().unwrap();
    ensure(slowest < Duration::from_secs(60), || format!("detect took {slowest:?}"))?;
    Ok(format!("1M records, {pairs} pairs, byte-identical outputs; runs took {:.2?} / {:.2?}", times[0], times[1]))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("metric oracle", criterion_1),
        ("subset property", criterion_2),
        ("best-match equivalence", criterion_3),
        ("MS no-domain-loss and monotonicity", criterion_4),
        ("perfect-match uplift", criterion_5),
        ("LS fixtures", criterion_6),
        ("ROV oracle", criterion_7),
        ("longitudinal partition", criterion_8),
        ("determinism and throughput", criterion_9),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let result = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match result {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
