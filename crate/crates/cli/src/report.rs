//! Plot-ready aggregate tables. Every function returns finished CSV bytes
//! with rows in a fixed order, so identical inputs give identical files.

use std::collections::BTreeMap;

use sibprefix_core::detect::{similarity_sets, LabelIndex, Metric};
use sibprefix_core::record::{cdf_points, percent, PairRecord};

pub fn csv_bytes<S: AsRef<str>>(header: &[&str], rows: impl IntoIterator<Item = Vec<S>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row.iter().map(|s| s.as_ref())).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub const DOMAIN_BINS: [&str; 6] = ["1", "2-5", "6-10", "11-50", "51-100", ">100"];

pub fn domain_bin(n: u64) -> usize {
    match n {
        0..=1 => 0,
        2..=5 => 1,
        6..=10 => 2,
        11..=50 => 3,
        51..=100 => 4,
        _ => 5,
    }
}

/// Pairs by (IPv4 domain-count bin, IPv6 domain-count bin); all 36 cells.
pub fn domain_bins_table(records: &[PairRecord]) -> Vec<u8> {
    let mut grid = [[0u64; 6]; 6];
    for r in records {
        grid[domain_bin(r.v4_domains)][domain_bin(r.v6_domains)] += 1;
    }
    let total = records.len() as u64;
    let rows = (0..6).flat_map(|i| (0..6).map(move |j| (i, j))).map(|(i, j)| {
        vec![DOMAIN_BINS[i].to_string(), DOMAIN_BINS[j].to_string(), grid[i][j].to_string(), percent(grid[i][j], total)]
    });
    csv_bytes(&["v4_domains", "v6_domains", "pairs", "percent"], rows)
}

/// Pairs by (IPv4 length, IPv6 length); occupied cells only.
pub fn cidr_sizes_table(records: &[PairRecord]) -> Vec<u8> {
    let mut cells: BTreeMap<(u8, u8), u64> = BTreeMap::new();
    for r in records {
        *cells.entry((r.v4.len(), r.v6.len())).or_default() += 1;
    }
    let total = records.len() as u64;
    let rows =
        cells.into_iter().map(|((a, b), n)| vec![a.to_string(), b.to_string(), n.to_string(), percent(n, total)]);
    csv_bytes(&["v4_len", "v6_len", "pairs", "percent"], rows)
}

/// Tenth-width bin of an exact ratio; 1.0 shares the last bin.
pub fn tenth_bin(num: u64, den: u64) -> usize {
    if den == 0 {
        return 0;
    }
    ((num as u128 * 10 / den as u128) as usize).min(9)
}

fn bin_label(i: usize) -> String {
    format!("{:.1}-{:.1}", i as f64 / 10.0, (i + 1) as f64 / 10.0)
}

/// Scan-label Jaccard versus DNS Jaccard of each pair, as a 10×10 matrix.
/// Returns the table and the number of pairs without labels on either side.
pub fn scan_matrix(records: &[PairRecord], labels: &LabelIndex) -> (Vec<u8>, u64) {
    let mut grid = [[0u64; 10]; 10];
    let mut skipped = 0;
    for r in records {
        let a = labels.labels_under(&r.v4);
        let b = labels.labels_under(&r.v6);
        let Ok(score) = similarity_sets(&a, &b, Metric::Jaccard) else {
            skipped += 1;
            continue;
        };
        let (n, d) = score.ratio();
        grid[tenth_bin(r.jaccard_num, r.jaccard_den)][tenth_bin(n, d)] += 1;
    }
    let total: u64 = grid.iter().flatten().sum();
    let rows = (0..10)
        .flat_map(|i| (0..10).map(move |j| (i, j)))
        .map(|(i, j)| vec![bin_label(i), bin_label(j), grid[i][j].to_string(), percent(grid[i][j], total)]);
    (csv_bytes(&["dns_jaccard", "scan_jaccard", "pairs", "percent"], rows), skipped)
}

/// Long-format CDF table: one block of points per series label.
pub fn cdf_table(label_col: &str, value_col: &str, series: &[(String, Vec<f64>)]) -> Vec<u8> {
    let rows = series.iter().flat_map(|(label, values)| {
        cdf_points(values).into_iter().map(move |(x, f)| vec![label.clone(), x.to_string(), f.to_string()])
    });
    csv_bytes(&[label_col, value_col, "cdf"], rows)
}

/// `name,pairs,percent` rows in the given order.
pub fn count_table(name_col: &str, counts: &[(String, u64)]) -> Vec<u8> {
    let total: u64 = counts.iter().map(|c| c.1).sum();
    let rows = counts.iter().map(|(name, n)| vec![name.clone(), n.to_string(), percent(*n, total)]);
    csv_bytes(&[name_col, "pairs", "percent"], rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sibprefix_core::detect::{Provenance, SiblingPair, SimilarityScore};

    fn rec(v4: &str, v6: &str, i: u64, a: u64, b: u64) -> PairRecord {
        PairRecord::from_pair(
            &SiblingPair {
                v4: v4.parse().unwrap(),
                v6: v6.parse().unwrap(),
                score: SimilarityScore::from_counts(Metric::Jaccard, i, a, b).unwrap(),
                provenance: Provenance::Default,
                origin: None,
                shared_domains: None,
            },
            None,
        )
    }

    #[test]
    fn bins() {
        let edges = [(1, 0), (2, 1), (5, 1), (6, 2), (10, 2), (11, 3), (50, 3), (51, 4), (100, 4), (101, 5)];
        for (n, b) in edges {
            assert_eq!(domain_bin(n), b, "{n}");
        }
        assert_eq!(tenth_bin(1, 1), 9);
        assert_eq!(tenth_bin(9, 10), 9);
        assert_eq!(tenth_bin(899, 1000), 8);
        assert_eq!(tenth_bin(0, 5), 0);
    }

    #[test]
    fn single_domain_pair_lands_in_first_cell() {
        let t = String::from_utf8(domain_bins_table(&[rec("192.0.2.0/24", "2001:db8::/48", 1, 1, 1)])).unwrap();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 37);
        assert_eq!(lines[1], "1,1,1,100.00");
        assert_eq!(lines[2], "1,2-5,0,0.00");
    }

    #[test]
    fn cidr_cells() {
        let recs = [rec("192.0.2.0/24", "2001:db8::/48", 1, 1, 1), rec("198.51.100.0/24", "2001:db8:1::/48", 1, 2, 1)];
        let t = String::from_utf8(cidr_sizes_table(&recs)).unwrap();
        assert_eq!(t, "v4_len,v6_len,pairs,percent\n24,48,2,100.00\n");
    }

    #[test]
    fn count_table_percentages() {
        let t = count_table("x", &[("a".into(), 1), ("b".into(), 2)]);
        assert_eq!(String::from_utf8(t).unwrap(), "x,pairs,percent\na,1,33.33\nb,2,66.67\n");
    }
}
