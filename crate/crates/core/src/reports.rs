//! Ranking, overlap, and diversity summaries over scored classes.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use crate::contribution::ContributionMatrix;
use crate::error::{Error, Result};
use crate::metadata::{ClassMetadata, UNKNOWN_REGION};
use crate::relevance::RelevanceScores;
use crate::schema::Stratum;

/// The first `n` classes by descending score, ties broken by class id.
pub fn top_n(scores: &RelevanceScores, n: usize) -> Vec<(&str, f64)> {
    scores.ranking().into_iter().take(n).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapResult {
    /// Shared classes in the two top lists divided by the compared depth.
    pub overlap: f64,
    /// Depth actually compared, after clamping to the shorter list.
    pub k_used: usize,
    pub truncated: bool,
}

/// Fraction of classes the two top-k lists have in common.
pub fn overlap_at_k(a: &RelevanceScores, b: &RelevanceScores, k: usize) -> Result<OverlapResult> {
    if k == 0 {
        return Err(Error::BadK);
    }
    let k_used = k.min(a.len()).min(b.len());
    if k_used == 0 {
        return Err(Error::EmptyInput);
    }
    let top_a: BTreeSet<&str> = top_n(a, k_used).into_iter().map(|(c, _)| c).collect();
    let top_b: BTreeSet<&str> = top_n(b, k_used).into_iter().map(|(c, _)| c).collect();
    let shared = top_a.intersection(&top_b).count();
    Ok(OverlapResult {
        overlap: shared as f64 / k_used as f64,
        k_used,
        truncated: k_used < k,
    })
}

/// Distinct countries seen among the top `n` classes, for each prefix
/// length from 1 to `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiversityCurve {
    /// (prefix length, distinct countries) pairs.
    pub points: Vec<(usize, usize)>,
    /// True when a class without metadata fell inside the window; it is
    /// counted under a single unknown region.
    pub has_unknown: bool,
}

pub fn diversity_curve(
    scores: &RelevanceScores,
    metadata: &ClassMetadata,
    max_n: usize,
) -> DiversityCurve {
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    let mut points = Vec::new();
    let mut has_unknown = false;
    for (i, (class, _)) in scores.ranking().into_iter().take(max_n).enumerate() {
        let country = metadata.country(class);
        if country == UNKNOWN_REGION {
            has_unknown = true;
        }
        seen.insert(country);
        points.push((i + 1, seen.len()));
    }
    DiversityCurve {
        points,
        has_unknown,
    }
}

/// Distinct countries among the top `n` classes.
pub fn distinct_countries_in_top(
    scores: &RelevanceScores,
    metadata: &ClassMetadata,
    n: usize,
) -> usize {
    diversity_curve(scores, metadata, n)
        .points
        .last()
        .map(|(_, d)| *d)
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionLevel {
    Country,
    Continent,
}

impl RegionLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            RegionLevel::Country => "country",
            RegionLevel::Continent => "continent",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "country" => Ok(RegionLevel::Country),
            "continent" => Ok(RegionLevel::Continent),
            other => Err(Error::Invalid(format!("unknown region level {other:?}"))),
        }
    }
}

/// Total score mass per region. Scores must be normalized so the shares
/// form a distribution.
pub fn region_breakdown(
    scores: &RelevanceScores,
    metadata: &ClassMetadata,
    level: RegionLevel,
) -> Result<BTreeMap<String, f64>> {
    if !scores.is_normalized() {
        return Err(Error::UnnormalizedScores);
    }
    let mut shares: BTreeMap<String, f64> = BTreeMap::new();
    for (class, score) in scores.iter() {
        let region = match level {
            RegionLevel::Country => metadata.country(class),
            RegionLevel::Continent => metadata.continent(class),
        };
        *shares.entry(region.to_string()).or_insert(0.0) += score;
    }
    Ok(shares)
}

/// Classes ranked by aggregated weight inside the strata matching
/// `pattern`. An all-wildcard pattern reproduces the global ranking.
/// Returns an empty list when nothing matches.
pub fn per_stratum_ranking(matrix: &ContributionMatrix, pattern: &Stratum) -> Vec<(String, f64)> {
    let mut mass: BTreeMap<&str, f64> = BTreeMap::new();
    for ((class, stratum), cell) in matrix.cells() {
        if stratum.matches(pattern) {
            *mass.entry(class.as_str()).or_insert(0.0) += cell.weight;
        }
    }
    if mass.is_empty() {
        log::warn!("no contributions match stratum pattern {pattern}");
        return Vec::new();
    }
    let mut rows: Vec<(String, f64)> = mass.into_iter().map(|(c, w)| (c.to_string(), w)).collect();
    rows.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("weights are finite")
            .then_with(|| a.0.cmp(&b.0))
    });
    rows
}

/// File name for a report variant: the report name, the distinguishing
/// parameter, and the boost digest, separated by double underscores.
pub fn report_filename(name: &str, param: &str, value: &str, boost_digest: &str) -> String {
    format!(
        "{}__{}-{}__boost-{}.csv",
        sanitize(name),
        sanitize(param),
        sanitize(value),
        sanitize(boost_digest)
    )
}

fn sanitize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        if ch.is_ascii_alphanumeric() || ch == '.' || ch == '-' || ch == '_' {
            out.push(ch);
        } else {
            out.push('-');
        }
    }
    out
}

pub fn write_top_n_csv<W: Write>(rows: &[(&str, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "class_id", "score"])?;
    for (i, (class, score)) in rows.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            (*class).to_string(),
            format!("{score:.16e}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_overlap_csv<W: Write>(rows: &[(usize, OverlapResult)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "overlap", "truncated"])?;
    for (k, r) in rows {
        w.write_record([
            &k.to_string(),
            &format!("{:.16e}", r.overlap),
            &r.truncated.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_diversity_csv<W: Write>(curve: &DiversityCurve, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "distinct_countries"])?;
    for (n, distinct) in &curve.points {
        w.write_record([&n.to_string(), &distinct.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_region_csv<W: Write>(shares: &BTreeMap<String, f64>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["region", "share"])?;
    for (region, share) in shares {
        w.write_record([region.as_str(), &format!("{share:.16e}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_stratum_ranking_csv<W: Write>(rows: &[(String, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "class_id", "weight"])?;
    for (i, (class, weight)) in rows.iter().enumerate() {
        w.write_record([&(i + 1).to_string(), class, &format!("{weight:.16e}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_path<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(std::fs::File) -> Result<()>,
{
    let file = std::fs::File::create(path)?;
    write(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contribution::{ContributionRecord, MatrixBuilder};
    use crate::metadata::ClassInfo;
    use crate::relevance::WeightingConfig;
    use crate::schema::{Category, DemographicSchema};

    fn scores(pairs: &[(&str, f64)]) -> RelevanceScores {
        let raw: BTreeMap<String, f64> = pairs.iter().map(|(c, v)| (c.to_string(), *v)).collect();
        RelevanceScores::from_raw(raw).unwrap()
    }

    fn metadata(rows: &[(&str, &str, &str)]) -> ClassMetadata {
        ClassMetadata::new(
            rows.iter()
                .map(|(id, country, continent)| {
                    (
                        id.to_string(),
                        ClassInfo {
                            name: id.to_string(),
                            country: country.to_string(),
                            continent: continent.to_string(),
                        },
                    )
                })
                .collect(),
        )
    }

    #[test]
    fn identical_rankings_overlap_fully() {
        let s = scores(&[("a", 0.5), ("b", 0.3), ("c", 0.2)]);
        let r = overlap_at_k(&s, &s, 3).unwrap();
        assert_eq!(r.overlap, 1.0);
        assert!(!r.truncated);
    }

    #[test]
    fn disjoint_tops_overlap_zero() {
        let a = scores(&[("a", 0.9), ("b", 0.05), ("c", 0.05)]);
        let b = scores(&[("a", 0.05), ("b", 0.05), ("c", 0.9)]);
        let r = overlap_at_k(&a, &b, 1).unwrap();
        assert_eq!(r.overlap, 0.0);
    }

    #[test]
    fn overlap_clamps_to_list_length() {
        let s = scores(&[("a", 0.6), ("b", 0.4)]);
        let r = overlap_at_k(&s, &s, 10).unwrap();
        assert_eq!(r.k_used, 2);
        assert!(r.truncated);
        assert_eq!(r.overlap, 1.0);
        assert!(matches!(overlap_at_k(&s, &s, 0), Err(Error::BadK)));
    }

    #[test]
    fn diversity_curve_counts_distinct_countries() {
        let s = scores(&[("a", 0.4), ("b", 0.3), ("c", 0.2), ("d", 0.1)]);
        let meta = metadata(&[
            ("a", "CA", "NA"),
            ("b", "CA", "NA"),
            ("c", "JP", "AS"),
            ("d", "BR", "SA"),
        ]);
        let curve = diversity_curve(&s, &meta, 4);
        assert_eq!(curve.points, vec![(1, 1), (2, 1), (3, 2), (4, 3)]);
        assert!(!curve.has_unknown);
        assert_eq!(distinct_countries_in_top(&s, &meta, 3), 2);
    }

    #[test]
    fn missing_metadata_flags_unknown() {
        let s = scores(&[("a", 0.7), ("mystery", 0.3)]);
        let meta = metadata(&[("a", "CA", "NA")]);
        let curve = diversity_curve(&s, &meta, 2);
        assert!(curve.has_unknown);
        assert_eq!(curve.points.last(), Some(&(2, 2)));
    }

    #[test]
    fn region_shares_form_a_distribution() {
        let s = scores(&[("a", 0.5), ("b", 0.25), ("c", 0.25)]);
        let meta = metadata(&[("a", "CA", "NA"), ("b", "US", "NA"), ("c", "JP", "AS")]);
        let by_country = region_breakdown(&s, &meta, RegionLevel::Country).unwrap();
        assert_eq!(by_country.len(), 3);
        assert!((by_country.values().sum::<f64>() - 1.0).abs() < 1e-12);
        let by_continent = region_breakdown(&s, &meta, RegionLevel::Continent).unwrap();
        assert!((by_continent["NA"] - 0.75).abs() < 1e-12);
        assert!((by_continent["AS"] - 0.25).abs() < 1e-12);
    }

    fn sample_matrix() -> (DemographicSchema, ContributionMatrix) {
        let schema =
            DemographicSchema::new(vec![
                Category::new("gender", vec!["F".into(), "M".into()]).unwrap()
            ])
            .unwrap();
        let records = vec![
            ContributionRecord::new("u1", "song", 4, vec!["F".into()]),
            ContributionRecord::new("u2", "movie", 1, vec!["F".into()]),
            ContributionRecord::new("u3", "song", 1, vec!["M".into()]),
        ];
        let mut builder = MatrixBuilder::new();
        for r in &records {
            builder.add(r, &schema).unwrap();
        }
        (
            schema.clone(),
            builder.finalize(&WeightingConfig::default()),
        )
    }

    #[test]
    fn stratum_ranking_matches_pattern() {
        let (schema, matrix) = sample_matrix();
        let pattern = Stratum::pattern(&schema, &["F"]).unwrap();
        let rows = per_stratum_ranking(&matrix, &pattern);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].0, "song");
        assert!((rows[0].1 - (1.0 + 4f64.ln())).abs() < 1e-12);

        let global = per_stratum_ranking(&matrix, &Stratum::all_wildcard(&schema));
        assert!((global[0].1 - (2.0 + 4f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn unmatched_pattern_yields_empty_ranking() {
        let (schema, matrix) = sample_matrix();
        let schema2 = schema;
        let pattern = Stratum::pattern(&schema2, &["M"]).unwrap();
        let rows = per_stratum_ranking(&matrix, &pattern);
        assert_eq!(rows.len(), 1);
        let empty = {
            let s = DemographicSchema::new(vec![Category::new(
                "gender",
                vec!["F".into(), "M".into(), "X".into()],
            )
            .unwrap()])
            .unwrap();
            per_stratum_ranking(&matrix, &Stratum::pattern(&s, &["X"]).unwrap())
        };
        assert!(empty.is_empty());
    }

    #[test]
    fn filenames_are_shell_safe() {
        assert_eq!(
            report_filename("top_n", "k", "10", "a1b2c3d4"),
            "top_n__k-10__boost-a1b2c3d4.csv"
        );
        assert_eq!(
            report_filename("stratum", "cell", "gender=F|country=*", "00000000"),
            "stratum__cell-gender-F-country--__boost-00000000.csv"
        );
    }

    #[test]
    fn csv_writers_emit_expected_headers() {
        let s = scores(&[("a", 0.6), ("b", 0.4)]);
        let mut buf = Vec::new();
        write_top_n_csv(&top_n(&s, 2), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("rank,class_id,score\n"));
        assert!(text.contains("1,a,"));

        let mut buf = Vec::new();
        let r = overlap_at_k(&s, &s, 2).unwrap();
        write_overlap_csv(&[(2, r)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,overlap,truncated\n"));
        assert!(text.contains("2,1.0000000000000000e0,false"));
    }
}
