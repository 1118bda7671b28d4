//! Contribution records and the weighted class-by-stratum contribution
//! matrix, plus the mergeable accumulator used to build it.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::relevance::WeightingConfig;
use crate::schema::{DemographicSchema, Stratum, UNSPECIFIED};

/// One merged log row: a contributor's items for one class, with one code per
/// schema category. Codes may still be [`UNSPECIFIED`] until
/// `priors::resolve_unspecified` has run.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ContributionRecord {
    pub contributor_id: String,
    pub class_id: String,
    pub item_count: u64,
    pub codes: Vec<String>,
}

impl ContributionRecord {
    pub fn new(
        contributor_id: impl Into<String>,
        class_id: impl Into<String>,
        item_count: u64,
        codes: Vec<String>,
    ) -> Self {
        ContributionRecord {
            contributor_id: contributor_id.into(),
            class_id: class_id.into(),
            item_count,
            codes,
        }
    }

    pub fn is_fully_specified(&self) -> bool {
        self.codes.iter().all(|c| c != UNSPECIFIED)
    }

    /// The record's full stratum. Fails on UNSPECIFIED or unknown codes
    /// (closed world).
    pub fn stratum(&self, schema: &DemographicSchema) -> Result<Stratum> {
        let codes: Vec<&str> = self.codes.iter().map(|c| c.as_str()).collect();
        Stratum::full(schema, &codes)
    }
}

/// Order-insensitive accumulator for contribution data. Merging two
/// accumulators is commutative and associative (integer item counts, set
/// unions), which is what makes chunk-parallel aggregation safe; the floating
/// weights are only computed in [`MatrixBuilder::finalize`], in one fixed
/// key order, so results are bit-identical however the input was partitioned.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatrixBuilder {
    // (class, stratum) -> contributor -> merged item count
    counts: BTreeMap<(String, Stratum), BTreeMap<String, u64>>,
}

impl MatrixBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, record: &ContributionRecord, schema: &DemographicSchema) -> Result<()> {
        if record.item_count == 0 {
            return Err(Error::Invalid(format!(
                "record for contributor {:?} class {:?} has item_count 0",
                record.contributor_id, record.class_id
            )));
        }
        let stratum = record.stratum(schema)?;
        let cell = self
            .counts
            .entry((record.class_id.clone(), stratum))
            .or_default();
        *cell.entry(record.contributor_id.clone()).or_insert(0) += record.item_count;
        Ok(())
    }

    pub fn merge(mut self, other: MatrixBuilder) -> MatrixBuilder {
        for (key, contributors) in other.counts {
            let cell = self.counts.entry(key).or_default();
            for (who, n) in contributors {
                *cell.entry(who).or_insert(0) += n;
            }
        }
        self
    }

    /// Applies the weight function per (contributor, class) count and reduces
    /// in sorted key order.
    pub fn finalize(&self, weighting: &WeightingConfig) -> ContributionMatrix {
        let mut cells = BTreeMap::new();
        let mut stratum_members: BTreeMap<Stratum, BTreeSet<&str>> = BTreeMap::new();
        let mut everyone: BTreeSet<&str> = BTreeSet::new();
        for ((class, stratum), contributors) in &self.counts {
            let mut weight = 0.0;
            for (who, n) in contributors {
                weight += weighting.weight(*n);
                stratum_members
                    .entry(stratum.clone())
                    .or_default()
                    .insert(who.as_str());
                everyone.insert(who.as_str());
            }
            cells.insert(
                (class.clone(), stratum.clone()),
                Cell {
                    weight,
                    contributors: contributors.len() as u64,
                },
            );
        }
        let stratum_contributors = stratum_members
            .into_iter()
            .map(|(s, members)| (s, members.len() as u64))
            .collect();
        ContributionMatrix::assemble(cells, stratum_contributors, everyone.len() as u64)
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// One cell of the matrix: the weighted amount A_{c,h} and how many distinct
/// contributors produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub weight: f64,
    pub contributors: u64,
}

/// The weighted contribution matrix A: cells keyed by (class, full stratum),
/// per-stratum totals A_h derived from the cells, and distinct-contributor
/// statistics (per cell, per stratum M_h, and overall M_W). Immutable; the
/// privacy operations return modified copies.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionMatrix {
    cells: BTreeMap<(String, Stratum), Cell>,
    stratum_totals: BTreeMap<Stratum, f64>,
    stratum_contributors: BTreeMap<Stratum, u64>,
    total_contributors: u64,
}

impl ContributionMatrix {
    pub(crate) fn assemble(
        cells: BTreeMap<(String, Stratum), Cell>,
        stratum_contributors: BTreeMap<Stratum, u64>,
        total_contributors: u64,
    ) -> Self {
        let stratum_totals = Self::derive_totals(&cells);
        ContributionMatrix {
            cells,
            stratum_totals,
            stratum_contributors,
            total_contributors,
        }
    }

    /// Rebuilds this matrix around a new cell map, keeping the contributor
    /// statistics (used by suppression and noise, which must not alter M_h).
    pub(crate) fn with_cells(&self, cells: BTreeMap<(String, Stratum), Cell>) -> Self {
        ContributionMatrix {
            stratum_totals: Self::derive_totals(&cells),
            cells,
            stratum_contributors: self.stratum_contributors.clone(),
            total_contributors: self.total_contributors,
        }
    }

    fn derive_totals(cells: &BTreeMap<(String, Stratum), Cell>) -> BTreeMap<Stratum, f64> {
        let mut totals: BTreeMap<Stratum, f64> = BTreeMap::new();
        for ((_, stratum), cell) in cells {
            *totals.entry(stratum.clone()).or_insert(0.0) += cell.weight;
        }
        totals
    }

    pub fn cells(&self) -> impl Iterator<Item = (&(String, Stratum), &Cell)> {
        self.cells.iter()
    }

    pub fn cell(&self, class_id: &str, stratum: &Stratum) -> Option<&Cell> {
        self.cells.get(&(class_id.to_string(), stratum.clone()))
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// A_h: weighted total of a stratum, derived from the surviving cells.
    pub fn stratum_total(&self, stratum: &Stratum) -> f64 {
        self.stratum_totals.get(stratum).copied().unwrap_or(0.0)
    }

    pub fn stratum_totals(&self) -> &BTreeMap<Stratum, f64> {
        &self.stratum_totals
    }

    /// Strata that currently have cells, in sorted order.
    pub fn strata(&self) -> impl Iterator<Item = &Stratum> {
        self.stratum_totals.keys()
    }

    pub fn classes(&self) -> BTreeSet<&str> {
        self.cells.keys().map(|(c, _)| c.as_str()).collect()
    }

    /// Unweighted-by-stratum class mass: Σ_h A_{c,h} per class.
    pub fn class_mass(&self) -> BTreeMap<&str, f64> {
        let mut mass: BTreeMap<&str, f64> = BTreeMap::new();
        for ((class, _), cell) in &self.cells {
            *mass.entry(class.as_str()).or_insert(0.0) += cell.weight;
        }
        mass
    }

    pub fn total_mass(&self) -> f64 {
        self.stratum_totals.values().sum()
    }

    /// M_h: distinct contributors that ever appeared in this stratum. Stable
    /// under suppression and noise.
    pub fn contributors_in(&self, stratum: &Stratum) -> u64 {
        self.stratum_contributors.get(stratum).copied().unwrap_or(0)
    }

    pub fn stratum_contributors(&self) -> &BTreeMap<Stratum, u64> {
        &self.stratum_contributors
    }

    /// M_W: distinct contributors overall.
    pub fn total_contributors(&self) -> u64 {
        self.total_contributors
    }

    /// Checks A_h == Σ_c A_{c,h} within a relative 1e-9 (self-diagnostic; the
    /// totals are derived so this can only fail if the struct was corrupted).
    pub fn totals_consistent(&self) -> bool {
        let recomputed = Self::derive_totals(&self.cells);
        if recomputed.len() != self.stratum_totals.len() {
            return false;
        }
        recomputed.iter().all(|(s, total)| {
            let stored = self.stratum_total(s);
            let scale = total.abs().max(stored.abs()).max(1.0);
            (stored - total).abs() <= 1e-9 * scale
        })
    }

    /// Writes `class_id,stratum,weight,contributors` rows in sorted order.
    pub fn write_csv<W: Write>(&self, schema: &DemographicSchema, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["class_id", "stratum", "weight", "contributors"])?;
        for ((class, stratum), cell) in &self.cells {
            w.write_record([
                class.as_str(),
                &stratum.encode(schema),
                &format!("{:.16e}", cell.weight),
                &cell.contributors.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, schema: &DemographicSchema, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(schema, file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Category;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn schema() -> DemographicSchema {
        DemographicSchema::new(vec![
            Category::new("gender", vec!["F".into(), "M".into()]).unwrap(),
            Category::new("country", vec!["CA".into(), "US".into()]).unwrap(),
        ])
        .unwrap()
    }

    fn rec(who: &str, class: &str, n: u64, g: &str, c: &str) -> ContributionRecord {
        ContributionRecord::new(who, class, n, vec![g.to_string(), c.to_string()])
    }

    fn build(records: &[ContributionRecord]) -> ContributionMatrix {
        let schema = schema();
        let mut b = MatrixBuilder::new();
        for r in records {
            b.add(r, &schema).unwrap();
        }
        b.finalize(&WeightingConfig::default())
    }

    #[test]
    fn single_item_weight_is_one() {
        let m = build(&[rec("u1", "c1", 1, "F", "CA")]);
        let s = Stratum::full(&schema(), &["F", "CA"]).unwrap();
        assert_abs_diff_eq!(m.cell("c1", &s).unwrap().weight, 1.0);
        assert_eq!(m.cell("c1", &s).unwrap().contributors, 1);
        assert_eq!(m.contributors_in(&s), 1);
        assert_eq!(m.total_contributors(), 1);
    }

    #[test]
    fn same_contributor_counts_merge_before_weighting() {
        // Two rows from one contributor weigh as w(2+3), not w(2)+w(3).
        let m = build(&[rec("u1", "c1", 2, "F", "CA"), rec("u1", "c1", 3, "F", "CA")]);
        let s = Stratum::full(&schema(), &["F", "CA"]).unwrap();
        assert_abs_diff_eq!(
            m.cell("c1", &s).unwrap().weight,
            1.0 + 5.0_f64.ln(),
            epsilon = 1e-12
        );
        assert_eq!(m.cell("c1", &s).unwrap().contributors, 1);
    }

    #[test]
    fn distinct_contributor_counts_per_cell_and_stratum() {
        let m = build(&[
            rec("u1", "c1", 1, "F", "CA"),
            rec("u2", "c1", 1, "F", "CA"),
            rec("u2", "c2", 4, "F", "CA"),
            rec("u3", "c2", 1, "M", "CA"),
        ]);
        let fca = Stratum::full(&schema(), &["F", "CA"]).unwrap();
        let mca = Stratum::full(&schema(), &["M", "CA"]).unwrap();
        assert_eq!(m.cell("c1", &fca).unwrap().contributors, 2);
        assert_eq!(m.cell("c2", &fca).unwrap().contributors, 1);
        assert_eq!(m.contributors_in(&fca), 2);
        assert_eq!(m.contributors_in(&mca), 1);
        assert_eq!(m.total_contributors(), 3);
        // Per-cell distinct counts never exceed the stratum count.
        for ((_, s), cell) in m.cells() {
            assert!(cell.contributors <= m.contributors_in(s));
        }
    }

    #[test]
    fn totals_match_cell_sums() {
        let m = build(&[
            rec("u1", "c1", 7, "F", "CA"),
            rec("u2", "c2", 1, "F", "CA"),
            rec("u3", "c1", 1000, "M", "US"),
        ]);
        assert!(m.totals_consistent());
        let fca = Stratum::full(&schema(), &["F", "CA"]).unwrap();
        assert_abs_diff_eq!(
            m.stratum_total(&fca),
            (1.0 + 7.0_f64.ln()) + 1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn unspecified_record_rejected_by_builder() {
        let schema = schema();
        let mut b = MatrixBuilder::new();
        let r = rec("u1", "c1", 1, UNSPECIFIED, "CA");
        assert!(b.add(&r, &schema).is_err());
    }

    proptest! {
        // Partitioning the records arbitrarily and merging gives the same
        // finalized matrix as one pass: merge is commutative and associative.
        #[test]
        fn merge_is_order_insensitive(
            seed_rows in proptest::collection::vec(
                (0u8..6, 0u8..4, 1u64..2000, 0u8..2, 0u8..2),
                1..40
            ),
            split in 0usize..40,
        ) {
            let schema = schema();
            let genders = ["F", "M"];
            let countries = ["CA", "US"];
            let records: Vec<ContributionRecord> = seed_rows
                .iter()
                .map(|(u, c, n, g, co)| rec(
                    &format!("u{u}"),
                    &format!("c{c}"),
                    *n,
                    genders[*g as usize],
                    countries[*co as usize],
                ))
                .collect();
            let weighting = WeightingConfig::default();

            let mut whole = MatrixBuilder::new();
            for r in &records {
                whole.add(r, &schema).unwrap();
            }

            let cut = split.min(records.len());
            let (left, right) = records.split_at(cut);
            let mut a = MatrixBuilder::new();
            for r in left {
                a.add(r, &schema).unwrap();
            }
            let mut b = MatrixBuilder::new();
            for r in right {
                b.add(r, &schema).unwrap();
            }

            let ab = a.clone().merge(b.clone());
            let ba = b.merge(a);
            prop_assert_eq!(&ab, &ba);
            prop_assert_eq!(whole.finalize(&weighting), ab.finalize(&weighting));
        }
    }
}
