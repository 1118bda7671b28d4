//! Stratum priors P(h): census joins, contributor-statistics fallback for
//! population-unavailable values, and handling of unspecified demographics.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use crate::contribution::ContributionRecord;
use crate::error::{Error, Result};
use crate::population::PopulationTable;
use crate::schema::{unspecified_code, DemographicSchema, Stratum, UNSPECIFIED};

/// How a stratum's mass was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Census,
    FallbackContributor,
    ProductOfMarginals,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Census => "census",
            Provenance::FallbackContributor => "fallback-contributor",
            Provenance::ProductOfMarginals => "product-of-marginals",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "census" => Ok(Provenance::Census),
            "fallback-contributor" => Ok(Provenance::FallbackContributor),
            "product-of-marginals" => Ok(Provenance::ProductOfMarginals),
            other => Err(Error::Invalid(format!("unknown provenance {other:?}"))),
        }
    }
}

/// How full-stratum masses are derived from a population table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JoinMode {
    /// Use joint rows when the table covers every available full stratum,
    /// otherwise fall back to the product of marginals.
    JointIfAvailable,
    /// Always multiply single-category marginal shares.
    ProductOfMarginals,
    /// Condition the remaining categories on one grouping category, using
    /// two-category marginal rows where the table has them and global
    /// marginal shares (with a logged warning) where it does not.
    ConditionalOn(String),
}

impl JoinMode {
    pub fn as_str(&self) -> String {
        match self {
            JoinMode::JointIfAvailable => "joint-if-available".into(),
            JoinMode::ProductOfMarginals => "product-of-marginals".into(),
            JoinMode::ConditionalOn(cat) => format!("conditional-on:{cat}"),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        if let Some(cat) = text.strip_prefix("conditional-on:") {
            if cat.is_empty() {
                return Err(Error::Invalid(
                    "conditional-on join needs a category name".into(),
                ));
            }
            return Ok(JoinMode::ConditionalOn(cat.to_string()));
        }
        match text {
            "joint-if-available" => Ok(JoinMode::JointIfAvailable),
            "product-of-marginals" => Ok(JoinMode::ProductOfMarginals),
            other => Err(Error::Invalid(format!("unknown join mode {other:?}"))),
        }
    }
}

/// What to do with records whose code for a category is UNSPECIFIED.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnspecifiedPolicy {
    /// Remove the record (the default).
    Drop,
    /// Relabel into a synthetic per-category group that then receives prior
    /// mass through the contributor-statistics fallback.
    OwnGroup,
}

impl UnspecifiedPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            UnspecifiedPolicy::Drop => "drop",
            UnspecifiedPolicy::OwnGroup => "own-group",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "drop" => Ok(UnspecifiedPolicy::Drop),
            "own-group" => Ok(UnspecifiedPolicy::OwnGroup),
            other => Err(Error::Invalid(format!(
                "unknown unspecified policy {other:?}"
            ))),
        }
    }
}

/// Everything that controls prior construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorPolicy {
    pub join: JoinMode,
    /// Per-category policy; categories absent from the map use Drop.
    pub unspecified: BTreeMap<String, UnspecifiedPolicy>,
    /// Whether population-unavailable values receive contributor-derived
    /// mass.
    pub fallback: bool,
}

impl Default for PriorPolicy {
    fn default() -> Self {
        PriorPolicy {
            join: JoinMode::JointIfAvailable,
            unspecified: BTreeMap::new(),
            fallback: true,
        }
    }
}

/// Mass and provenance for one stratum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorEntry {
    pub mass: f64,
    pub provenance: Provenance,
}

/// A probability distribution over full strata. Masses are non-negative and
/// sum to 1 within [`PriorVector::SUM_TOLERANCE`].
#[derive(Debug, Clone, PartialEq)]
pub struct PriorVector {
    entries: BTreeMap<Stratum, PriorEntry>,
}

impl PriorVector {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(entries: BTreeMap<Stratum, PriorEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Invalid("prior has no strata".into()));
        }
        let mut sum = 0.0;
        for (stratum, entry) in &entries {
            if !entry.mass.is_finite() || entry.mass < 0.0 {
                return Err(Error::Invalid(format!(
                    "prior mass for {stratum} is {}; masses must be finite and non-negative",
                    entry.mass
                )));
            }
            sum += entry.mass;
        }
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::Invalid(format!(
                "prior masses sum to {sum:.12}, expected 1"
            )));
        }
        Ok(PriorVector { entries })
    }

    pub fn mass(&self, stratum: &Stratum) -> Option<f64> {
        self.entries.get(stratum).map(|e| e.mass)
    }

    pub fn entry(&self, stratum: &Stratum) -> Option<&PriorEntry> {
        self.entries.get(stratum)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Stratum, &PriorEntry)> {
        self.entries.iter()
    }

    pub fn strata(&self) -> impl Iterator<Item = &Stratum> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.entries.values().map(|e| e.mass).sum()
    }

    /// Writes `stratum,mass,provenance` rows in sorted stratum order.
    pub fn write_csv<W: Write>(&self, schema: &DemographicSchema, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["stratum", "mass", "provenance"])?;
        for (stratum, entry) in &self.entries {
            w.write_record([
                stratum.encode(schema).as_str(),
                &format!("{:.16e}", entry.mass),
                entry.provenance.as_str(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, schema: &DemographicSchema, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(schema, file)
    }

    pub fn load_csv<R: Read>(schema: &DemographicSchema, input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        {
            let headers = reader.headers()?;
            let expect = ["stratum", "mass", "provenance"];
            for (i, name) in expect.iter().enumerate() {
                if headers.get(i) != Some(name) {
                    return Err(Error::MissingColumn((*name).to_string()));
                }
            }
        }
        let mut entries = BTreeMap::new();
        for row in reader.records() {
            let row = row?;
            let stratum = Stratum::decode(row.get(0).unwrap_or(""), schema)?;
            let mass: f64 = row
                .get(1)
                .unwrap_or("")
                .parse()
                .map_err(|_| Error::Invalid(format!("bad mass {:?}", row.get(1))))?;
            let provenance = Provenance::parse(row.get(2).unwrap_or(""))?;
            entries.insert(stratum, PriorEntry { mass, provenance });
        }
        PriorVector::new(entries)
    }
}

/// Builds P(h) from the population table alone.
pub fn census_prior(
    schema: &DemographicSchema,
    population: &PopulationTable,
    join: &JoinMode,
) -> Result<PriorVector> {
    match join {
        JoinMode::JointIfAvailable => {
            if population.covers_joint(schema) {
                joint_prior(schema, population)
            } else {
                product_prior(schema, population)
            }
        }
        JoinMode::ProductOfMarginals => product_prior(schema, population),
        JoinMode::ConditionalOn(category) => conditional_prior(schema, population, category),
    }
}

fn joint_prior(schema: &DemographicSchema, population: &PopulationTable) -> Result<PriorVector> {
    let strata = schema.available_full_strata();
    let mut denom: u128 = 0;
    let mut counts = Vec::with_capacity(strata.len());
    for stratum in &strata {
        let n = population.get(stratum).ok_or_else(|| Error::BadStratum {
            text: stratum.encode(schema),
            message: "joint population row missing".into(),
        })?;
        denom += n as u128;
        counts.push(n);
    }
    if denom == 0 {
        return Err(Error::Invalid("joint population rows sum to zero".into()));
    }
    let denom = denom as f64;
    let entries = strata
        .into_iter()
        .zip(counts)
        .map(|(stratum, n)| {
            (
                stratum,
                PriorEntry {
                    mass: n as f64 / denom,
                    provenance: Provenance::Census,
                },
            )
        })
        .collect();
    PriorVector::new(entries)
}

/// Per-category shares of available values, normalized by the integer sum of
/// their marginal rows.
fn marginal_shares(
    schema: &DemographicSchema,
    population: &PopulationTable,
    category_idx: usize,
) -> Result<BTreeMap<String, f64>> {
    let cat = &schema.categories()[category_idx];
    let mut counts = Vec::new();
    let mut denom: u128 = 0;
    for value in cat.values() {
        if cat.is_unavailable(value) {
            continue;
        }
        let n = population
            .marginal(schema, cat.name(), value)
            .ok_or_else(|| Error::MissingMarginal {
                category: cat.name().to_string(),
                value: value.clone(),
            })?;
        denom += n as u128;
        counts.push((value.clone(), n));
    }
    if denom == 0 {
        return Err(Error::Invalid(format!(
            "marginal populations for category {:?} sum to zero",
            cat.name()
        )));
    }
    let denom = denom as f64;
    Ok(counts
        .into_iter()
        .map(|(value, n)| (value, n as f64 / denom))
        .collect())
}

fn product_prior(schema: &DemographicSchema, population: &PopulationTable) -> Result<PriorVector> {
    let shares: Vec<BTreeMap<String, f64>> = (0..schema.len())
        .map(|i| marginal_shares(schema, population, i))
        .collect::<Result<_>>()?;
    let mut entries = BTreeMap::new();
    for stratum in schema.available_full_strata() {
        let mut mass = 1.0;
        for (i, share_map) in shares.iter().enumerate() {
            let value = stratum.value(i).expect("full stratum");
            mass *= share_map[value];
        }
        entries.insert(
            stratum,
            PriorEntry {
                mass,
                provenance: Provenance::ProductOfMarginals,
            },
        );
    }
    PriorVector::new(entries)
}

fn conditional_prior(
    schema: &DemographicSchema,
    population: &PopulationTable,
    category: &str,
) -> Result<PriorVector> {
    let (group_idx, group_cat) = schema
        .category(category)
        .ok_or_else(|| Error::UnknownCategory(category.to_string()))?;
    let group_shares = marginal_shares(schema, population, group_idx)?;

    // Conditional shares per (other category, group value): from pair rows
    // when the table has full pair coverage for that group, otherwise the
    // category's global shares.
    let mut conditionals: Vec<BTreeMap<String, BTreeMap<String, f64>>> = Vec::new();
    for (idx, cat) in schema.categories().iter().enumerate() {
        if idx == group_idx {
            conditionals.push(BTreeMap::new());
            continue;
        }
        let global = marginal_shares(schema, population, idx)?;
        let mut per_group = BTreeMap::new();
        for group_value in group_cat.values() {
            if group_cat.is_unavailable(group_value) {
                continue;
            }
            let mut pair_counts = Vec::new();
            let mut denom: u128 = 0;
            let mut complete = true;
            for value in cat.values() {
                if cat.is_unavailable(value) {
                    continue;
                }
                let mut cells = vec![None; schema.len()];
                cells[group_idx] = Some(group_value.clone());
                cells[idx] = Some(value.clone());
                match population.get(&Stratum::from_cells(cells)) {
                    Some(n) => {
                        denom += n as u128;
                        pair_counts.push((value.clone(), n));
                    }
                    None => {
                        complete = false;
                        break;
                    }
                }
            }
            let shares = if complete && denom > 0 {
                let denom = denom as f64;
                pair_counts
                    .into_iter()
                    .map(|(value, n)| (value, n as f64 / denom))
                    .collect()
            } else {
                log::warn!(
                    "population table lacks usable {:?} pair rows for {}={}; \
                     using global marginal shares",
                    cat.name(),
                    group_cat.name(),
                    group_value
                );
                global.clone()
            };
            per_group.insert(group_value.clone(), shares);
        }
        conditionals.push(per_group);
    }

    let mut entries = BTreeMap::new();
    for stratum in schema.available_full_strata() {
        let group_value = stratum.value(group_idx).expect("full stratum");
        let mut mass = group_shares[group_value];
        for (idx, per_group) in conditionals.iter().enumerate() {
            if idx == group_idx {
                continue;
            }
            let value = stratum.value(idx).expect("full stratum");
            mass *= per_group[group_value][value];
        }
        entries.insert(
            stratum,
            PriorEntry {
                mass,
                provenance: Provenance::Census,
            },
        );
    }
    PriorVector::new(entries)
}

/// Distinct contributors per (category, value), plus the overall distinct
/// count M_W. UNSPECIFIED codes are not counted toward any value.
pub fn contributor_marginals(
    records: &[ContributionRecord],
    schema: &DemographicSchema,
) -> (BTreeMap<(String, String), u64>, u64) {
    let mut sets: BTreeMap<(String, String), BTreeSet<&str>> = BTreeMap::new();
    let mut everyone: BTreeSet<&str> = BTreeSet::new();
    for record in records {
        everyone.insert(record.contributor_id.as_str());
        for (code, cat) in record.codes.iter().zip(schema.categories()) {
            if code.as_str() == UNSPECIFIED {
                continue;
            }
            sets.entry((cat.name().to_string(), code.clone()))
                .or_default()
                .insert(record.contributor_id.as_str());
        }
    }
    let counts = sets
        .into_iter()
        .map(|(key, set)| (key, set.len() as u64))
        .collect();
    (counts, everyone.len() as u64)
}

/// Extends a census-derived prior with mass for population-unavailable
/// values, using contributor shares r(a) = M_a / M_W. Available strata are
/// scaled down by the per-category factor (1 - s), where s is the summed
/// fallback share, so the result still sums to 1. Re-applying strips the
/// previous fallback entries first, making the operation idempotent.
pub fn apply_fallback(
    prior: &PriorVector,
    schema: &DemographicSchema,
    marginals: &BTreeMap<(String, String), u64>,
    total_contributors: u64,
) -> Result<PriorVector> {
    let has_unavailable = schema
        .categories()
        .iter()
        .any(|cat| cat.values().iter().any(|v| cat.is_unavailable(v)));
    if !has_unavailable {
        return Ok(prior.clone());
    }
    if total_contributors == 0 {
        return Err(Error::NoContributors);
    }
    let m_w = total_contributors as f64;

    // r(a) per unavailable value and s per category.
    let mut rates: Vec<BTreeMap<&str, f64>> = Vec::with_capacity(schema.len());
    let mut scale = Vec::with_capacity(schema.len());
    for cat in schema.categories() {
        let mut per_value = BTreeMap::new();
        let mut s = 0.0;
        for value in cat.values() {
            if !cat.is_unavailable(value) {
                continue;
            }
            let m_a = marginals
                .get(&(cat.name().to_string(), value.clone()))
                .copied()
                .unwrap_or(0);
            let r = m_a as f64 / m_w;
            s += r;
            per_value.insert(value.as_str(), r);
        }
        if s >= 1.0 {
            return Err(Error::Invalid(format!(
                "contributor fallback shares for category {:?} sum to {s}; must stay below 1",
                cat.name()
            )));
        }
        rates.push(per_value);
        scale.push(1.0 - s);
    }

    // Census part: everything not previously produced by this fallback,
    // renormalized to sum 1 so re-application is stable.
    let census: Vec<(&Stratum, f64, Provenance)> = prior
        .iter()
        .filter(|(_, e)| e.provenance != Provenance::FallbackContributor)
        .map(|(s, e)| (s, e.mass, e.provenance))
        .collect();
    let census_sum: f64 = census.iter().map(|(_, m, _)| m).sum();
    if census_sum <= 0.0 {
        return Err(Error::Invalid(
            "prior has no census mass to scale for the fallback".into(),
        ));
    }
    let all_scale: f64 = scale.iter().product();

    let mut entries = BTreeMap::new();
    for (stratum, mass, provenance) in &census {
        entries.insert(
            (*stratum).clone(),
            PriorEntry {
                mass: mass / census_sum * all_scale,
                provenance: *provenance,
            },
        );
    }

    // Strata involving at least one unavailable value: product of r over the
    // unavailable positions, (1 - s) over the untouched categories, and the
    // census mass marginalized onto the remaining available values.
    for stratum in schema.full_strata() {
        let unavailable: Vec<usize> = (0..schema.len())
            .filter(|&i| {
                let value = stratum.value(i).expect("full stratum");
                schema.categories()[i].is_unavailable(value)
            })
            .collect();
        if unavailable.is_empty() {
            continue;
        }
        let mut mass = 1.0;
        for (i, cat_scale) in scale.iter().enumerate() {
            let value = stratum.value(i).expect("full stratum");
            if unavailable.contains(&i) {
                mass *= rates[i][value];
            } else {
                mass *= cat_scale;
            }
        }
        let available_match: f64 = census
            .iter()
            .filter(|(s, _, _)| {
                (0..schema.len())
                    .filter(|i| !unavailable.contains(i))
                    .all(|i| s.value(i) == stratum.value(i))
            })
            .map(|(_, m, _)| m)
            .sum();
        let rest = if unavailable.len() == schema.len() {
            1.0
        } else {
            available_match / census_sum
        };
        entries.insert(
            stratum,
            PriorEntry {
                mass: mass * rest,
                provenance: Provenance::FallbackContributor,
            },
        );
    }
    PriorVector::new(entries)
}

/// Outcome counts from [`resolve_unspecified`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ResolveReport {
    pub input: u64,
    pub dropped: u64,
    pub relabeled: u64,
    pub all_dropped: bool,
}

/// Applies the per-category UNSPECIFIED policies: dropping records or
/// relabeling the missing cells into synthetic own-group values. Returns the
/// surviving records (sorted), the possibly extended schema, and counts.
pub fn resolve_unspecified(
    records: Vec<ContributionRecord>,
    schema: &DemographicSchema,
    policies: &BTreeMap<String, UnspecifiedPolicy>,
) -> Result<(Vec<ContributionRecord>, DemographicSchema, ResolveReport)> {
    for name in policies.keys() {
        if schema.category(name).is_none() {
            return Err(Error::UnknownCategory(name.clone()));
        }
    }
    let mut report = ResolveReport {
        input: records.len() as u64,
        ..ResolveReport::default()
    };
    let mut used: BTreeSet<usize> = BTreeSet::new();
    let mut kept = Vec::with_capacity(records.len());
    'records: for mut record in records {
        let mut touched = false;
        for (i, cat) in schema.categories().iter().enumerate() {
            if record.codes[i] != UNSPECIFIED {
                continue;
            }
            match policies
                .get(cat.name())
                .copied()
                .unwrap_or(UnspecifiedPolicy::Drop)
            {
                UnspecifiedPolicy::Drop => {
                    report.dropped += 1;
                    continue 'records;
                }
                UnspecifiedPolicy::OwnGroup => {
                    record.codes[i] = unspecified_code(cat.name());
                    used.insert(i);
                    touched = true;
                }
            }
        }
        if touched {
            report.relabeled += 1;
        }
        kept.push(record);
    }
    report.all_dropped = report.input > 0 && kept.is_empty();
    if report.dropped > 0 {
        log::warn!(
            "dropped {} of {} records with unspecified demographics",
            report.dropped,
            report.input
        );
    }
    let mut extended = schema.clone();
    for i in used {
        let name = schema.categories()[i].name().to_string();
        extended = extended.with_synthetic_value(&name, &unspecified_code(&name))?;
    }
    kept.sort();
    Ok((kept, extended, report))
}

/// Adds rounded pseudo marginal rows for population-unavailable values,
/// scaled from contributor shares, so group lookups (diversity boosts) can
/// see them.
pub fn assign_pseudo_populations(
    population: &PopulationTable,
    schema: &DemographicSchema,
    marginals: &BTreeMap<(String, String), u64>,
    total_contributors: u64,
) -> Result<PopulationTable> {
    let mut out = population.clone();
    for (idx, cat) in schema.categories().iter().enumerate() {
        for value in cat.values() {
            if !cat.is_unavailable(value) {
                continue;
            }
            if total_contributors == 0 {
                return Err(Error::NoContributors);
            }
            let m_a = marginals
                .get(&(cat.name().to_string(), value.clone()))
                .copied()
                .unwrap_or(0);
            let share = m_a as f64 / total_contributors as f64;
            let pseudo = (share * population.world() as f64).round() as u64;
            out = out.with_entry(Stratum::single_value(schema, idx, value), pseudo);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Category;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn one_cat_schema() -> DemographicSchema {
        DemographicSchema::new(vec![
            Category::new("gender", vec!["F".into(), "M".into()]).unwrap()
        ])
        .unwrap()
    }

    fn marginal_entry(schema: &DemographicSchema, cat: &str, value: &str) -> Stratum {
        let (idx, _) = schema.category(cat).unwrap();
        Stratum::single_value(schema, idx, value)
    }

    #[test]
    fn product_single_category_shares() {
        let schema = one_cat_schema();
        let mut rows = BTreeMap::new();
        rows.insert(marginal_entry(&schema, "gender", "F"), 60u64);
        rows.insert(marginal_entry(&schema, "gender", "M"), 40u64);
        let pop = PopulationTable::new(&schema, rows, 100).unwrap();
        let prior = census_prior(&schema, &pop, &JoinMode::ProductOfMarginals).unwrap();
        let f = Stratum::full(&schema, &["F"]).unwrap();
        let m = Stratum::full(&schema, &["M"]).unwrap();
        assert_abs_diff_eq!(prior.mass(&f).unwrap(), 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(prior.mass(&m).unwrap(), 0.4, epsilon = 1e-15);
        assert_eq!(
            prior.entry(&f).unwrap().provenance,
            Provenance::ProductOfMarginals
        );
    }

    fn two_cat_schema() -> DemographicSchema {
        DemographicSchema::new(vec![
            Category::new("gender", vec!["F".into(), "M".into()]).unwrap(),
            Category::new("country", vec!["CA".into(), "US".into()]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn product_two_categories() {
        let schema = two_cat_schema();
        let mut rows = BTreeMap::new();
        rows.insert(marginal_entry(&schema, "gender", "F"), 60u64);
        rows.insert(marginal_entry(&schema, "gender", "M"), 40u64);
        rows.insert(marginal_entry(&schema, "country", "CA"), 50u64);
        rows.insert(marginal_entry(&schema, "country", "US"), 50u64);
        let pop = PopulationTable::new(&schema, rows, 100).unwrap();
        let prior = census_prior(&schema, &pop, &JoinMode::JointIfAvailable).unwrap();
        let expect = [
            ("F", "CA", 0.30),
            ("F", "US", 0.30),
            ("M", "CA", 0.20),
            ("M", "US", 0.20),
        ];
        for (g, c, mass) in expect {
            let s = Stratum::full(&schema, &[g, c]).unwrap();
            assert_abs_diff_eq!(prior.mass(&s).unwrap(), mass, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(prior.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn joint_rows_win_when_complete() {
        let schema = two_cat_schema();
        let mut rows = BTreeMap::new();
        rows.insert(Stratum::full(&schema, &["F", "CA"]).unwrap(), 25u64);
        rows.insert(Stratum::full(&schema, &["F", "US"]).unwrap(), 35u64);
        rows.insert(Stratum::full(&schema, &["M", "CA"]).unwrap(), 15u64);
        rows.insert(Stratum::full(&schema, &["M", "US"]).unwrap(), 15u64);
        // World is larger than the joint sum; normalization must use the
        // joint sum (90), not the world.
        let pop = PopulationTable::new(&schema, rows, 100).unwrap();
        let prior = census_prior(&schema, &pop, &JoinMode::JointIfAvailable).unwrap();
        let fca = Stratum::full(&schema, &["F", "CA"]).unwrap();
        assert_abs_diff_eq!(prior.mass(&fca).unwrap(), 25.0 / 90.0, epsilon = 1e-15);
        assert_eq!(prior.entry(&fca).unwrap().provenance, Provenance::Census);
        assert_abs_diff_eq!(prior.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn conditional_join_uses_pair_rows() {
        let schema = two_cat_schema();
        let mut rows = BTreeMap::new();
        rows.insert(marginal_entry(&schema, "gender", "F"), 40u64);
        rows.insert(marginal_entry(&schema, "gender", "M"), 60u64);
        rows.insert(marginal_entry(&schema, "country", "CA"), 60u64);
        rows.insert(marginal_entry(&schema, "country", "US"), 40u64);
        rows.insert(Stratum::pattern(&schema, &["F", "CA"]).unwrap(), 30u64);
        rows.insert(Stratum::pattern(&schema, &["M", "CA"]).unwrap(), 30u64);
        rows.insert(Stratum::pattern(&schema, &["F", "US"]).unwrap(), 10u64);
        rows.insert(Stratum::pattern(&schema, &["M", "US"]).unwrap(), 30u64);
        let pop = PopulationTable::new(&schema, rows, 100).unwrap();
        let prior =
            census_prior(&schema, &pop, &JoinMode::ConditionalOn("country".into())).unwrap();
        let expect = [
            ("F", "CA", 0.6 * 0.5),
            ("M", "CA", 0.6 * 0.5),
            ("F", "US", 0.4 * 0.25),
            ("M", "US", 0.4 * 0.75),
        ];
        for (g, c, mass) in expect {
            let s = Stratum::full(&schema, &[g, c]).unwrap();
            assert_abs_diff_eq!(prior.mass(&s).unwrap(), mass, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(prior.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn conditional_join_falls_back_to_global_shares() {
        let schema = two_cat_schema();
        let mut rows = BTreeMap::new();
        rows.insert(marginal_entry(&schema, "gender", "F"), 40u64);
        rows.insert(marginal_entry(&schema, "gender", "M"), 60u64);
        rows.insert(marginal_entry(&schema, "country", "CA"), 60u64);
        rows.insert(marginal_entry(&schema, "country", "US"), 40u64);
        rows.insert(Stratum::pattern(&schema, &["F", "CA"]).unwrap(), 30u64);
        rows.insert(Stratum::pattern(&schema, &["M", "CA"]).unwrap(), 30u64);
        // No pair rows for US: its conditional reverts to the global 0.4/0.6.
        let pop = PopulationTable::new(&schema, rows, 100).unwrap();
        let prior =
            census_prior(&schema, &pop, &JoinMode::ConditionalOn("country".into())).unwrap();
        let fus = Stratum::full(&schema, &["F", "US"]).unwrap();
        assert_abs_diff_eq!(prior.mass(&fus).unwrap(), 0.4 * 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(prior.sum(), 1.0, epsilon = 1e-12);
    }

    fn fallback_schema() -> DemographicSchema {
        DemographicSchema::new(vec![Category::new(
            "gender",
            vec!["A".into(), "B".into(), "C".into()],
        )
        .unwrap()
        .with_unavailable("C")
        .unwrap()])
        .unwrap()
    }

    #[test]
    fn fallback_scales_available_mass() {
        let schema = fallback_schema();
        let mut rows = BTreeMap::new();
        rows.insert(marginal_entry(&schema, "gender", "A"), 600u64);
        rows.insert(marginal_entry(&schema, "gender", "B"), 400u64);
        let pop = PopulationTable::new(&schema, rows, 1000).unwrap();
        let census = census_prior(&schema, &pop, &JoinMode::JointIfAvailable).unwrap();

        // 2 of 100 contributors carry the unavailable value C.
        let mut marg = BTreeMap::new();
        marg.insert(("gender".to_string(), "C".to_string()), 2u64);
        let prior = apply_fallback(&census, &schema, &marg, 100).unwrap();

        let a = Stratum::full(&schema, &["A"]).unwrap();
        let b = Stratum::full(&schema, &["B"]).unwrap();
        let c = Stratum::full(&schema, &["C"]).unwrap();
        assert_abs_diff_eq!(prior.mass(&a).unwrap(), 0.588, epsilon = 1e-12);
        assert_abs_diff_eq!(prior.mass(&b).unwrap(), 0.392, epsilon = 1e-12);
        assert_abs_diff_eq!(prior.mass(&c).unwrap(), 0.020, epsilon = 1e-12);
        assert_eq!(
            prior.entry(&c).unwrap().provenance,
            Provenance::FallbackContributor
        );
        assert_eq!(prior.entry(&a).unwrap().provenance, Provenance::Census);

        // Re-application with the same statistics changes nothing.
        let again = apply_fallback(&prior, &schema, &marg, 100).unwrap();
        for (s, e) in prior.iter() {
            assert_abs_diff_eq!(again.mass(s).unwrap(), e.mass, epsilon = 1e-12);
        }
    }

    #[test]
    fn fallback_without_unavailable_values_is_identity() {
        let schema = two_cat_schema();
        let mut rows = BTreeMap::new();
        rows.insert(marginal_entry(&schema, "gender", "F"), 60u64);
        rows.insert(marginal_entry(&schema, "gender", "M"), 40u64);
        rows.insert(marginal_entry(&schema, "country", "CA"), 50u64);
        rows.insert(marginal_entry(&schema, "country", "US"), 50u64);
        let pop = PopulationTable::new(&schema, rows, 100).unwrap();
        let census = census_prior(&schema, &pop, &JoinMode::JointIfAvailable).unwrap();
        let out = apply_fallback(&census, &schema, &BTreeMap::new(), 0).unwrap();
        assert_eq!(out, census);
    }

    #[test]
    fn fallback_needs_contributors() {
        let schema = fallback_schema();
        let mut rows = BTreeMap::new();
        rows.insert(marginal_entry(&schema, "gender", "A"), 600u64);
        rows.insert(marginal_entry(&schema, "gender", "B"), 400u64);
        let pop = PopulationTable::new(&schema, rows, 1000).unwrap();
        let census = census_prior(&schema, &pop, &JoinMode::JointIfAvailable).unwrap();
        assert!(matches!(
            apply_fallback(&census, &schema, &BTreeMap::new(), 0),
            Err(Error::NoContributors)
        ));
    }

    #[test]
    fn fallback_two_categories_sums_to_one() {
        let schema = DemographicSchema::new(vec![
            Category::new("gender", vec!["F".into(), "M".into(), "X".into()])
                .unwrap()
                .with_unavailable("X")
                .unwrap(),
            Category::new("country", vec!["CA".into(), "US".into(), "ZZ".into()])
                .unwrap()
                .with_unavailable("ZZ")
                .unwrap(),
        ])
        .unwrap();
        let mut rows = BTreeMap::new();
        rows.insert(marginal_entry(&schema, "gender", "F"), 55u64);
        rows.insert(marginal_entry(&schema, "gender", "M"), 45u64);
        rows.insert(marginal_entry(&schema, "country", "CA"), 70u64);
        rows.insert(marginal_entry(&schema, "country", "US"), 30u64);
        let pop = PopulationTable::new(&schema, rows, 100).unwrap();
        let census = census_prior(&schema, &pop, &JoinMode::JointIfAvailable).unwrap();
        let mut marg = BTreeMap::new();
        marg.insert(("gender".to_string(), "X".to_string()), 5u64);
        marg.insert(("country".to_string(), "ZZ".to_string()), 10u64);
        let prior = apply_fallback(&census, &schema, &marg, 100).unwrap();
        assert_abs_diff_eq!(prior.sum(), 1.0, epsilon = 1e-12);
        // All nine strata (3 x 3) are present.
        assert_eq!(prior.len(), 9);
        // Doubly unavailable cell is the plain product of rates.
        let xz = Stratum::full(&schema, &["X", "ZZ"]).unwrap();
        assert_abs_diff_eq!(prior.mass(&xz).unwrap(), 0.05 * 0.10, epsilon = 1e-12);
        // Mixed cell: r_X * (1 - s_country) * census share of CA.
        let xca = Stratum::full(&schema, &["X", "CA"]).unwrap();
        assert_abs_diff_eq!(prior.mass(&xca).unwrap(), 0.05 * 0.9 * 0.7, epsilon = 1e-12);
    }

    #[test]
    fn resolve_drop_policy() {
        let schema = two_cat_schema();
        let records = vec![
            ContributionRecord::new("u1", "c1", 3, vec!["F".into(), "CA".into()]),
            ContributionRecord::new("u2", "c1", 2, vec![UNSPECIFIED.into(), "CA".into()]),
        ];
        let (kept, out_schema, report) =
            resolve_unspecified(records, &schema, &BTreeMap::new()).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(report.input, 2);
        assert_eq!(report.dropped, 1);
        assert_eq!(report.relabeled, 0);
        assert!(!report.all_dropped);
        assert_eq!(out_schema, schema);
    }

    #[test]
    fn resolve_own_group_extends_schema() {
        let schema = two_cat_schema();
        let records = vec![
            ContributionRecord::new("u1", "c1", 3, vec!["F".into(), "CA".into()]),
            ContributionRecord::new("u2", "c1", 2, vec![UNSPECIFIED.into(), "CA".into()]),
        ];
        let mut policies = BTreeMap::new();
        policies.insert("gender".to_string(), UnspecifiedPolicy::OwnGroup);
        let (kept, out_schema, report) = resolve_unspecified(records, &schema, &policies).unwrap();
        assert_eq!(kept.len(), 2);
        assert_eq!(report.relabeled, 1);
        let (_, cat) = out_schema.category("gender").unwrap();
        let synth = unspecified_code("gender");
        assert!(cat.has_value(&synth));
        assert!(cat.is_unavailable(&synth));
        assert!(kept.iter().any(|r| r.codes[0] == synth));
    }

    #[test]
    fn resolve_all_dropped_flag() {
        let schema = one_cat_schema();
        let records = vec![ContributionRecord::new(
            "u1",
            "c1",
            1,
            vec![UNSPECIFIED.into()],
        )];
        let (kept, _, report) = resolve_unspecified(records, &schema, &BTreeMap::new()).unwrap();
        assert!(kept.is_empty());
        assert!(report.all_dropped);
    }

    #[test]
    fn pseudo_population_rounds_scaled_share() {
        let schema = fallback_schema();
        let mut rows = BTreeMap::new();
        rows.insert(marginal_entry(&schema, "gender", "A"), 600u64);
        rows.insert(marginal_entry(&schema, "gender", "B"), 400u64);
        let pop = PopulationTable::new(&schema, rows, 1000).unwrap();
        let mut marg = BTreeMap::new();
        marg.insert(("gender".to_string(), "C".to_string()), 3u64);
        let out = assign_pseudo_populations(&pop, &schema, &marg, 200).unwrap();
        // 3/200 * 1000 = 15
        assert_eq!(out.marginal(&schema, "gender", "C"), Some(15));
        assert_eq!(out.marginal(&schema, "gender", "A"), Some(600));
    }

    #[test]
    fn prior_csv_round_trip() {
        let schema = two_cat_schema();
        let mut rows = BTreeMap::new();
        rows.insert(marginal_entry(&schema, "gender", "F"), 61u64);
        rows.insert(marginal_entry(&schema, "gender", "M"), 39u64);
        rows.insert(marginal_entry(&schema, "country", "CA"), 47u64);
        rows.insert(marginal_entry(&schema, "country", "US"), 53u64);
        let pop = PopulationTable::new(&schema, rows, 100).unwrap();
        let prior = census_prior(&schema, &pop, &JoinMode::JointIfAvailable).unwrap();
        let mut buf = Vec::new();
        prior.write_csv(&schema, &mut buf).unwrap();
        let loaded = PriorVector::load_csv(&schema, buf.as_slice()).unwrap();
        assert_eq!(loaded, prior);
    }

    #[test]
    fn join_mode_parse_round_trip() {
        for mode in [
            JoinMode::JointIfAvailable,
            JoinMode::ProductOfMarginals,
            JoinMode::ConditionalOn("country".into()),
        ] {
            assert_eq!(JoinMode::parse(&mode.as_str()).unwrap(), mode);
        }
        assert!(JoinMode::parse("conditional-on:").is_err());
        assert!(JoinMode::parse("nope").is_err());
    }

    proptest! {
        // Random marginal tables always produce a simplex.
        #[test]
        fn product_prior_is_simplex(
            g in proptest::collection::vec(1u64..1_000_000, 2..5),
            c in proptest::collection::vec(1u64..1_000_000, 2..5),
        ) {
            let gender: Vec<String> = (0..g.len()).map(|i| format!("G{i}")).collect();
            let country: Vec<String> = (0..c.len()).map(|i| format!("C{i}")).collect();
            let schema = DemographicSchema::new(vec![
                Category::new("gender", gender.clone()).unwrap(),
                Category::new("country", country.clone()).unwrap(),
            ])
            .unwrap();
            let world: u64 = g.iter().sum::<u64>().max(c.iter().sum::<u64>());
            let mut rows = BTreeMap::new();
            for (i, n) in g.iter().enumerate() {
                rows.insert(marginal_entry(&schema, "gender", &gender[i]), *n);
            }
            for (i, n) in c.iter().enumerate() {
                rows.insert(marginal_entry(&schema, "country", &country[i]), *n);
            }
            let pop = PopulationTable::new(&schema, rows, world).unwrap();
            let prior = census_prior(&schema, &pop, &JoinMode::ProductOfMarginals).unwrap();
            prop_assert!((prior.sum() - 1.0).abs() <= 1e-9);
            prop_assert!(prior.iter().all(|(_, e)| e.mass >= 0.0));
        }
    }
}
