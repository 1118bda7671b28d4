//! Contribution weighting, stratified aggregation, diversity boosts, and the
//! per-class relevance scores they produce.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::contribution::{ContributionMatrix, ContributionRecord, MatrixBuilder};
use crate::error::{Error, Result};
use crate::population::PopulationTable;
use crate::priors::{PriorEntry, PriorVector, Provenance};
use crate::schema::{DemographicSchema, Stratum};

/// How a contributor's per-class item count n turns into weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightScale {
    /// 1 + ln(n), with n clamped at the cap: heavy uploaders saturate.
    LogThreshold,
    /// n itself, clamped at the cap.
    Linear,
}

impl WeightScale {
    pub fn as_str(self) -> &'static str {
        match self {
            WeightScale::LogThreshold => "log-threshold",
            WeightScale::Linear => "linear",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "log-threshold" => Ok(WeightScale::LogThreshold),
            "linear" => Ok(WeightScale::Linear),
            other => Err(Error::Invalid(format!("unknown weight scale {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightingConfig {
    pub scale: WeightScale,
    pub n_cap: u64,
}

impl Default for WeightingConfig {
    fn default() -> Self {
        WeightingConfig {
            scale: WeightScale::LogThreshold,
            n_cap: 1000,
        }
    }
}

impl WeightingConfig {
    pub fn weight(&self, n: u64) -> f64 {
        if n == 0 {
            return 0.0;
        }
        let n = n.min(self.n_cap.max(1));
        match self.scale {
            WeightScale::LogThreshold => 1.0 + (n as f64).ln(),
            WeightScale::Linear => n as f64,
        }
    }

    /// The largest weight any single contributor can add to one cell; used
    /// as the default sensitivity for the noise guard rail.
    pub fn max_weight(&self) -> f64 {
        self.weight(self.n_cap.max(1))
    }
}

/// Builds the weighted matrix from records in one pass.
pub fn aggregate(
    records: &[ContributionRecord],
    schema: &DemographicSchema,
    weighting: &WeightingConfig,
) -> Result<ContributionMatrix> {
    aggregate_partitioned(records, schema, weighting, 1)
}

/// Same result as [`aggregate`], computed over `threads` contiguous chunks in
/// parallel. The per-chunk accumulators hold only integer counts and merge in
/// chunk order, so the output is bit-identical for any thread count.
pub fn aggregate_partitioned(
    records: &[ContributionRecord],
    schema: &DemographicSchema,
    weighting: &WeightingConfig,
    threads: usize,
) -> Result<ContributionMatrix> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let threads = threads.max(1).min(records.len());
    if threads == 1 {
        let mut builder = MatrixBuilder::new();
        for record in records {
            builder.add(record, schema)?;
        }
        return Ok(builder.finalize(weighting));
    }
    let chunk_len = records.len().div_ceil(threads);
    let mut results: Vec<Result<MatrixBuilder>> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = records
            .chunks(chunk_len)
            .map(|chunk| {
                scope.spawn(move || {
                    let mut builder = MatrixBuilder::new();
                    for record in chunk {
                        builder.add(record, schema)?;
                    }
                    Ok(builder)
                })
            })
            .collect();
        for handle in handles {
            results.push(handle.join().expect("aggregation thread panicked"));
        }
    });
    let mut merged = MatrixBuilder::new();
    for builder in results {
        merged = merged.merge(builder?);
    }
    Ok(merged.finalize(weighting))
}

/// Per-stratum class shares P(c|h) = A_{c,h} / A_h. Strata whose total is
/// zero have no row.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalShares {
    rows: BTreeMap<Stratum, BTreeMap<String, f64>>,
}

impl ConditionalShares {
    pub fn from_matrix(matrix: &ContributionMatrix) -> Self {
        let mut rows: BTreeMap<Stratum, BTreeMap<String, f64>> = BTreeMap::new();
        for ((class, stratum), cell) in matrix.cells() {
            let total = matrix.stratum_total(stratum);
            if total <= 0.0 {
                continue;
            }
            rows.entry(stratum.clone())
                .or_default()
                .insert(class.clone(), cell.weight / total);
        }
        ConditionalShares { rows }
    }

    /// Direct construction; every row must sum to 1 within 1e-9.
    pub fn from_rows(rows: BTreeMap<Stratum, BTreeMap<String, f64>>) -> Result<Self> {
        for (stratum, row) in &rows {
            let sum: f64 = row.values().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Invalid(format!(
                    "conditional shares for {stratum} sum to {sum:.12}, expected 1"
                )));
            }
            if row.values().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Invalid(format!(
                    "conditional shares for {stratum} contain negative or non-finite values"
                )));
            }
        }
        Ok(ConditionalShares { rows })
    }

    pub fn row(&self, stratum: &Stratum) -> Option<&BTreeMap<String, f64>> {
        self.rows.get(stratum)
    }

    pub fn share(&self, stratum: &Stratum, class_id: &str) -> Option<f64> {
        self.rows
            .get(stratum)
            .and_then(|r| r.get(class_id))
            .copied()
    }

    pub fn classes(&self) -> BTreeSet<&str> {
        self.rows
            .values()
            .flat_map(|r| r.keys().map(|c| c.as_str()))
            .collect()
    }

    pub fn strata(&self) -> impl Iterator<Item = &Stratum> {
        self.rows.keys()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Population transforms available for under-represented group boosts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoostFunction {
    Identity,
    Sqrt,
    Log1p,
}

impl BoostFunction {
    pub fn as_str(self) -> &'static str {
        match self {
            BoostFunction::Identity => "identity",
            BoostFunction::Sqrt => "sqrt",
            BoostFunction::Log1p => "log1p",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "identity" => Ok(BoostFunction::Identity),
            "sqrt" => Ok(BoostFunction::Sqrt),
            "log1p" => Ok(BoostFunction::Log1p),
            other => Err(Error::Invalid(format!("unknown boost function {other:?}"))),
        }
    }

    /// f(N) / N for group population N.
    pub fn damping(self, n: f64) -> f64 {
        match self {
            BoostFunction::Identity => 1.0,
            BoostFunction::Sqrt => n.sqrt() / n,
            BoostFunction::Log1p => n.ln_1p() / n,
        }
    }
}

/// Whether multiple boosted categories are an error or multiply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoostMode {
    Joint,
    IndependentProduct,
}

impl BoostMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BoostMode::Joint => "joint",
            BoostMode::IndependentProduct => "independent-product",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "joint" => Ok(BoostMode::Joint),
            "independent-product" => Ok(BoostMode::IndependentProduct),
            other => Err(Error::Invalid(format!("unknown boost mode {other:?}"))),
        }
    }
}

/// Boost settings for one category: the transform and the hierarchy depth the
/// group population is read at (0 = the value itself).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CategoryBoost {
    pub function: BoostFunction,
    pub level: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostConfig {
    pub mode: BoostMode,
    pub per_category: BTreeMap<String, CategoryBoost>,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig::identity()
    }
}

impl BoostConfig {
    /// No-op boost: every factor is exactly 1.
    pub fn identity() -> Self {
        BoostConfig {
            mode: BoostMode::Joint,
            per_category: BTreeMap::new(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.per_category
            .values()
            .all(|b| b.function == BoostFunction::Identity)
    }

    fn active_count(&self) -> usize {
        self.per_category
            .values()
            .filter(|b| b.function != BoostFunction::Identity)
            .count()
    }

    pub fn validate(&self, schema: &DemographicSchema) -> Result<()> {
        for name in self.per_category.keys() {
            if schema.category(name).is_none() {
                return Err(Error::UnknownCategory(name.clone()));
            }
        }
        if self.mode == BoostMode::Joint {
            let active = self.active_count();
            if active > 1 {
                return Err(Error::JointBoostAmbiguous(active));
            }
        }
        Ok(())
    }

    /// Short stable fingerprint of the configuration, used in report file
    /// names so outputs from different boost settings never collide.
    pub fn digest(&self) -> String {
        let mut canonical = format!("mode={}", self.mode.as_str());
        for (name, boost) in &self.per_category {
            canonical.push_str(&format!(
                ";{name}={}@{}",
                boost.function.as_str(),
                boost.level
            ));
        }
        let hash = Sha256::digest(canonical.as_bytes());
        hash[..4].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Computes the boost factor for each listed stratum from group populations.
pub fn boost_factors(
    schema: &DemographicSchema,
    population: &PopulationTable,
    config: &BoostConfig,
    strata: &[Stratum],
) -> Result<BTreeMap<Stratum, f64>> {
    config.validate(schema)?;
    let active: Vec<(usize, &str, CategoryBoost)> = config
        .per_category
        .iter()
        .filter(|(_, b)| b.function != BoostFunction::Identity)
        .map(|(name, b)| {
            let (idx, cat) = schema.category(name).expect("validated");
            (idx, cat.name(), *b)
        })
        .collect();
    let mut out = BTreeMap::new();
    for stratum in strata {
        if !stratum.is_full() {
            return Err(Error::Invalid(format!(
                "boost factors need full strata, got pattern {stratum}"
            )));
        }
        let mut alpha = 1.0;
        for (idx, cat_name, boost) in &active {
            let cat = &schema.categories()[*idx];
            let value = stratum.value(*idx).expect("full stratum");
            let node = cat.ancestor(value, boost.level);
            let n = population
                .group_marginal(schema, cat_name, boost.level, node)
                .ok_or_else(|| Error::MissingMarginal {
                    category: (*cat_name).to_string(),
                    value: node.to_string(),
                })?;
            if n == 0 {
                return Err(Error::ZeroPopulationAtBoostLevel {
                    node: node.to_string(),
                });
            }
            alpha *= boost.function.damping(n as f64);
        }
        out.insert(stratum.clone(), alpha);
    }
    Ok(out)
}

/// Raw per-class utilities U(c) = sum over strata of P(c|h) * P(h) * alpha_h.
/// Strata without contributions contribute nothing; a missing boost factor
/// for a stratum that would contribute is an error.
pub fn utility(
    prior: &PriorVector,
    cond: &ConditionalShares,
    alpha: Option<&BTreeMap<Stratum, f64>>,
) -> Result<BTreeMap<String, f64>> {
    let mut raw: BTreeMap<String, f64> = cond
        .classes()
        .into_iter()
        .map(|c| (c.to_string(), 0.0))
        .collect();
    for (stratum, entry) in prior.iter() {
        if entry.mass == 0.0 {
            continue;
        }
        let Some(row) = cond.row(stratum) else {
            continue;
        };
        let factor = match alpha {
            None => 1.0,
            Some(map) => *map
                .get(stratum)
                .ok_or_else(|| Error::MissingAlpha(stratum.to_string()))?,
        };
        for (class, share) in row {
            *raw.get_mut(class.as_str()).expect("seeded above") += share * entry.mass * factor;
        }
    }
    Ok(raw)
}

/// Per-class relevance: raw utilities plus their normalized shares.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceScores {
    scores: BTreeMap<String, f64>,
    raw: BTreeMap<String, f64>,
}

impl RelevanceScores {
    /// Normalizes raw utilities into shares. All-zero utilities are kept as
    /// zeros (and flagged by [`RelevanceScores::is_normalized`]).
    pub fn from_raw(raw: BTreeMap<String, f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::EmptyInput);
        }
        for (class, value) in &raw {
            if !value.is_finite() || *value < 0.0 {
                return Err(Error::Invalid(format!(
                    "utility for class {class:?} is {value}; must be finite and non-negative"
                )));
            }
        }
        let total: f64 = raw.values().sum();
        let scores = if total > 0.0 {
            raw.iter().map(|(c, v)| (c.clone(), v / total)).collect()
        } else {
            raw.clone()
        };
        Ok(RelevanceScores { scores, raw })
    }

    pub fn score(&self, class_id: &str) -> Option<f64> {
        self.scores.get(class_id).copied()
    }

    pub fn raw_utility(&self, class_id: &str) -> Option<f64> {
        self.raw.get(class_id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.scores.iter().map(|(c, v)| (c.as_str(), *v))
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.scores.keys().map(|c| c.as_str())
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.scores.values().sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.sum() - 1.0).abs() <= 1e-9
    }

    /// Classes by descending score; ties break on ascending class id.
    pub fn ranking(&self) -> Vec<(&str, f64)> {
        let mut ranked: Vec<(&str, f64)> = self.iter().collect();
        ranked.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.0.cmp(b.0))
        });
        ranked
    }

    fn check_same_classes(&self, other: &RelevanceScores) -> Result<()> {
        let only_left = self
            .scores
            .keys()
            .filter(|c| !other.scores.contains_key(*c))
            .count();
        let only_right = other
            .scores
            .keys()
            .filter(|c| !self.scores.contains_key(*c))
            .count();
        if only_left > 0 || only_right > 0 {
            return Err(Error::ClassSetMismatch {
                only_left,
                only_right,
            });
        }
        Ok(())
    }

    /// L1 distance between normalized score vectors over the same class set.
    pub fn l1_distance(&self, other: &RelevanceScores) -> Result<f64> {
        self.check_same_classes(other)?;
        Ok(self
            .scores
            .iter()
            .map(|(c, v)| (v - other.scores[c]).abs())
            .sum())
    }

    /// Largest per-class absolute difference of normalized scores.
    pub fn max_abs_diff(&self, other: &RelevanceScores) -> Result<f64> {
        self.check_same_classes(other)?;
        Ok(self
            .scores
            .iter()
            .map(|(c, v)| (v - other.scores[c]).abs())
            .fold(0.0, f64::max))
    }

    /// Writes `class_id,score,raw_utility` rows in class order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["class_id", "score", "raw_utility"])?;
        for (class, score) in &self.scores {
            w.write_record([
                class.as_str(),
                &format!("{:.16e}", score),
                &format!("{:.16e}", self.raw[class]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(file)
    }

    pub fn load_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        {
            let headers = reader.headers()?;
            let expect = ["class_id", "score", "raw_utility"];
            for (i, name) in expect.iter().enumerate() {
                if headers.get(i) != Some(name) {
                    return Err(Error::MissingColumn((*name).to_string()));
                }
            }
        }
        let mut scores = BTreeMap::new();
        let mut raw = BTreeMap::new();
        for row in reader.records() {
            let row = row?;
            let class = row.get(0).unwrap_or("").to_string();
            let parse = |i: usize| -> Result<f64> {
                row.get(i)
                    .unwrap_or("")
                    .parse()
                    .map_err(|_| Error::Invalid(format!("bad number {:?}", row.get(i))))
            };
            scores.insert(class.clone(), parse(1)?);
            raw.insert(class, parse(2)?);
        }
        if scores.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(RelevanceScores { scores, raw })
    }

    pub fn load_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::load_csv(file)
    }
}

/// Stratified scores from an already-built matrix and prior.
pub fn score_from_matrix(
    matrix: &ContributionMatrix,
    prior: &PriorVector,
    alpha: Option<&BTreeMap<Stratum, f64>>,
) -> Result<RelevanceScores> {
    let cond = ConditionalShares::from_matrix(matrix);
    let raw = utility(prior, &cond, alpha)?;
    RelevanceScores::from_raw(raw)
}

/// The uncorrected baseline: each class's share of total weighted mass,
/// ignoring strata entirely.
pub fn unstratified_scores(matrix: &ContributionMatrix) -> Result<RelevanceScores> {
    let raw = matrix
        .class_mass()
        .into_iter()
        .map(|(c, m)| (c.to_string(), m))
        .collect();
    RelevanceScores::from_raw(raw)
}

/// The prior implied by the contributions themselves: each stratum's share of
/// total weighted mass. Scoring with it and no boost reproduces the
/// unstratified shares.
pub fn empirical_prior(matrix: &ContributionMatrix) -> Result<PriorVector> {
    let total = matrix.total_mass();
    if total <= 0.0 {
        return Err(Error::EmptyInput);
    }
    let entries = matrix
        .stratum_totals()
        .iter()
        .map(|(stratum, mass)| {
            (
                stratum.clone(),
                PriorEntry {
                    mass: mass / total,
                    provenance: Provenance::FallbackContributor,
                },
            )
        })
        .collect();
    PriorVector::new(entries)
}
