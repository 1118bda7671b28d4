//! Synthetic contribution worlds with a controlled participation skew, used
//! to verify end to end that stratified scoring recovers the intended
//! relevance when the contributor mix does not match the population.
//!
//! A scenario fixes one demographic category (countries, by default), a
//! census population per value, a contributor mix that may differ from that
//! census, and a per-stratum preference profile over classes: contributors
//! favor classes hosted by their own country by `home_weight` against
//! `foreign_weight`, with an optional `tilt` spreading popularity inside
//! each host block so rankings have no ties.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::contribution::ContributionRecord;
use crate::error::{Error, Result};
use crate::ingest;
use crate::kv;
use crate::metadata::{ClassInfo, ClassMetadata};
use crate::population::PopulationTable;
use crate::relevance::{RelevanceScores, WeightingConfig};
use crate::reports;
use crate::sampler::conditional_binomial_counts;
use crate::schema::{Category, DemographicSchema, Stratum};

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    /// Name of the single demographic category the scenario stratifies on.
    pub category: String,
    /// Category values, e.g. country codes.
    pub values: Vec<String>,
    /// Optional hierarchy edges (child, parent), children declared first.
    pub parents: Vec<(String, String)>,
    /// Optional (depth, name) labels for hierarchy levels.
    pub level_names: Vec<(u32, String)>,
    /// Census population per value.
    pub populations: Vec<u64>,
    /// World total; defaults to the sum of `populations`.
    pub world_population: Option<u64>,
    /// Contributor mix per value; normalized internally. Setting this away
    /// from the census shares is what creates the participation skew.
    pub bias: Vec<f64>,
    /// Total number of classes.
    pub classes: u64,
    /// How many classes each value hosts; sums to `classes`.
    pub hosts: Vec<u64>,
    pub home_weight: f64,
    pub foreign_weight: f64,
    /// Within-host popularity slope: class at offset j inside its host block
    /// carries factor 1 + tilt * j.
    pub tilt: f64,
    pub contributors: u64,
    /// Per-contributor item counts are log-uniform on 1..=n_max.
    pub n_max: u64,
    pub seed: u64,
}

impl Scenario {
    /// Skewed fixture: a small country dominates the contributor pool, so
    /// unstratified shares overstate its classes.
    pub fn default_biased() -> Scenario {
        Scenario {
            name: "default-biased".into(),
            category: "country".into(),
            values: vec!["AA".into(), "BB".into(), "CC".into()],
            parents: Vec::new(),
            level_names: Vec::new(),
            populations: vec![200_000, 300_000, 500_000],
            world_population: None,
            bias: vec![0.7, 0.2, 0.1],
            classes: 20,
            hosts: vec![7, 7, 6],
            home_weight: 4.0,
            foreign_weight: 1.0,
            tilt: 0.03,
            contributors: 5000,
            n_max: 16,
            seed: 2,
        }
    }

    /// Contributor mix equal to the census shares: stratification has
    /// nothing to correct, so both estimators should agree.
    pub fn null_bias() -> Scenario {
        Scenario {
            name: "null-bias".into(),
            category: "country".into(),
            values: vec!["AA".into(), "BB".into(), "CC".into()],
            parents: Vec::new(),
            level_names: Vec::new(),
            populations: vec![200_000, 300_000, 500_000],
            world_population: None,
            bias: vec![0.2, 0.3, 0.5],
            classes: 18,
            hosts: vec![6, 6, 6],
            home_weight: 4.0,
            foreign_weight: 1.0,
            tilt: 0.0,
            contributors: 5000,
            n_max: 2000,
            seed: 5,
        }
    }

    /// Population sizes spanning four orders of magnitude, with contributors
    /// uploading only home-country classes. Exercises the diversity boosts.
    pub fn five_country() -> Scenario {
        Scenario {
            name: "five-country".into(),
            category: "country".into(),
            values: vec![
                "AA".into(),
                "BB".into(),
                "CC".into(),
                "DD".into(),
                "EE".into(),
            ],
            parents: Vec::new(),
            level_names: Vec::new(),
            populations: vec![1_000_000, 100_000, 10_000, 1_000, 100],
            world_population: None,
            bias: vec![0.2, 0.2, 0.2, 0.2, 0.2],
            classes: 20,
            hosts: vec![12, 3, 3, 1, 1],
            home_weight: 1.0,
            foreign_weight: 0.0,
            tilt: 0.0,
            contributors: 20_000,
            n_max: 30,
            seed: 7,
        }
    }

    /// Degenerate single-stratum world where stratified and unstratified
    /// estimates coincide by construction.
    pub fn single_stratum() -> Scenario {
        Scenario {
            name: "single-stratum".into(),
            category: "country".into(),
            values: vec!["AA".into()],
            parents: Vec::new(),
            level_names: Vec::new(),
            populations: vec![1_000_000],
            world_population: None,
            bias: vec![1.0],
            classes: 12,
            hosts: vec![12],
            home_weight: 1.0,
            foreign_weight: 1.0,
            tilt: 0.05,
            contributors: 2000,
            n_max: 50,
            seed: 3,
        }
    }

    pub fn builtin(name: &str) -> Result<Scenario> {
        match name {
            "default-biased" => Ok(Scenario::default_biased()),
            "null-bias" => Ok(Scenario::null_bias()),
            "five-country" => Ok(Scenario::five_country()),
            "single-stratum" => Ok(Scenario::single_stratum()),
            other => Err(Error::Scenario(format!(
                "unknown scenario {other:?}; built-ins are default-biased, null-bias, five-country, single-stratum"
            ))),
        }
    }

    pub fn with_contributors(mut self, contributors: u64) -> Scenario {
        self.contributors = contributors;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Scenario {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Scenario(msg));
        if self.values.is_empty() {
            return fail("scenario needs at least one value".into());
        }
        for (field, len) in [
            ("populations", self.populations.len()),
            ("bias", self.bias.len()),
            ("hosts", self.hosts.len()),
        ] {
            if len != self.values.len() {
                return fail(format!(
                    "{field} has {len} entries for {} values",
                    self.values.len()
                ));
            }
        }
        if self.classes == 0 {
            return fail("scenario needs at least one class".into());
        }
        if self.hosts.iter().sum::<u64>() != self.classes {
            return fail(format!(
                "hosts sum to {}, classes is {}",
                self.hosts.iter().sum::<u64>(),
                self.classes
            ));
        }
        if self.contributors == 0 {
            return fail("scenario needs at least one contributor".into());
        }
        if self.n_max == 0 {
            return fail("n_max must be positive".into());
        }
        if self.populations.contains(&0) {
            return fail("populations must be positive".into());
        }
        if self.bias.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return fail("bias shares must be finite and non-negative".into());
        }
        if self.bias.iter().sum::<f64>() <= 0.0 {
            return fail("bias shares must not all be zero".into());
        }
        for (label, w) in [
            ("home_weight", self.home_weight),
            ("foreign_weight", self.foreign_weight),
        ] {
            if !w.is_finite() || w < 0.0 {
                return fail(format!("{label} must be finite and non-negative"));
            }
        }
        if !self.tilt.is_finite() {
            return fail("tilt must be finite".into());
        }
        let max_block = self.hosts.iter().copied().max().unwrap_or(0);
        if max_block > 1 && 1.0 + self.tilt * (max_block - 1) as f64 <= 0.0 {
            return fail(format!(
                "tilt {} drives a class factor to zero or below",
                self.tilt
            ));
        }
        let q = self.q_matrix_unchecked();
        for (i, row) in q.iter().enumerate() {
            if self.bias[i] > 0.0 && row.iter().sum::<f64>() <= 0.0 {
                return fail(format!(
                    "stratum {} receives contributors but prefers no class",
                    self.values[i]
                ));
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> Result<DemographicSchema> {
        let mut cat = Category::new(self.category.clone(), self.values.clone())?;
        for (child, parent) in &self.parents {
            cat = cat.with_parent(child, parent)?;
        }
        for (depth, name) in &self.level_names {
            cat = cat.with_level_name(*depth, name)?;
        }
        DemographicSchema::new(vec![cat])
    }

    pub fn population_table(&self) -> Result<PopulationTable> {
        let schema = self.schema()?;
        let mut entries = BTreeMap::new();
        for (value, count) in self.values.iter().zip(&self.populations) {
            entries.insert(Stratum::full(&schema, &[value.as_str()])?, *count);
        }
        let world = self
            .world_population
            .unwrap_or_else(|| self.populations.iter().sum());
        PopulationTable::new(&schema, entries, world)
    }

    /// Class ids c01, c02, ... zero-padded to a stable width.
    pub fn class_ids(&self) -> Vec<String> {
        let width = self.classes.to_string().len().max(2);
        (1..=self.classes)
            .map(|i| format!("c{i:0width$}"))
            .collect()
    }

    /// Index of the value hosting each class, following the host blocks.
    fn host_index(&self) -> Vec<usize> {
        let mut hosts = Vec::with_capacity(self.classes as usize);
        for (i, count) in self.hosts.iter().enumerate() {
            for _ in 0..*count {
                hosts.push(i);
            }
        }
        hosts
    }

    /// Offset of each class inside its host block.
    fn within_index(&self) -> Vec<u64> {
        let mut within = Vec::with_capacity(self.classes as usize);
        for count in &self.hosts {
            for j in 0..*count {
                within.push(j);
            }
        }
        within
    }

    fn q_matrix_unchecked(&self) -> Vec<Vec<f64>> {
        let host = self.host_index();
        let within = self.within_index();
        let mut rows = Vec::with_capacity(self.values.len());
        for stratum_idx in 0..self.values.len() {
            let mut row: Vec<f64> = (0..self.classes as usize)
                .map(|c| {
                    let base = if host[c] == stratum_idx {
                        self.home_weight
                    } else {
                        self.foreign_weight
                    };
                    base * (1.0 + self.tilt * within[c] as f64)
                })
                .collect();
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                for v in &mut row {
                    *v /= total;
                }
            }
            rows.push(row);
        }
        rows
    }

    /// Per-stratum class preference rows, normalized to distributions.
    pub fn q_matrix(&self) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        Ok(self.q_matrix_unchecked())
    }

    /// Census shares of the values (populations normalized).
    pub fn census_shares(&self) -> Vec<f64> {
        let total: f64 = self.populations.iter().map(|p| *p as f64).sum();
        self.populations.iter().map(|p| *p as f64 / total).collect()
    }

    /// Contributor-mix shares (bias normalized).
    pub fn bias_shares(&self) -> Vec<f64> {
        let total: f64 = self.bias.iter().sum();
        self.bias.iter().map(|b| b / total).collect()
    }

    pub fn metadata(&self) -> Result<ClassMetadata> {
        let schema = self.schema()?;
        let (_, cat) = schema
            .category(&self.category)
            .ok_or_else(|| Error::UnknownCategory(self.category.clone()))?;
        let ids = self.class_ids();
        let host = self.host_index();
        let mut entries = BTreeMap::new();
        for (c, id) in ids.iter().enumerate() {
            let country = self.values[host[c]].as_str();
            let continent = if cat.has_hierarchy() {
                cat.ancestor(country, 1)
            } else {
                country
            };
            entries.insert(
                id.clone(),
                ClassInfo {
                    name: id.clone(),
                    country: country.to_string(),
                    continent: continent.to_string(),
                },
            );
        }
        Ok(ClassMetadata::new(entries))
    }

    /// The intended relevance: preference rows mixed by census shares.
    pub fn truth(&self) -> Result<RelevanceScores> {
        let q = self.q_matrix()?;
        let p = self.census_shares();
        let ids = self.class_ids();
        let mut raw = BTreeMap::new();
        for (c, id) in ids.iter().enumerate() {
            let score: f64 = q.iter().zip(&p).map(|(row, ph)| row[c] * ph).sum();
            raw.insert(id.clone(), score);
        }
        RelevanceScores::from_raw(raw)
    }

    /// Draws the synthetic world. Each contributor gets an independent
    /// generator stream derived from the scenario seed, so output does not
    /// depend on evaluation order: a stratum from the contributor mix, a
    /// log-uniform item count, then a multinomial split over classes.
    pub fn generate(&self) -> Result<SyntheticWorld> {
        self.validate()?;
        let schema = self.schema()?;
        let population = self.population_table()?;
        let metadata = self.metadata()?;
        let truth = self.truth()?;
        let q = self.q_matrix_unchecked();
        let bias = self.bias_shares();
        let ids = self.class_ids();
        let ln_cap = ((self.n_max + 1) as f64).ln();

        let mut records = Vec::new();
        for u in 0..self.contributors {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(u + 1);

            let draw: f64 = rng.random();
            let mut stratum_idx = bias.len() - 1;
            let mut cum = 0.0;
            for (i, share) in bias.iter().enumerate() {
                cum += share;
                if draw < cum {
                    stratum_idx = i;
                    break;
                }
            }

            let u01: f64 = rng.random();
            let n = ((u01 * ln_cap).exp().floor() as u64).clamp(1, self.n_max);

            let counts = conditional_binomial_counts(&mut rng, n, &q[stratum_idx]);
            let contributor_id = format!("u{u:08}");
            let code = self.values[stratum_idx].clone();
            for (c, k) in counts.iter().enumerate() {
                if *k > 0 {
                    records.push(ContributionRecord::new(
                        contributor_id.clone(),
                        ids[c].clone(),
                        *k,
                        vec![code.clone()],
                    ));
                }
            }
        }
        Ok(SyntheticWorld {
            schema,
            population,
            records,
            metadata,
            truth,
        })
    }

    pub fn from_file(path: &Path) -> Result<Scenario> {
        let pairs = kv::parse_kv_file(path)?;
        Scenario::from_pairs(&pairs)
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Scenario> {
        let mut scenario = Scenario {
            name: "custom".into(),
            category: "country".into(),
            values: Vec::new(),
            parents: Vec::new(),
            level_names: Vec::new(),
            populations: Vec::new(),
            world_population: None,
            bias: Vec::new(),
            classes: 0,
            hosts: Vec::new(),
            home_weight: 1.0,
            foreign_weight: 1.0,
            tilt: 0.0,
            contributors: 0,
            n_max: 0,
            seed: 0,
        };
        let mut required: BTreeMap<&str, bool> = [
            ("values", false),
            ("populations", false),
            ("bias", false),
            ("classes", false),
            ("hosts", false),
            ("contributors", false),
            ("n_max", false),
        ]
        .into_iter()
        .collect();
        for (key, value) in pairs {
            if let Some(seen) = required.get_mut(key.as_str()) {
                *seen = true;
            }
            match key.as_str() {
                "name" => scenario.name = value.clone(),
                "category" => scenario.category = value.clone(),
                "values" => {
                    scenario.values = kv::split_list(value)
                        .into_iter()
                        .map(String::from)
                        .collect();
                }
                "populations" => {
                    scenario.populations = kv::split_list(value)
                        .into_iter()
                        .map(|v| kv::parse_u64(key, v))
                        .collect::<Result<_>>()?;
                }
                "world_population" => {
                    scenario.world_population = Some(kv::parse_u64(key, value)?);
                }
                "bias" => {
                    scenario.bias = kv::split_list(value)
                        .into_iter()
                        .map(|v| kv::parse_f64(key, v))
                        .collect::<Result<_>>()?;
                }
                "classes" => scenario.classes = kv::parse_u64(key, value)?,
                "hosts" => {
                    scenario.hosts = kv::split_list(value)
                        .into_iter()
                        .map(|v| kv::parse_u64(key, v))
                        .collect::<Result<_>>()?;
                }
                "home_weight" => scenario.home_weight = kv::parse_f64(key, value)?,
                "foreign_weight" => scenario.foreign_weight = kv::parse_f64(key, value)?,
                "tilt" => scenario.tilt = kv::parse_f64(key, value)?,
                "contributors" => scenario.contributors = kv::parse_u64(key, value)?,
                "n_max" => scenario.n_max = kv::parse_u64(key, value)?,
                "seed" => scenario.seed = kv::parse_u64(key, value)?,
                "parent" => {
                    let tokens = kv::split_list(value);
                    if tokens.len() != 2 {
                        return Err(Error::Scenario(format!(
                            "parent takes two tokens, got {value:?}"
                        )));
                    }
                    scenario
                        .parents
                        .push((tokens[0].to_string(), tokens[1].to_string()));
                }
                "levelname" => {
                    let tokens = kv::split_list(value);
                    if tokens.len() != 2 {
                        return Err(Error::Scenario(format!(
                            "levelname takes two tokens, got {value:?}"
                        )));
                    }
                    let depth = kv::parse_u64(key, tokens[0])? as u32;
                    scenario.level_names.push((depth, tokens[1].to_string()));
                }
                other => {
                    return Err(Error::Scenario(format!("unknown scenario key {other:?}")));
                }
            }
        }
        if let Some((key, _)) = required.iter().find(|(_, seen)| !**seen) {
            return Err(Error::Scenario(format!("missing scenario key {key:?}")));
        }
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_text(&self) -> String {
        let join_u64 = |v: &[u64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut out = String::new();
        let _ = writeln!(out, "name = {}", self.name);
        let _ = writeln!(out, "category = {}", self.category);
        let _ = writeln!(out, "values = {}", self.values.join(" "));
        let _ = writeln!(out, "populations = {}", join_u64(&self.populations));
        if let Some(world) = self.world_population {
            let _ = writeln!(out, "world_population = {world}");
        }
        let _ = writeln!(
            out,
            "bias = {}",
            self.bias
                .iter()
                .map(|b| format!("{b}"))
                .collect::<Vec<_>>()
                .join(" ")
        );
        let _ = writeln!(out, "classes = {}", self.classes);
        let _ = writeln!(out, "hosts = {}", join_u64(&self.hosts));
        let _ = writeln!(out, "home_weight = {}", self.home_weight);
        let _ = writeln!(out, "foreign_weight = {}", self.foreign_weight);
        let _ = writeln!(out, "tilt = {}", self.tilt);
        let _ = writeln!(out, "contributors = {}", self.contributors);
        let _ = writeln!(out, "n_max = {}", self.n_max);
        let _ = writeln!(out, "seed = {}", self.seed);
        for (child, parent) in &self.parents {
            let _ = writeln!(out, "parent = {child} {parent}");
        }
        for (depth, name) in &self.level_names {
            let _ = writeln!(out, "levelname = {depth} {name}");
        }
        out
    }

    pub fn to_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// A generated world: inputs in memory plus the relevance they encode.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub schema: DemographicSchema,
    pub population: PopulationTable,
    pub records: Vec<ContributionRecord>,
    pub metadata: ClassMetadata,
    pub truth: RelevanceScores,
}

impl SyntheticWorld {
    /// Writes schema.txt, contributions.csv, population.csv, and classes.csv
    /// into `dir`.
    pub fn write_inputs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        ingest::write_schema_path(&self.schema, &dir.join("schema.txt"))?;
        ingest::write_contributions_path(
            &self.records,
            &self.schema,
            &dir.join("contributions.csv"),
        )?;
        ingest::write_population_path(&self.population, &self.schema, &dir.join("population.csv"))?;
        ingest::write_class_metadata_path(&self.metadata, &dir.join("classes.csv"))?;
        Ok(())
    }
}

/// Probability that a contributor's item count equals m, for the log-uniform
/// draw on 1..=n_max. Index m-1.
pub fn item_count_pmf(n_max: u64) -> Vec<f64> {
    let ln_cap = ((n_max + 1) as f64).ln();
    (1..=n_max)
        .map(|m| (((m + 1) as f64).ln() - (m as f64).ln()) / ln_cap)
        .collect()
}

/// Expected contribution weight a single contributor adds to a class drawn
/// with per-item probability `q`: item count log-uniform on 1..=n_max, the
/// class's item count binomial within it, zero weight when the class is
/// never hit. This is the exact distortion the log-scale weighting applies
/// to a preference share, and the building block of the estimator limits.
pub fn expected_weight(q: f64, n_max: u64, weighting: &WeightingConfig) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    let pmf_n = item_count_pmf(n_max);
    if q >= 1.0 {
        return pmf_n
            .iter()
            .enumerate()
            .map(|(i, p)| p * weighting.weight(i as u64 + 1))
            .sum();
    }
    let mut total = 0.0;
    for (i, p_n) in pmf_n.iter().enumerate() {
        let n = i as u64 + 1;
        let mut pmf = (1.0 - q).powi(n as i32);
        let ratio = q / (1.0 - q);
        let mut inner = 0.0;
        for k in 1..=n {
            pmf *= ((n - k + 1) as f64 / k as f64) * ratio;
            inner += pmf * weighting.weight(k);
        }
        total += p_n * inner;
    }
    total
}

fn limit_scores(
    scenario: &Scenario,
    mix: &[f64],
    weighting: &WeightingConfig,
) -> Result<RelevanceScores> {
    let q = scenario.q_matrix()?;
    let ids = scenario.class_ids();
    let mut cache: BTreeMap<u64, f64> = BTreeMap::new();
    let mut expected = |qv: f64| -> f64 {
        *cache
            .entry(qv.to_bits())
            .or_insert_with(|| expected_weight(qv, scenario.n_max, weighting))
    };
    let rows: Vec<Vec<f64>> = q
        .iter()
        .map(|row| row.iter().map(|qv| expected(*qv)).collect())
        .collect();
    let mut raw = BTreeMap::new();
    for (c, id) in ids.iter().enumerate() {
        raw.insert(id.clone(), 0.0);
        let slot = raw.get_mut(id).expect("just inserted");
        for (h, row) in rows.iter().enumerate() {
            let total: f64 = row.iter().sum();
            if mix[h] > 0.0 && total > 0.0 {
                *slot += mix[h] * row[c] / total;
            }
        }
    }
    RelevanceScores::from_raw(raw)
}

/// Large-contributor limit of the stratified estimator under the default
/// pipeline weighting: distorted preference rows renormalized per stratum,
/// mixed by census shares.
pub fn stratified_limit(
    scenario: &Scenario,
    weighting: &WeightingConfig,
) -> Result<RelevanceScores> {
    limit_scores(scenario, &scenario.census_shares(), weighting)
}

/// Large-contributor limit of the unstratified estimator: the same distorted
/// rows, but mixed by the contributor shares and pooled by raw mass.
pub fn unstratified_limit(
    scenario: &Scenario,
    weighting: &WeightingConfig,
) -> Result<RelevanceScores> {
    let q = scenario.q_matrix()?;
    let ids = scenario.class_ids();
    let mix = scenario.bias_shares();
    let mut cache: BTreeMap<u64, f64> = BTreeMap::new();
    let mut expected = |qv: f64| -> f64 {
        *cache
            .entry(qv.to_bits())
            .or_insert_with(|| expected_weight(qv, scenario.n_max, weighting))
    };
    let mut raw = BTreeMap::new();
    for (c, id) in ids.iter().enumerate() {
        let mass: f64 = q
            .iter()
            .zip(&mix)
            .map(|(row, share)| share * expected(row[c]))
            .sum();
        raw.insert(id.clone(), mass);
    }
    RelevanceScores::from_raw(raw)
}

/// Estimator quality against a reference score vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub l1: f64,
    pub max_abs: f64,
    pub overlap_at_k: f64,
    /// Fraction of class pairs ordered the same way in both vectors.
    pub rank_agreement: f64,
}

pub fn evaluate(
    estimate: &RelevanceScores,
    reference: &RelevanceScores,
    k: usize,
) -> Result<EvalMetrics> {
    let l1 = estimate.l1_distance(reference)?;
    let max_abs = estimate.max_abs_diff(reference)?;
    let overlap = reports::overlap_at_k(estimate, reference, k)?.overlap;
    let classes: Vec<&str> = reference.classes().collect();
    let mut concordant = 0u64;
    let mut total = 0u64;
    for i in 0..classes.len() {
        for j in (i + 1)..classes.len() {
            let score = |v: &RelevanceScores, c: &str| v.score(c).unwrap_or(0.0);
            let a = score(estimate, classes[i])
                .partial_cmp(&score(estimate, classes[j]))
                .expect("scores are finite");
            let b = score(reference, classes[i])
                .partial_cmp(&score(reference, classes[j]))
                .expect("scores are finite");
            total += 1;
            if a == b {
                concordant += 1;
            }
        }
    }
    let rank_agreement = if total == 0 {
        1.0
    } else {
        concordant as f64 / total as f64
    };
    Ok(EvalMetrics {
        l1,
        max_abs,
        overlap_at_k: overlap,
        rank_agreement,
    })
}
