//! End-to-end scoring: unspecified-value handling, prior construction,
//! aggregation, optional guard rails, boosts, and the final scores.

use crate::contribution::{ContributionMatrix, ContributionRecord};
use crate::error::{Error, Result};
use crate::population::PopulationTable;
use crate::priors::{
    apply_fallback, assign_pseudo_populations, census_prior, contributor_marginals,
    resolve_unspecified, PriorPolicy, PriorVector, ResolveReport,
};
use crate::privacy::{add_dp_noise, suppress, PrivacyConfig, PrivacyScope, SuppressionAudit};
use crate::relevance::{
    aggregate_partitioned, boost_factors, score_from_matrix, BoostConfig, RelevanceScores,
    WeightingConfig,
};
use crate::schema::{DemographicSchema, Stratum};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub weighting: WeightingConfig,
    pub prior: PriorPolicy,
    pub boost: Option<BoostConfig>,
    /// Guard rails; whether they touch the scores depends on their scopes.
    pub privacy: Option<PrivacyConfig>,
    /// Seed for the noise draw when noise applies to scores.
    pub noise_seed: u64,
    pub threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            weighting: WeightingConfig::default(),
            prior: PriorPolicy::default(),
            boost: None,
            privacy: None,
            noise_seed: 0,
            threads: 1,
        }
    }
}

/// Mismatches between where the prior puts mass and where contributions
/// exist. Logged as warnings; large uncovered mass means the estimate leans
/// on few strata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoverageReport {
    /// Strata with prior mass but no contributions.
    pub empty_strata: Vec<Stratum>,
    /// Summed prior mass of those strata.
    pub uncovered_mass: f64,
    /// Strata with contributions but zero (or absent) prior mass.
    pub unpriored_strata: Vec<Stratum>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub scores: RelevanceScores,
    pub matrix: ContributionMatrix,
    pub prior: PriorVector,
    /// The schema actually scored against; may contain synthetic own-group
    /// values added for unspecified demographics.
    pub schema: DemographicSchema,
    pub resolve: ResolveReport,
    pub coverage: CoverageReport,
    pub suppression: Option<SuppressionAudit>,
}

/// Runs the full scoring pipeline over already-loaded inputs.
pub fn score_pipeline(
    records: Vec<ContributionRecord>,
    schema: &DemographicSchema,
    population: &PopulationTable,
    config: &PipelineConfig,
) -> Result<PipelineOutput> {
    let (records, schema, resolve) =
        resolve_unspecified(records, schema, &config.prior.unspecified)?;
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (marginals, total_contributors) = contributor_marginals(&records, &schema);

    let mut prior = census_prior(&schema, population, &config.prior.join)?;
    if config.prior.fallback {
        prior = apply_fallback(&prior, &schema, &marginals, total_contributors)?;
    }

    let mut matrix = aggregate_partitioned(&records, &schema, &config.weighting, config.threads)?;
    let mut suppression = None;
    if let Some(privacy) = &config.privacy {
        if privacy.suppress_scope == PrivacyScope::Scores {
            let (suppressed, audit) = suppress(&matrix, privacy.k)?;
            matrix = suppressed;
            suppression = Some(audit);
        }
        if privacy.noise_scope == PrivacyScope::Scores {
            matrix = add_dp_noise(&matrix, privacy, config.noise_seed)?;
        }
    }

    let alpha = match &config.boost {
        Some(boost) if !boost.is_identity() => {
            let has_unavailable = schema
                .categories()
                .iter()
                .any(|c| c.values().iter().any(|v| c.is_unavailable(v)));
            let pseudo;
            let boost_population = if has_unavailable {
                pseudo =
                    assign_pseudo_populations(population, &schema, &marginals, total_contributors)?;
                &pseudo
            } else {
                population
            };
            let strata: Vec<Stratum> = prior.strata().cloned().collect();
            Some(boost_factors(&schema, boost_population, boost, &strata)?)
        }
        _ => None,
    };

    let scores = score_from_matrix(&matrix, &prior, alpha.as_ref())?;

    let mut coverage = CoverageReport::default();
    for (stratum, entry) in prior.iter() {
        if entry.mass > 0.0 && matrix.stratum_total(stratum) <= 0.0 {
            coverage.uncovered_mass += entry.mass;
            coverage.empty_strata.push(stratum.clone());
        }
    }
    for (stratum, total) in matrix.stratum_totals() {
        if *total > 0.0 && prior.mass(stratum).unwrap_or(0.0) == 0.0 {
            coverage.unpriored_strata.push(stratum.clone());
        }
    }
    if !coverage.empty_strata.is_empty() {
        log::warn!(
            "{} strata carrying {:.4} prior mass have no contributions",
            coverage.empty_strata.len(),
            coverage.uncovered_mass
        );
    }
    if !coverage.unpriored_strata.is_empty() {
        log::warn!(
            "{} strata have contributions but no prior mass",
            coverage.unpriored_strata.len()
        );
    }

    Ok(PipelineOutput {
        scores,
        matrix,
        prior,
        schema,
        resolve,
        coverage,
        suppression,
    })
}
