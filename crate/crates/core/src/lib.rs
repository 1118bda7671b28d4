//! Batch toolkit for turning crowdsourced contribution logs and demographic
//! population tables into bias-corrected per-class relevance scores.
//!
//! Crowdsourced platforms see their contributor base skewed toward a few
//! demographics, so raw contribution volume is a poor proxy for how relevant
//! a class of content is to the population at large. This crate corrects
//! that skew by stratifying: contributions are aggregated per demographic
//! cell with a log-scale weighting that caps heavy uploaders, each cell's
//! class shares are reweighted by census-derived stratum priors, and the
//! result is a normalized score vector per class. Around that core sit
//! census prior construction with several join strategies and a
//! contributor-statistics fallback for missing population rows, optional
//! diversity boosts that damp the advantage of populous groups, privacy
//! guard rails (small-cell suppression and seeded noise), a seeded sampler
//! that allocates an evaluation budget across classes, ranking and
//! diversity reports, and a synthetic-world simulator that verifies the
//! whole correction loop against known ground truth.
//!
//! All aggregation state lives in ordered maps and every randomized step
//! takes an explicit seed, so identical inputs produce byte-identical
//! outputs regardless of thread count.

pub mod contribution;
pub mod error;
pub mod ingest;
pub mod kv;
pub mod metadata;
pub mod pipeline;
pub mod population;
pub mod priors;
pub mod privacy;
pub mod relevance;
pub mod reports;
pub mod sampler;
pub mod schema;
pub mod simbias;

pub use contribution::{Cell, ContributionMatrix, ContributionRecord, MatrixBuilder};
pub use error::{Error, Result};
pub use ingest::{IngestReport, MetadataReport};
pub use metadata::{ClassInfo, ClassMetadata, UNKNOWN_REGION};
pub use pipeline::{score_pipeline, CoverageReport, PipelineConfig, PipelineOutput};
pub use population::PopulationTable;
pub use priors::{
    apply_fallback, assign_pseudo_populations, census_prior, contributor_marginals,
    resolve_unspecified, JoinMode, PriorEntry, PriorPolicy, PriorVector, Provenance, ResolveReport,
    UnspecifiedPolicy,
};
pub use privacy::{add_dp_noise, suppress, PrivacyConfig, PrivacyScope, SuppressionAudit};
pub use relevance::{
    aggregate, aggregate_partitioned, boost_factors, empirical_prior, score_from_matrix,
    unstratified_scores, utility, BoostConfig, BoostFunction, BoostMode, CategoryBoost,
    ConditionalShares, RelevanceScores, WeightScale, WeightingConfig,
};
pub use reports::{
    distinct_countries_in_top, diversity_curve, overlap_at_k, per_stratum_ranking,
    region_breakdown, report_filename, top_n, DiversityCurve, OverlapResult, RegionLevel,
};
pub use sampler::{
    allocate, allocation_report, write_allocation_csv, write_allocation_csv_path,
    write_run_metadata, AllocationMode, AllocationReport, SampleAllocation, RNG_ALGORITHM,
};
pub use schema::{unspecified_code, Category, DemographicSchema, Stratum, UNSPECIFIED, WILDCARD};
pub use simbias::{
    evaluate, expected_weight, item_count_pmf, stratified_limit, unstratified_limit, EvalMetrics,
    Scenario, SyntheticWorld,
};
