//! One function per subcommand. Each loads its inputs, runs the relevant
//! core operations, writes the output files into `--out`, and drops a
//! `manifest.txt` beside them recording input digests, the effective
//! configuration, and any seeds.

use std::fs;
use std::path::{Path, PathBuf};

use fairscore_core::{
    add_dp_noise, aggregate_partitioned, allocate, allocation_report, apply_fallback, census_prior,
    contributor_marginals, evaluate, ingest, overlap_at_k, reports, resolve_unspecified,
    score_pipeline, suppress, unstratified_scores, write_allocation_csv_path, write_run_metadata,
    Error, PrivacyConfig, PrivacyScope, RelevanceScores, Result, Scenario, SyntheticWorld,
};

use crate::config::Settings;
use crate::manifest::Manifest;

pub struct AggregateArgs {
    pub schema: PathBuf,
    pub contributions: PathBuf,
    pub out: PathBuf,
    pub threads: usize,
    pub noise_seed: Option<u64>,
}

/// Builds the weighted contribution matrix and releases it with the privacy
/// guard rails applied: sub-threshold cells are always suppressed in a
/// released per-stratum table, and noise is added when epsilon is set and
/// noise targets releases.
pub fn aggregate(settings: &Settings, args: &AggregateArgs) -> Result<()> {
    let schema = ingest::load_schema(&args.schema)?;
    let report = ingest::load_contributions_path(&args.contributions, &schema, settings.strict()?)?;
    log::info!(
        "read {} rows, accepted {}, rejected {}",
        report.rows_read,
        report.rows_accepted,
        report.rows_rejected()
    );
    let weighting = settings.weighting()?;
    let privacy = settings.privacy(&weighting)?;
    let matrix = aggregate_partitioned(&report.records, &schema, &weighting, args.threads)?;
    let (mut matrix, audit) = suppress(&matrix, privacy.k)?;
    log::info!(
        "suppression kept {} cells, removed {}",
        audit.cells_kept,
        audit.cells_removed
    );
    let noise_seed = release_noise_seed(&privacy, args.noise_seed)?;
    if let Some(seed) = noise_seed {
        matrix = add_dp_noise(&matrix, &privacy, seed)?;
    }

    fs::create_dir_all(&args.out)?;
    matrix.write_csv_path(&schema, &args.out.join("matrix.csv"))?;
    audit.write_csv_path(&schema, &args.out.join("suppression_audit.csv"))?;

    let mut manifest = Manifest::new("aggregate");
    manifest.add_input_file("schema", &args.schema)?;
    manifest.add_input_file("contributions", &args.contributions)?;
    manifest.set_config(settings.effective());
    if let Some(seed) = noise_seed {
        manifest.add_seed("noise", seed);
    }
    manifest.write(&args.out)
}

/// The seed for noising a released table: required exactly when epsilon is
/// on and the noise scope is releases.
fn release_noise_seed(privacy: &PrivacyConfig, flag: Option<u64>) -> Result<Option<u64>> {
    if privacy.epsilon.is_none() || privacy.noise_scope != PrivacyScope::Reports {
        return Ok(None);
    }
    match flag {
        Some(seed) => Ok(Some(seed)),
        None => Err(Error::Invalid(
            "privacy.epsilon is set, so this release is noised; pass --noise-seed".into(),
        )),
    }
}

/// The seed for noising inside the scoring pipeline: required exactly when
/// epsilon is on and the noise scope is scores.
fn pipeline_noise_seed(settings: &Settings, flag: Option<u64>) -> Result<u64> {
    let weighting = settings.weighting()?;
    let privacy = settings.privacy(&weighting)?;
    if privacy.epsilon.is_none() || privacy.noise_scope != PrivacyScope::Scores {
        return Ok(flag.unwrap_or(0));
    }
    flag.ok_or_else(|| {
        Error::Invalid(
            "privacy.epsilon is set and privacy.noise = scores; pass --noise-seed".into(),
        )
    })
}

pub struct PriorsArgs {
    pub schema: PathBuf,
    pub population: PathBuf,
    pub contributions: Option<PathBuf>,
    pub out: PathBuf,
}

/// Builds the population prior over strata. Contribution logs are needed
/// only when unspecified values are folded into their own groups or when
/// census-unavailable values take the contributor-share fallback.
pub fn priors(settings: &Settings, args: &PriorsArgs) -> Result<()> {
    let schema = ingest::load_schema(&args.schema)?;
    let population = ingest::load_population_path(&args.population, &schema)?;
    let policy = settings.prior_policy(&schema)?;
    let has_unavailable = schema
        .categories()
        .iter()
        .any(|c| c.values().iter().any(|v| c.is_unavailable(v)));

    let (prior, schema) = match &args.contributions {
        Some(path) => {
            let report = ingest::load_contributions_path(path, &schema, settings.strict()?)?;
            let (records, schema, resolve) =
                resolve_unspecified(report.records, &schema, &policy.unspecified)?;
            log::info!(
                "resolved unspecified values: {} records in, {} dropped, {} relabeled",
                resolve.input,
                resolve.dropped,
                resolve.relabeled
            );
            let (marginals, total) = contributor_marginals(&records, &schema);
            let mut prior = census_prior(&schema, &population, &policy.join)?;
            if policy.fallback {
                prior = apply_fallback(&prior, &schema, &marginals, total)?;
            }
            (prior, schema)
        }
        None => {
            if !policy.unspecified.is_empty() {
                return Err(Error::Invalid(
                    "own-group handling of unspecified values needs --contributions".into(),
                ));
            }
            if policy.fallback && has_unavailable {
                return Err(Error::Invalid(
                    "the schema has census-unavailable values; the contributor-share \
                     fallback needs --contributions (or set priors.fallback = false)"
                        .into(),
                ));
            }
            (census_prior(&schema, &population, &policy.join)?, schema)
        }
    };

    fs::create_dir_all(&args.out)?;
    prior.write_csv_path(&schema, &args.out.join("priors.csv"))?;

    let mut manifest = Manifest::new("priors");
    manifest.add_input_file("schema", &args.schema)?;
    manifest.add_input_file("population", &args.population)?;
    if let Some(path) = &args.contributions {
        manifest.add_input_file("contributions", path)?;
    }
    manifest.set_config(settings.effective());
    manifest.write(&args.out)
}

pub struct ScoreArgs {
    pub schema: PathBuf,
    pub contributions: PathBuf,
    pub population: PathBuf,
    pub out: PathBuf,
    pub threads: usize,
    pub noise_seed: Option<u64>,
}

/// Runs the full scoring pipeline and writes the corrected per-class scores
/// together with the prior they were computed against.
pub fn score(settings: &Settings, args: &ScoreArgs) -> Result<()> {
    let schema = ingest::load_schema(&args.schema)?;
    let report = ingest::load_contributions_path(&args.contributions, &schema, settings.strict()?)?;
    log::info!(
        "read {} rows, accepted {}, rejected {}",
        report.rows_read,
        report.rows_accepted,
        report.rows_rejected()
    );
    let population = ingest::load_population_path(&args.population, &schema)?;
    let noise_seed = pipeline_noise_seed(settings, args.noise_seed)?;
    let config = settings.pipeline(&schema, args.threads, noise_seed)?;
    let output = score_pipeline(report.records, &schema, &population, &config)?;

    fs::create_dir_all(&args.out)?;
    output.scores.write_csv_path(&args.out.join("scores.csv"))?;
    output
        .prior
        .write_csv_path(&output.schema, &args.out.join("priors.csv"))?;
    if let Some(audit) = &output.suppression {
        audit.write_csv_path(&output.schema, &args.out.join("suppression_audit.csv"))?;
    }

    let mut manifest = Manifest::new("score");
    manifest.add_input_file("schema", &args.schema)?;
    manifest.add_input_file("contributions", &args.contributions)?;
    manifest.add_input_file("population", &args.population)?;
    manifest.set_config(settings.effective());
    if args.noise_seed.is_some() {
        manifest.add_seed("noise", noise_seed);
    }
    manifest.write(&args.out)
}

pub struct SampleArgs {
    pub scores: PathBuf,
    pub budget: u64,
    pub seed: u64,
    pub out: PathBuf,
}

/// Draws a reproducible sample allocation over classes from scored output.
pub fn sample(settings: &Settings, args: &SampleArgs) -> Result<()> {
    let scores = RelevanceScores::load_csv_path(&args.scores)?;
    let mode = settings.sampler_mode()?;
    let allocation = allocate(&scores, args.budget, args.seed, mode)?;
    let report = allocation_report(&allocation, &scores)?;
    log::info!(
        "allocated {} samples over {} classes, long-tail survival {:.3}",
        allocation.total(),
        scores.len(),
        report.long_tail_survival()
    );

    fs::create_dir_all(&args.out)?;
    write_allocation_csv_path(&allocation, &scores, &args.out.join("allocation.csv"))?;
    write_run_metadata(&allocation, &args.out.join("run.json"))?;

    let mut manifest = Manifest::new("sample");
    manifest.add_input_file("scores", &args.scores)?;
    manifest.set_config(settings.effective());
    manifest.add_param("budget", args.budget);
    manifest.add_seed("sample", args.seed);
    manifest.write(&args.out)
}

pub struct ReportArgs {
    pub scores: PathBuf,
    pub baseline: Option<PathBuf>,
    pub classes: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub top: Vec<usize>,
    pub k: Vec<usize>,
    pub out: PathBuf,
}

/// Writes ranking reports: top-N tables, overlap against a baseline ranking,
/// and, when class metadata is given, diversity curves and region shares.
/// These are class-level tables pooled over all strata, so cell suppression
/// does not apply to them.
pub fn report(settings: &Settings, args: &ReportArgs) -> Result<()> {
    let scores = RelevanceScores::load_csv_path(&args.scores)?;
    let schema = match &args.schema {
        Some(path) => Some(ingest::load_schema(path)?),
        None => None,
    };
    let digest = settings.boost_digest(schema.as_ref())?;
    fs::create_dir_all(&args.out)?;

    for &n in &args.top {
        let rows = reports::top_n(&scores, n);
        let name = reports::report_filename("top", "n", &n.to_string(), &digest);
        reports::write_csv_path(&args.out.join(name), |f| reports::write_top_n_csv(&rows, f))?;
    }

    if let Some(path) = &args.baseline {
        let baseline = RelevanceScores::load_csv_path(path)?;
        for &k in &args.k {
            let result = overlap_at_k(&scores, &baseline, k)?;
            let name = reports::report_filename("overlap", "k", &k.to_string(), &digest);
            reports::write_csv_path(&args.out.join(name), |f| {
                reports::write_overlap_csv(&[(k, result)], f)
            })?;
        }
    }

    if let Some(path) = &args.classes {
        let (metadata, meta_report) = ingest::load_class_metadata_path(path, schema.as_ref())?;
        if !meta_report.rejected.is_empty() {
            log::warn!(
                "class metadata: {} rows rejected",
                meta_report.rejected.values().sum::<u64>()
            );
        }
        let max_n = args.top.iter().copied().max().unwrap_or(10);
        let curve = reports::diversity_curve(&scores, &metadata, max_n);
        let name = reports::report_filename("diversity", "n", &max_n.to_string(), &digest);
        reports::write_csv_path(&args.out.join(name), |f| {
            reports::write_diversity_csv(&curve, f)
        })?;
        for level in [
            reports::RegionLevel::Country,
            reports::RegionLevel::Continent,
        ] {
            let shares = reports::region_breakdown(&scores, &metadata, level)?;
            let name = reports::report_filename("regions", "level", level.as_str(), &digest);
            reports::write_csv_path(&args.out.join(name), |f| {
                reports::write_region_csv(&shares, f)
            })?;
        }
    }

    let mut manifest = Manifest::new("report");
    manifest.add_input_file("scores", &args.scores)?;
    if let Some(path) = &args.baseline {
        manifest.add_input_file("baseline", path)?;
    }
    if let Some(path) = &args.classes {
        manifest.add_input_file("classes", path)?;
    }
    if let Some(path) = &args.schema {
        manifest.add_input_file("schema", path)?;
    }
    manifest.set_config(settings.effective());
    manifest.add_param("top", join_usize(&args.top));
    manifest.add_param("k", join_usize(&args.k));
    manifest.write(&args.out)
}

fn join_usize(values: &[usize]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub struct ScenarioArgs {
    pub builtin: Option<String>,
    pub scenario: Option<PathBuf>,
    pub contributors: Option<u64>,
    pub seed: Option<u64>,
}

impl ScenarioArgs {
    /// Resolves the scenario from a builtin name or a scenario file and
    /// applies any overrides. Generation is seeded by the scenario itself,
    /// so there is no wall-clock randomness to pin down.
    fn resolve(&self) -> Result<Scenario> {
        let mut scenario = match (&self.builtin, &self.scenario) {
            (Some(name), None) => Scenario::builtin(name)?,
            (None, Some(path)) => Scenario::from_file(path)?,
            _ => {
                return Err(Error::Invalid(
                    "pass exactly one of --builtin or --scenario".into(),
                ))
            }
        };
        if let Some(contributors) = self.contributors {
            scenario = scenario.with_contributors(contributors);
        }
        if let Some(seed) = self.seed {
            scenario = scenario.with_seed(seed);
        }
        scenario.validate()?;
        Ok(scenario)
    }
}

/// Writes the scenario's synthetic world (schema, contributions, population,
/// class metadata) plus the closed-form truth it was generated from.
fn write_world(scenario: &Scenario, out: &Path) -> Result<(SyntheticWorld, String)> {
    let world = scenario.generate()?;
    world.write_inputs(out)?;
    world.truth.write_csv_path(&out.join("truth_scores.csv"))?;
    let text = scenario.to_text();
    fs::write(out.join("scenario.txt"), &text)?;
    Ok((world, text))
}

pub fn simulate(settings: &Settings, args: &ScenarioArgs, out: &Path) -> Result<()> {
    let scenario = args.resolve()?;
    fs::create_dir_all(out)?;
    let (world, text) = write_world(&scenario, out)?;
    log::info!(
        "generated {} records over {} classes",
        world.records.len(),
        world.truth.len()
    );

    let mut manifest = Manifest::new("simulate");
    manifest.add_input_text("scenario", &text);
    manifest.set_config(settings.effective());
    manifest.add_seed("scenario", scenario.seed);
    manifest.write(out)
}

pub struct End2EndArgs {
    pub scenario: ScenarioArgs,
    pub out: PathBuf,
    pub threads: usize,
    pub k: usize,
    pub budget: Option<u64>,
    pub sample_seed: Option<u64>,
    pub noise_seed: Option<u64>,
}

/// Full golden run: generate a synthetic world, round-trip it through the
/// CSV loaders, score it stratified and pooled, and write both estimates,
/// their distances to the known truth, and optionally a sample allocation.
pub fn end2end(settings: &Settings, args: &End2EndArgs) -> Result<()> {
    let scenario = args.scenario.resolve()?;
    fs::create_dir_all(&args.out)?;
    let (world, text) = write_world(&scenario, &args.out)?;

    // Reload everything from the files just written so the run covers the
    // same parsing path real inputs take.
    let schema = ingest::load_schema(&args.out.join("schema.txt"))?;
    let report = ingest::load_contributions_path(
        &args.out.join("contributions.csv"),
        &schema,
        settings.strict()?,
    )?;
    let population = ingest::load_population_path(&args.out.join("population.csv"), &schema)?;
    let (metadata, _) =
        ingest::load_class_metadata_path(&args.out.join("classes.csv"), Some(&schema))?;
    log::info!(
        "round-tripped {} records, {} classes",
        report.records.len(),
        metadata.len()
    );

    let noise_seed = pipeline_noise_seed(settings, args.noise_seed)?;
    let config = settings.pipeline(&schema, args.threads, noise_seed)?;
    let output = score_pipeline(report.records, &schema, &population, &config)?;
    let pooled = unstratified_scores(&output.matrix)?;

    output.scores.write_csv_path(&args.out.join("scores.csv"))?;
    pooled.write_csv_path(&args.out.join("unstratified.csv"))?;
    output
        .prior
        .write_csv_path(&output.schema, &args.out.join("priors.csv"))?;
    if let Some(audit) = &output.suppression {
        audit.write_csv_path(&output.schema, &args.out.join("suppression_audit.csv"))?;
    }

    let stratified = evaluate(&output.scores, &world.truth, args.k)?;
    let unstratified = evaluate(&pooled, &world.truth, args.k)?;
    let estimates = overlap_at_k(&output.scores, &pooled, args.k)?;
    write_metrics_csv(
        &args.out.join("metrics.csv"),
        &[
            ("stratified_l1", stratified.l1),
            ("stratified_max_abs", stratified.max_abs),
            ("stratified_overlap_at_k", stratified.overlap_at_k),
            ("stratified_rank_agreement", stratified.rank_agreement),
            ("unstratified_l1", unstratified.l1),
            ("unstratified_max_abs", unstratified.max_abs),
            ("unstratified_overlap_at_k", unstratified.overlap_at_k),
            ("unstratified_rank_agreement", unstratified.rank_agreement),
            ("estimates_overlap_at_k", estimates.overlap),
        ],
        args.k,
    )?;
    log::info!(
        "stratified L1 to truth {:.4}, unstratified {:.4}",
        stratified.l1,
        unstratified.l1
    );

    let mut manifest = Manifest::new("end2end");
    manifest.add_input_text("scenario", &text);
    for (role, file) in [
        ("schema", "schema.txt"),
        ("contributions", "contributions.csv"),
        ("population", "population.csv"),
        ("classes", "classes.csv"),
    ] {
        manifest.add_input_file(role, &args.out.join(file))?;
    }
    manifest.set_config(settings.effective());
    manifest.add_param("k", args.k);
    manifest.add_seed("scenario", scenario.seed);
    if args.noise_seed.is_some() {
        manifest.add_seed("noise", noise_seed);
    }

    if let Some(budget) = args.budget {
        let seed = args.sample_seed.unwrap_or(scenario.seed);
        let allocation = allocate(&output.scores, budget, seed, settings.sampler_mode()?)?;
        write_allocation_csv_path(
            &allocation,
            &output.scores,
            &args.out.join("allocation.csv"),
        )?;
        write_run_metadata(&allocation, &args.out.join("run.json"))?;
        manifest.add_param("budget", budget);
        manifest.add_seed("sample", seed);
    }
    manifest.write(&args.out)
}

fn write_metrics_csv(path: &Path, rows: &[(&str, f64)], k: usize) -> Result<()> {
    let mut text = String::from("metric,value\n");
    for (metric, value) in rows {
        text.push_str(&format!("{metric},{value:.16e}\n"));
    }
    text.push_str(&format!("k,{k}\n"));
    fs::write(path, text)?;
    Ok(())
}
