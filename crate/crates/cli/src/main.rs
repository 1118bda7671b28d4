//! `fairscore`: command-line front end for the bias-corrected relevance
//! scoring pipeline. Subcommands cover each stage (aggregate, priors,
//! score, sample, report) plus the synthetic-world simulator and a full
//! end-to-end golden run.
//!
//! Configuration keys (`relevance.n_cap`, `privacy.k`, ...) can be set in a
//! `key = value` file passed with --config, overridden with repeated
//! `--set key=value` flags, or spelled as mirrored flags with dots replaced
//! by dashes: `--privacy-k 5` means `--set privacy.k=5`. Precedence is
//! flags over file over defaults, later flags winning. Exit codes: 0 on
//! success, 1 when inputs or flags fail validation, 2 when reading or
//! writing files fails.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{ArgAction, Args, Parser, Subcommand};

use commands::{
    AggregateArgs, End2EndArgs, PriorsArgs, ReportArgs, SampleArgs, ScenarioArgs, ScoreArgs,
};
use config::Settings;

#[derive(Parser)]
#[command(
    name = "fairscore",
    version,
    about = "Bias-corrected relevance scoring over crowdsourced contribution logs",
    max_term_width = 100
)]
struct Cli {
    /// Configuration file of line-oriented key = value pairs.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one configuration key; repeatable, later entries win.
    #[arg(long, global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Log progress details; repeat for debug output.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the weighted contribution matrix and release it with
    /// small-cell suppression (and noise when epsilon is configured).
    Aggregate {
        /// Demographic schema file.
        #[arg(long, value_name = "FILE")]
        schema: PathBuf,
        /// Contribution log CSV.
        #[arg(long, value_name = "FILE")]
        contributions: PathBuf,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Worker threads for aggregation; results do not depend on this.
        #[arg(long, default_value_t = 1, value_name = "N")]
        threads: usize,
        /// Seed for release noise; required when privacy.epsilon is set.
        #[arg(long, value_name = "SEED")]
        noise_seed: Option<u64>,
    },
    /// Build the population prior over demographic strata.
    Priors {
        /// Demographic schema file.
        #[arg(long, value_name = "FILE")]
        schema: PathBuf,
        /// Census population CSV.
        #[arg(long, value_name = "FILE")]
        population: PathBuf,
        /// Contribution log CSV; needed for the contributor-share fallback
        /// and for own-group handling of unspecified values.
        #[arg(long, value_name = "FILE")]
        contributions: Option<PathBuf>,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Run the full scoring pipeline: ingest, weight, stratify, correct.
    Score {
        /// Demographic schema file.
        #[arg(long, value_name = "FILE")]
        schema: PathBuf,
        /// Contribution log CSV.
        #[arg(long, value_name = "FILE")]
        contributions: PathBuf,
        /// Census population CSV.
        #[arg(long, value_name = "FILE")]
        population: PathBuf,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Worker threads for aggregation; results do not depend on this.
        #[arg(long, default_value_t = 1, value_name = "N")]
        threads: usize,
        /// Seed for in-pipeline noise; required when privacy.epsilon is set
        /// and privacy.noise = scores.
        #[arg(long, value_name = "SEED")]
        noise_seed: Option<u64>,
    },
    /// Draw a reproducible sample allocation from scored output.
    Sample {
        /// Scores CSV produced by the score or end2end command.
        #[arg(long, value_name = "FILE")]
        scores: PathBuf,
        /// Total number of samples to allocate.
        #[arg(long, value_name = "N")]
        budget: u64,
        /// RNG seed; required, so runs are always reproducible.
        #[arg(long, value_name = "SEED")]
        seed: u64,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Write ranking reports: top-N, overlap, diversity, region shares.
    Report {
        /// Scores CSV to report on.
        #[arg(long, value_name = "FILE")]
        scores: PathBuf,
        /// Second scores CSV to compute ranking overlap against.
        #[arg(long, value_name = "FILE")]
        baseline: Option<PathBuf>,
        /// Class metadata CSV; enables diversity and region reports.
        #[arg(long, value_name = "FILE")]
        classes: Option<PathBuf>,
        /// Demographic schema file, for validating metadata and resolving
        /// named boost levels in filenames.
        #[arg(long, value_name = "FILE")]
        schema: Option<PathBuf>,
        /// Top-list sizes; repeatable.
        #[arg(long, value_name = "N", default_values_t = [10usize])]
        top: Vec<usize>,
        /// Overlap depths; repeatable.
        #[arg(long, value_name = "K", default_values_t = [10usize])]
        k: Vec<usize>,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Generate a synthetic world with known ground truth.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioCliArgs,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Golden run: simulate, round-trip through the loaders, score both
    /// stratified and pooled, and measure both against the known truth.
    End2end {
        #[command(flatten)]
        scenario: ScenarioCliArgs,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Worker threads for aggregation; results do not depend on this.
        #[arg(long, default_value_t = 1, value_name = "N")]
        threads: usize,
        /// Ranking depth for the overlap metrics.
        #[arg(long, default_value_t = 10, value_name = "K")]
        k: usize,
        /// Also draw a sample allocation of this size from the scores.
        #[arg(long, value_name = "N")]
        budget: Option<u64>,
        /// Seed for the sample draw; defaults to the scenario seed.
        #[arg(long, value_name = "SEED")]
        sample_seed: Option<u64>,
        /// Seed for in-pipeline noise; required when privacy.epsilon is set
        /// and privacy.noise = scores.
        #[arg(long, value_name = "SEED")]
        noise_seed: Option<u64>,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ScenarioSource {
    /// Built-in scenario name (default-biased, null-bias, five-country,
    /// single-stratum).
    #[arg(long, value_name = "NAME")]
    builtin: Option<String>,
    /// Scenario definition file of key = value pairs.
    #[arg(long, value_name = "FILE")]
    scenario: Option<PathBuf>,
}

#[derive(Args)]
struct ScenarioCliArgs {
    #[command(flatten)]
    source: ScenarioSource,
    /// Override the scenario's contributor count.
    #[arg(long, value_name = "N")]
    contributors: Option<u64>,
    /// Override the scenario's generation seed.
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
}

impl ScenarioCliArgs {
    fn into_args(self) -> ScenarioArgs {
        ScenarioArgs {
            builtin: self.source.builtin,
            scenario: self.source.scenario,
            contributors: self.contributors,
            seed: self.seed,
        }
    }
}

/// Config namespaces whose keys may be spelled as flags. `--privacy-k 5`
/// and `--privacy-k=5` both become `--set privacy.k=5`.
const MIRRORED: &[&str] = &[
    "relevance",
    "priors",
    "privacy",
    "boost",
    "sampler",
    "ingest",
];

/// Rewrites mirrored flags into --set pairs before clap sees them. Category
/// names containing dashes cannot round-trip through this spelling; use
/// --set directly for those.
fn rewrite_mirrored_flags(argv: Vec<String>) -> Result<Vec<String>, String> {
    let mut out = Vec::with_capacity(argv.len());
    let mut iter = argv.into_iter();
    if let Some(program) = iter.next() {
        out.push(program);
    }
    let mut literal = false;
    while let Some(token) = iter.next() {
        if literal || token == "--" {
            literal = true;
            out.push(token);
            continue;
        }
        let Some(body) = token.strip_prefix("--") else {
            out.push(token);
            continue;
        };
        let (head, inline_value) = match body.split_once('=') {
            Some((h, v)) => (h, Some(v.to_string())),
            None => (body, None),
        };
        let key = head.replace('-', ".");
        let namespace = key.split('.').next().unwrap_or("");
        if !key.contains('.') || !MIRRORED.contains(&namespace) {
            out.push(token);
            continue;
        }
        let value = match inline_value {
            Some(v) => v,
            None => iter
                .next()
                .ok_or_else(|| format!("flag --{head} needs a value"))?,
        };
        out.push("--set".to_string());
        out.push(format!("{key}={value}"));
    }
    Ok(out)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let argv = match rewrite_mirrored_flags(argv) {
        Ok(argv) => argv,
        Err(message) => {
            eprintln!("fairscore: {message}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };

    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("fairscore: {err}");
            ExitCode::from(if err.is_io() { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> fairscore_core::Result<()> {
    let settings = Settings::load(cli.config.as_deref(), &cli.set)?;
    match cli.command {
        Command::Aggregate {
            schema,
            contributions,
            out,
            threads,
            noise_seed,
        } => commands::aggregate(
            &settings,
            &AggregateArgs {
                schema,
                contributions,
                out,
                threads,
                noise_seed,
            },
        ),
        Command::Priors {
            schema,
            population,
            contributions,
            out,
        } => commands::priors(
            &settings,
            &PriorsArgs {
                schema,
                population,
                contributions,
                out,
            },
        ),
        Command::Score {
            schema,
            contributions,
            population,
            out,
            threads,
            noise_seed,
        } => commands::score(
            &settings,
            &ScoreArgs {
                schema,
                contributions,
                population,
                out,
                threads,
                noise_seed,
            },
        ),
        Command::Sample {
            scores,
            budget,
            seed,
            out,
        } => commands::sample(
            &settings,
            &SampleArgs {
                scores,
                budget,
                seed,
                out,
            },
        ),
        Command::Report {
            scores,
            baseline,
            classes,
            schema,
            top,
            k,
            out,
        } => commands::report(
            &settings,
            &ReportArgs {
                scores,
                baseline,
                classes,
                schema,
                top,
                k,
                out,
            },
        ),
        Command::Simulate { scenario, out } => {
            commands::simulate(&settings, &scenario.into_args(), &out)
        }
        Command::End2end {
            scenario,
            out,
            threads,
            k,
            budget,
            sample_seed,
            noise_seed,
        } => commands::end2end(
            &settings,
            &End2EndArgs {
                scenario: scenario.into_args(),
                out,
                threads,
                k,
                budget,
                sample_seed,
                noise_seed,
            },
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::rewrite_mirrored_flags;

    fn rewrite(tokens: &[&str]) -> Vec<String> {
        let argv = std::iter::once("fairscore")
            .chain(tokens.iter().copied())
            .map(String::from)
            .collect();
        rewrite_mirrored_flags(argv).unwrap()
    }

    #[test]
    fn mirrored_flags_become_set_pairs() {
        assert_eq!(
            rewrite(&["score", "--privacy-k", "5"])[1..],
            ["score", "--set", "privacy.k=5"]
        );
        assert_eq!(
            rewrite(&["score", "--boost-country=sqrt", "--boost-level=continent"])[1..],
            [
                "score",
                "--set",
                "boost.country=sqrt",
                "--set",
                "boost.level=continent"
            ]
        );
        assert_eq!(
            rewrite(&["score", "--relevance-n_cap", "100"])[1..],
            ["score", "--set", "relevance.n_cap=100"]
        );
    }

    #[test]
    fn structural_flags_pass_through() {
        assert_eq!(
            rewrite(&["sample", "--budget", "10", "--seed", "1", "--out", "d"])[1..],
            ["sample", "--budget", "10", "--seed", "1", "--out", "d"]
        );
        // A bare namespace word is not a config key.
        assert_eq!(rewrite(&["--boost"])[1..], ["--boost"]);
        // Everything after -- is literal.
        assert_eq!(
            rewrite(&["--", "--privacy-k", "5"])[1..],
            ["--", "--privacy-k", "5"]
        );
    }

    #[test]
    fn mirrored_flag_without_value_is_an_error() {
        let argv = vec!["fairscore".to_string(), "--privacy-k".to_string()];
        let err = rewrite_mirrored_flags(argv).unwrap_err();
        assert!(err.contains("--privacy-k"));
    }
}
