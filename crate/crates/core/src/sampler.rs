//! Probabilistic allocation of an evaluation budget across classes in
//! proportion to their scores.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Poisson};

use crate::error::{Error, Result};
use crate::relevance::RelevanceScores;

/// Name of the generator family every seeded draw in this crate uses,
/// recorded in run metadata so results can be reproduced.
pub const RNG_ALGORITHM: &str = "chacha8";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocationMode {
    /// Counts sum to the budget exactly.
    Multinomial,
    /// Independent per-class draws with lambda = budget * score; the total
    /// varies around the budget.
    Poisson,
}

impl AllocationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AllocationMode::Multinomial => "multinomial",
            AllocationMode::Poisson => "poisson",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "multinomial" => Ok(AllocationMode::Multinomial),
            "poisson" => Ok(AllocationMode::Poisson),
            other => Err(Error::Invalid(format!("unknown allocation mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleAllocation {
    pub counts: BTreeMap<String, u64>,
    pub budget: u64,
    pub seed: u64,
    pub mode: AllocationMode,
}

impl SampleAllocation {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

/// Draws an exact multinomial vector as a chain of conditional binomials.
/// The remaining-weight tails are accumulated in reverse so the last class
/// with positive weight sees probability exactly 1.0, which makes the counts
/// sum to `total` without a remainder fix-up.
pub(crate) fn conditional_binomial_counts<R: Rng>(
    rng: &mut R,
    total: u64,
    weights: &[f64],
) -> Vec<u64> {
    let mut tails = vec![0.0; weights.len()];
    let mut acc = 0.0;
    for i in (0..weights.len()).rev() {
        acc += weights[i];
        tails[i] = acc;
    }
    let mut counts = Vec::with_capacity(weights.len());
    let mut remaining = total;
    for (i, w) in weights.iter().enumerate() {
        if remaining == 0 || *w <= 0.0 || tails[i] <= 0.0 {
            counts.push(0);
            continue;
        }
        let p = w / tails[i];
        let draw = if p >= 1.0 {
            remaining
        } else {
            let dist = Binomial::new(remaining, p).expect("p is in (0, 1)");
            rng.sample(dist)
        };
        counts.push(draw);
        remaining -= draw;
    }
    counts
}

/// Allocates `budget` samples over the classes of a normalized score vector.
pub fn allocate(
    scores: &RelevanceScores,
    budget: u64,
    seed: u64,
    mode: AllocationMode,
) -> Result<SampleAllocation> {
    if !scores.is_normalized() {
        return Err(Error::UnnormalizedScores);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes: Vec<&str> = scores.classes().collect();
    let weights: Vec<f64> = scores.iter().map(|(_, s)| s).collect();
    let drawn: Vec<u64> = match mode {
        AllocationMode::Multinomial => conditional_binomial_counts(&mut rng, budget, &weights),
        AllocationMode::Poisson => weights
            .iter()
            .map(|w| {
                let lambda = budget as f64 * w;
                if lambda <= 0.0 {
                    0
                } else {
                    let dist = Poisson::new(lambda).expect("lambda is positive and finite");
                    let x: f64 = rng.sample(dist);
                    x as u64
                }
            })
            .collect(),
    };
    let counts = classes
        .into_iter()
        .map(|c| c.to_string())
        .zip(drawn)
        .collect();
    Ok(SampleAllocation {
        counts,
        budget,
        seed,
        mode,
    })
}

/// Expected-versus-allocated summary, with a survival measure for the tail
/// half of the score distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationReport {
    /// budget * score per class.
    pub expected: BTreeMap<String, f64>,
    pub median_score: f64,
    /// Below-median classes whose expected count is at least 3.
    pub long_tail_classes: u64,
    /// How many of those received at least one sample.
    pub long_tail_hit: u64,
}

impl AllocationReport {
    /// Fraction of viable long-tail classes that survived allocation; 1.0
    /// when the tail is empty.
    pub fn long_tail_survival(&self) -> f64 {
        if self.long_tail_classes == 0 {
            1.0
        } else {
            self.long_tail_hit as f64 / self.long_tail_classes as f64
        }
    }
}

pub fn allocation_report(
    allocation: &SampleAllocation,
    scores: &RelevanceScores,
) -> Result<AllocationReport> {
    let mut values: Vec<f64> = scores.iter().map(|(_, s)| s).collect();
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
    let mid = values.len() / 2;
    let median_score = if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / 2.0
    };
    let mut report = AllocationReport {
        expected: BTreeMap::new(),
        median_score,
        long_tail_classes: 0,
        long_tail_hit: 0,
    };
    for (class, score) in scores.iter() {
        let expected = allocation.budget as f64 * score;
        report.expected.insert(class.to_string(), expected);
        if score < median_score && expected >= 3.0 {
            report.long_tail_classes += 1;
            if allocation.counts.get(class).copied().unwrap_or(0) > 0 {
                report.long_tail_hit += 1;
            }
        }
    }
    Ok(report)
}

/// Writes `class_id,expected,drawn` rows in class order. Expected counts are
/// budget times score; drawn counts come from the allocation.
pub fn write_allocation_csv<W: Write>(
    allocation: &SampleAllocation,
    scores: &RelevanceScores,
    out: W,
) -> Result<()> {
    let drawn_classes: Vec<&str> = allocation.counts.keys().map(|c| c.as_str()).collect();
    let scored_classes: Vec<&str> = scores.classes().collect();
    if drawn_classes != scored_classes {
        return Err(Error::ClassSetMismatch {
            only_left: drawn_classes
                .iter()
                .filter(|c| !scored_classes.contains(c))
                .count(),
            only_right: scored_classes
                .iter()
                .filter(|c| !drawn_classes.contains(c))
                .count(),
        });
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["class_id", "expected", "drawn"])?;
    for ((class, drawn), (_, score)) in allocation.counts.iter().zip(scores.iter()) {
        w.write_record([
            class.as_str(),
            &format!("{:.16e}", allocation.budget as f64 * score),
            &drawn.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_allocation_csv_path(
    allocation: &SampleAllocation,
    scores: &RelevanceScores,
    path: &Path,
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_allocation_csv(allocation, scores, file)
}

/// One-line JSON with everything needed to reproduce the draw.
pub fn run_metadata(allocation: &SampleAllocation) -> String {
    format!(
        "{{\"budget\":{},\"seed\":{},\"mode\":\"{}\",\"rng\":\"{}\"}}",
        allocation.budget,
        allocation.seed,
        allocation.mode.as_str(),
        RNG_ALGORITHM
    )
}

pub fn write_run_metadata(allocation: &SampleAllocation, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "{}", run_metadata(allocation))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn scores(pairs: &[(&str, f64)]) -> RelevanceScores {
        let raw: BTreeMap<String, f64> = pairs.iter().map(|(c, v)| (c.to_string(), *v)).collect();
        RelevanceScores::from_raw(raw).unwrap()
    }

    #[test]
    fn multinomial_counts_sum_to_budget() {
        let s = scores(&[("a", 0.5), ("b", 0.3), ("c", 0.15), ("d", 0.05)]);
        for seed in 0..50 {
            let alloc = allocate(&s, 1234, seed, AllocationMode::Multinomial).unwrap();
            assert_eq!(alloc.total(), 1234, "seed {seed}");
        }
    }

    #[test]
    fn allocation_csv_pairs_expected_with_drawn() {
        let s = scores(&[("a", 0.75), ("b", 0.25)]);
        let allocation = allocate(&s, 4, 9, AllocationMode::Multinomial).unwrap();
        let mut buf = Vec::new();
        write_allocation_csv(&allocation, &s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("class_id,expected,drawn"));
        let a_row = lines.next().unwrap();
        assert!(
            a_row.starts_with("a,3.0000000000000000e0,"),
            "unexpected row {a_row:?}"
        );
        assert_eq!(lines.count(), 1);

        let other = scores(&[("a", 0.5), ("c", 0.5)]);
        assert!(matches!(
            write_allocation_csv(&allocation, &other, Vec::new()),
            Err(Error::ClassSetMismatch {
                only_left: 1,
                only_right: 1
            })
        ));
    }

    #[test]
    fn allocation_is_seed_deterministic() {
        let s = scores(&[("a", 2.0), ("b", 1.0), ("c", 1.0)]);
        let one = allocate(&s, 500, 99, AllocationMode::Multinomial).unwrap();
        let two = allocate(&s, 500, 99, AllocationMode::Multinomial).unwrap();
        let other = allocate(&s, 500, 100, AllocationMode::Multinomial).unwrap();
        assert_eq!(one, two);
        assert_ne!(one.counts, other.counts);
    }

    #[test]
    fn zero_score_classes_get_nothing() {
        let s = scores(&[("a", 1.0), ("dead", 0.0), ("z", 3.0)]);
        let m = allocate(&s, 1000, 4, AllocationMode::Multinomial).unwrap();
        assert_eq!(m.counts["dead"], 0);
        assert_eq!(m.total(), 1000);
        let p = allocate(&s, 1000, 4, AllocationMode::Poisson).unwrap();
        assert_eq!(p.counts["dead"], 0);
    }

    #[test]
    fn trailing_zero_weights_do_not_break_the_total() {
        // The last positive-weight class absorbs the remainder even when
        // zero-weight classes sort after it.
        let s = scores(&[("a", 1.0), ("b", 1.0), ("x", 0.0), ("y", 0.0)]);
        for seed in 0..20 {
            let alloc = allocate(&s, 777, seed, AllocationMode::Multinomial).unwrap();
            assert_eq!(alloc.total(), 777);
            assert_eq!(alloc.counts["x"] + alloc.counts["y"], 0);
        }
    }

    #[test]
    fn poisson_total_varies_but_tracks_budget() {
        let s = scores(&[("a", 0.25), ("b", 0.25), ("c", 0.25), ("d", 0.25)]);
        let mut totals = Vec::new();
        for seed in 0..40 {
            totals.push(
                allocate(&s, 4000, seed, AllocationMode::Poisson)
                    .unwrap()
                    .total(),
            );
        }
        let mean = totals.iter().sum::<u64>() as f64 / totals.len() as f64;
        assert!((mean - 4000.0).abs() < 60.0, "mean total {mean}");
        assert!(totals.iter().any(|t| *t != 4000));
    }

    #[test]
    fn rejects_unnormalized_scores() {
        // All-zero utilities stay unnormalized.
        let s = RelevanceScores::from_raw(BTreeMap::from([
            ("a".to_string(), 0.0),
            ("b".to_string(), 0.0),
        ]))
        .unwrap();
        assert!(matches!(
            allocate(&s, 10, 0, AllocationMode::Multinomial),
            Err(Error::UnnormalizedScores)
        ));
    }

    #[test]
    fn report_median_and_tail() {
        let s = scores(&[
            ("a", 0.40),
            ("b", 0.30),
            ("c", 0.15),
            ("d", 0.10),
            ("e", 0.05),
        ]);
        let alloc = allocate(&s, 1000, 3, AllocationMode::Multinomial).unwrap();
        let report = allocation_report(&alloc, &s).unwrap();
        assert_eq!(report.median_score, 0.15);
        // d (expected 100) and e (expected 50) are below the median and
        // viable; both should essentially always survive a 1000 draw.
        assert_eq!(report.long_tail_classes, 2);
        assert_eq!(report.long_tail_hit, 2);
        assert_eq!(report.long_tail_survival(), 1.0);
        assert_eq!(report.expected["a"], 400.0);
    }

    #[test]
    fn metadata_line_is_stable() {
        let s = scores(&[("a", 1.0), ("b", 1.0)]);
        let alloc = allocate(&s, 10, 7, AllocationMode::Poisson).unwrap();
        assert_eq!(
            run_metadata(&alloc),
            "{\"budget\":10,\"seed\":7,\"mode\":\"poisson\",\"rng\":\"chacha8\"}"
        );
    }

    proptest! {
        #[test]
        fn multinomial_exactness_over_random_weights(
            weights in proptest::collection::vec(0.0f64..10.0, 1..30),
            total in 0u64..5000,
            seed in 0u64..1000,
        ) {
            prop_assume!(weights.iter().sum::<f64>() > 0.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let counts = conditional_binomial_counts(&mut rng, total, &weights);
            prop_assert_eq!(counts.iter().sum::<u64>(), total);
            for (c, w) in counts.iter().zip(&weights) {
                if *w == 0.0 {
                    prop_assert_eq!(*c, 0);
                }
            }
        }
    }
}
