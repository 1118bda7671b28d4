//! Privacy guard rails over the contribution matrix: small-cell suppression
//! and calibrated Laplace noise.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::contribution::{Cell, ContributionMatrix};
use crate::error::{Error, Result};
use crate::schema::{DemographicSchema, Stratum};

/// Where a guard rail applies: only to published report artifacts, or to the
/// score computation as well.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrivacyScope {
    Reports,
    Scores,
}

impl PrivacyScope {
    pub fn as_str(self) -> &'static str {
        match self {
            PrivacyScope::Reports => "reports",
            PrivacyScope::Scores => "scores",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "reports" => Ok(PrivacyScope::Reports),
            "scores" => Ok(PrivacyScope::Scores),
            other => Err(Error::Invalid(format!("unknown privacy scope {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyConfig {
    /// Cells backed by fewer distinct contributors than this are suppressed.
    pub k: u64,
    /// Laplace noise budget; None disables noise.
    pub epsilon: Option<f64>,
    /// Largest change one contributor can cause in a cell. Defaults to the
    /// maximum weight under the default weighting cap.
    pub sensitivity: f64,
    pub suppress_scope: PrivacyScope,
    pub noise_scope: PrivacyScope,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        PrivacyConfig {
            k: 10,
            epsilon: None,
            sensitivity: 1.0 + 1000.0_f64.ln(),
            suppress_scope: PrivacyScope::Reports,
            noise_scope: PrivacyScope::Reports,
        }
    }
}

impl PrivacyConfig {
    /// The Laplace scale b = sensitivity / epsilon.
    pub fn noise_scale(&self) -> Result<f64> {
        let epsilon = self.epsilon.ok_or(Error::MissingEpsilon)?;
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(Error::BadEpsilon(epsilon));
        }
        if !self.sensitivity.is_finite() || self.sensitivity <= 0.0 {
            return Err(Error::Invalid(format!(
                "sensitivity must be positive and finite, got {}",
                self.sensitivity
            )));
        }
        Ok(self.sensitivity / epsilon)
    }
}

/// What suppression removed, for the audit artifact. Contains counts only,
/// never the suppressed values themselves.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SuppressionAudit {
    pub per_stratum: BTreeMap<Stratum, u64>,
    pub cells_removed: u64,
    pub cells_kept: u64,
}

impl SuppressionAudit {
    /// Writes `stratum,suppressed_cells` rows in sorted order.
    pub fn write_csv<W: Write>(&self, schema: &DemographicSchema, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["stratum", "suppressed_cells"])?;
        for (stratum, count) in &self.per_stratum {
            w.write_record([stratum.encode(schema).as_str(), &count.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, schema: &DemographicSchema, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(schema, file)
    }
}

/// Removes cells backed by fewer than k distinct contributors and recomputes
/// the stratum totals from the survivors. Contributor statistics (M_h, M_W)
/// describe the raw data and are kept unchanged.
pub fn suppress(
    matrix: &ContributionMatrix,
    k: u64,
) -> Result<(ContributionMatrix, SuppressionAudit)> {
    if k == 0 {
        return Err(Error::BadK);
    }
    let mut kept = BTreeMap::new();
    let mut audit = SuppressionAudit::default();
    for ((class, stratum), cell) in matrix.cells() {
        if cell.contributors >= k {
            kept.insert((class.clone(), stratum.clone()), *cell);
            audit.cells_kept += 1;
        } else {
            *audit.per_stratum.entry(stratum.clone()).or_insert(0) += 1;
            audit.cells_removed += 1;
        }
    }
    Ok((matrix.with_cells(kept), audit))
}

/// Adds Laplace(0, sensitivity/epsilon) noise to every cell weight, clamping
/// at zero, in sorted cell order from a seeded generator. Totals are
/// recomputed from the noised cells.
pub fn add_dp_noise(
    matrix: &ContributionMatrix,
    config: &PrivacyConfig,
    seed: u64,
) -> Result<ContributionMatrix> {
    let scale = config.noise_scale()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = BTreeMap::new();
    for ((class, stratum), cell) in matrix.cells() {
        let noise = scale * laplace_unit(&mut rng);
        cells.insert(
            (class.clone(), stratum.clone()),
            Cell {
                weight: (cell.weight + noise).max(0.0),
                contributors: cell.contributors,
            },
        );
    }
    Ok(matrix.with_cells(cells))
}

/// A standard Laplace draw as the difference of two unit exponentials, which
/// avoids the log-of-zero edge of the inverse-CDF form.
fn laplace_unit<R: Rng>(rng: &mut R) -> f64 {
    let a: f64 = rng.sample(Exp1);
    let b: f64 = rng.sample(Exp1);
    a - b
}
