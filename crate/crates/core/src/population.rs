//! Census-style population tables: counts per stratum (full or marginal),
//! validated against a schema.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::schema::{DemographicSchema, Stratum};

/// Population counts keyed by stratum pattern. Full strata describe joint
/// cells; patterns with wildcards are marginals. The all-wildcard row is the
/// world total and is stored separately.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PopulationTable {
    entries: BTreeMap<Stratum, u64>,
    world: u64,
}

impl PopulationTable {
    /// Builds a table from (pattern, count) pairs. `entries` must not contain
    /// the all-wildcard pattern; that is `world`.
    pub fn new(
        schema: &DemographicSchema,
        entries: BTreeMap<Stratum, u64>,
        world: u64,
    ) -> Result<Self> {
        if world == 0 {
            return Err(Error::ZeroWorldTotal);
        }
        for (stratum, &count) in &entries {
            if stratum.is_all_wildcard() {
                return Err(Error::DuplicateStratum(stratum.encode(schema)));
            }
            if stratum.cells().len() != schema.categories().len() {
                return Err(Error::BadStratum {
                    text: stratum.encode(schema),
                    message: "category count does not match schema".into(),
                });
            }
            if count > world {
                return Err(Error::PopulationExceedsWorld {
                    stratum: stratum.encode(schema),
                    count,
                    world,
                });
            }
        }
        // Available values of any one category must not jointly exceed the
        // world when single-category marginals are present for it.
        for (idx, cat) in schema.categories().iter().enumerate() {
            let mut sum: u128 = 0;
            let mut any = false;
            for value in cat.values() {
                if cat.is_unavailable(value) {
                    continue;
                }
                let pattern = Stratum::single_value(schema, idx, value);
                if let Some(&count) = entries.get(&pattern) {
                    any = true;
                    sum += count as u128;
                }
            }
            if any && sum > world as u128 {
                return Err(Error::MarginalsExceedWorld {
                    category: cat.name().to_string(),
                    sum: sum.min(u64::MAX as u128) as u64,
                    world,
                });
            }
        }
        Ok(PopulationTable { entries, world })
    }

    /// The world total N_W.
    pub fn world(&self) -> u64 {
        self.world
    }

    /// Exact lookup of a pattern (full stratum or marginal).
    pub fn get(&self, pattern: &Stratum) -> Option<u64> {
        if pattern.is_all_wildcard() {
            return Some(self.world);
        }
        self.entries.get(pattern).copied()
    }

    /// Single-category marginal N_a for `category=value`, all else wildcard.
    pub fn marginal(&self, schema: &DemographicSchema, category: &str, value: &str) -> Option<u64> {
        let (idx, _) = schema.category(category)?;
        self.get(&Stratum::single_value(schema, idx, value))
    }

    /// Sums single-category marginals over every value whose ancestor at
    /// `depth` is `node`. Available values must all have marginal rows;
    /// population-unavailable values contribute only if a (synthetic) row was
    /// added for them, and are otherwise skipped. Returns None when any
    /// available value lacks a row or when nothing in the group has one.
    pub fn group_marginal(
        &self,
        schema: &DemographicSchema,
        category: &str,
        depth: u32,
        node: &str,
    ) -> Option<u64> {
        let (_, cat) = schema.category(category)?;
        let mut total: u64 = 0;
        let mut any = false;
        for value in cat.values() {
            if cat.ancestor(value, depth) != node {
                continue;
            }
            match self.marginal(schema, category, value) {
                Some(n) => {
                    total += n;
                    any = true;
                }
                None if cat.is_unavailable(value) => {}
                None => return None,
            }
        }
        if any {
            Some(total)
        } else {
            None
        }
    }

    /// All full-stratum entries, in sorted order.
    pub fn full_entries(&self) -> impl Iterator<Item = (&Stratum, u64)> {
        self.entries
            .iter()
            .filter(|(s, _)| s.is_full())
            .map(|(s, &n)| (s, n))
    }

    /// True when every available full stratum of the schema has a joint row.
    pub fn covers_joint(&self, schema: &DemographicSchema) -> bool {
        schema
            .available_full_strata()
            .iter()
            .all(|s| self.entries.contains_key(s))
    }

    pub fn entries(&self) -> &BTreeMap<Stratum, u64> {
        &self.entries
    }

    /// A copy with one extra or replaced entry (used when synthesizing
    /// fallback marginals). Bypasses the marginal-sum check deliberately:
    /// synthetic rows are rounded and may not re-validate exactly.
    pub(crate) fn with_entry(&self, pattern: Stratum, count: u64) -> Self {
        let mut entries = self.entries.clone();
        entries.insert(pattern, count);
        PopulationTable {
            entries,
            world: self.world,
        }
    }
}
