//! Demographic schema: ordered categories, their closed sets of value codes,
//! optional hierarchies above the values, and the stratum key type.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Error, Result};

/// Reserved marker for records that left a demographic field blank. It is
/// never a schema value; ingestion maps empty cells to it and
/// `priors::resolve_unspecified` decides what happens to such records.
pub const UNSPECIFIED: &str = "UNSPECIFIED";

/// Wildcard token used in stratum encodings and population tables.
pub const WILDCARD: &str = "*";

/// Synthetic value code used when UNSPECIFIED records are kept as their own
/// group, e.g. `__UNSPEC_age` for the `age` category.
pub fn unspecified_code(category: &str) -> String {
    format!("__UNSPEC_{category}")
}

fn check_code(code: &str) -> Result<()> {
    if code.is_empty() || code.contains('|') || code.contains('=') || code.contains('*') {
        return Err(Error::InvalidCode(code.to_string()));
    }
    if code == UNSPECIFIED {
        return Err(Error::ReservedCode(code.to_string()));
    }
    Ok(())
}

/// One demographic category: an ordered, closed set of value codes, an
/// optional hierarchy above them (child node -> parent node, total over the
/// values when present), the subset of values with no usable census
/// population, and optional names for hierarchy depths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Category {
    name: String,
    values: Vec<String>,
    parents: BTreeMap<String, String>,
    unavailable: BTreeSet<String>,
    level_names: BTreeMap<String, u32>,
}

impl Category {
    pub fn new(name: impl Into<String>, values: Vec<String>) -> Result<Self> {
        let name = name.into();
        check_code(&name)?;
        let mut seen = BTreeSet::new();
        for v in &values {
            check_code(v)?;
            if !seen.insert(v.clone()) {
                return Err(Error::DuplicateValue {
                    category: name,
                    value: v.clone(),
                });
            }
        }
        Ok(Category {
            name,
            values,
            parents: BTreeMap::new(),
            unavailable: BTreeSet::new(),
            level_names: BTreeMap::new(),
        })
    }

    /// Adds a hierarchy edge `child -> parent`. The child must be a value or a
    /// node already introduced as a parent; totality and acyclicity are
    /// checked when the schema is assembled.
    pub fn with_parent(mut self, child: &str, parent: &str) -> Result<Self> {
        check_code(parent)?;
        let known = self.values.iter().any(|v| v == child)
            || self.parents.values().any(|p| p.as_str() == child);
        if !known {
            return Err(Error::UnknownValue {
                category: self.name.clone(),
                value: child.to_string(),
            });
        }
        self.parents.insert(child.to_string(), parent.to_string());
        Ok(self)
    }

    /// Flags an existing value as population-unavailable.
    pub fn with_unavailable(mut self, value: &str) -> Result<Self> {
        if !self.values.iter().any(|v| v == value) {
            return Err(Error::UnknownValue {
                category: self.name.clone(),
                value: value.to_string(),
            });
        }
        self.unavailable.insert(value.to_string());
        Ok(self)
    }

    /// Names a hierarchy depth (1 = direct parent of a value), so callers can
    /// say e.g. `continent` instead of `1`.
    pub fn with_level_name(mut self, depth: u32, name: &str) -> Result<Self> {
        check_code(name)?;
        self.level_names.insert(name.to_string(), depth);
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }

    pub fn has_value(&self, code: &str) -> bool {
        self.values.iter().any(|v| v == code)
    }

    pub fn is_unavailable(&self, code: &str) -> bool {
        self.unavailable.contains(code)
    }

    pub fn unavailable_values(&self) -> impl Iterator<Item = &str> {
        // Keep schema declaration order, not BTreeSet order.
        self.values
            .iter()
            .filter(|v| self.unavailable.contains(*v))
            .map(|v| v.as_str())
    }

    pub fn available_values(&self) -> impl Iterator<Item = &str> {
        self.values
            .iter()
            .filter(|v| !self.unavailable.contains(*v))
            .map(|v| v.as_str())
    }

    pub fn has_hierarchy(&self) -> bool {
        !self.parents.is_empty()
    }

    pub fn parent_of(&self, node: &str) -> Option<&str> {
        self.parents.get(node).map(|p| p.as_str())
    }

    /// Configured (depth, name) pairs, ordered by depth.
    pub fn level_names(&self) -> Vec<(u32, &str)> {
        let mut pairs: Vec<(u32, &str)> = self
            .level_names
            .iter()
            .map(|(name, depth)| (*depth, name.as_str()))
            .collect();
        pairs.sort();
        pairs
    }

    /// Walks `depth` steps up the hierarchy from `node`, stopping at the top.
    /// Depth 0 is the node itself.
    pub fn ancestor<'a>(&'a self, node: &'a str, depth: u32) -> &'a str {
        let mut cur = node;
        for _ in 0..depth {
            match self.parents.get(cur) {
                Some(p) => cur = p.as_str(),
                None => break,
            }
        }
        cur
    }

    /// Resolves a level given either a depth number or a configured level name.
    pub fn resolve_level(&self, text: &str) -> Result<u32> {
        if let Ok(d) = text.parse::<u32>() {
            return Ok(d);
        }
        self.level_names.get(text).copied().ok_or_else(|| {
            Error::Invalid(format!(
                "unknown level {text:?} for category {:?}",
                self.name
            ))
        })
    }

    fn validate_hierarchy(&self) -> Result<()> {
        if self.parents.is_empty() {
            return Ok(());
        }
        for v in &self.values {
            if !self.parents.contains_key(v) {
                return Err(Error::PartialHierarchy {
                    category: self.name.clone(),
                    value: v.clone(),
                });
            }
        }
        for start in self.parents.keys() {
            let mut seen = BTreeSet::new();
            let mut cur = start.as_str();
            seen.insert(cur);
            while let Some(p) = self.parents.get(cur) {
                if !seen.insert(p.as_str()) {
                    return Err(Error::CyclicHierarchy {
                        category: self.name.clone(),
                        node: p.clone(),
                    });
                }
                cur = p.as_str();
            }
        }
        Ok(())
    }
}

/// Ordered list of categories. Category order fixes the layout of strata,
/// CSV columns, and stratum encodings. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemographicSchema {
    categories: Vec<Category>,
}

impl DemographicSchema {
    pub fn new(categories: Vec<Category>) -> Result<Self> {
        let mut names = BTreeSet::new();
        for c in &categories {
            if !names.insert(c.name.clone()) {
                return Err(Error::DuplicateCategory(c.name.clone()));
            }
            c.validate_hierarchy()?;
            for u in &c.unavailable {
                if !c.has_value(u) {
                    return Err(Error::UnknownValue {
                        category: c.name.clone(),
                        value: u.clone(),
                    });
                }
            }
        }
        Ok(DemographicSchema { categories })
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn category(&self, name: &str) -> Option<(usize, &Category)> {
        self.categories
            .iter()
            .enumerate()
            .find(|(_, c)| c.name == name)
    }

    pub fn category_names(&self) -> Vec<&str> {
        self.categories.iter().map(|c| c.name.as_str()).collect()
    }

    /// Cross product of all values (available and unavailable alike), in
    /// schema declaration order.
    pub fn full_strata(&self) -> Vec<Stratum> {
        self.strata_from(|c| c.values.iter().map(|v| v.as_str()).collect())
    }

    /// Cross product restricted to census-available values.
    pub fn available_full_strata(&self) -> Vec<Stratum> {
        self.strata_from(|c| c.available_values().collect())
    }

    fn strata_from<'a>(&'a self, pick: impl Fn(&'a Category) -> Vec<&'a str>) -> Vec<Stratum> {
        let mut acc: Vec<Vec<String>> = vec![Vec::new()];
        for c in &self.categories {
            let vals = pick(c);
            let mut next = Vec::with_capacity(acc.len() * vals.len().max(1));
            for prefix in &acc {
                for v in &vals {
                    let mut row = prefix.clone();
                    row.push((*v).to_string());
                    next.push(row);
                }
            }
            acc = next;
        }
        if self.categories.is_empty() {
            return Vec::new();
        }
        acc.into_iter()
            .map(|codes| Stratum {
                cells: codes.into_iter().map(Some).collect(),
            })
            .collect()
    }

    /// Returns a copy of the schema with a synthetic population-unavailable
    /// value appended to `category` (used by the own-group unspecified policy).
    pub fn with_synthetic_value(&self, category: &str, code: &str) -> Result<Self> {
        let mut categories = self.categories.clone();
        let cat = categories
            .iter_mut()
            .find(|c| c.name == category)
            .ok_or_else(|| Error::UnknownCategory(category.to_string()))?;
        if cat.has_value(code) {
            return Err(Error::DuplicateValue {
                category: category.to_string(),
                value: code.to_string(),
            });
        }
        check_code(code)?;
        cat.values.push(code.to_string());
        cat.unavailable.insert(code.to_string());
        // A total hierarchy must stay total: give the synthetic group its own
        // top-level node so the totality check keeps passing.
        if cat.has_hierarchy() {
            cat.parents
                .insert(code.to_string(), format!("__TOP_{code}"));
        }
        DemographicSchema::new(categories)
    }
}

/// One cell of the demographic cross product. `None` marks a wildcard (used
/// by marginal population rows and report filters); a full stratum has a
/// concrete value for every category. Values are positional, aligned with the
/// schema's category order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Stratum {
    cells: Vec<Option<String>>,
}

impl Stratum {
    /// Builds a full stratum, validating every code against the schema
    /// (closed world: unknown codes are errors, not new strata).
    pub fn full(schema: &DemographicSchema, codes: &[&str]) -> Result<Self> {
        Self::pattern_checked(schema, codes, false)
    }

    /// Builds a stratum that may contain `*` wildcards.
    pub fn pattern(schema: &DemographicSchema, codes: &[&str]) -> Result<Self> {
        Self::pattern_checked(schema, codes, true)
    }

    fn pattern_checked(
        schema: &DemographicSchema,
        codes: &[&str],
        allow_wildcard: bool,
    ) -> Result<Self> {
        if codes.len() != schema.len() {
            return Err(Error::Invalid(format!(
                "expected {} codes, got {}",
                schema.len(),
                codes.len()
            )));
        }
        let mut cells = Vec::with_capacity(codes.len());
        for (code, cat) in codes.iter().zip(schema.categories()) {
            if *code == WILDCARD {
                if !allow_wildcard {
                    return Err(Error::UnknownValue {
                        category: cat.name().to_string(),
                        value: (*code).to_string(),
                    });
                }
                cells.push(None);
            } else {
                if !cat.has_value(code) {
                    return Err(Error::UnknownValue {
                        category: cat.name().to_string(),
                        value: (*code).to_string(),
                    });
                }
                cells.push(Some((*code).to_string()));
            }
        }
        Ok(Stratum { cells })
    }

    /// All-wildcard stratum (matches everything; the world row in population
    /// tables).
    pub fn all_wildcard(schema: &DemographicSchema) -> Self {
        Stratum {
            cells: vec![None; schema.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn value(&self, idx: usize) -> Option<&str> {
        self.cells.get(idx).and_then(|c| c.as_deref())
    }

    pub fn is_full(&self) -> bool {
        self.cells.iter().all(|c| c.is_some())
    }

    pub fn wildcard_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_none()).count()
    }

    pub fn is_all_wildcard(&self) -> bool {
        self.cells.iter().all(|c| c.is_none())
    }

    /// Single-category marginal pattern: one concrete value at `idx`,
    /// wildcards elsewhere. Lookups with values outside the schema simply
    /// miss, so this stays infallible.
    pub fn single_value(schema: &DemographicSchema, idx: usize, value: &str) -> Self {
        let mut cells = vec![None; schema.len()];
        if let Some(slot) = cells.get_mut(idx) {
            *slot = Some(value.to_string());
        }
        Stratum { cells }
    }

    /// True when every concrete cell of `pattern` agrees with this stratum.
    pub fn matches(&self, pattern: &Stratum) -> bool {
        self.cells.len() == pattern.cells.len()
            && pattern
                .cells
                .iter()
                .zip(&self.cells)
                .all(|(p, v)| p.is_none() || p == v)
    }

    /// Textual encoding `cat1=code|cat2=*|...` in schema category order.
    pub fn encode(&self, schema: &DemographicSchema) -> String {
        debug_assert_eq!(self.cells.len(), schema.len());
        let mut out = String::new();
        for (i, (cell, cat)) in self.cells.iter().zip(schema.categories()).enumerate() {
            if i > 0 {
                out.push('|');
            }
            out.push_str(cat.name());
            out.push('=');
            out.push_str(cell.as_deref().unwrap_or(WILDCARD));
        }
        out
    }

    /// Inverse of [`encode`]: category names must appear in schema order and
    /// every code must exist (or be `*`).
    pub fn decode(text: &str, schema: &DemographicSchema) -> Result<Self> {
        let bad = |message: &str| Error::BadStratum {
            text: text.to_string(),
            message: message.to_string(),
        };
        let parts: Vec<&str> = if text.is_empty() {
            Vec::new()
        } else {
            text.split('|').collect()
        };
        if parts.len() != schema.len() {
            return Err(bad(&format!(
                "expected {} categories, found {}",
                schema.len(),
                parts.len()
            )));
        }
        let mut codes = Vec::with_capacity(parts.len());
        for (part, cat) in parts.iter().zip(schema.categories()) {
            let (name, code) = part
                .split_once('=')
                .ok_or_else(|| bad(&format!("segment {part:?} lacks '='")))?;
            if name != cat.name() {
                return Err(bad(&format!(
                    "expected category {:?}, found {name:?}",
                    cat.name()
                )));
            }
            codes.push(code);
        }
        Stratum::pattern(schema, &codes)
    }

    /// Raw cells, for positional consumers like CSV writers.
    pub fn cells(&self) -> &[Option<String>] {
        &self.cells
    }

    pub(crate) fn from_cells(cells: Vec<Option<String>>) -> Self {
        Stratum { cells }
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, cell) in self.cells.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            f.write_str(cell.as_deref().unwrap_or(WILDCARD))?;
        }
        Ok(())
    }
}
