//! Readers and writers for the four input files: the demographic schema,
//! contribution logs, population tables, and class metadata.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::contribution::ContributionRecord;
use crate::error::{Error, Result};
use crate::metadata::{ClassInfo, ClassMetadata};
use crate::population::PopulationTable;
use crate::schema::{Category, DemographicSchema, Stratum, UNSPECIFIED, WILDCARD};

const CONTRIBUTION_FIXED_COLUMNS: [&str; 3] = ["contributor_id", "class_id", "item_count"];
const METADATA_COLUMNS: [&str; 4] = ["class_id", "name", "country", "continent"];

// Rejection reason keys shared by the non-strict loaders.
pub const REASON_BAD_FIELD_COUNT: &str = "bad_field_count";
pub const REASON_EMPTY_ID: &str = "empty_id";
pub const REASON_BAD_COUNT: &str = "bad_count";
pub const REASON_NON_POSITIVE_COUNT: &str = "non_positive_count";
pub const REASON_UNKNOWN_VALUE: &str = "unknown_value";
pub const REASON_DUPLICATE_CLASS: &str = "duplicate_class";
pub const REASON_UNKNOWN_COUNTRY: &str = "unknown_country";
pub const REASON_CONTINENT_MISMATCH: &str = "continent_mismatch";

fn parse_error(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}

#[derive(Debug, Default)]
struct CategoryDraft {
    name: String,
    values: Vec<String>,
    parents: Vec<(String, String)>,
    unavailable: Vec<String>,
    level_names: Vec<(u32, String)>,
}

impl CategoryDraft {
    fn build(self) -> Result<Category> {
        let mut cat = Category::new(self.name, self.values)?;
        for (child, parent) in self.parents {
            cat = cat.with_parent(&child, &parent)?;
        }
        for value in self.unavailable {
            cat = cat.with_unavailable(&value)?;
        }
        for (depth, name) in self.level_names {
            cat = cat.with_level_name(depth, &name)?;
        }
        Ok(cat)
    }
}

/// Parses the line-oriented schema format. Each `category` directive opens a
/// block; `value`, `parent`, `unavailable`, and `levelname` lines apply to
/// the open block. `#` starts a comment.
pub fn load_schema_from<R: Read>(reader: R, path: &str) -> Result<DemographicSchema> {
    let reader = BufReader::new(reader);
    let mut drafts: Vec<CategoryDraft> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let text = match line.split_once('#') {
            Some((before, _)) => before.trim(),
            None => line.trim(),
        };
        if text.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let expect_args = |n: usize| -> Result<()> {
            if tokens.len() != n + 1 {
                return Err(parse_error(
                    path,
                    line_no,
                    format!("directive {:?} takes {} argument(s)", tokens[0], n),
                ));
            }
            Ok(())
        };
        match tokens[0] {
            "category" => {
                expect_args(1)?;
                drafts.push(CategoryDraft {
                    name: tokens[1].to_string(),
                    ..CategoryDraft::default()
                });
            }
            "value" | "parent" | "unavailable" | "levelname" => {
                let draft = drafts.last_mut().ok_or_else(|| {
                    parse_error(path, line_no, "directive appears before any category")
                })?;
                match tokens[0] {
                    "value" => {
                        expect_args(1)?;
                        draft.values.push(tokens[1].to_string());
                    }
                    "parent" => {
                        expect_args(2)?;
                        draft
                            .parents
                            .push((tokens[1].to_string(), tokens[2].to_string()));
                    }
                    "unavailable" => {
                        expect_args(1)?;
                        draft.unavailable.push(tokens[1].to_string());
                    }
                    "levelname" => {
                        expect_args(2)?;
                        let depth: u32 = tokens[1].parse().map_err(|_| {
                            parse_error(
                                path,
                                line_no,
                                format!("level depth {:?} is not a number", tokens[1]),
                            )
                        })?;
                        draft.level_names.push((depth, tokens[2].to_string()));
                    }
                    _ => unreachable!(),
                }
            }
            other => {
                return Err(parse_error(
                    path,
                    line_no,
                    format!("unknown directive {other:?}"),
                ));
            }
        }
    }
    let categories = drafts
        .into_iter()
        .map(CategoryDraft::build)
        .collect::<Result<Vec<_>>>()?;
    DemographicSchema::new(categories)
}

pub fn load_schema(path: &Path) -> Result<DemographicSchema> {
    let file = std::fs::File::open(path)?;
    load_schema_from(file, &path.display().to_string())
}

/// Writes a schema in the format [`load_schema_from`] reads. Hierarchy edges
/// are emitted child-first along each chain so they reload cleanly.
pub fn write_schema<W: Write>(schema: &DemographicSchema, mut out: W) -> Result<()> {
    for cat in schema.categories() {
        writeln!(out, "category {}", cat.name())?;
        for value in cat.values() {
            writeln!(out, "value {value}")?;
        }
        let mut written: BTreeSet<&str> = BTreeSet::new();
        for value in cat.values() {
            let mut node = value.as_str();
            while let Some(parent) = cat.parent_of(node) {
                if !written.insert(node) {
                    break;
                }
                writeln!(out, "parent {node} {parent}")?;
                node = parent;
            }
        }
        for value in cat.unavailable_values() {
            writeln!(out, "unavailable {value}")?;
        }
        for (depth, name) in cat.level_names() {
            writeln!(out, "levelname {depth} {name}")?;
        }
    }
    Ok(())
}

pub fn write_schema_path(schema: &DemographicSchema, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_schema(schema, file)
}

/// Outcome of reading a contribution log: the merged, sorted records plus
/// acceptance counters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestReport {
    pub rows_read: u64,
    pub rows_accepted: u64,
    /// Rejected row counts keyed by reason.
    pub rejected: BTreeMap<String, u64>,
    pub records: Vec<ContributionRecord>,
    pub contributors: u64,
    pub classes: u64,
}

impl IngestReport {
    pub fn rows_rejected(&self) -> u64 {
        self.rejected.values().sum()
    }
}

fn contribution_header(schema: &DemographicSchema) -> Vec<String> {
    CONTRIBUTION_FIXED_COLUMNS
        .iter()
        .map(|c| c.to_string())
        .chain(schema.categories().iter().map(|c| c.name().to_string()))
        .collect()
}

fn check_header(actual: &csv::StringRecord, expected: &[String]) -> Result<()> {
    let actual: Vec<&str> = actual.iter().map(|f| f.trim()).collect();
    if actual == expected.iter().map(|s| s.as_str()).collect::<Vec<_>>() {
        return Ok(());
    }
    for col in expected {
        if !actual.contains(&col.as_str()) {
            return Err(Error::MissingColumn(col.clone()));
        }
    }
    Err(Error::Invalid(format!(
        "header columns must be exactly {:?} in that order, found {:?}",
        expected.join(","),
        actual.join(",")
    )))
}

/// Reads a contribution log. Rows with defects are counted and skipped, or
/// rejected outright in strict mode. Duplicate (contributor, class,
/// demographics) rows are merged by summing their item counts. Empty
/// demographic cells become the UNSPECIFIED marker.
pub fn load_contributions<R: Read>(
    reader: R,
    schema: &DemographicSchema,
    strict: bool,
) -> Result<IngestReport> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let expected = contribution_header(schema);
    check_header(csv_reader.headers()?, &expected)?;

    let mut merged: BTreeMap<(String, String, Vec<String>), u64> = BTreeMap::new();
    let mut report = IngestReport {
        rows_read: 0,
        rows_accepted: 0,
        rejected: BTreeMap::new(),
        records: Vec::new(),
        contributors: 0,
        classes: 0,
    };

    for (idx, row) in csv_reader.records().enumerate() {
        let row = row?;
        report.rows_read += 1;
        let row_no = (idx + 2) as u64;
        let reject = |report: &mut IngestReport, reason: &str| -> Result<()> {
            if strict {
                return Err(Error::StrictReject {
                    row: row_no,
                    reason: reason.to_string(),
                });
            }
            *report.rejected.entry(reason.to_string()).or_insert(0) += 1;
            Ok(())
        };

        if row.len() != expected.len() {
            reject(&mut report, REASON_BAD_FIELD_COUNT)?;
            continue;
        }
        let contributor_id = row[0].trim();
        let class_id = row[1].trim();
        if contributor_id.is_empty() || class_id.is_empty() {
            reject(&mut report, REASON_EMPTY_ID)?;
            continue;
        }
        let count_text = row[2].trim();
        let item_count: u64 = match count_text.parse() {
            Ok(n) => n,
            Err(_) => {
                reject(&mut report, REASON_BAD_COUNT)?;
                continue;
            }
        };
        if item_count == 0 {
            reject(&mut report, REASON_NON_POSITIVE_COUNT)?;
            continue;
        }
        let mut codes = Vec::with_capacity(schema.len());
        let mut bad_code = false;
        for (i, cat) in schema.categories().iter().enumerate() {
            let cell = row[3 + i].trim();
            if cell.is_empty() || cell == UNSPECIFIED {
                codes.push(UNSPECIFIED.to_string());
            } else if cat.has_value(cell) {
                codes.push(cell.to_string());
            } else {
                bad_code = true;
                break;
            }
        }
        if bad_code {
            reject(&mut report, REASON_UNKNOWN_VALUE)?;
            continue;
        }
        report.rows_accepted += 1;
        let key = (contributor_id.to_string(), class_id.to_string(), codes);
        let slot = merged.entry(key).or_insert(0);
        *slot = slot.saturating_add(item_count);
    }

    let mut contributors: BTreeSet<&str> = BTreeSet::new();
    let mut classes: BTreeSet<&str> = BTreeSet::new();
    for (contributor, class, _) in merged.keys() {
        contributors.insert(contributor);
        classes.insert(class);
    }
    report.contributors = contributors.len() as u64;
    report.classes = classes.len() as u64;
    report.records = merged
        .into_iter()
        .map(|((contributor, class, codes), count)| {
            ContributionRecord::new(contributor, class, count, codes)
        })
        .collect();
    report.records.sort();
    Ok(report)
}

pub fn load_contributions_path(
    path: &Path,
    schema: &DemographicSchema,
    strict: bool,
) -> Result<IngestReport> {
    let file = std::fs::File::open(path)?;
    load_contributions(file, schema, strict)
}

/// Writes records in the format [`load_contributions`] reads; UNSPECIFIED
/// codes become empty cells.
pub fn write_contributions<W: Write>(
    records: &[ContributionRecord],
    schema: &DemographicSchema,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(contribution_header(schema))?;
    for record in records {
        let mut row = vec![
            record.contributor_id.clone(),
            record.class_id.clone(),
            record.item_count.to_string(),
        ];
        for code in &record.codes {
            row.push(if code == UNSPECIFIED {
                String::new()
            } else {
                code.clone()
            });
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_contributions_path(
    records: &[ContributionRecord],
    schema: &DemographicSchema,
    path: &Path,
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_contributions(records, schema, file)
}

fn population_header(schema: &DemographicSchema) -> Vec<String> {
    schema
        .categories()
        .iter()
        .map(|c| c.name().to_string())
        .chain(std::iter::once("population".to_string()))
        .collect()
}

/// Reads a population table. One row per stratum (codes or `*` wildcards)
/// plus exactly one all-wildcard row carrying the world total. Population
/// tables are curated inputs, so every defect is a hard error.
pub fn load_population<R: Read>(reader: R, schema: &DemographicSchema) -> Result<PopulationTable> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let expected = population_header(schema);
    check_header(csv_reader.headers()?, &expected)?;

    let mut entries: BTreeMap<Stratum, u64> = BTreeMap::new();
    let mut world: Option<u64> = None;
    for row in csv_reader.records() {
        let row = row?;
        if row.len() != expected.len() {
            return Err(Error::Invalid(format!(
                "population row has {} fields, expected {}",
                row.len(),
                expected.len()
            )));
        }
        let codes: Vec<&str> = (0..schema.len()).map(|i| row[i].trim()).collect();
        let stratum = Stratum::pattern(schema, &codes)?;
        let count_text = row[schema.len()].trim();
        if let Ok(signed) = count_text.parse::<i128>() {
            if signed < 0 {
                return Err(Error::NegativePopulation(count_text.to_string()));
            }
        }
        let count: u64 = count_text.parse().map_err(|_| {
            Error::Invalid(format!("population count {count_text:?} is not a number"))
        })?;
        if stratum.is_all_wildcard() {
            if world.is_some() {
                return Err(Error::DuplicateStratum(stratum.encode(schema)));
            }
            world = Some(count);
        } else if entries.insert(stratum.clone(), count).is_some() {
            return Err(Error::DuplicateStratum(stratum.encode(schema)));
        }
    }
    let world = world.ok_or(Error::MissingWorldTotal)?;
    PopulationTable::new(schema, entries, world)
}

pub fn load_population_path(path: &Path, schema: &DemographicSchema) -> Result<PopulationTable> {
    let file = std::fs::File::open(path)?;
    load_population(file, schema)
}

pub fn write_population<W: Write>(
    population: &PopulationTable,
    schema: &DemographicSchema,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(population_header(schema))?;
    let mut world_row: Vec<String> = vec![WILDCARD.to_string(); schema.len()];
    world_row.push(population.world().to_string());
    w.write_record(&world_row)?;
    for (stratum, count) in population.entries() {
        let mut row: Vec<String> = stratum
            .cells()
            .iter()
            .map(|c| c.clone().unwrap_or_else(|| WILDCARD.to_string()))
            .collect();
        row.push(count.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_population_path(
    population: &PopulationTable,
    schema: &DemographicSchema,
    path: &Path,
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_population(population, schema, file)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MetadataReport {
    pub rows_read: u64,
    pub rows_accepted: u64,
    pub rejected: BTreeMap<String, u64>,
}

/// Reads class metadata. When a schema with a `country` category is given,
/// country codes are validated against it, and when that category has a
/// hierarchy the continent must be the country's direct ancestor.
pub fn load_class_metadata<R: Read>(
    reader: R,
    schema: Option<&DemographicSchema>,
) -> Result<(ClassMetadata, MetadataReport)> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let expected: Vec<String> = METADATA_COLUMNS.iter().map(|c| c.to_string()).collect();
    check_header(csv_reader.headers()?, &expected)?;

    let country_category = schema.and_then(|s| s.category("country")).map(|(_, c)| c);
    let mut entries: BTreeMap<String, ClassInfo> = BTreeMap::new();
    let mut report = MetadataReport::default();
    for row in csv_reader.records() {
        let row = row?;
        report.rows_read += 1;
        let reject = |report: &mut MetadataReport, reason: &str| {
            *report.rejected.entry(reason.to_string()).or_insert(0) += 1;
        };
        if row.len() != expected.len() {
            reject(&mut report, REASON_BAD_FIELD_COUNT);
            continue;
        }
        let class_id = row[0].trim();
        if class_id.is_empty() {
            reject(&mut report, REASON_EMPTY_ID);
            continue;
        }
        if entries.contains_key(class_id) {
            reject(&mut report, REASON_DUPLICATE_CLASS);
            continue;
        }
        let country = row[2].trim();
        let continent = row[3].trim();
        if let Some(cat) = country_category {
            if !cat.has_value(country) {
                reject(&mut report, REASON_UNKNOWN_COUNTRY);
                continue;
            }
            if cat.has_hierarchy() && cat.ancestor(country, 1) != continent {
                reject(&mut report, REASON_CONTINENT_MISMATCH);
                continue;
            }
        }
        report.rows_accepted += 1;
        entries.insert(
            class_id.to_string(),
            ClassInfo {
                name: row[1].trim().to_string(),
                country: country.to_string(),
                continent: continent.to_string(),
            },
        );
    }
    Ok((ClassMetadata::new(entries), report))
}

pub fn load_class_metadata_path(
    path: &Path,
    schema: Option<&DemographicSchema>,
) -> Result<(ClassMetadata, MetadataReport)> {
    let file = std::fs::File::open(path)?;
    load_class_metadata(file, schema)
}

pub fn write_class_metadata<W: Write>(metadata: &ClassMetadata, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METADATA_COLUMNS)?;
    for (class_id, info) in metadata.entries() {
        w.write_record([
            class_id.as_str(),
            &info.name,
            &info.country,
            &info.continent,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_class_metadata_path(metadata: &ClassMetadata, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_class_metadata(metadata, file)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_schema_text() -> &'static str {
        "# demographics\n\
         category gender\n\
         value F\n\
         value M\n\
         value X\n\
         unavailable X\n\
         category country\n\
         value CA\n\
         value US\n\
         value FR\n\
         parent CA NA\n\
         parent US NA\n\
         parent FR EU\n\
         levelname 1 continent\n"
    }

    fn demo_schema() -> DemographicSchema {
        load_schema_from(demo_schema_text().as_bytes(), "<test>").unwrap()
    }

    #[test]
    fn schema_parses_all_directives() {
        let schema = demo_schema();
        assert_eq!(schema.category_names(), vec!["gender", "country"]);
        let (_, gender) = schema.category("gender").unwrap();
        assert!(gender.is_unavailable("X"));
        let (_, country) = schema.category("country").unwrap();
        assert_eq!(country.ancestor("CA", 1), "NA");
        assert_eq!(country.resolve_level("continent").unwrap(), 1);
    }

    #[test]
    fn schema_round_trips_through_writer() {
        let schema = demo_schema();
        let mut buf = Vec::new();
        write_schema(&schema, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let reloaded = load_schema_from(text.as_bytes(), "<round-trip>").unwrap();
        assert_eq!(reloaded, schema);
    }

    #[test]
    fn schema_writer_orders_deep_chains_child_first() {
        let cat = Category::new("place", vec!["city".into()])
            .unwrap()
            .with_parent("city", "region")
            .unwrap()
            .with_parent("region", "world")
            .unwrap();
        let schema = DemographicSchema::new(vec![cat]).unwrap();
        let mut buf = Vec::new();
        write_schema(&schema, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let reloaded = load_schema_from(text.as_bytes(), "<chain>").unwrap();
        assert_eq!(reloaded, schema);
    }

    #[test]
    fn schema_parse_errors_carry_line_numbers() {
        let err = load_schema_from("value F\n".as_bytes(), "<test>").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
        let err = load_schema_from("category g\nvalor F\n".as_bytes(), "<test>").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
        assert!(load_schema_from(
            "category g\nvalue F\nlevelname one continent\n".as_bytes(),
            "<test>"
        )
        .is_err());
    }

    #[test]
    fn contributions_load_merge_and_sort() {
        let schema = demo_schema();
        let csv = "contributor_id,class_id,item_count,gender,country\n\
                   u2,songs,3,F,CA\n\
                   u1,movies,2,M,US\n\
                   u2,songs,4,F,CA\n";
        let report = load_contributions(csv.as_bytes(), &schema, false).unwrap();
        assert_eq!(report.rows_read, 3);
        assert_eq!(report.rows_accepted, 3);
        assert_eq!(report.records.len(), 2);
        assert_eq!(report.contributors, 2);
        assert_eq!(report.classes, 2);
        let merged = report
            .records
            .iter()
            .find(|r| r.contributor_id == "u2")
            .unwrap();
        assert_eq!(merged.item_count, 7);
        assert!(report.records.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn contributions_blank_cells_become_unspecified() {
        let schema = demo_schema();
        let csv = "contributor_id,class_id,item_count,gender,country\n\
                   u1,songs,1,,CA\n";
        let report = load_contributions(csv.as_bytes(), &schema, false).unwrap();
        assert_eq!(report.records[0].codes, vec!["UNSPECIFIED", "CA"]);
        assert!(!report.records[0].is_fully_specified());
    }

    #[test]
    fn contributions_reject_reasons_are_counted() {
        let schema = demo_schema();
        let csv = "contributor_id,class_id,item_count,gender,country\n\
                   u1,songs,1,F,CA\n\
                   u2,songs,0,F,CA\n\
                   u3,songs,-2,F,CA\n\
                   u4,songs,abc,F,CA\n\
                   u5,songs,2,F,ZZ\n\
                   ,songs,2,F,CA\n\
                   u7,songs,2,F\n";
        let report = load_contributions(csv.as_bytes(), &schema, false).unwrap();
        assert_eq!(report.rows_read, 7);
        assert_eq!(report.rows_accepted, 1);
        assert_eq!(report.rejected[REASON_NON_POSITIVE_COUNT], 1);
        assert_eq!(report.rejected[REASON_BAD_COUNT], 2);
        assert_eq!(report.rejected[REASON_UNKNOWN_VALUE], 1);
        assert_eq!(report.rejected[REASON_EMPTY_ID], 1);
        assert_eq!(report.rejected[REASON_BAD_FIELD_COUNT], 1);
        assert_eq!(report.rows_rejected(), 6);
    }

    #[test]
    fn strict_mode_rejects_the_first_bad_row() {
        let schema = demo_schema();
        let csv = "contributor_id,class_id,item_count,gender,country\n\
                   u1,songs,1,F,CA\n\
                   u2,songs,0,F,CA\n";
        let err = load_contributions(csv.as_bytes(), &schema, true).unwrap_err();
        match err {
            Error::StrictReject { row, reason } => {
                assert_eq!(row, 3);
                assert_eq!(reason, REASON_NON_POSITIVE_COUNT);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn contribution_header_is_checked() {
        let schema = demo_schema();
        let missing = "contributor_id,class_id,gender,country\nu1,songs,F,CA\n";
        assert!(matches!(
            load_contributions(missing.as_bytes(), &schema, false),
            Err(Error::MissingColumn(c)) if c == "item_count"
        ));
        let reordered = "class_id,contributor_id,item_count,gender,country\nsongs,u1,1,F,CA\n";
        assert!(matches!(
            load_contributions(reordered.as_bytes(), &schema, false),
            Err(Error::Invalid(_))
        ));
    }

    #[test]
    fn contributions_round_trip() {
        let schema = demo_schema();
        let records = vec![
            ContributionRecord::new("u1", "movies", 2, vec!["M".into(), "US".into()]),
            ContributionRecord::new("u2", "songs", 7, vec![UNSPECIFIED.into(), "CA".into()]),
        ];
        let mut buf = Vec::new();
        write_contributions(&records, &schema, &mut buf).unwrap();
        let report = load_contributions(buf.as_slice(), &schema, true).unwrap();
        assert_eq!(report.records, records);
    }

    #[test]
    fn population_needs_exactly_one_world_row() {
        let schema = demo_schema();
        let no_world = "gender,country,population\nF,*,50\n";
        assert!(matches!(
            load_population(no_world.as_bytes(), &schema),
            Err(Error::MissingWorldTotal)
        ));
        let two_worlds = "gender,country,population\n*,*,100\n*,*,100\n";
        assert!(matches!(
            load_population(two_worlds.as_bytes(), &schema),
            Err(Error::DuplicateStratum(_))
        ));
    }

    #[test]
    fn population_rejects_bad_rows() {
        let schema = demo_schema();
        let negative = "gender,country,population\n*,*,100\nF,*,-5\n";
        assert!(matches!(
            load_population(negative.as_bytes(), &schema),
            Err(Error::NegativePopulation(_))
        ));
        let unknown = "gender,country,population\n*,*,100\nQ,*,5\n";
        assert!(matches!(
            load_population(unknown.as_bytes(), &schema),
            Err(Error::UnknownValue { .. })
        ));
        let duplicate = "gender,country,population\n*,*,100\nF,*,5\nF,*,6\n";
        assert!(matches!(
            load_population(duplicate.as_bytes(), &schema),
            Err(Error::DuplicateStratum(_))
        ));
    }

    #[test]
    fn population_round_trip() {
        let schema = demo_schema();
        let csv = "gender,country,population\n\
                   *,*,1000\n\
                   F,*,500\n\
                   M,*,480\n\
                   *,CA,300\n";
        let table = load_population(csv.as_bytes(), &schema).unwrap();
        assert_eq!(table.world(), 1000);
        let mut buf = Vec::new();
        write_population(&table, &schema, &mut buf).unwrap();
        let reloaded = load_population(buf.as_slice(), &schema).unwrap();
        assert_eq!(reloaded, table);
    }

    #[test]
    fn class_metadata_validates_against_schema() {
        let schema = demo_schema();
        let csv = "class_id,name,country,continent\n\
                   songs,Songs,CA,NA\n\
                   movies,Movies,ZZ,NA\n\
                   books,Books,FR,NA\n\
                   songs,Songs again,US,NA\n";
        let (meta, report) = load_class_metadata(csv.as_bytes(), Some(&schema)).unwrap();
        assert_eq!(report.rows_read, 4);
        assert_eq!(report.rows_accepted, 1);
        assert_eq!(report.rejected[REASON_UNKNOWN_COUNTRY], 1);
        assert_eq!(report.rejected[REASON_CONTINENT_MISMATCH], 1);
        assert_eq!(report.rejected[REASON_DUPLICATE_CLASS], 1);
        assert_eq!(meta.country("songs"), "CA");
        assert_eq!(meta.continent("songs"), "NA");
    }

    #[test]
    fn class_metadata_without_schema_accepts_codes() {
        let csv = "class_id,name,country,continent\nsongs,Songs,XX,Nowhere\n";
        let (meta, report) = load_class_metadata(csv.as_bytes(), None).unwrap();
        assert_eq!(report.rows_accepted, 1);
        assert_eq!(meta.country("songs"), "XX");
    }

    #[test]
    fn class_metadata_round_trip() {
        let schema = demo_schema();
        let csv = "class_id,name,country,continent\n\
                   movies,Movies,US,NA\n\
                   songs,Songs,CA,NA\n";
        let (meta, _) = load_class_metadata(csv.as_bytes(), Some(&schema)).unwrap();
        let mut buf = Vec::new();
        write_class_metadata(&meta, &mut buf).unwrap();
        let (reloaded, report) = load_class_metadata(buf.as_slice(), Some(&schema)).unwrap();
        assert_eq!(report.rows_accepted, 2);
        assert_eq!(reloaded.entries().len(), meta.entries().len());
    }
}
