//! Layered run configuration. Values come from built-in defaults, then a
//! `key = value` config file, then command-line overrides, in that order of
//! precedence with the last writer winning. Keys are validated when loaded;
//! values are parsed by the typed getters below.

use std::collections::BTreeMap;
use std::path::Path;

use fairscore_core::kv::{parse_f64, parse_kv_file, parse_u64};
use fairscore_core::{
    AllocationMode, BoostConfig, BoostFunction, BoostMode, CategoryBoost, DemographicSchema, Error,
    JoinMode, PipelineConfig, PriorPolicy, PrivacyConfig, PrivacyScope, Result, UnspecifiedPolicy,
    WeightScale, WeightingConfig,
};

/// Every fixed key with its default. Dynamic keys (`boost.<category>`,
/// `boost.<category>.level`, `priors.unspecified.<category>`) have no
/// defaults and appear in the effective configuration only when set.
pub const DEFAULTS: &[(&str, &str)] = &[
    ("boost.level", "0"),
    ("boost.mode", "joint"),
    ("ingest.strict", "false"),
    ("priors.fallback", "true"),
    ("priors.join", "joint-if-available"),
    ("priors.unspecified", "drop"),
    ("privacy.epsilon", "off"),
    ("privacy.k", "10"),
    ("privacy.noise", "reports"),
    ("privacy.sensitivity", "auto"),
    ("privacy.suppress", "reports"),
    ("relevance.n_cap", "1000"),
    ("relevance.weighting", "log-threshold"),
    ("sampler.mode", "multinomial"),
];

#[derive(Debug, Clone)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Defaults, overlaid by the config file, overlaid by `--set` entries.
    pub fn load(config_file: Option<&Path>, overrides: &[String]) -> Result<Settings> {
        let mut values: BTreeMap<String, String> = DEFAULTS
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        if let Some(path) = config_file {
            for (key, value) in parse_kv_file(path)? {
                validate_key(&key)?;
                values.insert(key, value);
            }
        }
        for entry in overrides {
            let (key, value) = entry.split_once('=').ok_or_else(|| {
                Error::Invalid(format!("override {entry:?} is not of the form key=value"))
            })?;
            let key = key.trim();
            validate_key(key)?;
            values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Settings { values })
    }

    /// The full effective configuration, for the run manifest.
    pub fn effective(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    fn get(&self, key: &str) -> &str {
        self.values.get(key).map(|s| s.as_str()).unwrap_or("")
    }

    pub fn strict(&self) -> Result<bool> {
        parse_bool("ingest.strict", self.get("ingest.strict"))
    }

    pub fn weighting(&self) -> Result<WeightingConfig> {
        let scale = WeightScale::parse(self.get("relevance.weighting"))?;
        let n_cap = parse_u64("relevance.n_cap", self.get("relevance.n_cap"))?;
        if n_cap == 0 {
            return Err(Error::Invalid("relevance.n_cap must be at least 1".into()));
        }
        Ok(WeightingConfig { scale, n_cap })
    }

    pub fn prior_policy(&self, schema: &DemographicSchema) -> Result<PriorPolicy> {
        let join = JoinMode::parse(self.get("priors.join"))?;
        if let JoinMode::ConditionalOn(category) = &join {
            if schema.category(category).is_none() {
                return Err(Error::Invalid(format!(
                    "priors.join conditions on unknown category {category:?}"
                )));
            }
        }
        let fallback = parse_bool("priors.fallback", self.get("priors.fallback"))?;
        let global = UnspecifiedPolicy::parse(self.get("priors.unspecified"))?;
        let mut unspecified = BTreeMap::new();
        if global == UnspecifiedPolicy::OwnGroup {
            for cat in schema.categories() {
                unspecified.insert(cat.name().to_string(), UnspecifiedPolicy::OwnGroup);
            }
        }
        for (key, value) in &self.values {
            let Some(category) = key.strip_prefix("priors.unspecified.") else {
                continue;
            };
            if schema.category(category).is_none() {
                return Err(Error::Invalid(format!(
                    "{key}: unknown category {category:?}"
                )));
            }
            unspecified.insert(category.to_string(), UnspecifiedPolicy::parse(value)?);
        }
        // Absent means drop, so explicit drops need no entry.
        unspecified.retain(|_, policy| *policy == UnspecifiedPolicy::OwnGroup);
        Ok(PriorPolicy {
            join,
            unspecified,
            fallback,
        })
    }

    /// Guard-rail settings. `sensitivity = auto` tracks the weighting cap.
    pub fn privacy(&self, weighting: &WeightingConfig) -> Result<PrivacyConfig> {
        let k = parse_u64("privacy.k", self.get("privacy.k"))?;
        if k == 0 {
            return Err(Error::BadK);
        }
        let epsilon = match self.get("privacy.epsilon") {
            "off" => None,
            text => Some(parse_f64("privacy.epsilon", text)?),
        };
        let sensitivity = match self.get("privacy.sensitivity") {
            "auto" => weighting.max_weight(),
            text => parse_f64("privacy.sensitivity", text)?,
        };
        Ok(PrivacyConfig {
            k,
            epsilon,
            sensitivity,
            suppress_scope: PrivacyScope::parse(self.get("privacy.suppress"))?,
            noise_scope: PrivacyScope::parse(self.get("privacy.noise"))?,
        })
    }

    /// The boost configuration, or None when no category is boosted. Level
    /// names (e.g. `continent`) resolve against the schema hierarchy; bare
    /// depths are accepted without one.
    pub fn boost(&self, schema: Option<&DemographicSchema>) -> Result<Option<BoostConfig>> {
        let mode = BoostMode::parse(self.get("boost.mode"))?;
        let default_level = self.get("boost.level");
        let mut per_category = BTreeMap::new();
        for (key, value) in &self.values {
            let Some(rest) = key.strip_prefix("boost.") else {
                continue;
            };
            if rest == "mode" || rest == "level" || rest.ends_with(".level") {
                continue;
            }
            let function = BoostFunction::parse(value)?;
            let level_key = format!("boost.{rest}.level");
            let level_text = self
                .values
                .get(&level_key)
                .map(|s| s.as_str())
                .unwrap_or(default_level);
            let level = match (level_text.parse::<u32>(), schema) {
                (Ok(depth), _) => depth,
                (Err(_), Some(schema)) => {
                    let (_, cat) = schema.category(rest).ok_or_else(|| {
                        Error::Invalid(format!("boost.{rest}: unknown category {rest:?}"))
                    })?;
                    cat.resolve_level(level_text)?
                }
                (Err(_), None) => {
                    return Err(Error::Invalid(format!(
                        "boost level {level_text:?} is a name; resolving it needs a schema"
                    )));
                }
            };
            per_category.insert(rest.to_string(), CategoryBoost { function, level });
        }
        for key in self.values.keys() {
            if let Some(rest) = key.strip_prefix("boost.") {
                if let Some(category) = rest.strip_suffix(".level") {
                    if !category.is_empty() && !per_category.contains_key(category) {
                        return Err(Error::Invalid(format!(
                            "{key} is set but boost.{category} is not"
                        )));
                    }
                }
            }
        }
        if per_category.is_empty() {
            return Ok(None);
        }
        let config = BoostConfig { mode, per_category };
        if let Some(schema) = schema {
            config.validate(schema)?;
        }
        Ok(Some(config))
    }

    /// Digest of the effective boost configuration, for report filenames.
    pub fn boost_digest(&self, schema: Option<&DemographicSchema>) -> Result<String> {
        Ok(self
            .boost(schema)?
            .unwrap_or_else(BoostConfig::identity)
            .digest())
    }

    pub fn sampler_mode(&self) -> Result<AllocationMode> {
        AllocationMode::parse(self.get("sampler.mode"))
    }

    /// Assembles the scoring pipeline configuration against a loaded schema.
    pub fn pipeline(
        &self,
        schema: &DemographicSchema,
        threads: usize,
        noise_seed: u64,
    ) -> Result<PipelineConfig> {
        let weighting = self.weighting()?;
        let privacy = self.privacy(&weighting)?;
        Ok(PipelineConfig {
            prior: self.prior_policy(schema)?,
            boost: self.boost(Some(schema))?,
            privacy: Some(privacy),
            noise_seed,
            threads,
            weighting,
        })
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Invalid(format!(
            "{key}: expected true or false, got {other:?}"
        ))),
    }
}

/// Accepts fixed keys and the dynamic per-category patterns; everything else
/// is a typo worth failing on.
fn validate_key(key: &str) -> Result<()> {
    if DEFAULTS.iter().any(|(k, _)| *k == key) {
        return Ok(());
    }
    if let Some(rest) = key.strip_prefix("priors.unspecified.") {
        if !rest.is_empty() && !rest.contains('.') {
            return Ok(());
        }
    }
    if let Some(rest) = key.strip_prefix("boost.") {
        let rest = rest.strip_suffix(".level").unwrap_or(rest);
        if !rest.is_empty() && !rest.contains('.') && rest != "mode" && rest != "level" {
            return Ok(());
        }
    }
    Err(Error::Invalid(format!("unknown configuration key {key:?}")))
}
