//! Optional per-class descriptive metadata used by the diversity and region
//! reports.

use std::collections::BTreeMap;

/// Display name plus geographic attribution for one class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassInfo {
    pub name: String,
    pub country: String,
    pub continent: String,
}

/// Metadata keyed by class id. Classes absent from the map are reported under
/// the `UNKNOWN` region.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassMetadata {
    entries: BTreeMap<String, ClassInfo>,
}

/// Region label used for classes without metadata.
pub const UNKNOWN_REGION: &str = "UNKNOWN";

impl ClassMetadata {
    pub fn new(entries: BTreeMap<String, ClassInfo>) -> Self {
        ClassMetadata { entries }
    }

    pub fn get(&self, class_id: &str) -> Option<&ClassInfo> {
        self.entries.get(class_id)
    }

    pub fn country(&self, class_id: &str) -> &str {
        self.entries
            .get(class_id)
            .map(|i| i.country.as_str())
            .unwrap_or(UNKNOWN_REGION)
    }

    pub fn continent(&self, class_id: &str) -> &str {
        self.entries
            .get(class_id)
            .map(|i| i.continent.as_str())
            .unwrap_or(UNKNOWN_REGION)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &BTreeMap<String, ClassInfo> {
        &self.entries
    }
}
