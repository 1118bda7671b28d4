//! Line-oriented `key = value` parsing shared by scenario files and CLI
//! config files. Blank lines and `#` comments are skipped; keys repeat freely
//! (consumers decide whether later entries override or accumulate).

use std::path::Path;

use crate::error::{Error, Result};

/// Parses `key = value` lines, preserving order and duplicates.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: "<inline>".into(),
            line: lineno + 1,
            message: format!("expected key = value, got {line:?}"),
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Parse {
                path: "<inline>".into(),
                line: lineno + 1,
                message: "empty key".into(),
            });
        }
        pairs.push((key.to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// [`parse_kv`] over a file, with the path in any error.
pub fn parse_kv_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)?;
    parse_kv(&text).map_err(|e| match e {
        Error::Parse { line, message, .. } => Error::Parse {
            path: path.display().to_string(),
            line,
            message,
        },
        other => other,
    })
}

/// Splits a whitespace-separated list value into tokens.
pub fn split_list(value: &str) -> Vec<&str> {
    value.split_whitespace().collect()
}

pub fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value
        .parse()
        .map_err(|_| Error::Invalid(format!("key {key:?}: expected integer, got {value:?}")))
}

pub fn parse_f64(key: &str, value: &str) -> Result<f64> {
    let parsed: f64 = value
        .parse()
        .map_err(|_| Error::Invalid(format!("key {key:?}: expected number, got {value:?}")))?;
    if !parsed.is_finite() {
        return Err(Error::Invalid(format!(
            "key {key:?}: value {value:?} is not finite"
        )));
    }
    Ok(parsed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_and_skips_noise() {
        let text = "# header\n\n contributors = 5000 \nbias = 0.7 0.2 0.1\nbias = extra\n";
        let pairs = parse_kv(text).unwrap();
        assert_eq!(
            pairs,
            vec![
                ("contributors".to_string(), "5000".to_string()),
                ("bias".to_string(), "0.7 0.2 0.1".to_string()),
                ("bias".to_string(), "extra".to_string()),
            ]
        );
    }

    #[test]
    fn rejects_missing_equals() {
        let err = parse_kv("just words\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn rejects_empty_key() {
        assert!(parse_kv("= oops\n").is_err());
    }

    #[test]
    fn value_may_contain_equals() {
        let pairs = parse_kv("expr = a=b\n").unwrap();
        assert_eq!(pairs, vec![("expr".to_string(), "a=b".to_string())]);
    }

    #[test]
    fn numeric_helpers() {
        assert_eq!(parse_u64("n", "42").unwrap(), 42);
        assert!(parse_u64("n", "-1").is_err());
        assert!((parse_f64("x", "0.5").unwrap() - 0.5).abs() < 1e-15);
        assert!(parse_f64("x", "nan").is_err());
        assert_eq!(split_list(" a  b\tc "), vec!["a", "b", "c"]);
    }
}
