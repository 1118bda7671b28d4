//! Run manifest written next to every command's outputs. It records what the
//! run depended on: the command, tool version, RNG algorithm, a content
//! digest per input, the effective configuration, and any seeds. Paths,
//! thread counts, and timestamps are deliberately absent so that two runs
//! over the same inputs produce identical manifests, and identical manifests
//! imply byte-identical outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use fairscore_core::{Result, RNG_ALGORITHM};
use sha2::{Digest, Sha256};

pub struct Manifest {
    command: String,
    inputs: BTreeMap<String, String>,
    config: BTreeMap<String, String>,
    params: BTreeMap<String, String>,
    seeds: BTreeMap<String, u64>,
}

impl Manifest {
    pub fn new(command: &str) -> Manifest {
        Manifest {
            command: command.to_string(),
            inputs: BTreeMap::new(),
            config: BTreeMap::new(),
            params: BTreeMap::new(),
            seeds: BTreeMap::new(),
        }
    }

    /// Digests a file's bytes under a role name ("schema", "contributions").
    pub fn add_input_file(&mut self, role: &str, path: &Path) -> Result<()> {
        let bytes = fs::read(path)?;
        self.inputs.insert(role.to_string(), hex_digest(&bytes));
        Ok(())
    }

    /// Digests in-memory input content, for inputs the run itself produced.
    pub fn add_input_text(&mut self, role: &str, text: &str) {
        self.inputs
            .insert(role.to_string(), hex_digest(text.as_bytes()));
    }

    pub fn set_config(&mut self, effective: &BTreeMap<String, String>) {
        self.config = effective.clone();
    }

    pub fn add_seed(&mut self, name: &str, seed: u64) {
        self.seeds.insert(name.to_string(), seed);
    }

    /// Records a command-line parameter that shapes the outputs (budgets,
    /// report sizes). Thread counts never go here: results are independent
    /// of them.
    pub fn add_param(&mut self, name: &str, value: impl ToString) {
        self.params.insert(name.to_string(), value.to_string());
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "command = {}", self.command);
        let _ = writeln!(out, "version = {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(out, "rng = {RNG_ALGORITHM}");
        for (role, digest) in &self.inputs {
            let _ = writeln!(out, "input.{role} = sha256:{digest}");
        }
        for (key, value) in &self.config {
            let _ = writeln!(out, "config.{key} = {value}");
        }
        for (name, value) in &self.params {
            let _ = writeln!(out, "param.{name} = {value}");
        }
        for (name, seed) in &self.seeds {
            let _ = writeln!(out, "seed.{name} = {seed}");
        }
        out
    }

    /// Writes `manifest.txt` into the output directory.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join("manifest.txt"), self.render())?;
        Ok(())
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(64);
    for byte in digest {
        let _ = write!(hex, "{byte:02x}");
    }
    hex
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_ordered_and_free_of_environment_details() {
        let mut manifest = Manifest::new("score");
        manifest.add_input_text("schema", "category country: AA BB\n");
        manifest.add_input_text("contributions", "contributor_id,class_id\n");
        let mut config = BTreeMap::new();
        config.insert("privacy.k".to_string(), "10".to_string());
        config.insert("boost.mode".to_string(), "joint".to_string());
        manifest.set_config(&config);
        manifest.add_seed("noise", 7);
        manifest.add_param("budget", 500u64);
        let text = manifest.render();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "command = score");
        assert!(lines[1].starts_with("version = "));
        assert_eq!(lines[2], format!("rng = {RNG_ALGORITHM}"));
        assert!(lines[3].starts_with("input.contributions = sha256:"));
        assert!(lines[4].starts_with("input.schema = sha256:"));
        assert_eq!(lines[5], "config.boost.mode = joint");
        assert_eq!(lines[6], "config.privacy.k = 10");
        assert_eq!(lines[7], "param.budget = 500");
        assert_eq!(lines[8], "seed.noise = 7");
        assert_eq!(lines.len(), 9);
    }

    #[test]
    fn equal_content_gives_equal_digests_regardless_of_source() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pop.csv");
        fs::write(&path, "country,population\nAA,10\n").unwrap();
        let mut by_file = Manifest::new("priors");
        by_file.add_input_file("population", &path).unwrap();
        let mut by_text = Manifest::new("priors");
        by_text.add_input_text("population", "country,population\nAA,10\n");
        assert_eq!(by_file.render(), by_text.render());
    }
}
