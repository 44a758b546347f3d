//! Run settings: a TOML file overlaid on seeded defaults.
//!
//! ```toml
//! seed = 7
//!
//! [benchmark]
//! scale = 0.5
//! grid = { size = 48 }
//!
//! [qa]
//! threshold = 0.4
//! method = "bagging"
//! dae = { epochs = 20 }
//!
//! [monitor]
//! window = 50
//! ```
//!
//! Every table is optional and may be partial. The root seed comes from
//! `--seed`, then the file's `seed`, then 0; component seeds derive from it
//! unless the file sets them explicitly.

use crate::CliError;
use segqa_core::phantom::BenchmarkConfig;
use segqa_core::qa::{MonitorConfig, QaConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    seed: Option<u64>,
    benchmark: Option<toml::Table>,
    qa: Option<toml::Table>,
    monitor: Option<toml::Table>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub benchmark: BenchmarkConfig,
    pub qa: QaConfig,
    pub monitor: MonitorConfig,
}

impl Settings {
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self, CliError> {
        let file: ConfigFile = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?
            }
            None => ConfigFile::default(),
        };
        let seed = seed.or(file.seed).unwrap_or(0);
        let benchmark = BenchmarkConfig {
            seed,
            ..BenchmarkConfig::default()
        };
        Ok(Self {
            seed,
            benchmark: overlay(benchmark, file.benchmark, "benchmark")?,
            qa: overlay(QaConfig::seeded(seed), file.qa, "qa")?,
            monitor: overlay(MonitorConfig::default(), file.monitor, "monitor")?,
        })
    }
}

/// Replaces the fields of `base` named in `table`, recursing into nested tables.
fn overlay<T: Serialize + DeserializeOwned>(base: T, table: Option<toml::Table>, name: &str) -> Result<T, CliError> {
    let Some(table) = table else {
        return Ok(base);
    };
    // JSON holds the full u64 seed range, TOML integers do not.
    let mut value = serde_json::to_value(&base).map_err(|e| CliError::Usage(format!("[{name}]: {e}")))?;
    let patch = serde_json::to_value(&table).map_err(|e| CliError::Usage(format!("[{name}]: {e}")))?;
    merge(&mut value, patch, name)?;
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("[{name}]: {e}")))
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value, path: &str) -> Result<(), CliError> {
    use serde_json::Value;
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let here = format!("{path}.{k}");
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &here)?,
                    None => return Err(CliError::Usage(format!("unknown config key {here}"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn defaults_follow_the_seed() {
        let s = Settings::load(None, Some(9)).unwrap();
        assert_eq!(s.qa, QaConfig::seeded(9));
        assert_eq!(s.benchmark.seed, 9);
        assert_eq!(s.monitor, MonitorConfig::default());
    }

    #[test]
    fn partial_tables_overlay_defaults() {
        let f = write("seed = 3\n[qa]\nthreshold = 0.5\ndae = { epochs = 2 }\n[benchmark]\nscale = 0.25\ngrid = { size = 32 }\n");
        let s = Settings::load(Some(f.path()), None).unwrap();
        let mut expected = QaConfig::seeded(3);
        expected.threshold = 0.5;
        expected.dae.epochs = 2;
        assert_eq!(s.qa, expected);
        assert_eq!(s.benchmark.scale, 0.25);
        assert_eq!(s.benchmark.grid.size, 32);
        assert_eq!(s.benchmark.grid.spacing, 2.0);
        // The command-line seed wins over the file's.
        assert_eq!(Settings::load(Some(f.path()), Some(4)).unwrap().qa.dae.seed, QaConfig::seeded(4).dae.seed);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["[qa]\nthreshhold = 0.5\n", "colour = 1\n", "[qa.dae]\nepoch = 3\n"] {
            let f = write(text);
            assert!(matches!(Settings::load(Some(f.path()), None), Err(CliError::Usage(_))), "{text}");
        }
    }
}
