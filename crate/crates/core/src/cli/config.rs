//! Run configuration: a TOML file merged with `--section.key=value`
//! overrides, then checked against the typed schema (unknown keys fail).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::idd::IddConfig;
use crate::iec::{CalibrationConfig, IecConfig};
use crate::provider::ProviderConfig;
use crate::synth::SynthConfig;
use crate::training::{Encoding, ModelConfig, TrainConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckpointConfig {
    pub encoding: Encoding,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub idd: IddConfig,
    pub iec: IecConfig,
    pub training: TrainConfig,
    pub calibration: CalibrationConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
    pub provider: ProviderConfig,
    pub checkpoint: CheckpointConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.idd.validate()?;
        self.iec.validate()?;
        self.training.adam.validate()?;
        self.training.weights.validate()?;
        self.calibration.adam.validate()?;
        self.synth.validate()?;
        self.provider.prompts.validate()?;
        Ok(())
    }

    /// Sets every seed the run draws from.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.training.seed = seed;
        self.calibration.seed = seed;
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Parses an override value as a TOML literal, falling back to a bare
/// string (so `--iec.analyzer=calibrated` needs no quotes).
fn literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

pub fn apply_override(root: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key `{key}`")));
    }
    let (last, path) = parts.split_last().expect("non-empty");
    let mut table = root;
    for p in path {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in override `{key}` is not a section")))?;
    }
    table.insert(last.to_string(), literal(raw));
    Ok(())
}

/// Loads `path` (if any), applies `overrides` in order and validates.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            text.parse::<toml::Table>()
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for (k, v) in overrides {
        apply_override(&mut table, k, v)?;
    }
    let cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::idd::ScaleMode;
    use crate::iec::AnalyzerKind;

    fn ov(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, text).unwrap();
        assert_eq!(load_config(Some(&p), &[]).unwrap(), cfg);
    }

    #[test]
    fn overrides_apply() {
        let cfg = load_config(
            None,
            &ov(&[
                ("idd.prototypes", "5"),
                ("idd.scale_mode", "integer"),
                ("iec.analyzer", "calibrated"),
                ("training.adam.lr", "0.01"),
                ("provider.url", "http://h:1/x"),
            ]),
        )
        .unwrap();
        assert_eq!(cfg.idd.prototypes, 5);
        assert_eq!(cfg.idd.scale_mode, ScaleMode::Integer);
        assert_eq!(cfg.iec.analyzer, AnalyzerKind::Calibrated);
        assert_eq!(cfg.training.adam.lr, 0.01);
        assert_eq!(cfg.provider.url, "http://h:1/x");
    }

    #[test]
    fn unknown_and_invalid_keys_rejected() {
        assert!(load_config(None, &ov(&[("idd.protoypes", "5")])).is_err());
        assert!(load_config(None, &ov(&[("nonsense.x", "1")])).is_err());
        assert!(load_config(None, &ov(&[("idd.prototypes", "0")])).is_err());
        assert!(load_config(None, &ov(&[("iec.threshold", "1.5")])).is_err());
        assert!(load_config(None, &ov(&[("idd..x", "1")])).is_err());
    }
}
