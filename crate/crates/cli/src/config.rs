//! The run configuration document and `--set` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use rightctx::decoder::DecoderConfig;
use rightctx::priors::PriorOptions;
use rightctx::trainer::eval::DecodeMode;
use rightctx::trainer::{SynthSpec, TrainConfig};
use rightctx::verify::suite::SuiteConfig;
use rightctx::ScaleSet;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 1000,
            dev: 200,
            test: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSettings {
    pub mode: DecodeMode,
    /// `beta`, `eta` and `lambda` apply; the `alpha_*` entries are unused.
    pub scales: ScaleSet,
    /// Prior scale used instead of `scales.beta` for CTC checkpoints.
    pub ctc_prior_scale: f64,
    pub search: DecoderConfig,
    /// Order of the LM estimated from training transcripts when no ARPA file is given.
    pub lm_order: usize,
    pub lm_discount: f64,
    pub prior: PriorOptions,
}

impl Default for DecodeSettings {
    fn default() -> Self {
        Self {
            mode: DecodeMode::Center,
            scales: ScaleSet {
                beta: 0.3,
                ..ScaleSet::default()
            },
            ctc_prior_scale: 0.0,
            search: DecoderConfig::default(),
            lm_order: 2,
            lm_discount: 0.5,
            prior: PriorOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// ARPA file; estimated from the training split when absent.
    pub lm: Option<PathBuf>,
    /// Prior file; estimated from the training split when absent.
    pub prior: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthSpec,
    pub corpus_seed: u64,
    pub splits: SplitSizes,
    pub train: TrainConfig,
    pub decode: DecodeSettings,
    pub paths: Paths,
    pub verify: SuiteConfig,
}

fn is_toml(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "toml")
}

/// Parses a config document; `.toml` files as TOML, anything else as JSON.
pub fn parse_config(text: &str, toml: bool) -> Result<RunConfig, CliError> {
    if toml {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    } else {
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }
}

pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            parse_config(&text, is_toml(p))
                .map_err(|e| CliError::Usage(format!("{}: {}", p.display(), e.message())))?
        }
        None => RunConfig::default(),
    };
    apply_overrides(cfg, overrides)
}

/// Applies `key.path=value` assignments. Values are read as JSON and fall
/// back to plain strings.
pub fn apply_overrides(cfg: RunConfig, overrides: &[String]) -> Result<RunConfig, CliError> {
    if overrides.is_empty() {
        return Ok(cfg);
    }
    let mut doc = serde_json::to_value(&cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects key.path=value, got `{o}`")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut node = &mut doc;
        for part in key.split('.') {
            node = node
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| CliError::Usage(format!("--set: unknown key `{key}`")))?;
        }
        *node = value;
    }
    serde_json::from_value(doc).map_err(|e| CliError::Usage(format!("--set: {e}")))
}

/// Parses `start:stop:step` into an inclusive list of values.
pub fn parse_sweep(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = || {
        CliError::Usage(format!(
            "sweep `{spec}` must be start:stop:step with step > 0"
        ))
    };
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    let [start, stop, step] = parts[..] else {
        return Err(bad());
    };
    if !(step > 0.0 && start.is_finite() && stop.is_finite() && stop >= start) {
        return Err(bad());
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_is_inclusive() {
        assert_eq!(parse_sweep("0.5:2.0:0.25").unwrap().len(), 7);
        assert!(parse_sweep("1:0:0.5").is_err());
        assert!(parse_sweep("1:2").is_err());
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = apply_overrides(
            RunConfig::default(),
            &[
                "train.epochs=3".into(),
                "decode.mode=diphone".into(),
                "train.loss=factored_lcr".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.decode.mode, DecodeMode::Diphone);
        assert!(apply_overrides(RunConfig::default(), &["train.epochz=3".into()]).is_err());
    }

    #[test]
    fn toml_and_json_agree() {
        let a = parse_config("corpus_seed = 5\n[train]\nepochs = 2\n", true).unwrap();
        let b = parse_config(r#"{"corpus_seed": 5, "train": {"epochs": 2}}"#, false).unwrap();
        assert_eq!(a, b);
    }
}
