//! Flat key=value run configuration. File values are merged over defaults,
//! command-line flags override the file, and the fully resolved map is
//! echoed into the output directory so any run can be reproduced from its
//! snapshot alone.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use taxograft_core::{EndpointConfig, PipelineConfig, ScorerModel, VerifierMode};

use crate::CliError;

/// Every accepted key with its default ("" = no default, resolved per
/// command). Unknown keys in a config file are rejected loudly.
const KEYS: &[(&str, &str)] = &[
    ("edges", ""),
    ("definitions", ""),
    ("queries", ""),
    ("model", ""),
    ("predictions", ""),
    ("trace", ""),
    ("rankings", ""),
    ("out", "out"),
    ("seed", ""),
    ("split_fraction", "0.2"),
    ("dimension", "32768"),
    ("negatives", "15"),
    ("margin_scale", "0.2"),
    ("lambda_pos", "0.5"),
    ("lambda_neg", "0.5"),
    ("learning_rate", "0.001"),
    ("epochs", "20"),
    ("chunk_size", "5"),
    ("chunks_per_round", "1"),
    ("max_parse_retries", "1"),
    ("parallelism", "1"),
    ("verifier_mode", "logprob"),
    ("backend", "oracle-mock"),
    ("base_url", ""),
    ("model_name", ""),
    ("api_key_env", ""),
    ("timeout_secs", "60"),
    ("retries", "2"),
    ("hit_ks", "1,5,10"),
];

/// Keys holding filesystem paths; absolutized so the snapshot replays from
/// any working directory.
const PATH_KEYS: &[&str] =
    &["edges", "definitions", "queries", "model", "predictions", "trace", "rankings", "out"];

pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn load(
        file: Option<&Path>,
        seed: Option<u64>,
        out: Option<&Path>,
    ) -> Result<RunConfig, CliError> {
        let mut values: BTreeMap<String, String> = KEYS
            .iter()
            .filter(|(_, default)| !default.is_empty())
            .map(|(k, d)| (k.to_string(), d.to_string()))
            .collect();
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|err| {
                CliError::config(format!("cannot read config {}: {err}", path.display()))
            })?;
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let Some((key, value)) = line.split_once('=') else {
                    return Err(CliError::config(format!(
                        "{}:{}: expected key = value, got {line:?}",
                        path.display(),
                        lineno + 1
                    )));
                };
                let key = key.trim();
                if !KEYS.iter().any(|(k, _)| *k == key) {
                    return Err(CliError::config(format!(
                        "{}:{}: unknown key {key:?}; known keys: {}",
                        path.display(),
                        lineno + 1,
                        KEYS.iter().map(|(k, _)| *k).collect::<Vec<_>>().join(", ")
                    )));
                }
                values.insert(key.to_string(), value.trim().to_string());
            }
        }
        if let Some(seed) = seed {
            values.insert("seed".into(), seed.to_string());
        }
        if let Some(out) = out {
            values.insert("out".into(), out.display().to_string());
        }
        for &key in PATH_KEYS {
            if let Some(v) = values.get(key) {
                let abs = std::path::absolute(v)
                    .map_err(|err| CliError::config(format!("bad path in {key}: {err}")))?;
                values.insert(key.to_string(), abs.display().to_string());
            }
        }
        // derived output defaults, resolved here so the snapshot shows them
        let out_dir = PathBuf::from(values.get("out").expect("out has a default"));
        for (key, file) in
            [("model", "model.json"), ("predictions", "predictions.jsonl"), ("trace", "trace.jsonl")]
        {
            values
                .entry(key.to_string())
                .or_insert_with(|| out_dir.join(file).display().to_string());
        }
        Ok(RunConfig { values })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.values.get("out").expect("out has a default"))
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.get(key).map(PathBuf::from).ok_or_else(|| {
            CliError::config(format!("missing required config key {key:?} (a file path)"))
        })
    }

    pub fn optional_path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    /// Seed is deliberately never defaulted: reproducibility must be chosen.
    pub fn seed(&self, command: &str) -> Result<u64, CliError> {
        let raw = self.get("seed").ok_or_else(|| {
            CliError::Usage(format!(
                "`taxograft {command}` needs a seed; pass --seed or set seed= in the config"
            ))
        })?;
        raw.parse()
            .map_err(|_| CliError::Usage(format!("seed must be an unsigned integer, got {raw:?}")))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        let raw = self
            .get(key)
            .ok_or_else(|| CliError::config(format!("missing config key {key:?}")))?;
        raw.parse().map_err(|_| {
            CliError::config(format!(
                "config key {key} = {raw:?} is not a valid {}",
                std::any::type_name::<T>()
            ))
        })
    }

    pub fn hit_ks(&self) -> Result<Vec<usize>, CliError> {
        let raw = self.get("hit_ks").unwrap_or("1,5,10");
        raw.split(',')
            .map(|part| {
                part.trim().parse::<usize>().map_err(|_| {
                    CliError::config(format!("hit_ks must be comma-separated integers, got {raw:?}"))
                })
            })
            .collect()
    }

    /// Ranker hyperparameters applied over a fresh model.
    pub fn scorer_model(&self, seed: u64) -> Result<ScorerModel, CliError> {
        let dimension: usize = self.parse("dimension")?;
        if !dimension.is_power_of_two() {
            return Err(CliError::config(format!("dimension must be a power of two, got {dimension}")));
        }
        let mut m = ScorerModel::new(dimension, seed);
        m.margin_scale = self.parse("margin_scale")?;
        m.lambda_pos = self.parse("lambda_pos")?;
        m.lambda_neg = self.parse("lambda_neg")?;
        m.learning_rate = self.parse("learning_rate")?;
        m.epochs = self.parse("epochs")?;
        Ok(m)
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig, CliError> {
        let verifier_mode = match self.get("verifier_mode").unwrap_or("logprob") {
            "logprob" => VerifierMode::Logprob,
            "off" => VerifierMode::Off,
            other => {
                return Err(CliError::config(format!(
                    "verifier_mode must be logprob or off, got {other:?}"
                )))
            }
        };
        Ok(PipelineConfig {
            chunk_size: self.parse("chunk_size")?,
            chunks_per_round: self.parse("chunks_per_round")?,
            max_parse_retries: self.parse("max_parse_retries")?,
            verifier_mode,
            parallelism: self.parse("parallelism")?,
        })
    }

    pub fn backend_kind(&self) -> Result<&str, CliError> {
        match self.get("backend").unwrap_or("oracle-mock") {
            kind @ ("oracle-mock" | "http") => Ok(kind),
            other => Err(CliError::config(format!(
                "backend must be oracle-mock or http, got {other:?}"
            ))),
        }
    }

    /// The API key itself never appears in config or snapshots, only the
    /// NAME of the environment variable holding it.
    pub fn endpoint_config(&self) -> Result<EndpointConfig, CliError> {
        let base_url = self
            .get("base_url")
            .ok_or_else(|| CliError::config("backend = http needs base_url"))?
            .to_string();
        let model = self
            .get("model_name")
            .ok_or_else(|| CliError::config("backend = http needs model_name"))?
            .to_string();
        Ok(EndpointConfig {
            base_url,
            model,
            api_key_env: self.get("api_key_env").map(str::to_string),
            timeout: std::time::Duration::from_secs(self.parse("timeout_secs")?),
            retries: self.parse("retries")?,
            parallelism: self.parse::<usize>("parallelism")?.max(1),
            audit_log: None,
        })
    }

    pub fn write_snapshot(&self, command: &str) -> Result<PathBuf, CliError> {
        let dir = self.out_dir();
        fs::create_dir_all(&dir)?;
        let mut text = format!("# taxograft {command}\n");
        for (key, value) in &self.values {
            text.push_str(&format!("{key} = {value}\n"));
        }
        let path = dir.join("resolved_config.txt");
        fs::write(&path, text)?;
        Ok(path)
    }
}
