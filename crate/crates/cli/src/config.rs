//! Run configuration: built-in defaults, then the TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use gcd_loop::{Error, LiveOracleConfig, PipelineConfig, Result, SyntheticConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleMode {
    /// Ground-truth oracle over the dataset labels.
    Mock,
    /// OpenAI-compatible chat endpoint.
    Live,
    /// No oracle: every sample keeps a random kNN positive.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockMode {
    Ideal,
    Noisy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// JSONL dataset; when absent the synthetic generator is used.
    pub jsonl: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
    /// Split parameters applied to synthetic data.
    pub novel_ratio: f64,
    pub labeled_ratio: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            jsonl: None,
            synthetic: SyntheticConfig::default(),
            novel_ratio: 0.25,
            labeled_ratio: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Clusters at inference; defaults to the training cluster count.
    pub eval_clusters: Option<usize>,
    pub eval_restarts: usize,
    pub interpret: bool,
    pub projection: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            eval_clusters: p.eval_clusters,
            eval_restarts: p.eval_restarts,
            interpret: p.interpret,
            projection: p.projection,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub mode: OracleMode,
    pub mock: MockMode,
    pub live: LiveOracleConfig,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            mode: OracleMode::Mock,
            mock: MockMode::Ideal,
            live: LiveOracleConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; copied into `data.synthetic.seed` and `train.seed`.
    pub seed: u64,
    pub precision: Precision,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub oracle: OracleConfig,
    pub cache_path: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            precision: Precision::F64,
            data: DataConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            oracle: OracleConfig::default(),
            cache_path: PathBuf::from("runs/cache.json"),
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            train: self.train.clone(),
            eval_clusters: self.eval.eval_clusters,
            eval_restarts: self.eval.eval_restarts,
            interpret: self.eval.interpret,
            projection: self.eval.projection,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialise config: {e}")))
    }
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses a flag value as a TOML literal, falling back to a plain string.
pub fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn set_path(table: &mut Table, path: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config(format!("empty key in '{path}'")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(Error::Config(format!("'{p}' in '{path}' is not a table"))),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Defaults, overlaid by `file`, overlaid by `overrides` (dotted key → value).
pub fn resolve(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<RunConfig> {
    let defaults = toml::to_string(&RunConfig::default())
        .map_err(|e| Error::Config(format!("cannot serialise defaults: {e}")))?;
    let mut table: Table = toml::from_str(&defaults).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let over: Table =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        merge(&mut table, over);
    }
    for (k, v) in overrides {
        set_path(&mut table, k, v.clone())?;
    }
    let mut cfg: RunConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("invalid configuration: {e}")))?;
    cfg.data.synthetic.seed = cfg.seed;
    cfg.train.seed = cfg.seed;
    cfg.train.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_round_trip() {
        let cfg = resolve(None, &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        let again: RunConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "seed = 3\n[train]\nepochs = 7\ntau = 0.2").unwrap();
        let cfg = resolve(Some(f.path()), &[("train.epochs".into(), parse_value("9"))]).unwrap();
        assert_eq!(cfg.train.epochs, 9);
        assert_eq!(cfg.train.tau, 0.2);
        assert_eq!(cfg.train.k, 50);
        assert_eq!(cfg.train.seed, 3);
        assert_eq!(cfg.data.synthetic.seed, 3);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let err = resolve(None, &[("trian.epochs".into(), parse_value("1"))]).unwrap_err();
        assert_eq!(err.category(), gcd_loop::ErrorCategory::Config);
        let err = resolve(None, &[("train.tau".into(), parse_value("0"))]).unwrap_err();
        assert_eq!(err.category(), gcd_loop::ErrorCategory::Config);
    }

    #[test]
    fn value_parsing() {
        assert_eq!(parse_value("5"), Value::Integer(5));
        assert_eq!(parse_value("0.5"), Value::Float(0.5));
        assert_eq!(parse_value("live"), Value::String("live".into()));
        assert_eq!(parse_value("true"), Value::Boolean(true));
    }

    #[test]
    fn default_hyperparameters() {
        let t = resolve(None, &[]).unwrap().train;
        assert_eq!((t.tau, t.alpha, t.k, t.m, t.q_size, t.interval), (0.07, 1.0, 50, 500, 2, 5));
        assert_eq!((t.pretrain_epochs, t.epochs), (100, 50));
        assert_eq!((t.lr_pretrain, t.lr_train), (5e-5, 1e-5));
    }

    fn shipped(name: &str) -> RunConfig {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
        resolve(Some(&path), &[]).unwrap()
    }

    #[test]
    fn shipped_configs_match_presets() {
        let (data, pipeline) = gcd_loop::discovery_preset(0);
        let cfg = shipped("discovery.toml");
        assert_eq!(cfg.data.synthetic, data);
        assert_eq!(cfg.pipeline(), pipeline);
        assert_eq!(shipped("reference.toml"), RunConfig::default());
    }
}
