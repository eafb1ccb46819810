//! Run configuration with layered sources.
//!
//! Values are resolved in increasing priority: built-in defaults, then
//! `BOTCENSUS_*` environment variables, then the TOML config file, then
//! explicit `key=value` overrides (command-line flags).
//!
//! An environment variable names a config key by upper-casing it and
//! joining sections with a double underscore: `graph.epochs` is
//! `BOTCENSUS_GRAPH__EPOCHS`. Variables that do not name a known key are
//! ignored.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::ensemble::FitWeightsConfig;
use crate::error::{Error, Result};
use crate::graph::GnnVariant;
use crate::synth::SynthConfig;

pub const ENV_PREFIX: &str = "BOTCENSUS_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Master seed; every component derives its own stream from it.
    pub seed: u64,
    pub split: SplitSection,
    pub forest: ForestSection,
    pub adaboost: AdaBoostSection,
    pub text: TextSection,
    pub graph: GraphSection,
    pub distill: DistillSection,
    pub calibration: CalibrationSection,
    pub weights: FitWeightsConfig,
    pub synth: SynthConfig,
    pub eval: EvalSection,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            split: SplitSection::default(),
            forest: ForestSection::default(),
            adaboost: AdaBoostSection::default(),
            text: TextSection::default(),
            graph: GraphSection::default(),
            distill: DistillSection::default(),
            calibration: CalibrationSection::default(),
            weights: FitWeightsConfig::default(),
            synth: SynthConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub val_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { val_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestSection {
    pub n_trees: usize,
    pub max_depth: usize,
    pub bootstrap: bool,
}

impl Default for ForestSection {
    fn default() -> Self {
        ForestSection {
            n_trees: 100,
            max_depth: 8,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaBoostSection {
    pub rounds: usize,
}

impl Default for AdaBoostSection {
    fn default() -> Self {
        AdaBoostSection { rounds: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextSection {
    /// Embedding providers, one text sub-model each.
    pub providers: Vec<String>,
    pub dim: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2: f64,
    pub use_hidden: bool,
    pub hidden_dim: usize,
    pub dropout: f64,
}

impl Default for TextSection {
    fn default() -> Self {
        TextSection {
            providers: vec![crate::text::WORD_PROVIDER.into(), crate::text::CHAR_PROVIDER.into()],
            dim: crate::text::DEFAULT_DIM,
            lr: 1e-4,
            batch_size: 64,
            epochs: 50,
            l2: 1e-5,
            use_hidden: false,
            hidden_dim: 128,
            dropout: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    /// One trained teacher (and distilled student) per entry.
    pub variants: Vec<GnnVariant>,
    /// Provider whose encoding is appended to the node features.
    pub node_text_provider: String,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2: f64,
    pub hidden_dim: usize,
    pub layers: usize,
    pub dropout: f64,
}

impl Default for GraphSection {
    fn default() -> Self {
        GraphSection {
            variants: vec![
                GnnVariant::AttnEdgeType,
                GnnVariant::AttnEdgeType,
                GnnVariant::MeanRelational,
                GnnVariant::AttnRelation,
            ],
            node_text_provider: crate::text::WORD_PROVIDER.into(),
            lr: 1e-3,
            batch_size: 128,
            epochs: 50,
            l2: 1e-5,
            hidden_dim: 128,
            layers: 2,
            dropout: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSection {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2: f64,
    pub use_hidden: bool,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub lambda: f64,
}

impl Default for DistillSection {
    fn default() -> Self {
        DistillSection {
            lr: 5e-4,
            batch_size: 2048,
            epochs: 50,
            l2: 1e-5,
            use_hidden: false,
            hidden_dim: 1024,
            dropout: 0.3,
            lambda: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub ece_bins: usize,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        CalibrationSection {
            ece_bins: crate::calibration::DEFAULT_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Labelled users generated for training a bundle from synthetic data.
    pub train_users: usize,
    /// Users in the pool that sweep communities are resampled from.
    pub pool_users: usize,
    pub balanced_users: usize,
    pub balanced_communities: usize,
    pub fractions: Vec<f64>,
    pub community_size: usize,
    pub seeds: Vec<u64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            train_users: 3000,
            pool_users: 10_000,
            balanced_users: 10_000,
            balanced_communities: 10,
            fractions: (1..=9).map(|k| k as f64 / 10.0).collect(),
            community_size: 5000,
            seeds: vec![0, 1, 2],
        }
    }
}

impl Config {
    /// Resolves defaults, `env`, the optional config file and `overrides`
    /// (`dotted.key=value`), in that order of priority.
    pub fn load(
        file: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        overrides: &[String],
    ) -> Result<Config> {
        let mut root = defaults_table();
        let known = root.clone();
        for (name, value) in env {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else { continue };
            let path: Vec<String> = rest.split("__").map(str::to_lowercase).collect();
            if lookup(&known, &path).is_some() {
                set_path(&mut root, &path, parse_scalar(&value))?;
            }
        }
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let table: Table = toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut root, table);
        }
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
            if lookup(&known, &path).is_none() {
                return Err(Error::Config(format!("unknown config key `{}`", key.trim())));
            }
            set_path(&mut root, &path, parse_scalar(value.trim()))?;
        }
        let cfg: Config = Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.split.val_fraction > 0.0 && self.split.val_fraction < 1.0) {
            return bad(format!("split.val_fraction {} outside (0, 1)", self.split.val_fraction));
        }
        if !(0.0..=1.0).contains(&self.distill.lambda) {
            return bad(format!("distill.lambda {} outside [0, 1]", self.distill.lambda));
        }
        for (name, p) in [
            ("text.dropout", self.text.dropout),
            ("graph.dropout", self.graph.dropout),
            ("distill.dropout", self.distill.dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1)"));
            }
        }
        for (name, v) in [
            ("text.batch_size", self.text.batch_size),
            ("graph.batch_size", self.graph.batch_size),
            ("distill.batch_size", self.distill.batch_size),
            ("text.dim", self.text.dim),
            ("graph.hidden_dim", self.graph.hidden_dim),
            ("graph.layers", self.graph.layers),
            ("forest.n_trees", self.forest.n_trees),
            ("calibration.ece_bins", self.calibration.ece_bins),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.graph.layers > 2 {
            return bad(format!("graph.layers is {}, at most 2 are supported", self.graph.layers));
        }
        if self.eval.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("eval.fractions must lie in [0, 1]".into());
        }
        self.synth.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }
}

fn defaults_table() -> Table {
    match Value::try_from(Config::default()).expect("defaults serialise") {
        Value::Table(t) => t,
        _ => unreachable!("config is a table"),
    }
}

fn lookup<'a>(table: &'a Table, path: &[String]) -> Option<&'a Value> {
    let (first, rest) = path.split_first()?;
    let v = table.get(first)?;
    if rest.is_empty() {
        Some(v)
    } else {
        lookup(v.as_table()?, rest)
    }
}

fn set_path(table: &mut Table, path: &[String], value: Value) -> Result<()> {
    let (first, rest) = path.split_first().expect("non-empty path");
    if rest.is_empty() {
        table.insert(first.clone(), value);
        return Ok(());
    }
    match table.get_mut(first) {
        Some(Value::Table(t)) => set_path(t, rest, value),
        _ => Err(Error::Config(format!("`{first}` is not a section"))),
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

/// Interprets `raw` as a TOML value when it parses as one, else as a string.
fn parse_scalar(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_carry_reference_hyperparameters() {
        let c = Config::default();
        assert_eq!((c.graph.lr, c.text.lr, c.distill.lr), (1e-3, 1e-4, 5e-4));
        assert_eq!((c.graph.batch_size, c.text.batch_size, c.distill.batch_size), (128, 64, 2048));
        assert_eq!((c.graph.epochs, c.text.epochs, c.distill.epochs), (50, 50, 50));
        assert_eq!((c.graph.l2, c.text.l2, c.distill.l2), (1e-5, 1e-5, 1e-5));
        assert_eq!((c.graph.hidden_dim, c.text.hidden_dim, c.distill.hidden_dim), (128, 128, 1024));
        assert_eq!((c.graph.dropout, c.text.dropout, c.distill.dropout), (0.5, 0.5, 0.3));
        assert_eq!((c.graph.layers, c.distill.lambda), (2, 0.7));
    }

    #[test]
    fn precedence_env_file_flags() {
        let env = vec![
            ("BOTCENSUS_GRAPH__EPOCHS".to_string(), "7".to_string()),
            ("BOTCENSUS_TEXT__EPOCHS".to_string(), "9".to_string()),
            ("BOTCENSUS_BUNDLE".to_string(), "/tmp/x".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ];
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "[graph]\nepochs = 11\nlr = 0.01\n").unwrap();
        let c = Config::load(Some(f.path()), env.clone(), &["graph.lr=0.5".into()]).unwrap();
        assert_eq!(c.graph.epochs, 11);
        assert_eq!(c.text.epochs, 9);
        assert_eq!(c.graph.lr, 0.5);
        let c = Config::load(None, env, &[]).unwrap();
        assert_eq!(c.graph.epochs, 7);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(matches!(Config::load(None, vec![], &["graph.nope=1".into()]), Err(Error::Config(_))));
        assert!(matches!(Config::load(None, vec![], &["distill.lambda=2".into()]), Err(Error::Config(_))));
        assert!(matches!(Config::load(None, vec![], &["seed".into()]), Err(Error::Config(_))));
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "[graph]\nwhat = 1").unwrap();
        assert!(matches!(Config::load(Some(f.path()), vec![], &[]), Err(Error::Config(_))));
    }

    #[test]
    fn toml_round_trip() {
        let c = Config::default();
        let back: Config = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }
}
