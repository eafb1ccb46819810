//! The trained ensemble: sub-models, temperatures, weights and everything
//! needed to turn a user record into their inputs.
//!
//! On disk a bundle is a directory:
//!
//! ```text
//! manifest.json        version, keys, temperatures, weights, registries
//! models/<key>.json    one parameter file per sub-model
//! archive/<key>.json   graph teachers, kept for reference only
//! ```
//!
//! Sub-model keys contain a `/`, which becomes `__` in file names.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::calibration::{apply_temperature, Temperature};
use crate::ensemble::{estimate_community, CommunityEstimate, EnsembleWeights};
use crate::error::{Error, Result};
use crate::features::{compute_features, normalize, FeatureStats, FeatureVector, FEATURE_COUNT, FEATURE_NAMES};
use crate::graph::{predict_student, GnnModel, GnnVariant, Student};
use crate::ingest::{UserRecord, UserStore};
use crate::tabular::{BoostModel, TabularModel};
use crate::text::{encode_user, predict_text, provider_by_name, EmbeddingProvider, TextHead};
use crate::types::{LogitPair, ProbPair};

pub const BUNDLE_VERSION: &str = "botcensus-bundle/1";
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SubModel {
    /// Forest or AdaBoost over raw feature vectors.
    Tabular { model: TabularModel },
    /// Head over one provider's user encoding.
    Text { provider: String, head: TextHead },
    /// Distilled student over node features (normalized features and the
    /// node-text encoding).
    Student { variant: GnnVariant, student: Student },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub sub_models: Vec<String>,
    pub temperatures: BTreeMap<String, Temperature>,
    pub weights: EnsembleWeights,
    pub feature_names: Vec<String>,
    pub normalizer: FeatureStats,
    pub embedding_dim: usize,
    pub node_text_provider: String,
    /// Teachers stored under `archive/`.
    pub archived: Vec<String>,
    /// Verified-only stump kept as a perturbation baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verified_baseline: Option<BoostModel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub manifest: Manifest,
    pub models: BTreeMap<String, SubModel>,
    pub archive: BTreeMap<String, GnnModel>,
}

fn file_name(key: &str) -> String {
    format!("{}.json", key.replace('/', "__"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

impl Bundle {
    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.manifest.sub_models.iter().map(String::as_str)
    }

    /// Checks every cross-reference and dimension.
    pub fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        let bad = |msg: String| Err(Error::Bundle(msg));
        if m.version != BUNDLE_VERSION {
            return bad(format!("version `{}`, expected `{BUNDLE_VERSION}`", m.version));
        }
        if m.sub_models.is_empty() {
            return bad("no sub-models".into());
        }
        let listed: Vec<&String> = {
            let mut v: Vec<&String> = m.sub_models.iter().collect();
            v.sort();
            v.dedup();
            v
        };
        if listed.len() != m.sub_models.len() {
            return bad("duplicate sub-model key".into());
        }
        let same_keys = |other: Vec<&String>| other == listed;
        if !same_keys(self.models.keys().collect()) {
            return bad("parameter files do not match the sub-model list".into());
        }
        if !same_keys(m.temperatures.keys().collect()) {
            return bad("temperatures do not cover exactly the sub-models".into());
        }
        if !same_keys(m.weights.alpha.keys().collect()) {
            return Err(Error::KeyMismatch("weights do not cover exactly the sub-models".into()));
        }
        if m.weights.alpha.values().any(|v| !v.is_finite()) {
            return bad("non-finite weight".into());
        }
        if m.feature_names.iter().map(String::as_str).ne(FEATURE_NAMES.iter().copied()) {
            return bad("feature registry differs from this build".into());
        }
        if m.normalizer.mean.len() != FEATURE_COUNT || m.normalizer.stddev.len() != FEATURE_COUNT {
            return bad("normalizer has the wrong length".into());
        }
        let node_provider = provider_by_name(&m.node_text_provider, m.embedding_dim)?;
        let node_dim = FEATURE_COUNT + 2 * node_provider.dim();
        for (key, model) in &self.models {
            let (expected, got) = match model {
                SubModel::Tabular { model } => (FEATURE_COUNT, model.n_features()),
                SubModel::Text { provider, head } => {
                    let p = provider_by_name(provider, m.embedding_dim)?;
                    (2 * p.dim(), head.input_dim())
                }
                SubModel::Student { student, .. } => {
                    if !student.net.is_finite() {
                        return bad(format!("{key}: non-finite parameters"));
                    }
                    (node_dim, student.net.input_dim())
                }
            };
            if expected != got {
                return bad(format!("{key}: input dimension {got}, expected {expected}"));
            }
        }
        if self.archive.keys().ne(m.archived.iter()) {
            return bad("archive does not match the manifest".into());
        }
        for (key, teacher) in &self.archive {
            teacher.validate()?;
            if teacher.input_dim() != node_dim {
                return bad(format!("{key}: teacher input dimension {}", teacher.input_dim()));
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        for sub in ["models", "archive"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        write_json(&dir.join(MANIFEST), &self.manifest)?;
        for (key, model) in &self.models {
            write_json(&dir.join("models").join(file_name(key)), model)?;
        }
        for (key, teacher) in &self.archive {
            write_json(&dir.join("archive").join(file_name(key)), teacher)?;
        }
        Ok(())
    }

    /// Loads and validates a bundle; a version mismatch is an error.
    pub fn load(dir: &Path) -> Result<Bundle> {
        let manifest: Manifest = read_json(&dir.join(MANIFEST))?;
        if manifest.version != BUNDLE_VERSION {
            return Err(Error::Bundle(format!(
                "version `{}`, expected `{BUNDLE_VERSION}`",
                manifest.version
            )));
        }
        let models = manifest
            .sub_models
            .iter()
            .map(|k| Ok((k.clone(), read_json(&dir.join("models").join(file_name(k)))?)))
            .collect::<Result<_>>()?;
        let archive = manifest
            .archived
            .iter()
            .map(|k| Ok((k.clone(), read_json(&dir.join("archive").join(file_name(k)))?)))
            .collect::<Result<_>>()?;
        let bundle = Bundle {
            manifest,
            models,
            archive,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    /// Builds the per-user inputs every sub-model needs.
    pub fn encoder(&self) -> Result<InputEncoder> {
        InputEncoder::new(
            self.manifest.normalizer.clone(),
            &self.manifest.node_text_provider,
            self.models.values().filter_map(|m| match m {
                SubModel::Text { provider, .. } => Some(provider.as_str()),
                _ => None,
            }),
            self.manifest.embedding_dim,
        )
    }

    /// Raw logits of every sub-model, in key order.
    pub fn score_user(&self, enc: &InputEncoder, u: &UserRecord) -> Result<Vec<LogitPair>> {
        let inputs = enc.encode(u)?;
        self.models
            .values()
            .map(|m| match m {
                SubModel::Tabular { model } => model.predict(&inputs.raw),
                SubModel::Text { provider, head } => predict_text(head, &inputs.text[provider]),
                SubModel::Student { student, .. } => predict_student(student, &inputs.node),
            })
            .collect()
    }

    /// Raw logits for every user of `store`.
    pub fn score_store(&self, store: &UserStore) -> Result<ScoreTable> {
        let enc = self.encoder()?;
        let rows = store
            .users()
            .map(|u| Ok((u.id.clone(), self.score_user(&enc, u)?)))
            .collect::<Result<_>>()?;
        Ok(ScoreTable {
            keys: self.models.keys().cloned().collect(),
            rows,
        })
    }

    pub fn temperatures(&self) -> Vec<Temperature> {
        self.models.keys().map(|k| self.manifest.temperatures[k]).collect()
    }

    /// Copy with every temperature set to 1.
    pub fn without_calibration(&self) -> Bundle {
        let mut b = self.clone();
        for t in b.manifest.temperatures.values_mut() {
            *t = Temperature::IDENTITY;
        }
        b
    }
}

/// Everything derived from one user record that some sub-model consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct UserInputs {
    pub raw: FeatureVector,
    pub text: BTreeMap<String, Vec<f64>>,
    /// `normalize(raw) ++ node-text encoding`.
    pub node: Vec<f64>,
}

pub struct InputEncoder {
    normalizer: FeatureStats,
    node_provider: String,
    providers: BTreeMap<String, Box<dyn EmbeddingProvider>>,
}

impl InputEncoder {
    pub fn new<'a>(
        normalizer: FeatureStats,
        node_provider: &'a str,
        text_providers: impl IntoIterator<Item = &'a str>,
        dim: usize,
    ) -> Result<Self> {
        let mut providers = BTreeMap::new();
        for name in text_providers.into_iter().chain([node_provider]) {
            if !providers.contains_key(name) {
                providers.insert(name.to_string(), provider_by_name(name, dim)?);
            }
        }
        Ok(InputEncoder {
            normalizer,
            node_provider: node_provider.to_string(),
            providers,
        })
    }

    pub fn encode(&self, u: &UserRecord) -> Result<UserInputs> {
        let raw = compute_features(u);
        let text: BTreeMap<String, Vec<f64>> = self
            .providers
            .iter()
            .map(|(name, p)| Ok((name.clone(), encode_user(p.as_ref(), u)?)))
            .collect::<Result<_>>()?;
        let mut node = normalize(&raw, &self.normalizer).to_vec();
        node.extend_from_slice(&text[&self.node_provider]);
        Ok(UserInputs { raw, text, node })
    }
}

/// Raw sub-model logits for a set of users, keyed by user id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    pub keys: Vec<String>,
    pub rows: BTreeMap<String, Vec<LogitPair>>,
}

impl ScoreTable {
    /// Calibrated per-sub-model probabilities of one user.
    pub fn calibrated(&self, id: &str, temperatures: &[Temperature]) -> Result<BTreeMap<String, ProbPair>> {
        let row = self.rows.get(id).ok_or_else(|| Error::UnknownUser(id.to_string()))?;
        Ok(self
            .keys
            .iter()
            .zip(row)
            .zip(temperatures)
            .map(|((k, z), t)| (k.clone(), apply_temperature(*z, *t)))
            .collect())
    }

    /// Logits of sub-model `k` for `ids`, in the given order.
    pub fn column<'a>(&self, k: usize, ids: impl IntoIterator<Item = &'a str>) -> Result<Vec<LogitPair>> {
        ids.into_iter()
            .map(|id| {
                self.rows
                    .get(id)
                    .map(|r| r[k])
                    .ok_or_else(|| Error::UnknownUser(id.to_string()))
            })
            .collect()
    }

    /// Community estimate over `ids` with the given calibration and weights.
    pub fn estimate<'a>(
        &self,
        ids: impl IntoIterator<Item = &'a str>,
        temperatures: &[Temperature],
        weights: &EnsembleWeights,
    ) -> Result<CommunityEstimate> {
        let users = ids
            .into_iter()
            .map(|id| self.calibrated(id, temperatures))
            .collect::<Result<Vec<_>>>()?;
        estimate_community(&users, weights)
    }
}
