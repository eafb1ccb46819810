//! User stores, edge lists, and the file formats they travel in.
//!
//! Users are JSON lines (one object per line, RFC 3339 timestamps), edges are
//! a CSV with a `source_id,target_id,relation` header, and labels may be
//! inline or come from a separate `id,label` CSV.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub snapshot_at: DateTime<Utc>,
    pub status_count: u64,
    pub follower_count: u64,
    pub friend_count: u64,
    pub favorite_count: u64,
    pub listed_count: u64,
    pub default_profile: bool,
    pub profile_use_background_image: bool,
    pub verified: bool,
    pub protected: bool,
    pub has_location: bool,
    pub screen_name: String,
    pub username: String,
    pub description: String,
    /// Most recent first.
    pub tweets: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

impl UserRecord {
    /// A record with every optional field at its default.
    pub fn new(id: impl Into<String>, created_at: DateTime<Utc>, snapshot_at: DateTime<Utc>) -> Self {
        UserRecord {
            id: id.into(),
            created_at,
            snapshot_at,
            status_count: 0,
            follower_count: 0,
            friend_count: 0,
            favorite_count: 0,
            listed_count: 0,
            default_profile: false,
            profile_use_background_image: false,
            verified: false,
            protected: false,
            has_location: false,
            screen_name: String::new(),
            username: String::new(),
            description: String::new(),
            tweets: Vec::new(),
            label: None,
        }
    }

    /// Account age at snapshot time, in days.
    pub fn age_days(&self) -> f64 {
        (self.snapshot_at - self.created_at).num_milliseconds() as f64 / 86_400_000.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::MissingField("id"));
        }
        if self.snapshot_at < self.created_at {
            return Err(Error::InvariantViolation(format!(
                "user `{}` has snapshot_at before created_at",
                self.id
            )));
        }
        Ok(())
    }
}

/// Wire form: every field optional so that absence and defaulting are explicit.
#[derive(Deserialize)]
struct RawUser {
    id: Option<String>,
    created_at: Option<String>,
    snapshot_at: Option<String>,
    status_count: Option<i64>,
    follower_count: Option<i64>,
    friend_count: Option<i64>,
    favorite_count: Option<i64>,
    listed_count: Option<i64>,
    default_profile: Option<bool>,
    profile_use_background_image: Option<bool>,
    verified: Option<bool>,
    protected: Option<bool>,
    has_location: Option<bool>,
    screen_name: Option<String>,
    username: Option<String>,
    description: Option<String>,
    tweets: Option<Vec<String>>,
    label: Option<String>,
}

fn count(value: Option<i64>, field: &str) -> Result<u64> {
    match value {
        None => Ok(0),
        Some(v) if v < 0 => Err(Error::InvariantViolation(format!(
            "{field} must be non-negative, got {v}"
        ))),
        Some(v) => Ok(v as u64),
    }
}

fn timestamp(value: Option<String>, field: &'static str, line: usize) -> Result<DateTime<Utc>> {
    let raw = value.ok_or(Error::MissingField(field))?;
    DateTime::parse_from_rfc3339(&raw)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::Parse {
            line,
            message: format!("{field}: {e}"),
        })
}

/// Parses one line of a users file. `line_no` is only used for error reports.
pub fn parse_user_record(line: &str, line_no: usize) -> Result<UserRecord> {
    let raw: RawUser = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let id = raw.id.filter(|s| !s.is_empty()).ok_or(Error::MissingField("id"))?;
    let label = raw
        .label
        .map(|l| {
            l.parse::<Label>().map_err(|message| Error::Parse {
                line: line_no,
                message,
            })
        })
        .transpose()?;
    let record = UserRecord {
        created_at: timestamp(raw.created_at, "created_at", line_no)?,
        snapshot_at: timestamp(raw.snapshot_at, "snapshot_at", line_no)?,
        status_count: count(raw.status_count, "status_count")?,
        follower_count: count(raw.follower_count, "follower_count")?,
        friend_count: count(raw.friend_count, "friend_count")?,
        favorite_count: count(raw.favorite_count, "favorite_count")?,
        listed_count: count(raw.listed_count, "listed_count")?,
        default_profile: raw.default_profile.unwrap_or(false),
        profile_use_background_image: raw.profile_use_background_image.unwrap_or(false),
        verified: raw.verified.unwrap_or(false),
        protected: raw.protected.unwrap_or(false),
        has_location: raw.has_location.unwrap_or(false),
        screen_name: raw.screen_name.unwrap_or_default(),
        username: raw.username.unwrap_or_default(),
        description: raw.description.unwrap_or_default(),
        tweets: raw.tweets.unwrap_or_default(),
        label,
        id,
    };
    record.validate()?;
    Ok(record)
}

/// Id-keyed collection of users with the dataset each record came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UserStore {
    users: BTreeMap<String, UserRecord>,
    provenance: BTreeMap<String, String>,
}

impl UserStore {
    /// Builds a store from records of one source. Duplicate ids are rejected.
    pub fn from_records(source: &str, records: impl IntoIterator<Item = UserRecord>) -> Result<Self> {
        let mut store = UserStore::default();
        for r in records {
            r.validate()?;
            if store.users.contains_key(&r.id) {
                return Err(Error::InvariantViolation(format!("duplicate user id `{}`", r.id)));
            }
            store.provenance.insert(r.id.clone(), source.to_string());
            store.users.insert(r.id.clone(), r);
        }
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&UserRecord> {
        self.users.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.users.contains_key(id)
    }

    /// Users in ascending id order.
    pub fn users(&self) -> impl ExactSizeIterator<Item = &UserRecord> {
        self.users.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.users.keys().map(String::as_str)
    }

    pub fn provenance(&self, id: &str) -> Option<&str> {
        self.provenance.get(id).map(String::as_str)
    }

    pub fn labeled(&self) -> impl Iterator<Item = (&UserRecord, Label)> {
        self.users.values().filter_map(|u| u.label.map(|l| (u, l)))
    }

    /// Sets labels from an id → label map. Unknown ids are an error.
    pub fn apply_labels(&mut self, labels: &BTreeMap<String, Label>) -> Result<()> {
        for (id, label) in labels {
            let user = self
                .users
                .get_mut(id)
                .ok_or_else(|| Error::UnknownUser(id.clone()))?;
            user.label = Some(*label);
        }
        Ok(())
    }

    /// Sub-store restricted to `ids`, preserving provenance.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut out = UserStore::default();
        for id in ids {
            let user = self.users.get(id).ok_or_else(|| Error::UnknownUser(id.to_string()))?;
            out.users.insert(id.to_string(), user.clone());
            out.provenance
                .insert(id.to_string(), self.provenance[id].clone());
        }
        Ok(out)
    }

    fn map_users(&self, mut f: impl FnMut(&mut UserRecord)) -> Self {
        let mut out = self.clone();
        for u in out.users.values_mut() {
            f(u);
        }
        out
    }
}

/// Id-keyed union of `stores`; on collision the later store's record wins.
pub fn merge_datasets(stores: &[UserStore]) -> Result<UserStore> {
    if stores.is_empty() {
        return Err(Error::EmptyInput("merge_datasets needs at least one store"));
    }
    let mut merged = UserStore::default();
    for store in stores {
        for (id, user) in &store.users {
            merged.users.insert(id.clone(), user.clone());
            merged.provenance.insert(id.clone(), store.provenance[id].clone());
        }
    }
    Ok(merged)
}

/// Stratified, seeded split of the labeled users into (train, validation).
///
/// Each class contributes `round(n_class * val_fraction)` users to the
/// validation side. Unlabeled users are dropped from both sides.
pub fn split_train_val(store: &UserStore, val_fraction: f64, seed: u64) -> Result<(UserStore, UserStore)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::BadFraction(val_fraction));
    }
    let mut by_class: [Vec<&str>; 2] = [Vec::new(), Vec::new()];
    for (u, label) in store.labeled() {
        by_class[label.index()].push(u.id.as_str());
    }
    if by_class[0].len() + by_class[1].len() < 2 {
        return Err(Error::InsufficientData(
            "splitting needs at least two labeled users".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for ids in by_class.iter_mut() {
        ids.shuffle(&mut rng);
        let n_val = (ids.len() as f64 * val_fraction).round() as usize;
        val.extend_from_slice(&ids[..n_val]);
        train.extend_from_slice(&ids[n_val..]);
    }
    Ok((store.subset(train)?, store.subset(val)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifiedMode {
    AllTrue,
    AllFalse,
    Random,
}

impl VerifiedMode {
    pub const ALL: [VerifiedMode; 3] = [VerifiedMode::AllTrue, VerifiedMode::AllFalse, VerifiedMode::Random];

    pub fn name(self) -> &'static str {
        match self {
            VerifiedMode::AllTrue => "all_true",
            VerifiedMode::AllFalse => "all_false",
            VerifiedMode::Random => "random",
        }
    }
}

/// Copy of `store` with only the `verified` flag rewritten.
pub fn apply_verified_perturbation(store: &UserStore, mode: VerifiedMode, seed: u64) -> UserStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    store.map_users(|u| {
        u.verified = match mode {
            VerifiedMode::AllTrue => true,
            VerifiedMode::AllFalse => false,
            VerifiedMode::Random => rng.random_bool(0.5),
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Follows,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub source_id: String,
    pub target_id: String,
    pub relation: Relation,
}

/// Directed follow edges without self-loops or duplicate triples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EdgeList {
    edges: Vec<Edge>,
}

impl EdgeList {
    /// Drops repeated triples (first occurrence kept); self-loops are an error.
    pub fn new(edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for e in edges {
            if e.source_id == e.target_id {
                return Err(Error::InvariantViolation(format!(
                    "self-loop on `{}`",
                    e.source_id
                )));
            }
            if seen.insert(e.clone()) {
                out.push(e);
            }
        }
        Ok(EdgeList { edges: out })
    }

    pub fn follows(pairs: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        Self::new(pairs.into_iter().map(|(s, t)| Edge {
            source_id: s,
            target_id: t,
            relation: Relation::Follows,
        }))
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Edges whose endpoints both lie in `store`.
    pub fn restrict_to(&self, store: &UserStore) -> EdgeList {
        EdgeList {
            edges: self
                .edges
                .iter()
                .filter(|e| store.contains(&e.source_id) && store.contains(&e.target_id))
                .cloned()
                .collect(),
        }
    }
}

pub fn read_users(path: &Path) -> Result<Vec<UserRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_user_record(&line, i + 1)?);
    }
    Ok(out)
}

/// Reads a users file into a store whose provenance is the file stem.
pub fn read_user_store(path: &Path) -> Result<UserStore> {
    let source = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "users".into());
    UserStore::from_records(&source, read_users(path)?)
}

pub fn write_users<'a>(path: &Path, users: impl IntoIterator<Item = &'a UserRecord>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for u in users {
        serde_json::to_writer(&mut w, u)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_edges(path: &Path) -> Result<EdgeList> {
    let mut reader = csv::Reader::from_path(path)?;
    let edges = reader
        .deserialize::<Edge>()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    EdgeList::new(edges)
}

pub fn write_edges(path: &Path, edges: &EdgeList) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for e in edges.edges() {
        w.serialize(e)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct LabelRow {
    id: String,
    label: Label,
}

pub fn read_labels(path: &Path) -> Result<BTreeMap<String, Label>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for row in reader.deserialize::<LabelRow>() {
        let row = row?;
        out.insert(row.id, row.label);
    }
    Ok(out)
}

pub fn write_labels(path: &Path, labels: &BTreeMap<String, Label>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (id, label) in labels {
        w.serialize(LabelRow {
            id: id.clone(),
            label: *label,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
