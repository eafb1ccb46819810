//! Synthetic labelled communities and proximity-based resampling.
//!
//! Humans and bots share one generator whose class-conditional parts are
//! pulled apart by the separation knob `delta`:
//!
//! * count fields are Gaussian in `log(1 + count)`, with class means
//!   `mu +/- s * delta / 2`;
//! * account age is Gaussian in days, bots younger;
//! * boolean flags are Bernoulli with class logits `b +/- s * delta / 2`;
//! * names, descriptions and tweets come from a bot-style or a human-style
//!   template pool; each item uses the owner's own style with probability
//!   `1 - exp(-delta) / 2`, so at `delta = 0` both classes draw from the
//!   same mixture.
//!
//! Follow edges pick a uniform source and, with probability `homophily`,
//! a target of the same class (otherwise of the other class).

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Edge, EdgeList, Relation, UserRecord, UserStore};
use crate::types::Label;

pub const SYNTH_SOURCE: &str = "synthetic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub bot_fraction: f64,
    pub seed: u64,
    pub delta: f64,
    pub homophily: f64,
    /// Average number of follow edges touching a user.
    pub mean_degree: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 1000,
            bot_fraction: 0.5,
            seed: 0,
            delta: 1.0,
            homophily: 0.8,
            mean_degree: 10.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users < 2 {
            return Err(Error::Config(format!("n_users must be at least 2, got {}", self.n_users)));
        }
        if !(0.0..=1.0).contains(&self.bot_fraction) {
            return Err(Error::Config(format!("bot_fraction {} outside [0, 1]", self.bot_fraction)));
        }
        if !(0.0..=1.0).contains(&self.homophily) {
            return Err(Error::Config(format!("homophily {} outside [0, 1]", self.homophily)));
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(Error::Config(format!("delta must be a non-negative number, got {}", self.delta)));
        }
        if !(self.mean_degree.is_finite() && self.mean_degree >= 0.0) {
            return Err(Error::Config(format!("mean_degree must be non-negative, got {}", self.mean_degree)));
        }
        Ok(())
    }

    pub fn n_bots(&self) -> usize {
        (self.n_users as f64 * self.bot_fraction).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCommunity {
    /// Records carry no labels; ground truth lives in `labels`.
    pub store: UserStore,
    pub edges: EdgeList,
    pub labels: BTreeMap<String, Label>,
}

const SNAPSHOT: (i32, u32, u32) = (2022, 6, 1);

/// (mean of log1p(count), sign of the bot shift)
const COUNT_FIELDS: [(f64, f64); 5] = [
    (8.0, 1.0),  // status_count
    (5.5, -1.0), // follower_count
    (5.5, 0.5),  // friend_count
    (7.0, -1.0), // favorite_count
    (2.0, -1.0), // listed_count
];

/// (base logit, sign of the bot shift)
const FLAG_FIELDS: [(f64, f64); 5] = [
    (-0.5, 1.5),  // default_profile
    (0.5, -1.0),  // profile_use_background_image
    (-2.0, -2.0), // verified
    (-2.5, -1.0), // protected
    (0.0, -1.5),  // has_location
];

const HUMAN_WORDS: &[&str] = &[
    "coffee", "morning", "weekend", "family", "garden", "music", "football", "reading", "travel", "dinner",
    "friends", "city", "rain", "sunset", "movie", "school", "work", "cooking", "hiking", "photo", "concert",
    "birthday", "walk", "dog", "cat", "book", "game", "lunch", "holiday", "beach", "train", "news", "art",
    "painting", "running", "tea", "museum", "market", "river", "mountain",
];
const HUMAN_FILLER: &[&str] = &[
    "just", "finally", "really", "loved", "today", "with", "the", "my", "this", "what", "a", "great", "so",
    "tired", "happy", "after", "long", "again", "thanks", "everyone",
];
const BOT_TEMPLATES: &[&str] = &[
    "Check out this amazing {w} deal now {url} #{tag}",
    "WIN a FREE {w}! Retweet and follow {url} #{tag} #{tag2}",
    "Breaking: {w} prices drop {n}% today {url}",
    "Follow back instantly! #{tag} #teamfollowback",
    "Earn ${n} a day from home with {w} {url}",
    "New {w} alert #{tag} {url} {url}",
    "Limited offer on {w} - only {n} left {url} #{tag}",
];
const BOT_WORDS: &[&str] = &[
    "crypto", "bitcoin", "giveaway", "promo", "airdrop", "followers", "likes", "deal", "coupon", "token",
    "bonus", "casino", "stream", "views",
];
const FIRST_NAMES: &[&str] = &[
    "Anna", "Ben", "Carla", "David", "Elena", "Farid", "Grace", "Hugo", "Iris", "Jonas", "Kemal", "Lena",
    "Marco", "Nadia", "Oscar", "Priya", "Quinn", "Rosa", "Sven", "Tara", "Umar", "Vera", "Wen", "Yusuf",
];
const LAST_NAMES: &[&str] = &[
    "Smith", "Garcia", "Muller", "Rossi", "Kowalski", "Tanaka", "Okafor", "Silva", "Novak", "Haddad",
    "Larsen", "Moreau", "Ivanova", "Chen", "Fischer", "Costa",
];

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

struct UserGen<'a> {
    rng: &'a mut ChaCha8Rng,
    own_style: f64,
}

impl UserGen<'_> {
    /// Whether the next text item is drawn bot-style.
    fn bot_style(&mut self, is_bot: bool) -> bool {
        let own = self.rng.random_bool(self.own_style);
        own == is_bot
    }

    fn pick(&mut self, pool: &[&'static str]) -> &'static str {
        pool.choose(self.rng).expect("non-empty pool")
    }

    fn digits(&mut self, lo: usize, hi: usize) -> String {
        let n = self.rng.random_range(lo..=hi);
        (0..n).map(|_| char::from(b'0' + self.rng.random_range(0..10u8))).collect()
    }

    fn human_sentence(&mut self) -> String {
        let len = self.rng.random_range(4..12);
        let mut words: Vec<String> = Vec::with_capacity(len);
        for k in 0..len {
            let w = if self.rng.random_bool(0.5) {
                self.pick(HUMAN_WORDS)
            } else {
                self.pick(HUMAN_FILLER)
            };
            words.push(if k == 0 {
                let mut c = w.chars();
                c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
            } else {
                w.to_string()
            });
        }
        if self.rng.random_bool(0.1) {
            words.push(format!("#{}", self.pick(HUMAN_WORDS)));
        }
        words.join(" ")
    }

    fn bot_sentence(&mut self) -> String {
        let template = self.pick(BOT_TEMPLATES);
        let mut out = template.to_string();
        for (slot, pool) in [("{w}", BOT_WORDS), ("{tag}", BOT_WORDS), ("{tag2}", BOT_WORDS)] {
            while out.contains(slot) {
                let w = self.pick(pool);
                out = out.replacen(slot, w, 1);
            }
        }
        while out.contains("{url}") {
            let url = format!("https://t.co/{}", self.digits(6, 8));
            out = out.replacen("{url}", &url, 1);
        }
        while out.contains("{n}") {
            let n = self.rng.random_range(2..99).to_string();
            out = out.replacen("{n}", &n, 1);
        }
        out
    }

    fn names(&mut self, bot_style: bool) -> (String, String) {
        if bot_style {
            let w = self.pick(BOT_WORDS);
            let screen = if self.rng.random_bool(0.3) {
                format!("{w}_bot{}", self.digits(2, 5))
            } else {
                format!("{w}{}", self.digits(4, 8))
            };
            let display = if self.rng.random_bool(0.5) {
                screen.to_uppercase()
            } else {
                format!("{} {}", w.to_uppercase(), self.digits(1, 4))
            };
            (screen, display)
        } else {
            let first = self.pick(FIRST_NAMES);
            let last = self.pick(LAST_NAMES);
            let screen = format!("{}{}{}", first.to_lowercase(), last.to_lowercase(), self.digits(0, 2));
            (screen, format!("{first} {last}"))
        }
    }

    fn description(&mut self, bot_style: bool) -> String {
        if bot_style {
            let w = self.pick(BOT_WORDS);
            format!("Official {w} updates 24/7 | DM for promo https://t.co/{}", self.digits(6, 8))
        } else if self.rng.random_bool(0.2) {
            String::new()
        } else {
            let a = self.pick(HUMAN_WORDS);
            let b = self.pick(HUMAN_WORDS);
            format!("{a} lover, {b} enthusiast")
        }
    }
}

/// Draws one labelled community from `cfg`.
pub fn generate_community(cfg: &SynthConfig) -> Result<SynthCommunity> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_users;
    let n_bots = cfg.n_bots();
    let mut is_bot: Vec<bool> = (0..n).map(|i| i < n_bots).collect();
    is_bot.shuffle(&mut rng);

    let (y, m, d) = SNAPSHOT;
    let snapshot: DateTime<Utc> = Utc.with_ymd_and_hms(y, m, d, 0, 0, 0).single().expect("valid date");
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let width = n.saturating_sub(1).to_string().len();
    let ids: Vec<String> = (0..n).map(|i| format!("u{i:0width$}")).collect();
    let own_style = 1.0 - (-cfg.delta).exp() / 2.0;
    let half = cfg.delta / 2.0;

    let mut users = Vec::with_capacity(n);
    let mut labels = BTreeMap::new();
    for (i, &bot) in is_bot.iter().enumerate() {
        let sign = if bot { 1.0 } else { -1.0 };
        let mut counts = [0u64; 5];
        for (c, (mu, s)) in counts.iter_mut().zip(COUNT_FIELDS) {
            let v: f64 = mu + sign * s * half + unit.sample(&mut rng);
            *c = (v.exp() - 1.0).round().max(0.0) as u64;
        }
        let age_days = (2500.0 - sign * 400.0 * half + 900.0 * unit.sample(&mut rng)).clamp(1.0, 6000.0);
        let mut flags = [false; 5];
        for (f, (b, s)) in flags.iter_mut().zip(FLAG_FIELDS) {
            *f = rng.random_bool(sigmoid(b + sign * s * half));
        }
        let created = snapshot - Duration::seconds((age_days * 86_400.0) as i64);
        let mut u = UserRecord::new(ids[i].clone(), created, snapshot);
        [u.status_count, u.follower_count, u.friend_count, u.favorite_count, u.listed_count] = counts;
        [u.default_profile, u.profile_use_background_image, u.verified, u.protected, u.has_location] = flags;

        let mut g = UserGen {
            rng: &mut rng,
            own_style,
        };
        let style = g.bot_style(bot);
        (u.screen_name, u.username) = g.names(style);
        let style = g.bot_style(bot);
        u.description = g.description(style);
        let n_tweets = g.rng.random_range(5..=20);
        u.tweets = (0..n_tweets)
            .map(|_| if g.bot_style(bot) { g.bot_sentence() } else { g.human_sentence() })
            .collect();
        labels.insert(u.id.clone(), if bot { Label::Bot } else { Label::Human });
        users.push(u);
    }

    let edges = draw_edges(cfg, &is_bot, &ids, &mut rng)?;
    Ok(SynthCommunity {
        store: UserStore::from_records(SYNTH_SOURCE, users)?,
        edges,
        labels,
    })
}

fn draw_edges(cfg: &SynthConfig, is_bot: &[bool], ids: &[String], rng: &mut ChaCha8Rng) -> Result<EdgeList> {
    let n = is_bot.len();
    let by_class: [Vec<usize>; 2] = [
        (0..n).filter(|&i| !is_bot[i]).collect(),
        (0..n).filter(|&i| is_bot[i]).collect(),
    ];
    let target = (n as f64 * cfg.mean_degree / 2.0).round() as usize;
    let mut seen = BTreeSet::new();
    let mut attempts = 0usize;
    while seen.len() < target && attempts < 20 * target + 100 {
        attempts += 1;
        let s = rng.random_range(0..n);
        let own = usize::from(is_bot[s]);
        let same = rng.random_bool(cfg.homophily);
        let pool = &by_class[if same { own } else { 1 - own }];
        let Some(&t) = pool.choose(rng) else { continue };
        if t != s {
            seen.insert((s, t));
        }
    }
    EdgeList::new(seen.into_iter().map(|(s, t)| Edge {
        source_id: ids[s].clone(),
        target_id: ids[t].clone(),
        relation: Relation::Follows,
    }))
}

/// One accepted user: `via` is the already-visited node it was reached
/// from, or `None` when it started a breadth-first search.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub id: String,
    pub via: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    pub store: UserStore,
    pub edges: EdgeList,
    pub labels: BTreeMap<String, Label>,
    /// Accepted users in acceptance order.
    pub trace: Vec<TraceStep>,
}

impl Resampled {
    pub fn bot_fraction(&self) -> f64 {
        self.labels.values().filter(|l| l.is_bot()).count() as f64 / self.labels.len().max(1) as f64
    }
}

/// Grows a community of `size` users from a seeded start node by
/// breadth-first search over the undirected follow graph, accepting each
/// visited user while its class quota (`round(size * target_fraction)`
/// bots, the rest humans) is open. When a component is exhausted the search
/// restarts from a random unvisited user.
pub fn resample_by_proximity(
    store: &UserStore,
    edges: &EdgeList,
    labels: &BTreeMap<String, Label>,
    target_fraction: f64,
    size: usize,
    seed: u64,
) -> Result<Resampled> {
    if !(0.0..=1.0).contains(&target_fraction) {
        return Err(Error::BadFraction(target_fraction));
    }
    let ids: Vec<&str> = store.ids().filter(|id| labels.contains_key(*id)).collect();
    let want_bots = (size as f64 * target_fraction).round() as usize;
    let mut quota = [size - want_bots.min(size), want_bots.min(size)];
    let have_bots = ids.iter().filter(|id| labels[**id].is_bot()).count();
    let have = [ids.len() - have_bots, have_bots];
    if have[0] < quota[0] || have[1] < quota[1] {
        return Err(Error::InfeasibleTarget(format!(
            "need {} humans and {} bots, pool has {} and {}",
            quota[0], quota[1], have[0], have[1]
        )));
    }
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut adj = vec![Vec::new(); ids.len()];
    for e in edges.edges() {
        if let (Some(&s), Some(&t)) = (index.get(e.source_id.as_str()), index.get(e.target_id.as_str())) {
            adj[s].push(t);
            adj[t].push(s);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    let class: Vec<usize> = ids.iter().map(|id| labels[*id].index()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts: Vec<usize> = (0..ids.len()).collect();
    starts.shuffle(&mut rng);
    let mut starts = starts.into_iter();
    let mut visited = vec![false; ids.len()];
    let mut queue: VecDeque<(usize, Option<usize>)> = VecDeque::new();
    let mut trace = Vec::with_capacity(size);
    while quota[0] + quota[1] > 0 {
        let Some((v, via)) = queue.pop_front() else {
            let Some(s) = starts.find(|&s| !visited[s]) else {
                break;
            };
            visited[s] = true;
            queue.push_back((s, None));
            continue;
        };
        if quota[class[v]] > 0 {
            quota[class[v]] -= 1;
            trace.push(TraceStep {
                id: ids[v].to_string(),
                via: via.map(|p| ids[p].to_string()),
            });
        }
        let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
        next.shuffle(&mut rng);
        for w in next {
            visited[w] = true;
            queue.push_back((w, Some(v)));
        }
    }
    let chosen: Vec<&str> = trace.iter().map(|t| t.id.as_str()).collect();
    let sub = store.subset(chosen.iter().copied())?;
    let sub_labels = chosen.iter().map(|id| (id.to_string(), labels[*id])).collect();
    Ok(Resampled {
        edges: edges.restrict_to(&sub),
        store: sub,
        labels: sub_labels,
        trace,
    })
}
