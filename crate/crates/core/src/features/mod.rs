//! Per-user feature vectors: 12 metadata features followed by 14 derived ones.

mod normalize;
mod strings;
mod unicode;

pub use normalize::{fit_normalizer, normalize, FeatureStats};
pub use strings::{
    bot_word_count, digit_count, hashtag_count, levenshtein, string_entropy, uppercase_count,
    url_count,
};
pub use unicode::{bucket_name, char_bucket, unicode_group, BUCKET_COUNT, UNICODE_BLOCKS};

use crate::ingest::UserRecord;

pub const FEATURE_COUNT: usize = 26;

/// Names in vector order.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "status_count",
    "follower_count",
    "friend_count",
    "favorite_count",
    "listed_count",
    "default_profile",
    "profile_use_background_image",
    "verified",
    "user_id",
    "protected",
    "has_location",
    "user_age",
    "name_digit_count",
    "tweet_frequency",
    "description_url_count",
    "bot_word_count",
    "username_entropy",
    "name_length",
    "followers_growth_rate",
    "friends_growth_rate",
    "hashtag_count",
    "follower_friend_ratio",
    "username_capital_count",
    "name_unicode_group",
    "description_sentiment",
    "name_distance",
];

pub const VERIFIED_INDEX: usize = 7;

/// Lower bound on account age in days for the rate features.
pub const MIN_AGE_DAYS: f64 = 1e-3;

pub type FeatureVector = [f64; FEATURE_COUNT];

/// Scores a description; the feature vector stores whatever this returns.
pub trait SentimentScorer: Send + Sync {
    fn score(&self, text: &str) -> f64;
}

/// Always neutral.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeutralSentiment;

impl SentimentScorer for NeutralSentiment {
    fn score(&self, _text: &str) -> f64 {
        0.0
    }
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Numeric ids map to their value, anything else to 0.
fn numeric_id(id: &str) -> f64 {
    if !id.is_empty() && id.bytes().all(|b| b.is_ascii_digit()) {
        id.parse::<f64>().unwrap_or(0.0)
    } else {
        0.0
    }
}

pub fn compute_features(u: &UserRecord) -> FeatureVector {
    compute_features_with(u, &NeutralSentiment)
}

pub fn compute_features_with(u: &UserRecord, sentiment: &dyn SentimentScorer) -> FeatureVector {
    let age = u.age_days().max(MIN_AGE_DAYS);
    let names = [u.screen_name.as_str(), u.username.as_str()];
    let sum_over = |f: fn(&str) -> usize, parts: &[&str]| parts.iter().map(|s| f(s)).sum::<usize>() as f64;
    let char_len = |s: &str| s.chars().count();
    let combined_names = format!("{}{}", u.screen_name, u.username);
    let sentiment = sentiment.score(&u.description);
    [
        u.status_count as f64,
        u.follower_count as f64,
        u.friend_count as f64,
        u.favorite_count as f64,
        u.listed_count as f64,
        flag(u.default_profile),
        flag(u.profile_use_background_image),
        flag(u.verified),
        numeric_id(&u.id),
        flag(u.protected),
        flag(u.has_location),
        age,
        sum_over(digit_count, &names),
        u.status_count as f64 / age,
        url_count(&u.description) as f64,
        sum_over(bot_word_count, &[&u.description, &u.screen_name, &u.username]),
        string_entropy(&u.username),
        (char_len(&u.screen_name) + char_len(&u.username) + char_len(&u.description)) as f64,
        u.follower_count as f64 / age,
        u.friend_count as f64 / age,
        sum_over(hashtag_count, &[&u.screen_name, &u.description]),
        u.follower_count as f64 / (u.friend_count.max(1)) as f64,
        uppercase_count(&u.username) as f64,
        unicode_group(&combined_names) as f64,
        if sentiment.is_finite() { sentiment } else { 0.0 },
        levenshtein(&u.username, &u.screen_name) as f64,
    ]
}
