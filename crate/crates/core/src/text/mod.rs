//! Text channel: user description and recent tweets through an embedding
//! provider, classified by a trained head.

mod embed;

pub use embed::{
    provider_by_name, word_tokens, EmbeddingProvider, HashCharEmbedder, HashWordEmbedder, CHAR_PROVIDER,
    DEFAULT_DIM, WORD_PROVIDER,
};

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::UserRecord;
use crate::nn::{self, Mlp, MlpShape, Objective, TrainConfig};
use crate::types::{Label, LogitPair};

pub const MAX_TWEETS: usize = 20;
pub const MAX_TWEET_CHARS: usize = 512;

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(MAX_TWEET_CHARS) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

fn checked_embed(provider: &dyn EmbeddingProvider, text: &str) -> Result<Vec<f64>> {
    let v = provider.embed(text);
    if v.len() != provider.dim() {
        return Err(Error::dim(provider.dim(), v.len()));
    }
    Ok(v)
}

/// `mean(embed(tweet) for the 20 most recent tweets) ++ embed(description)`,
/// with zero vectors standing in for missing tweets or description.
pub fn encode_user(provider: &dyn EmbeddingProvider, u: &UserRecord) -> Result<Vec<f64>> {
    let dim = provider.dim();
    let mut out = vec![0.0; 2 * dim];
    let recent = &u.tweets[..u.tweets.len().min(MAX_TWEETS)];
    if !recent.is_empty() {
        for t in recent {
            let e = checked_embed(provider, truncate(t))?;
            for (o, v) in out[..dim].iter_mut().zip(e) {
                *o += v;
            }
        }
        let n = recent.len() as f64;
        out[..dim].iter_mut().for_each(|o| *o /= n);
    }
    if !u.description.is_empty() {
        out[dim..].copy_from_slice(&checked_embed(provider, &u.description)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextHeadConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2: f64,
    pub use_hidden: bool,
    pub hidden_dim: usize,
    pub dropout: f64,
}

impl Default for TextHeadConfig {
    fn default() -> Self {
        TextHeadConfig {
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

/// Classifier over a `2 * dim` user encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextHead {
    pub net: Mlp,
}

impl TextHead {
    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }
}

/// Returns the trained head and the full-data loss after each epoch.
pub fn train_text_head(
    encoded: &ArrayView2<f64>,
    y: &[Label],
    config: &TextHeadConfig,
    seed: u64,
) -> Result<(TextHead, Vec<f64>)> {
    if encoded.nrows() != y.len() {
        return Err(Error::dim(encoded.nrows(), y.len()));
    }
    if y.is_empty() || y.iter().all(|l| *l == y[0]) {
        return Err(Error::SingleClass);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = MlpShape {
        input: encoded.ncols(),
        hidden: config.use_hidden.then_some(config.hidden_dim),
        dropout: config.dropout,
    };
    let mut net = Mlp::new(shape, &mut rng);
    let train = TrainConfig {
        lr: config.lr,
        batch_size: config.batch_size,
        epochs: config.epochs,
        l2: config.l2,
        seed,
    };
    let history = nn::train_mlp(&mut net, encoded, &Objective::CrossEntropy { labels: y }, &train)?;
    Ok((TextHead { net }, history))
}

pub fn predict_text(head: &TextHead, encoded: &[f64]) -> Result<LogitPair> {
    head.net.predict(encoded)
}

/// Stacks per-user encodings into a matrix.
pub fn encode_all<'a>(provider: &dyn EmbeddingProvider, users: impl IntoIterator<Item = &'a UserRecord>) -> Result<Array2<f64>> {
    let rows = users
        .into_iter()
        .map(|u| encode_user(provider, u))
        .collect::<Result<Vec<_>>>()?;
    let width = 2 * provider.dim();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((flat.len() / width, width), flat).map_err(|e| Error::InvariantViolation(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;
    use chrono::{TimeZone, Utc};
    use ndarray::{arr1, Array2};

    fn user() -> UserRecord {
        let t = Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap();
        UserRecord::new("u", t, t)
    }

    #[test]
    fn empty_user_encodes_to_zeros() {
        let p = HashWordEmbedder::new(16);
        assert_eq!(encode_user(&p, &user()).unwrap(), vec![0.0; 32]);
    }

    #[test]
    fn tweet_part_is_mean_of_embeddings() {
        let p = HashWordEmbedder::new(16);
        let mut u = user();
        u.tweets = vec!["hello world".into()];
        let one = encode_user(&p, &u).unwrap();
        assert_eq!(&one[..16], p.embed("hello world").as_slice());
        u.tweets.push("buy now".into());
        let two = encode_user(&p, &u).unwrap();
        let (e1, e2) = (p.embed("hello world"), p.embed("buy now"));
        for i in 0..16 {
            assert_eq!(two[i], (e1[i] + e2[i]) / 2.0);
        }
        u.description = "a bio".into();
        assert_eq!(&encode_user(&p, &u).unwrap()[16..], p.embed("a bio").as_slice());
    }

    #[test]
    fn only_twenty_most_recent_tweets_count() {
        let p = HashWordEmbedder::new(16);
        let mut u = user();
        u.tweets = (0..20).map(|i| format!("tweet {i}")).collect();
        let base = encode_user(&p, &u).unwrap();
        u.tweets.push("an older tweet".into());
        assert_eq!(encode_user(&p, &u).unwrap(), base);
    }

    #[test]
    fn tweets_are_truncated() {
        let long: String = "ab ".repeat(400);
        assert_eq!(truncate(&long).chars().count(), MAX_TWEET_CHARS);
        assert_eq!(truncate("short"), "short");
    }

    #[test]
    fn provider_dimension_is_checked() {
        struct Liar;
        impl EmbeddingProvider for Liar {
            fn name(&self) -> &str {
                "liar"
            }
            fn dim(&self) -> usize {
                4
            }
            fn embed(&self, _: &str) -> Vec<f64> {
                vec![0.0; 3]
            }
        }
        let mut u = user();
        u.description = "x".into();
        assert!(matches!(encode_user(&Liar, &u), Err(Error::Dimension { .. })));
    }

    fn head(w: Array2<f64>, b: [f64; 2]) -> TextHead {
        TextHead {
            net: Mlp {
                hidden: None,
                out: Dense { w, b: arr1(&b) },
                dropout: 0.0,
            },
        }
    }

    #[test]
    fn prediction_examples() {
        let h = head(Array2::zeros((3, 2)), [0.0, 0.0]);
        assert_eq!(predict_text(&h, &[1.0, 2.0, 3.0]).unwrap().softmax().0, [0.5, 0.5]);
        let h = head(Array2::zeros((3, 2)), [0.0, 3.0]);
        let bot = predict_text(&h, &[1.0, 2.0, 3.0]).unwrap().softmax().bot();
        let oracle = 3f64.exp() / (1.0 + 3f64.exp());
        assert!((bot - 0.9526).abs() < 1e-4 && (bot - oracle).abs() < 1e-15);
        assert!(matches!(predict_text(&h, &[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn prediction_is_linear_in_input() {
        let w = Array2::from_shape_vec((2, 2), vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let h = head(w, [0.0, 0.0]);
        let a = predict_text(&h, &[1.0, 3.0]).unwrap().0;
        let b = predict_text(&h, &[2.0, 6.0]).unwrap().0;
        assert_eq!([2.0 * a[0], 2.0 * a[1]], b);
    }

    #[test]
    fn zero_inputs_learn_the_prior() {
        let x = Array2::zeros((10, 4));
        let y: Vec<Label> = (0..10).map(|i| if i < 7 { Label::Bot } else { Label::Human }).collect();
        let cfg = TextHeadConfig {
            lr: 0.05,
            epochs: 200,
            batch_size: 10,
            ..TextHeadConfig::default()
        };
        let (h, _) = train_text_head(&x.view(), &y, &cfg, 0).unwrap();
        assert!(h.net.out.w.iter().all(|&v| v == 0.0));
        let p = predict_text(&h, &[0.0; 4]).unwrap().softmax();
        assert!((p.bot() - 0.7).abs() < 0.02, "{p:?}");
    }

    #[test]
    fn single_class_rejected() {
        let x = Array2::zeros((3, 4));
        assert!(matches!(
            train_text_head(&x.view(), &[Label::Bot; 3], &TextHeadConfig::default(), 0),
            Err(Error::SingleClass)
        ));
    }
}
