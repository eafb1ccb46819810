use serde::{Deserialize, Serialize};

use super::check_training_set;
use crate::error::{Error, Result};
use crate::types::{Label, LogitPair};

/// Weighted error floor used when a stump classifies every sample correctly.
const MIN_ERROR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub rounds: usize,
    /// Restrict stumps to these feature indices; `None` searches all.
    pub features: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            rounds: 50,
            features: None,
            seed: 0,
        }
    }
}

/// Votes bot (+1) when `polarity * (x[feature] - threshold) > 0`, human (-1) otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub polarity: f64,
    pub weight: f64,
}

impl Stump {
    pub fn vote(&self, x: &[f64]) -> f64 {
        if self.polarity * (x[self.feature] - self.threshold) > 0.0 {
            1.0
        } else {
            -1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostModel {
    pub stumps: Vec<Stump>,
    pub n_features: usize,
    pub config: BoostConfig,
}

impl BoostModel {
    /// Stage-weighted vote; positive favours bot.
    pub fn score(&self, x: &[f64]) -> f64 {
        self.stumps.iter().map(|s| s.weight * s.vote(x)).sum()
    }

    /// Logits `(-F, F)`, so the bot probability is `sigmoid(2F)`.
    pub fn predict(&self, x: &[f64]) -> Result<LogitPair> {
        if x.len() != self.n_features {
            return Err(Error::dim(self.n_features, x.len()));
        }
        let f = self.score(x);
        Ok(LogitPair::new(-f, f))
    }
}

fn sign(l: Label) -> f64 {
    if l.is_bot() {
        1.0
    } else {
        -1.0
    }
}

/// Exhaustive weighted stump search. Candidate thresholds are one below the
/// minimum plus every midpoint; ties keep the lowest feature then threshold.
fn best_stump(x: &[Vec<f64>], y: &[Label], w: &[f64], features: &[usize]) -> (Stump, f64) {
    let total: f64 = w.iter().sum();
    let bot_total: f64 = w.iter().zip(y).filter(|(_, l)| l.is_bot()).map(|(w, _)| w).sum();
    let mut best: Option<(f64, Stump)> = None;
    let mut order: Vec<usize> = (0..x.len()).collect();
    for &f in features {
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
        // error of "bot when x > t" = bot weight at or below t + human weight above t
        let mut bot_left = 0.0;
        let mut human_left = 0.0;
        let consider = |t: f64, bot_left: f64, human_left: f64, best: &mut Option<(f64, Stump)>| {
            let err_pos = bot_left + (total - bot_total - human_left);
            let err_pos = err_pos / total;
            for (err, polarity) in [(err_pos, 1.0), (1.0 - err_pos, -1.0)] {
                if best.as_ref().is_none_or(|(e, _)| err < *e) {
                    *best = Some((
                        err,
                        Stump {
                            feature: f,
                            threshold: t,
                            polarity,
                            weight: 0.0,
                        },
                    ));
                }
            }
        };
        consider(x[order[0]][f] - 1.0, 0.0, 0.0, &mut best);
        for k in 0..order.len() - 1 {
            let i = order[k];
            if y[i].is_bot() {
                bot_left += w[i];
            } else {
                human_left += w[i];
            }
            let (v, next) = (x[i][f], x[order[k + 1]][f]);
            if v < next {
                consider(v + (next - v) / 2.0, bot_left, human_left, &mut best);
            }
        }
    }
    let (err, stump) = best.expect("at least one feature");
    (stump, err.max(0.0))
}

/// Discrete AdaBoost. Stops early once a stump's weighted error reaches 0.5
/// (the stump is kept only if it would be the first) or drops to zero (the
/// stump is kept with its weight computed at [`MIN_ERROR`]).
pub fn train_adaboost(x: &[Vec<f64>], y: &[Label], config: &BoostConfig) -> Result<BoostModel> {
    let d = check_training_set(x, y)?;
    let features: Vec<usize> = match &config.features {
        Some(f) if f.is_empty() => return Err(Error::Config("empty stump feature set".into())),
        Some(f) => {
            if let Some(&bad) = f.iter().find(|&&i| i >= d) {
                return Err(Error::dim(d, bad + 1));
            }
            let mut f = f.clone();
            f.sort_unstable();
            f.dedup();
            f
        }
        None => (0..d).collect(),
    };
    let rounds = config.rounds.max(1);
    let n = x.len();
    let mut w = vec![1.0 / n as f64; n];
    let mut stumps = Vec::new();
    for _ in 0..rounds {
        let (mut stump, err) = best_stump(x, y, &w, &features);
        if err >= 0.5 {
            if stumps.is_empty() {
                stumps.push(stump);
            }
            break;
        }
        let perfect = err <= 0.0;
        let e = err.max(MIN_ERROR);
        stump.weight = 0.5 * ((1.0 - e) / e).ln();
        for i in 0..n {
            w[i] *= (-stump.weight * sign(y[i]) * stump.vote(&x[i])).exp();
        }
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        stumps.push(stump);
        if perfect {
            break;
        }
    }
    Ok(BoostModel {
        stumps,
        n_features: d,
        config: config.clone(),
    })
}
