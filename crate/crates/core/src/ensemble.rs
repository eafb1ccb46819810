//! Weighted combination of calibrated sub-model probabilities and the
//! community-level bot-fraction estimate.
//!
//! Sub-models are addressed by string keys of the form `channel/name`
//! (for example `feature/forest` or `graph/mean_relational-0`).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{argmax2, Label, ProbPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Feature,
    Text,
    Graph,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::Feature => "feature",
            Channel::Text => "text",
            Channel::Graph => "graph",
        }
    }

    /// Channel of a `channel/name` key.
    pub fn of_key(key: &str) -> Option<Channel> {
        match key.split('/').next()? {
            "feature" => Some(Channel::Feature),
            "text" => Some(Channel::Text),
            "graph" => Some(Channel::Graph),
            _ => None,
        }
    }
}

pub fn sub_model_key(channel: Channel, name: &str) -> String {
    format!("{}/{name}", channel.name())
}

/// Combination weights, one per sub-model key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EnsembleWeights {
    pub alpha: BTreeMap<String, f64>,
}

impl EnsembleWeights {
    pub fn new(alpha: BTreeMap<String, f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::EmptyInput("ensemble weights"));
        }
        if let Some((k, v)) = alpha.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvariantViolation(format!("weight for {k} is {v}")));
        }
        Ok(EnsembleWeights { alpha })
    }

    pub fn uniform<'a>(keys: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let keys: Vec<&str> = keys.into_iter().collect();
        let w = 1.0 / keys.len().max(1) as f64;
        Self::new(keys.into_iter().map(|k| (k.to_string(), w)).collect())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.alpha.keys().map(String::as_str)
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.alpha.get(key).copied()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        EnsembleWeights {
            alpha: self.alpha.iter().map(|(k, v)| (k.clone(), v * factor)).collect(),
        }
    }
}

/// `sum_k alpha_k * p_k`, not renormalised.
pub fn weighted_sum(probs: &BTreeMap<String, ProbPair>, w: &EnsembleWeights) -> Result<[f64; 2]> {
    if probs.len() != w.alpha.len() || probs.keys().zip(w.alpha.keys()).any(|(a, b)| a != b) {
        let missing: Vec<&str> = w
            .keys()
            .filter(|k| !probs.contains_key(*k))
            .chain(probs.keys().map(String::as_str).filter(|k| !w.alpha.contains_key(*k)))
            .collect();
        return Err(Error::KeyMismatch(missing.join(", ")));
    }
    let mut q = [0.0; 2];
    for (p, a) in probs.values().zip(w.alpha.values()) {
        q[0] += a * p.0[0];
        q[1] += a * p.0[1];
    }
    Ok(q)
}

/// Argmax of the weighted sum; an exact tie goes to human.
pub fn classify_user(probs: &BTreeMap<String, ProbPair>, w: &EnsembleWeights) -> Result<Label> {
    Ok(argmax2(weighted_sum(probs, w)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityEstimate {
    pub p_hat: f64,
    pub n_users: usize,
    pub n_bots_predicted: usize,
    /// Mean calibrated bot probability of each sub-model.
    pub mean_bot_prob: BTreeMap<String, f64>,
}

pub fn estimate_community(users: &[BTreeMap<String, ProbPair>], w: &EnsembleWeights) -> Result<CommunityEstimate> {
    if users.is_empty() {
        return Err(Error::EmptyCommunity);
    }
    let mut bots = 0usize;
    let mut sums: BTreeMap<String, f64> = w.keys().map(|k| (k.to_string(), 0.0)).collect();
    for probs in users {
        if classify_user(probs, w)?.is_bot() {
            bots += 1;
        }
        for (k, p) in probs {
            *sums.get_mut(k).expect("keys checked") += p.bot();
        }
    }
    let n = users.len();
    Ok(CommunityEstimate {
        p_hat: bots as f64 / n as f64,
        n_users: n,
        n_bots_predicted: bots,
        mean_bot_prob: sums.into_iter().map(|(k, s)| (k, s / n as f64)).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitWeightsConfig {
    pub max_steps: usize,
    /// First trial step of the backtracking line search.
    pub initial_step: f64,
    /// Sufficient-decrease constant of the Armijo condition.
    pub armijo: f64,
    /// Stop once the gradient norm drops below this.
    pub grad_tol: f64,
}

impl Default for FitWeightsConfig {
    fn default() -> Self {
        FitWeightsConfig {
            max_steps: 300,
            initial_step: 1.0,
            armijo: 1e-4,
            grad_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightFit {
    pub weights: EnsembleWeights,
    /// Validation NLL at the initial weights and after every accepted step.
    pub nll_history: Vec<f64>,
}

/// Mean NLL of the renormalised weighted sum; infinite where the combined
/// vector has a non-positive component.
pub fn combined_nll(p: &[Vec<ProbPair>], y: &[Label], alpha: &[f64]) -> f64 {
    let total: f64 = alpha.iter().sum();
    if total <= 0.0 {
        return f64::INFINITY;
    }
    let mut nll = 0.0;
    for (i, yi) in y.iter().enumerate() {
        let mut q = [0.0; 2];
        for (pk, a) in p.iter().zip(alpha) {
            q[0] += a * pk[i].0[0];
            q[1] += a * pk[i].0[1];
        }
        if q[0] <= 0.0 || q[1] <= 0.0 {
            return f64::INFINITY;
        }
        nll -= (q[yi.index()] / total).ln();
    }
    nll / y.len() as f64
}

fn nll_grad(p: &[Vec<ProbPair>], y: &[Label], alpha: &[f64]) -> Vec<f64> {
    let total: f64 = alpha.iter().sum();
    let mut g = vec![0.0; alpha.len()];
    for (i, yi) in y.iter().enumerate() {
        let c = yi.index();
        let q: f64 = p.iter().zip(alpha).map(|(pk, a)| a * pk[i].0[c]).sum();
        for (k, pk) in p.iter().enumerate() {
            g[k] += 1.0 / total - pk[i].0[c] / q;
        }
    }
    let n = y.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    g
}

/// Fits `alpha` by gradient descent on validation NLL, starting from
/// `1/K`. Each step backtracks until the Armijo condition holds, so the
/// recorded NLL never increases.
///
/// `p[k][i]` is sub-model `keys[k]`'s calibrated probability for user `i`.
pub fn fit_weights(keys: &[String], p: &[Vec<ProbPair>], y: &[Label], cfg: &FitWeightsConfig) -> Result<WeightFit> {
    if keys.is_empty() {
        return Err(Error::EmptyInput("sub-models"));
    }
    if p.len() != keys.len() {
        return Err(Error::dim(keys.len(), p.len()));
    }
    if let Some(bad) = p.iter().find(|pk| pk.len() != y.len()) {
        return Err(Error::dim(y.len(), bad.len()));
    }
    if y.is_empty() || y.iter().all(|l| *l == y[0]) {
        return Err(Error::SingleClass);
    }
    let k = keys.len();
    let mut alpha = vec![1.0 / k as f64; k];
    let mut f = combined_nll(p, y, &alpha);
    let mut history = vec![f];
    let mut step = cfg.initial_step;
    for _ in 0..cfg.max_steps {
        if !f.is_finite() {
            break;
        }
        let g = nll_grad(p, y, &alpha);
        let g2: f64 = g.iter().map(|v| v * v).sum();
        if g2.sqrt() < cfg.grad_tol {
            break;
        }
        let mut accepted = None;
        let mut t = step;
        for _ in 0..60 {
            let trial: Vec<f64> = alpha.iter().zip(&g).map(|(a, gi)| a - t * gi).collect();
            let ft = combined_nll(p, y, &trial);
            if ft <= f - cfg.armijo * t * g2 {
                accepted = Some((trial, ft));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, ft)) => {
                alpha = trial;
                f = ft;
                history.push(f);
                step = t * 2.0;
            }
            None => break,
        }
    }
    let weights = EnsembleWeights::new(keys.iter().cloned().zip(alpha).collect())?;
    Ok(WeightFit {
        weights,
        nll_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(entries: &[(&str, f64)]) -> BTreeMap<String, ProbPair> {
        entries.iter().map(|(k, b)| (k.to_string(), ProbPair::new(1.0 - b, *b))).collect()
    }

    fn weights(entries: &[(&str, f64)]) -> EnsembleWeights {
        EnsembleWeights::new(entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()).unwrap()
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_user(&probs(&[("a", 0.9)]), &weights(&[("a", 1.0)])).unwrap(), Label::Bot);
        let tie = probs(&[("a", 0.1), ("b", 0.9)]);
        assert_eq!(classify_user(&tie, &weights(&[("a", 0.5), ("b", 0.5)])).unwrap(), Label::Human);
        assert!(matches!(
            classify_user(&tie, &weights(&[("a", 0.5), ("c", 0.5)])),
            Err(Error::KeyMismatch(_))
        ));
    }

    #[test]
    fn estimate_examples() {
        let w = weights(&[("a", 1.0)]);
        let users: Vec<_> = (0..10).map(|i| probs(&[("a", if i < 3 { 0.8 } else { 0.2 })])).collect();
        let est = estimate_community(&users, &w).unwrap();
        assert_eq!((est.n_users, est.n_bots_predicted), (10, 3));
        assert!((est.p_hat - 0.3).abs() < 1e-15);
        assert!((est.mean_bot_prob["a"] - 0.38).abs() < 1e-12);
        assert!(matches!(estimate_community(&[], &w), Err(Error::EmptyCommunity)));
    }

    #[test]
    fn perfect_model_dominates_uniform_one() {
        let y: Vec<Label> = (0..40).map(|i| Label::from_index(i % 3 % 2)).collect();
        let a: Vec<ProbPair> = y.iter().map(|l| if l.is_bot() { ProbPair::new(0.0, 1.0) } else { ProbPair::new(1.0, 0.0) }).collect();
        let b = vec![ProbPair::new(0.5, 0.5); 40];
        let keys = vec!["a".to_string(), "b".to_string()];
        let fit = fit_weights(&keys, &[a.clone(), b.clone()], &y, &FitWeightsConfig::default()).unwrap();
        assert!(fit.nll_history.windows(2).all(|w| w[1] <= w[0]));
        let correct = (0..40)
            .filter(|&i| {
                let m: BTreeMap<String, ProbPair> = [("a".to_string(), a[i]), ("b".to_string(), b[i])].into();
                classify_user(&m, &fit.weights).unwrap() == y[i]
            })
            .count();
        assert_eq!(correct, 40);
        assert!(fit.weights.alpha["a"] > fit.weights.alpha["b"]);
    }

    #[test]
    fn fit_rejects_single_class() {
        let keys = vec!["a".to_string()];
        let p = vec![vec![ProbPair::new(0.5, 0.5); 3]];
        assert!(matches!(
            fit_weights(&keys, &p, &[Label::Bot; 3], &FitWeightsConfig::default()),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn channel_of_key() {
        assert_eq!(Channel::of_key(&sub_model_key(Channel::Graph, "x-1")), Some(Channel::Graph));
        assert_eq!(Channel::of_key("other/x"), None);
    }
}
