//! Two-way model outputs shared by every channel.
//!
//! Index 0 is the human class and index 1 the bot class throughout.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Human,
    Bot,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Human => 0,
            Label::Bot => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Label::Human
        } else {
            Label::Bot
        }
    }

    pub fn is_bot(self) -> bool {
        self == Label::Bot
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Human => "human",
            Label::Bot => "bot",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "human" | "0" => Ok(Label::Human),
            "bot" | "1" => Ok(Label::Bot),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

/// Raw (human, bot) scores before softmax.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitPair(pub [f64; 2]);

/// (human, bot) probabilities summing to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbPair(pub [f64; 2]);

impl LogitPair {
    pub fn new(human: f64, bot: f64) -> Self {
        LogitPair([human, bot])
    }

    pub fn softmax(self) -> ProbPair {
        ProbPair(softmax2(self.0))
    }

    pub fn argmax(self) -> Label {
        argmax2(self.0)
    }
}

impl ProbPair {
    pub fn new(human: f64, bot: f64) -> Self {
        ProbPair([human, bot])
    }

    pub fn bot(self) -> f64 {
        self.0[1]
    }

    pub fn human(self) -> f64 {
        self.0[0]
    }

    pub fn argmax(self) -> Label {
        argmax2(self.0)
    }

    pub fn confidence(self) -> f64 {
        self.0[0].max(self.0[1])
    }
}

/// Numerically stable two-way softmax.
pub fn softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let e0 = (z[0] - m).exp();
    let e1 = (z[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// log-softmax of a two-way logit vector.
pub fn log_softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
    [z[0] - lse, z[1] - lse]
}

/// Ties resolve to the human class.
pub fn argmax2(v: [f64; 2]) -> Label {
    if v[1] > v[0] {
        Label::Bot
    } else {
        Label::Human
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        assert_eq!(LogitPair::new(3.0, 3.0).softmax(), ProbPair::new(0.5, 0.5));
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let p = LogitPair::new(1000.0, 0.0).softmax();
        assert!((p.human() - 1.0).abs() < 1e-12 && p.bot() >= 0.0);
    }

    #[test]
    fn tie_goes_to_human() {
        assert_eq!(argmax2([0.5, 0.5]), Label::Human);
    }

    #[test]
    fn label_parsing() {
        assert_eq!("Bot".parse::<Label>().unwrap(), Label::Bot);
        assert_eq!("human".parse::<Label>().unwrap(), Label::Human);
        assert!("robot".parse::<Label>().is_err());
    }
}
