//! Brute-force reference implementations.

use std::collections::BTreeMap;

use botcensus_core::{Label, ProbPair};

pub fn entropy_oracle(s: &str) -> f64 {
    let mut counts: BTreeMap<char, f64> = BTreeMap::new();
    for c in s.chars() {
        *counts.entry(c).or_insert(0.0) += 1.0;
    }
    let n: f64 = counts.values().sum();
    counts.values().map(|&c| -(c / n) * (c / n).ln() / std::f64::consts::LN_2).sum()
}

/// Plain recursion over prefixes, memoised on the full table.
pub fn levenshtein_oracle(a: &[char], b: &[char]) -> usize {
    fn go(a: &[char], b: &[char], memo: &mut BTreeMap<(usize, usize), usize>) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        if let Some(&v) = memo.get(&(a.len(), b.len())) {
            return v;
        }
        let (ra, rb) = (&a[..a.len() - 1], &b[..b.len() - 1]);
        let v = (go(ra, rb, memo) + usize::from(a[a.len() - 1] != b[b.len() - 1]))
            .min(go(ra, b, memo) + 1)
            .min(go(a, rb, memo) + 1);
        memo.insert((a.len(), b.len()), v);
        v
    }
    go(a, b, &mut BTreeMap::new())
}

pub fn ece_oracle(p: &[ProbPair], y: &[Label], bins: usize) -> f64 {
    let n = p.len() as f64;
    let mut total = 0.0;
    for b in 0..bins {
        let lo = b as f64 / bins as f64;
        let hi = (b + 1) as f64 / bins as f64;
        let members: Vec<usize> = (0..p.len())
            .filter(|&i| {
                let c = p[i].0[0].max(p[i].0[1]);
                c >= lo && (c < hi || b == bins - 1)
            })
            .collect();
        if members.is_empty() {
            continue;
        }
        let k = members.len() as f64;
        let acc = members.iter().filter(|&&i| p[i].argmax() == y[i]).count() as f64 / k;
        let conf = members.iter().map(|&i| p[i].0[0].max(p[i].0[1])).sum::<f64>() / k;
        total += k / n * (acc - conf).abs();
    }
    total
}

