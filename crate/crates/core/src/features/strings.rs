//! String statistics used by the derived features.

use std::collections::HashMap;

/// Shannon entropy (bits) of the character distribution of `s`.
pub fn string_entropy(s: &str) -> f64 {
    let mut counts: HashMap<char, usize> = HashMap::new();
    let mut n = 0usize;
    for c in s.chars() {
        *counts.entry(c).or_default() += 1;
        n += 1;
    }
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    let mut counts: Vec<usize> = counts.into_values().collect();
    // summation order fixed so that equal multisets give bit-equal results
    counts.sort_unstable();
    -counts
        .into_iter()
        .map(|c| {
            let p = c as f64 / n;
            p * p.log2()
        })
        .sum::<f64>()
        + 0.0
}

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn digit_count(s: &str) -> usize {
    s.chars().filter(|c| c.is_numeric()).count()
}

pub fn uppercase_count(s: &str) -> usize {
    s.chars().filter(|c| c.is_uppercase()).count()
}

/// Case-insensitive, possibly overlapping occurrences of "bot".
pub fn bot_word_count(s: &str) -> usize {
    let lower = s.to_lowercase();
    lower.match_indices("bot").count()
}

/// Tokens starting with `http://` or `https://`.
pub fn url_count(s: &str) -> usize {
    s.split_whitespace()
        .filter(|t| t.starts_with("http://") || t.starts_with("https://"))
        .count()
}

/// `#` immediately followed by a non-whitespace character.
pub fn hashtag_count(s: &str) -> usize {
    let chars: Vec<char> = s.chars().collect();
    chars
        .windows(2)
        .filter(|w| w[0] == '#' && !w[1].is_whitespace())
        .count()
}
