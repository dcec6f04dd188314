//! Answer-string normalization and the lexical scoring primitives built on
//! it: token-bag F1, exact match, and cover exact match.
//!
//! Normalization follows the usual extractive-QA convention: lowercase,
//! strip punctuation characters, drop the articles `a`/`an`/`the`, and
//! collapse whitespace. All comparisons in this crate go through it so that
//! `"the Lucky Numbers"` and `"Lucky Numbers"` are the same answer.

use std::collections::HashMap;

use crate::num::{count, real, Real};

/// Lowercases, removes punctuation, drops articles, and collapses whitespace.
pub fn normalize_answer(s: &str) -> String {
    normalized_tokens(s).join(" ")
}

/// Normalized answer as a token list (the bag that F1 compares).
pub fn normalized_tokens(s: &str) -> Vec<String> {
    let lowered = s.to_lowercase();
    let stripped: String = lowered
        .chars()
        .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
        .collect();
    stripped
        .split_whitespace()
        .filter(|t| !matches!(*t, "a" | "an" | "the"))
        .map(str::to_owned)
        .collect()
}

/// Lowercased alphanumeric words, articles included.
///
/// This is the retrieval-side tokenizer: queries and documents are compared
/// on raw word overlap, so stop words still count.
pub fn words(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Token-bag F1 between a predicted and a gold answer, in `[0, 1]`.
///
/// Precision and recall are computed over token multisets (duplicate tokens
/// count), and the score is 0 whenever either side normalizes to nothing.
pub fn token_f1<S: Real>(prediction: &str, gold: &str) -> S {
    let pred = normalized_tokens(prediction);
    let gold = normalized_tokens(gold);
    if pred.is_empty() || gold.is_empty() {
        return S::zero();
    }
    let mut gold_counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold {
        *gold_counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut common = 0usize;
    for t in &pred {
        if let Some(n) = gold_counts.get_mut(t.as_str()) {
            if *n > 0 {
                *n -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return S::zero();
    }
    let common: S = count(common);
    let precision = common / count(pred.len());
    let recall = common / count(gold.len());
    real::<S>(2.0) * precision * recall / (precision + recall)
}

/// Exact match: 1 iff the two strings normalize to the same non-empty text.
///
/// Requiring non-empty keeps `exact_match == 1` strictly stronger than
/// `token_f1 == 1`; two strings made entirely of articles and punctuation
/// match nothing, not each other.
pub fn exact_match(prediction: &str, gold: &str) -> u8 {
    let p = normalize_answer(prediction);
    if !p.is_empty() && p == normalize_answer(gold) {
        1
    } else {
        0
    }
}

/// Cover exact match: 1 iff the normalized gold answer occurs as a
/// contiguous substring of the normalized prediction.
pub fn cover_exact_match(prediction: &str, gold: &str) -> u8 {
    if normalize_answer(prediction).contains(&normalize_answer(gold)) {
        1
    } else {
        0
    }
}
