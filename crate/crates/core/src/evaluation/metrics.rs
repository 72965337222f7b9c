use std::collections::HashMap;

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercase, strip ASCII punctuation, drop the articles "a", "an" and "the"
/// as whole tokens, and collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let without_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    without_punct
        .split_whitespace()
        .filter(|token| !ARTICLES.contains(token))
        .collect::<Vec<_>>()
        .join(" ")
}

/// 1.0 when the normalized prediction equals some normalized gold answer.
pub fn exact_match<S: AsRef<str>>(prediction: &str, golds: &[S]) -> f64 {
    let pred = normalize_answer(prediction);
    if golds.iter().any(|g| normalize_answer(g.as_ref()) == pred) {
        1.0
    } else {
        0.0
    }
}

/// Token-overlap F1 between one prediction and one gold answer.
pub fn token_f1(prediction: &str, gold: &str) -> f64 {
    let pred = normalize_answer(prediction);
    let gold = normalize_answer(gold);
    let pred_tokens: Vec<&str> = pred.split_whitespace().collect();
    let gold_tokens: Vec<&str> = gold.split_whitespace().collect();
    if pred_tokens.is_empty() || gold_tokens.is_empty() {
        return if pred_tokens.is_empty() && gold_tokens.is_empty() { 1.0 } else { 0.0 };
    }
    let mut gold_counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold_tokens {
        *gold_counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pred_tokens {
        if let Some(n) = gold_counts.get_mut(t) {
            if *n > 0 {
                *n -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred_tokens.len() as f64;
    let recall = common as f64 / gold_tokens.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best [`token_f1`] over the gold answers.
pub fn f1<S: AsRef<str>>(prediction: &str, golds: &[S]) -> f64 {
    golds
        .iter()
        .map(|g| token_f1(prediction, g.as_ref()))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_answer("The Office!"), "office");
        assert_eq!(normalize_answer("Steven John Carell"), "steven john carell");
        assert_eq!(normalize_answer(""), "");
        assert_eq!(normalize_answer("  A  tale of\ttwo   cities. "), "tale of two cities");
        assert_eq!(normalize_answer("theatre an-other"), "theatre another");
    }

    #[test]
    fn exact_match_examples() {
        assert_eq!(exact_match("Steven John Carell", &["Steven John Carell"]), 1.0);
        assert_eq!(exact_match("Steve Carell", &["Steven John Carell"]), 0.0);
        assert_eq!(exact_match("the office", &["Office"]), 1.0);
        assert_eq!(exact_match("Canberra", &["Sydney", "canberra."]), 1.0);
    }

    #[test]
    fn f1_examples() {
        // P = 1/2, R = 1/3 -> 2PR/(P+R) = (1/3)/(5/6) = 0.4
        assert!((f1("Steve Carell", &["Steven John Carell"]) - 0.4).abs() < 1e-12);
        assert_eq!(f1("Steven John Carell", &["Steven John Carell"]), 1.0);
        assert_eq!(f1("xyz", &["abc"]), 0.0);
        assert_eq!(f1("", &[""]), 1.0);
        assert_eq!(f1("the", &["a"]), 1.0);
        assert_eq!(f1("", &["abc"]), 0.0);
        assert_eq!(f1("a b", &["zzz", "b a"]), 1.0);
    }

    #[test]
    fn repeated_tokens_use_multiset_overlap() {
        // pred: x x y, gold: x y y -> common = {x:1, y:1} = 2; P = R = 2/3
        assert!((token_f1("x x y", "x y y") - 2.0 / 3.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn em_implies_full_f1(pred in "[A-Za-z .,!']{0,20}", gold in "[A-Za-z .,!']{0,20}") {
            if exact_match(&pred, &[&gold]) == 1.0 {
                prop_assert_eq!(f1(&pred, &[&gold]), 1.0);
            }
        }

        #[test]
        fn f1_is_symmetric(a in "[a-d ]{0,16}", b in "[a-d ]{0,16}") {
            prop_assert!((token_f1(&a, &b) - token_f1(&b, &a)).abs() < 1e-15);
        }

        #[test]
        fn f1_is_bounded(a in "\\PC{0,24}", b in "\\PC{0,24}") {
            let v = token_f1(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
