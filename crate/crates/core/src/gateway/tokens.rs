/// Local token estimate used when a provider omits usage: every maximal run
/// of alphanumeric characters counts as one token, and every other
/// non-whitespace character counts as one token on its own.
pub fn approximate_token_count(text: &str) -> u64 {
    let mut count = 0;
    let mut in_word = false;
    for c in text.chars() {
        if c.is_alphanumeric() {
            if !in_word {
                count += 1;
                in_word = true;
            }
        } else {
            in_word = false;
            if !c.is_whitespace() {
                count += 1;
            }
        }
    }
    count
}
