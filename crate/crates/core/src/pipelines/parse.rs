//! Parsers for model output in the `'**'`-terminated formats the prompts ask for.
//! A missing terminator is tolerated everywhere.

pub const TERMINATOR: &str = "**";
pub const QUERY_SEPARATOR: char = ';';

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("no queries could be parsed from the model output")]
pub struct ParseEmpty;

fn before_terminator(raw: &str) -> &str {
    raw.find(TERMINATOR).map_or(raw, |end| &raw[..end])
}

/// Everything before the first `**`, split on `;`, trimmed, empties dropped.
pub fn parse_query_list(raw: &str) -> Result<Vec<String>, ParseEmpty> {
    let queries: Vec<String> = before_terminator(raw)
        .split(QUERY_SEPARATOR)
        .map(str::trim)
        .filter(|q| !q.is_empty())
        .map(str::to_owned)
        .collect();
    if queries.is_empty() {
        Err(ParseEmpty)
    } else {
        Ok(queries)
    }
}

/// Inverse of [`parse_query_list`] for trimmed, `;`/`*`-free queries.
pub fn format_query_list<S: AsRef<str>>(queries: &[S]) -> String {
    let joined: Vec<&str> = queries.iter().map(AsRef::as_ref).collect();
    format!("{}{TERMINATOR}", joined.join("; "))
}

/// Answer text before the first `**`, trimmed. May be empty.
pub fn parse_answer(raw: &str) -> String {
    before_terminator(raw).trim().to_owned()
}
