use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub position: usize,
}

/// Lowercases and splits on every non-alphanumeric character; separators are dropped.
pub fn tokenize(caption: &str) -> Vec<Token> {
    caption
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .enumerate()
        .map(|(position, w)| Token {
            surface: w.to_string(),
            position,
        })
        .collect()
}

pub fn join_tokens(tokens: &[Token]) -> String {
    tokens.iter().map(|t| t.surface.as_str()).collect::<Vec<_>>().join(" ")
}
