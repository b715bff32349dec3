//! Lexicon-driven part-of-speech tagging over a closed tag set.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tokenize::Token;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PosTag {
    DT,
    JJ,
    CD,
    NN,
    VBG,
    VB,
    IN,
    CC,
    PRP,
    OTHER,
}

impl PosTag {
    pub const ALL: [PosTag; 10] = [
        PosTag::DT,
        PosTag::JJ,
        PosTag::CD,
        PosTag::NN,
        PosTag::VBG,
        PosTag::VB,
        PosTag::IN,
        PosTag::CC,
        PosTag::PRP,
        PosTag::OTHER,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::DT => "DT",
            PosTag::JJ => "JJ",
            PosTag::CD => "CD",
            PosTag::NN => "NN",
            PosTag::VBG => "VBG",
            PosTag::VB => "VB",
            PosTag::IN => "IN",
            PosTag::CC => "CC",
            PosTag::PRP => "PRP",
            PosTag::OTHER => "OTHER",
        }
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PosTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PosTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown tag {s:?}"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("{path}:{line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

const CLOSED_CLASS: &str = include_str!("../../data/closed_class.tsv");
const CONTENT: &str = include_str!("../../data/lexicon.tsv");

/// Word → tag tables. Closed-class entries take priority over content words.
#[derive(Clone, Debug)]
pub struct Lexicon {
    closed: HashMap<String, PosTag>,
    content: HashMap<String, PosTag>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Lexicon {
    /// The shipped closed-class and content-word tables.
    pub fn builtin() -> Self {
        Self {
            closed: parse_tsv(CLOSED_CLASS, "closed_class.tsv").expect("shipped closed-class lexicon parses"),
            content: parse_tsv(CONTENT, "lexicon.tsv").expect("shipped content lexicon parses"),
        }
    }

    /// Builtin closed-class table with the content table read from `path`.
    pub fn with_content_file(path: &Path) -> Result<Self, LexiconError> {
        let text = fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self {
            content: parse_tsv(&text, &path.display().to_string())?,
            ..Self::builtin()
        })
    }

    pub fn lookup(&self, word: &str) -> Option<PosTag> {
        self.closed.get(word).or_else(|| self.content.get(word)).copied()
    }

    pub fn is_noun(&self, word: &str) -> bool {
        self.lookup(word) == Some(PosTag::NN)
    }

    pub fn len(&self) -> usize {
        self.closed.len() + self.content.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lexicon lookup, then suffix fallback: `-ing` → VBG, `-s` over a known
    /// noun → NN, all digits → CD, anything else → NN.
    pub fn tag_word(&self, word: &str) -> PosTag {
        if let Some(tag) = self.lookup(word) {
            return tag;
        }
        if word.chars().all(|c| c.is_ascii_digit()) {
            return PosTag::CD;
        }
        if word.len() > 4 && word.ends_with("ing") {
            return PosTag::VBG;
        }
        if let Some(stem) = word.strip_suffix('s') {
            if self.is_noun(stem) {
                return PosTag::NN;
            }
        }
        PosTag::NN
    }

    pub fn pos_tag(&self, tokens: &[Token]) -> Vec<(Token, PosTag)> {
        tokens.iter().map(|t| (t.clone(), self.tag_word(&t.surface))).collect()
    }
}

fn parse_tsv(text: &str, origin: &str) -> Result<HashMap<String, PosTag>, LexiconError> {
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| LexiconError::Parse {
            path: origin.to_string(),
            line: i + 1,
            reason,
        };
        let (word, tag) = line.split_once('\t').ok_or_else(|| err("expected word<TAB>TAG".into()))?;
        let tag: PosTag = tag.trim().parse().map_err(err)?;
        map.insert(word.trim().to_lowercase(), tag);
    }
    Ok(map)
}
