use serde::{Deserialize, Serialize};

use super::tagger::PosTag;
use super::tokenize::Token;

/// A contiguous token span ending in a noun, with any leading determiner removed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NounPhrase {
    pub tokens: Vec<Token>,
    pub tags: Vec<PosTag>,
    /// Sentence position of the final noun.
    pub head_index: usize,
}

impl NounPhrase {
    pub fn text(&self) -> String {
        super::tokenize::join_tokens(&self.tokens)
    }

    pub fn start(&self) -> usize {
        self.tokens[0].position
    }
}

fn is_body(tag: PosTag) -> bool {
    matches!(tag, PosTag::JJ | PosTag::CD | PosTag::VBG | PosTag::NN)
}

/// Greedy left-to-right maximal matches of `DT? (JJ|CD|VBG|NN)* NN`.
pub fn chunk_noun_phrases(tagged: &[(Token, PosTag)]) -> Vec<NounPhrase> {
    let mut phrases = Vec::new();
    let mut i = 0;
    while i < tagged.len() {
        let body_start = if tagged[i].1 == PosTag::DT { i + 1 } else { i };
        let mut end = body_start;
        while end < tagged.len() && is_body(tagged[end].1) {
            end += 1;
        }
        let last_noun = (body_start..end).rev().find(|&k| tagged[k].1 == PosTag::NN);
        match last_noun {
            Some(head) => {
                let span = &tagged[body_start..=head];
                phrases.push(NounPhrase {
                    tokens: span.iter().map(|(t, _)| t.clone()).collect(),
                    tags: span.iter().map(|&(_, tag)| tag).collect(),
                    head_index: tagged[head].0.position,
                });
                i = head + 1;
            }
            None => i += 1,
        }
    }
    phrases
}

#[cfg(test)]
mod tests {
    use super::super::{tagger::Lexicon, tokenize::tokenize};
    use super::*;
    use proptest::prelude::*;

    fn phrases(s: &str) -> Vec<String> {
        let lex = Lexicon::builtin();
        chunk_noun_phrases(&lex.pos_tag(&tokenize(s))).iter().map(NounPhrase::text).collect()
    }

    #[test]
    fn examples() {
        assert_eq!(phrases("a yellow short sleeve shirt"), ["yellow short sleeve shirt"]);
        assert_eq!(
            phrases("the man wears black pants and white shoes"),
            ["man", "black pants", "white shoes"]
        );
        assert!(phrases("").is_empty());
    }

    #[test]
    fn figure_style_phrases() {
        assert_eq!(phrases("he has dark slack and a yellow bag"), ["dark slack", "yellow bag"]);
        assert!(phrases("somebody is walking").is_empty());
    }

    #[test]
    fn duplicates_are_kept() {
        assert_eq!(phrases("a red hat and a red hat"), ["red hat", "red hat"]);
    }

    #[test]
    fn trailing_modifiers_are_not_absorbed() {
        // run "man wearing" has its last noun at "man"
        assert_eq!(phrases("a man wearing a blue shirt"), ["man", "blue shirt"]);
    }

    fn word() -> impl Strategy<Value = String> {
        prop_oneof![
            Just("a".to_string()),
            Just("the".to_string()),
            Just("red".to_string()),
            Just("shirt".to_string()),
            Just("and".to_string()),
            Just("with".to_string()),
            Just("is".to_string()),
            Just("she".to_string()),
            Just("walking".to_string()),
            Just("3".to_string()),
            "[a-z]{1,8}",
        ]
    }

    proptest! {
        #[test]
        fn phrases_satisfy_invariants(words in proptest::collection::vec(word(), 0..30)) {
            let lex = Lexicon::builtin();
            let tagged = lex.pos_tag(&tokenize(&words.join(" ")));
            let found = chunk_noun_phrases(&tagged);
            let mut last_end = None;
            for p in &found {
                prop_assert_eq!(*p.tags.last().unwrap(), PosTag::NN);
                prop_assert!(p.tags.iter().all(|t| !matches!(t, PosTag::IN | PosTag::CC | PosTag::VB | PosTag::PRP | PosTag::DT)));
                prop_assert_eq!(p.head_index, p.tokens.last().unwrap().position);
                for w in p.tokens.windows(2) {
                    prop_assert_eq!(w[0].position + 1, w[1].position);
                }
                if let Some(end) = last_end {
                    prop_assert!(p.start() > end);
                }
                last_end = Some(p.head_index);
            }
        }
    }
}
