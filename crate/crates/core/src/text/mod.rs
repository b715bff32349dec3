//! Caption processing: tokenization, part-of-speech tagging, noun-phrase
//! chunking and vocabulary construction.

mod chunker;
mod tagger;
mod tokenize;
mod vocab;

pub use chunker::{chunk_noun_phrases, NounPhrase};
pub use tagger::{Lexicon, LexiconError, PosTag};
pub use tokenize::{join_tokens, tokenize, Token};
pub use vocab::{Vocabulary, UNK};

/// A caption after the full text pipeline.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TextSample {
    pub caption: String,
    pub tokens: Vec<Token>,
    pub tags: Vec<PosTag>,
    pub phrases: Vec<NounPhrase>,
}

impl TextSample {
    pub fn process(caption: &str, lexicon: &Lexicon) -> Self {
        let tokens = tokenize(caption);
        let tagged = lexicon.pos_tag(&tokens);
        let phrases = chunk_noun_phrases(&tagged);
        Self {
            caption: caption.to_string(),
            tags: tagged.into_iter().map(|(_, t)| t).collect(),
            tokens,
            phrases,
        }
    }

    /// Token indices of the caption and of each phrase.
    pub fn encode(&self, vocab: &Vocabulary) -> (Vec<usize>, Vec<Vec<usize>>) {
        (vocab.numericalize(&self.tokens), self.phrases.iter().map(|p| vocab.numericalize(&p.tokens)).collect())
    }

    pub fn phrase_texts(&self) -> Vec<String> {
        self.phrases.iter().map(NounPhrase::text).collect()
    }
}
