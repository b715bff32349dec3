pub mod data;
pub mod eval;
pub mod gradcheck;
pub mod train;

use std::path::Path;

use anyhow::Context;
use mia_core::text::Lexicon;

pub fn lexicon(path: Option<&Path>) -> anyhow::Result<Lexicon> {
    match path {
        Some(p) => Lexicon::with_content_file(p).with_context(|| format!("loading lexicon {}", p.display())),
        None => Ok(Lexicon::builtin()),
    }
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
