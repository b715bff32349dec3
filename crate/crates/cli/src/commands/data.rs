use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Args;
use mia_core::data::{synth_generate, SynthConfig};
use mia_core::text::{chunk_noun_phrases, tokenize};
use serde::Serialize;

#[derive(Args)]
pub struct GenDataArgs {
    /// Training identities.
    #[arg(long, default_value_t = 16)]
    ids: usize,
    /// Images per identity (two captions each).
    #[arg(long, default_value_t = 4)]
    per_id: usize,
    /// Held-out test identities.
    #[arg(long, default_value_t = 8)]
    test_ids: usize,
    /// Validation identities.
    #[arg(long, default_value_t = 0)]
    val_ids: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Per-pixel Gaussian noise σ.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    /// Band boundary jitter in pixels.
    #[arg(long, default_value_t = 4)]
    jitter: usize,
    /// Minimum number of differing attributes between identities.
    #[arg(long, default_value_t = 4)]
    min_hamming: usize,
    #[arg(long)]
    out: PathBuf,
}

pub fn gen_data(a: GenDataArgs) -> anyhow::Result<ExitCode> {
    let cfg = SynthConfig {
        train_ids: a.ids,
        val_ids: a.val_ids,
        test_ids: a.test_ids,
        images_per_id: a.per_id,
        seed: a.seed,
        noise: a.noise,
        jitter: a.jitter,
        min_hamming: a.min_hamming,
    };
    let summary = synth_generate(&cfg, &a.out)?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
pub struct ChunkArgs {
    /// UTF-8 text file with one caption per line.
    #[arg(long = "in")]
    input: PathBuf,
    /// Content-word lexicon TSV replacing the built-in one.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Emit one JSON object per line instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Serialize)]
struct ChunkLine<'a> {
    caption: &'a str,
    tags: Vec<String>,
    phrases: Vec<String>,
}

pub fn chunk(a: ChunkArgs) -> anyhow::Result<ExitCode> {
    let lex = super::lexicon(a.lexicon.as_deref())?;
    let text = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    for line in text.lines() {
        let tagged = lex.pos_tag(&tokenize(line));
        let phrases: Vec<String> = chunk_noun_phrases(&tagged).iter().map(|p| p.text()).collect();
        if a.json {
            let tags = tagged.iter().map(|(t, tag)| format!("{}/{tag}", t.surface)).collect();
            println!("{}", serde_json::to_string(&ChunkLine { caption: line, tags, phrases })?);
        } else {
            println!("{}", phrases.join(" | "));
        }
    }
    Ok(ExitCode::SUCCESS)
}
