use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::Args;
use mia_core::autodiff::GradCheckOptions;
use mia_core::data::{load_dataset, split_path};
use mia_core::model::{Model, ModelConfig};
use mia_core::objectives::{LossOptions, PairBatch};
use mia_core::text::Vocabulary;
use mia_core::training::{check_step_gradients, load_checkpoint, synthetic_batch, synthetic_captions, PreparedPairs, StepPlan};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::table::render;

#[derive(Args)]
pub struct GradCheckArgs {
    /// Checkpoint to check; a freshly initialized desk model otherwise.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Draw the batch from this corpus's train split instead of rendering one.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Steps whose loss is checked.
    #[arg(long, value_delimiter = ',', default_value = "2,3")]
    steps: Vec<u8>,
    /// Image–caption pairs in the batch.
    #[arg(long, default_value_t = 4)]
    pairs: usize,
    /// Sampled parameter entries per step.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    /// Central-difference step h.
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    /// Largest allowed relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Serialize)]
struct StepResult {
    step: u8,
    samples: usize,
    params: usize,
    max_rel_error: f64,
    tolerance: f64,
    passed: bool,
    kinks_skipped: usize,
    /// Top-level modules that had at least one entry sampled.
    modules: Vec<String>,
    seconds: f64,
    worst: Option<mia_core::autodiff::GradSample>,
}

pub fn grad_check(a: GradCheckArgs) -> anyhow::Result<ExitCode> {
    if a.pairs < 2 {
        bail!("--pairs must be at least 2 so the matching terms have negatives");
    }
    let lex = mia_core::text::Lexicon::builtin();
    let (model, vocab) = match &a.ckpt {
        Some(p) => {
            let ck = load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?;
            (ck.model, ck.meta.vocab)
        }
        None => {
            let caps = synthetic_captions(200, a.seed);
            let vocab = Vocabulary::build(caps.iter().map(String::as_str), 1);
            let model = Model::new(ModelConfig::desk(vocab.size(), a.pairs.max(2)), StepPlan::default()).map_err(|e| anyhow::anyhow!(e))?;
            (model, vocab)
        }
    };
    let batch: PairBatch = match &a.corpus {
        Some(dir) => {
            let data = load_dataset(&split_path(dir, "train"), &lex)?;
            if data.num_ids > model.config.num_ids {
                bail!("corpus has {} identities but the model classifies {}", data.num_ids, model.config.num_ids);
            }
            let prepared = PreparedPairs::new(&data, &vocab)?;
            let mut idx: Vec<usize> = (0..prepared.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(a.seed));
            idx.truncate(a.pairs);
            prepared.batch(&idx, &[])?
        }
        None => synthetic_batch(&vocab, &lex, model.config.num_ids, a.pairs, a.seed),
    };
    let opts = GradCheckOptions { samples: a.samples, step: a.h, tolerance: a.tolerance, seed: a.seed, ..GradCheckOptions::default() };
    let mut results = Vec::new();
    for &step in &a.steps {
        if model.plan.terms(step).is_none() {
            bail!("the checkpoint's plan ({}) has no step {step}", model.plan.ablation);
        }
        let start = Instant::now();
        let report = check_step_gradients(&model, &batch, step, &LossOptions::default(), &opts)?;
        let params = mia_core::training::loss_params(&model, step).len();
        results.push(StepResult {
            step,
            samples: report.samples.len(),
            params,
            max_rel_error: report.max_rel_error,
            tolerance: report.tolerance,
            passed: report.passed,
            kinks_skipped: report.kinks_skipped,
            modules: report
                .samples
                .iter()
                .map(|s| s.param.split('.').next().unwrap_or_default().to_string())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
            seconds: start.elapsed().as_secs_f64(),
            worst: report.worst().cloned(),
        });
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&results)?);
    } else {
        let rows: Vec<Vec<String>> = results
            .iter()
            .map(|r| {
                let worst = r.worst.as_ref().map_or(String::new(), |w| format!("{}[{}]", w.param, w.index));
                vec![
                    r.step.to_string(),
                    r.samples.to_string(),
                    r.params.to_string(),
                    format!("{:.3e}", r.max_rel_error),
                    if r.passed { "pass".into() } else { "FAIL".into() },
                    r.kinks_skipped.to_string(),
                    format!("{:.1}", r.seconds),
                    worst,
                ]
            })
            .collect();
        print!("{}", render(&["step", "samples", "tensors", "max rel err", "result", "kinks skipped", "seconds", "worst entry"], &rows));
    }
    Ok(if results.iter().all(|r| r.passed) { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
