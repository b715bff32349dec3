use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::Args;
use mia_core::data::{load_dataset, split_path, Dataset};
use mia_core::eval::{parse_grid, Evaluator, Granularity, RetrievalReport};
use mia_core::model::TextBatch;
use mia_core::text::TextSample;
use mia_core::training::{load_checkpoint, Checkpoint};
use serde::Serialize;

use crate::table::{pct, render};
use crate::CorpusArgs;

fn load(ckpt: &Path) -> anyhow::Result<Checkpoint> {
    load_checkpoint(ckpt).with_context(|| format!("loading {}", ckpt.display()))
}

fn dataset(ck: &Checkpoint, c: &CorpusArgs) -> anyhow::Result<Dataset> {
    let corpus = match (&c.corpus, &ck.meta.corpus) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => PathBuf::from(p),
        (None, None) => bail!("the checkpoint records no corpus; pass --corpus"),
    };
    let lex = super::lexicon(c.lexicon.as_deref())?;
    Ok(load_dataset(&split_path(&corpus, &c.split), &lex)?)
}

fn report_rows(reports: &[RetrievalReport]) -> String {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| vec![r.granularity.to_string(), format!("{}", r.lambda1), format!("{}", r.lambda2), pct(r.r1), pct(r.r5), pct(r.r10), pct(r.total)])
        .collect();
    render(&["report", "λ1", "λ2", "R@1", "R@5", "R@10", "Total"], &rows)
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Weight of s_R in s_F.
    #[arg(long, default_value_t = 1.0)]
    lambda1: f64,
    /// Weight of s_L in s_F.
    #[arg(long, default_value_t = 0.5)]
    lambda2: f64,
    /// sG, sR, sL, sF, or all.
    #[arg(long, default_value = "sF")]
    report: String,
    /// Image queries against a caption gallery instead of text→image.
    #[arg(long)]
    image_to_text: bool,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
    /// Also write the full reports, ranked lists included, to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-pair attention maps as JSON files into this directory.
    #[arg(long)]
    dump_attn: Option<PathBuf>,
}

#[derive(Serialize)]
struct Summary<'a> {
    granularity: Granularity,
    lambda1: f64,
    lambda2: f64,
    #[serde(rename = "R@1")]
    r1: f64,
    #[serde(rename = "R@5")]
    r5: f64,
    #[serde(rename = "R@10")]
    r10: f64,
    #[serde(rename = "Total")]
    total: f64,
    queries: usize,
    gallery: usize,
    warnings: &'a [String],
}

pub fn eval(a: EvalArgs) -> anyhow::Result<ExitCode> {
    let selectors: Vec<Granularity> = if a.report == "all" {
        Granularity::ALL.to_vec()
    } else {
        vec![a.report.parse().map_err(|e: String| anyhow::anyhow!(e))?]
    };
    let ck = load(&a.ckpt)?;
    let data = dataset(&ck, &a.corpus)?;
    let ev = Evaluator::build(&ck.model, &ck.meta.vocab, &data, a.dump_attn.is_some())?;
    let mut reports = Vec::new();
    let mut summaries = Vec::new();
    let warnings: Vec<Vec<String>> = selectors.iter().map(|&g| ev.warnings(g, a.lambda1, a.lambda2)).collect();
    for (&g, w) in selectors.iter().zip(&warnings) {
        for line in w {
            eprintln!("warning: {line}");
        }
        let r = if a.image_to_text { ev.report_image_to_text(g, a.lambda1, a.lambda2)? } else { ev.report(g, a.lambda1, a.lambda2)? };
        reports.push(r);
    }
    for (r, w) in reports.iter().zip(&warnings) {
        summaries.push(Summary {
            granularity: r.granularity,
            lambda1: r.lambda1,
            lambda2: r.lambda2,
            r1: r.r1,
            r5: r.r5,
            r10: r.r10,
            total: r.total,
            queries: r.queries,
            gallery: r.gallery,
            warnings: w,
        });
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&summaries)?);
    } else {
        let direction = if a.image_to_text { "image→text" } else { "text→image" };
        println!("{} split, {direction}, {} queries × {} gallery", a.corpus.split, reports[0].queries, reports[0].gallery);
        print!("{}", report_rows(&reports));
    }
    if let Some(path) = &a.out {
        super::write_json(path, &reports)?;
    }
    if let Some(dir) = &a.dump_attn {
        let n = ev.dump_attention(dir)?;
        eprintln!("wrote {n} attention files to {}", dir.display());
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Free-text description to search with.
    #[arg(long)]
    caption: String,
    #[arg(long, default_value_t = 10)]
    topk: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda1: f64,
    #[arg(long, default_value_t = 0.5)]
    lambda2: f64,
    /// sG, sR, sL or sF.
    #[arg(long, default_value = "sF")]
    report: String,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Serialize)]
struct Hit {
    rank: usize,
    image: String,
    person_id: usize,
    score: f64,
}

pub fn retrieve(a: RetrieveArgs) -> anyhow::Result<ExitCode> {
    let granularity: Granularity = a.report.parse().map_err(|e: String| anyhow::anyhow!(e))?;
    let ck = load(&a.ckpt)?;
    let data = dataset(&ck, &a.corpus)?;
    let lex = super::lexicon(a.corpus.lexicon.as_deref())?;
    let sample = TextSample::process(&a.caption, &lex);
    if sample.tokens.is_empty() {
        bail!("the caption has no words");
    }
    let query = TextBatch::new([sample.encode(&ck.meta.vocab)]).map_err(|e| anyhow::anyhow!(e))?;
    let mut images = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        images.push(data.image(i)?);
    }
    let gallery = ck.model.encode_gallery(&images);
    let (scores, _) = ck.model.score_queries(&gallery, &query, None);
    let s = scores.select(granularity, a.lambda1, a.lambda2);
    let ranked = mia_core::eval::rank_gallery(s.data());
    let hits: Vec<Hit> = ranked
        .iter()
        .take(a.topk)
        .enumerate()
        .map(|(r, &g)| Hit { rank: r + 1, image: data.samples[g].image_rel.clone(), person_id: data.samples[g].person_id, score: s.data()[g] })
        .collect();
    if a.json {
        println!("{}", serde_json::to_string_pretty(&hits)?);
    } else {
        println!("phrases: {}", sample.phrase_texts().join(" | "));
        let rows: Vec<Vec<String>> = hits.iter().map(|h| vec![h.rank.to_string(), h.image.clone(), h.person_id.to_string(), format!("{:.4}", h.score)]).collect();
        print!("{}", render(&["rank", "image", "person", granularity.as_str()], &rows));
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// λ1 grid: start:stop:step, a comma list, or one value.
    #[arg(long, default_value = "0:2:0.2")]
    l1: String,
    /// λ2 grid: start:stop:step, a comma list, or one value.
    #[arg(long, default_value = "0:2:0.2")]
    l2: String,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
    /// Also write the grid as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

pub fn sweep(a: SweepArgs) -> anyhow::Result<ExitCode> {
    let (l1, l2) = (parse_grid(&a.l1)?, parse_grid(&a.l2)?);
    let ck = load(&a.ckpt)?;
    let data = dataset(&ck, &a.corpus)?;
    let ev = Evaluator::build(&ck.model, &ck.meta.vocab, &data, false)?;
    for w in ev.warnings(Granularity::SF, l1.iter().copied().fold(0.0, f64::max), l2.iter().copied().fold(0.0, f64::max)) {
        eprintln!("warning: {w}");
    }
    let rows = ev.sweep(&l1, &l2)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        let cells: Vec<Vec<String>> = rows.iter().map(|r| vec![format!("{}", r.lambda1), format!("{}", r.lambda2), pct(r.r1), pct(r.r5), pct(r.r10), pct(r.total)]).collect();
        print!("{}", render(&["λ1", "λ2", "R@1", "R@5", "R@10", "Total"], &cells));
    }
    if let Some(path) = &a.csv {
        let mut out = String::from("lambda1,lambda2,r1,r5,r10,total\n");
        for r in &rows {
            out.push_str(&format!("{},{},{},{},{},{}\n", r.lambda1, r.lambda2, r.r1, r.r5, r.r10, r.total));
        }
        std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}
