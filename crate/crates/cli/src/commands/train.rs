use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::Args;
use mia_core::data::{load_dataset, split_path};
use mia_core::training::{load_checkpoint, parse_config, TrainConfig, Trainer};

#[derive(Args, Default)]
#[command(after_help = "Config files hold UTF-8 `key = value` lines with the same keys as the flags \
(underscores instead of dashes) plus corpus, ckpt, log and lexicon. Flags override file values. \
Defaults follow the desk preset; `preset = full` selects batch 96, step 1 lr 0.001 for 10 epochs, \
step 2 lr 0.0002 for 15 epochs decayed x0.1 every 10, step 3 lr 0.0002 for 5 epochs, margin 0.2, \
lambda1 1.0, lambda2 0.5.")]
pub struct TrainArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Step to run: 1, 2, 3 or all remaining steps.
    #[arg(long, default_value = "all")]
    step: String,
    /// Corpus directory holding train.jsonl.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Checkpoint to write; steps after the first resume from it.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// JSON-lines loss log [default: <ckpt>.log.jsonl].
    #[arg(long)]
    log: Option<PathBuf>,
    /// Content-word lexicon TSV replacing the built-in one.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// No per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,

    /// desk or full: base values before any other key [default: desk].
    #[arg(long)]
    preset: Option<String>,
    /// Pairs per batch [default: 32; full 96].
    #[arg(long)]
    batch_size: Option<String>,
    /// Step 1 learning rate [default: 0.001].
    #[arg(long)]
    step1_lr: Option<String>,
    /// Step 1 epochs [default: 60; full 10].
    #[arg(long)]
    step1_epochs: Option<String>,
    /// Step 2 learning rate [default: 0.0005; full 0.0002].
    #[arg(long)]
    step2_lr: Option<String>,
    /// Step 2 epochs [default: 90; full 15].
    #[arg(long)]
    step2_epochs: Option<String>,
    /// Step 2 decay period in epochs, or none [default: 60; full 10].
    #[arg(long)]
    step2_decay_every: Option<String>,
    /// Step 2 decay factor [default: 0.1].
    #[arg(long)]
    step2_decay: Option<String>,
    /// Step 3 learning rate [default: 0.0005; full 0.0002].
    #[arg(long)]
    step3_lr: Option<String>,
    /// Step 3 epochs [default: 40; full 5].
    #[arg(long)]
    step3_epochs: Option<String>,
    /// Hinge margin α [default: 0.2].
    #[arg(long)]
    margin: Option<String>,
    /// Evaluation weight of s_R [default: 1.0].
    #[arg(long)]
    lambda1: Option<String>,
    /// Evaluation weight of s_L [default: 0.5].
    #[arg(long)]
    lambda2: Option<String>,
    /// Seed for initialization, shuffling and augmentation [default: 42].
    #[arg(long)]
    seed: Option<String>,
    /// gc, gc_rga, gc_bfm, gc_rga_bfm, mia or fine [default: mia].
    #[arg(long)]
    ablation: Option<String>,
    /// Keep the backbone fixed in step 1 [default: false].
    #[arg(long)]
    freeze_backbone_step1: Option<String>,
    /// Count same-identity pairs as negatives [default: false].
    #[arg(long)]
    same_id_negatives: Option<String>,
    /// Random horizontal mirroring [default: true].
    #[arg(long)]
    mirror: Option<String>,
    /// Minimum word count for the vocabulary [default: 1].
    #[arg(long)]
    min_count: Option<String>,
    /// desk or full layer sizes [default: desk].
    #[arg(long)]
    model_size: Option<String>,
    /// Attention softmax temperature [default: 1.0].
    #[arg(long)]
    temperature: Option<String>,
}

impl TrainArgs {
    fn overrides(&self) -> Vec<(&'static str, &str)> {
        let pairs: [(&'static str, &Option<String>); 21] = [
            ("batch_size", &self.batch_size),
            ("step1_lr", &self.step1_lr),
            ("step1_epochs", &self.step1_epochs),
            ("step2_lr", &self.step2_lr),
            ("step2_epochs", &self.step2_epochs),
            ("step2_decay_every", &self.step2_decay_every),
            ("step2_decay", &self.step2_decay),
            ("step3_lr", &self.step3_lr),
            ("step3_epochs", &self.step3_epochs),
            ("margin", &self.margin),
            ("lambda1", &self.lambda1),
            ("lambda2", &self.lambda2),
            ("seed", &self.seed),
            ("ablation", &self.ablation),
            ("freeze_backbone_step1", &self.freeze_backbone_step1),
            ("same_id_negatives", &self.same_id_negatives),
            ("mirror", &self.mirror),
            ("min_count", &self.min_count),
            ("model_size", &self.model_size),
            ("temperature", &self.temperature),
            ("preset", &self.preset),
        ];
        pairs.into_iter().filter_map(|(k, v)| v.as_deref().map(|v| (k, v))).collect()
    }
}

/// Resolved run settings: training hyper-parameters plus file locations.
#[derive(Debug)]
pub struct RunSettings {
    pub train: TrainConfig,
    pub corpus: Option<PathBuf>,
    pub ckpt: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
}

pub fn resolve(args: &TrainArgs) -> anyhow::Result<RunSettings> {
    let mut s = RunSettings { train: TrainConfig::desk(), corpus: None, ckpt: None, log: None, lexicon: None };
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let origin = path.display().to_string();
        let mut entries = parse_config(&text, &origin)?;
        // the preset resets every field, so it goes first
        entries.sort_by_key(|e| e.key != "preset");
        let base = path.parent().unwrap_or(Path::new("."));
        for e in entries {
            let at = |what: String| anyhow::anyhow!("{origin}:{}: {what}", e.line);
            let file = || base.join(&e.value);
            match e.key.as_str() {
                "corpus" => s.corpus = Some(file()),
                "ckpt" => s.ckpt = Some(file()),
                "log" => s.log = Some(file()),
                "lexicon" => s.lexicon = Some(file()),
                key => {
                    if !s.train.set(key, &e.value).map_err(at)? {
                        return Err(at(format!("unknown key {key:?}")));
                    }
                }
            }
        }
    }
    let mut overrides = args.overrides();
    overrides.sort_by_key(|(k, _)| *k != "preset");
    for (key, value) in overrides {
        s.train.set(key, value).map_err(|e| anyhow::anyhow!("--{}: {e}", key.replace('_', "-")))?;
    }
    s.train.validate().map_err(|e| anyhow::anyhow!(e))?;
    if args.corpus.is_some() {
        s.corpus = args.corpus.clone();
    }
    if args.ckpt.is_some() {
        s.ckpt = args.ckpt.clone();
    }
    if args.log.is_some() {
        s.log = args.log.clone();
    }
    if args.lexicon.is_some() {
        s.lexicon = args.lexicon.clone();
    }
    Ok(s)
}

fn log_path(s: &RunSettings, ckpt: &Path) -> PathBuf {
    s.log.clone().unwrap_or_else(|| {
        let mut p = ckpt.as_os_str().to_os_string();
        p.push(".log.jsonl");
        PathBuf::from(p)
    })
}

pub fn train(args: TrainArgs) -> anyhow::Result<ExitCode> {
    let s = resolve(&args)?;
    let Some(corpus) = s.corpus.clone() else { bail!("no corpus given (--corpus or `corpus =` in the config)") };
    let ckpt = s.ckpt.clone().unwrap_or_else(|| PathBuf::from("mia.miac"));
    let requested: Option<u8> = match args.step.as_str() {
        "all" => None,
        n => Some(n.parse().ok().filter(|k| (1..=3).contains(k)).with_context(|| format!("--step must be 1, 2, 3 or all, got {n:?}"))?),
    };
    let lex = super::lexicon(s.lexicon.as_deref())?;
    let data = load_dataset(&split_path(&corpus, "train"), &lex)?;
    let plan = s.train.plan();
    let first = plan.steps()[0];
    let fresh = requested.is_none_or(|k| k == first);
    let mut trainer = if fresh {
        let mut t = Trainer::new(&data, s.train.clone())?;
        t.corpus = Some(corpus.display().to_string());
        t
    } else {
        let ck = load_checkpoint(&ckpt).with_context(|| format!("step {} resumes from {}", args.step, ckpt.display()))?;
        if ck.meta.plan != plan {
            bail!(
                "checkpoint was trained with ablation {} but the config asks for {}",
                ck.meta.plan.ablation,
                plan.ablation
            );
        }
        let mut t = Trainer::from_checkpoint(ck);
        t.config = s.train.clone();
        t
    };
    if let Some(k) = requested {
        if !plan.steps().contains(&k) {
            bail!("ablation {} has no step {k}; its steps are {:?}", plan.ablation, plan.steps());
        }
    }
    let log = log_path(&s, &ckpt);
    let mut log_file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&log)
        .with_context(|| format!("opening {}", log.display()))?;
    let start = Instant::now();
    let quiet = args.quiet;
    let mut write_err = None;
    let mut on_epoch = |l: &mia_core::training::EpochLog| {
        let line = serde_json::to_string(l).expect("serializable log");
        if let Err(e) = writeln!(log_file, "{line}") {
            write_err.get_or_insert(e);
        }
        if !quiet {
            eprintln!("[{:>6.1}s] step {} epoch {:>3} lr {:.2e} loss {:.4}", start.elapsed().as_secs_f64(), l.loss.step_id, l.epoch, l.lr, l.loss.total);
        }
    };
    let steps: Vec<u8> = match requested {
        Some(k) => vec![k],
        None => plan.steps().to_vec(),
    };
    for step in steps {
        let (_, adam) = trainer.run_step(&data, step, &mut on_epoch)?;
        trainer.save(&ckpt, Some(&adam))?;
        if !quiet {
            eprintln!("step {step} done, checkpoint {}", ckpt.display());
        }
    }
    if let Some(e) = write_err {
        return Err(e).with_context(|| format!("writing {}", log.display()));
    }
    if trainer.next_step().is_none() && !quiet {
        eprintln!("all steps complete");
    }
    Ok(ExitCode::SUCCESS)
}
