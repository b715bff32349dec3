use std::path::Path;

use mia_core::data::{load_dataset, split_path, synth_generate, Dataset, SynthConfig};
use mia_core::eval::{Evaluator, Granularity};
use mia_core::text::Lexicon;
use mia_core::training::{load_checkpoint, StepSchedule, TrainConfig, Trainer};

fn tiny_corpus(dir: &Path) -> (Dataset, Dataset) {
    let cfg = SynthConfig { train_ids: 4, test_ids: 2, images_per_id: 2, ..SynthConfig::default() };
    synth_generate(&cfg, dir).unwrap();
    let lex = Lexicon::builtin();
    (load_dataset(&split_path(dir, "train"), &lex).unwrap(), load_dataset(&split_path(dir, "test"), &lex).unwrap())
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        step1: StepSchedule::constant(1e-3, 2),
        step2: StepSchedule::constant(5e-4, 2),
        step3: StepSchedule::constant(5e-4, 2),
        ..TrainConfig::desk()
    }
}

#[test]
fn train_save_load_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = tiny_corpus(dir.path());
    let ckpt = dir.path().join("m.miac");

    let mut trainer = Trainer::new(&train, tiny_config()).unwrap();
    let mut epochs = 0;
    let logs = trainer.run_all(&train, Some(&ckpt), &mut |_| epochs += 1).unwrap();
    assert_eq!(logs.len(), 6);
    assert_eq!(epochs, 6);
    assert!(logs.iter().all(|l| l.loss.total.is_finite()));
    assert_eq!(trainer.next_step(), None);

    let loaded = load_checkpoint(&ckpt).unwrap();
    assert_eq!(loaded.meta.completed_steps, vec![1, 2, 3]);
    let live = Evaluator::build(&trainer.model, &trainer.vocab, &test, false).unwrap();
    let restored = Evaluator::build(&loaded.model, &loaded.meta.vocab, &test, false).unwrap();
    for gran in [Granularity::SG, Granularity::SR, Granularity::SL, Granularity::SF] {
        let (a, b) = (live.report(gran, 1.0, 0.5).unwrap(), restored.report(gran, 1.0, 0.5).unwrap());
        assert_eq!(a.ranked, b.ranked, "{gran:?}");
        assert!(a.r1 <= a.r5 && a.r5 <= a.r10 && a.r10 <= 1.0);
        assert_eq!(a.queries, 2 * test.len());
    }

    let sg = live.report(Granularity::SG, 1.0, 0.5).unwrap();
    let sf0 = live.report(Granularity::SF, 0.0, 0.0).unwrap();
    assert_eq!(sg.ranked, sf0.ranked);
    let grid = live.sweep(&[0.0, 1.0], &[0.0, 0.5]).unwrap();
    assert_eq!(grid.len(), 4);
}

#[test]
fn identical_seeds_train_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = tiny_corpus(dir.path());
    let run = || {
        let mut t = Trainer::new(&train, tiny_config()).unwrap();
        t.run_step(&train, 1, &mut |_| {}).unwrap();
        t.run_step(&train, 2, &mut |_| {}).unwrap();
        t.model.store.iter().flat_map(|(_, p)| p.value.data().to_vec()).collect::<Vec<f64>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn steps_out_of_order_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = tiny_corpus(dir.path());
    let mut t = Trainer::new(&train, tiny_config()).unwrap();
    assert!(t.run_step(&train, 2, &mut |_| {}).is_err());
    t.run_step(&train, 1, &mut |_| {}).unwrap();
    assert!(t.run_step(&train, 3, &mut |_| {}).is_err());
}
