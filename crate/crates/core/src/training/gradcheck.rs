use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{render_image, template_caption, PersonSpec, COLORS};
use crate::autodiff::{finite_difference_check, GradCheckError, GradCheckOptions, GradCheckReport, Graph, ParamId, Step};
use crate::model::{Model, Session, ALL_GROUPS};
use crate::model::{images_to_nhwc, TextBatch};
use crate::objectives::{LossOptions, PairBatch};
use crate::tensor::Tensor;
use crate::text::{Lexicon, TextSample, Vocabulary};

/// Rendered people with template captions, for checks that need no corpus.
/// Labels cycle through `0..num_ids`.
pub fn synthetic_batch(vocab: &Vocabulary, lexicon: &Lexicon, num_ids: usize, pairs: usize, seed: u64) -> PairBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(pairs);
    let mut text = Vec::with_capacity(pairs);
    for i in 0..pairs {
        let mut colors = [0; 5];
        for c in &mut colors {
            *c = rng.gen_range(0..COLORS.len());
        }
        let person = PersonSpec { person_id: i, colors };
        images.push(render_image(&person, &mut rng, 0.05, 4));
        let (caption, _) = template_caption(&person, &mut rng);
        text.push(TextSample::process(&caption, lexicon).encode(vocab));
    }
    let refs: Vec<&Tensor> = images.iter().collect();
    PairBatch {
        images: images_to_nhwc(&refs, &[]),
        text: TextBatch::new(text).expect("template captions are non-empty"),
        labels: (0..pairs).map(|i| i % num_ids.max(1)).collect(),
    }
}

/// Template captions for building a vocabulary without a corpus.
pub fn synthetic_captions(count: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let colors = std::array::from_fn(|_| rng.gen_range(0..COLORS.len()));
            template_caption(&PersonSpec { person_id: i, colors }, &mut rng).0
        })
        .collect()
}

/// Parameters the loss of `step` depends on, in store order.
pub fn loss_params(model: &Model, step: Step) -> Vec<ParamId> {
    let Some(terms) = model.plan.terms(step) else { return Vec::new() };
    let mut ids: Vec<ParamId> = ALL_GROUPS.iter().filter(|&&g| terms.touches(g)).flat_map(|&g| model.group_params(g)).collect();
    ids.sort();
    ids
}

/// Finite-difference check of the full loss of one step on `batch`, with
/// every parameter the loss reaches treated as differentiable.
pub fn check_step_gradients(model: &Model, batch: &PairBatch, step: Step, loss: &LossOptions, opts: &GradCheckOptions) -> Result<GradCheckReport, GradCheckError> {
    let terms = model.plan.terms(step).ok_or(GradCheckError::Empty)?;
    let params = loss_params(model, step);
    let mut store = model.store.clone();
    let build = |g: &mut Graph, store: &_| {
        let mut s = Session::from_graph(store, std::mem::take(g));
        let l = model.step_loss(&mut s, batch, terms, step, loss).expect("batch shapes were checked");
        *g = s.g;
        l.total
    };
    if batch.images.shape().first() != Some(&batch.len()) || batch.text.len() != batch.len() {
        return Err(GradCheckError::Empty);
    }
    finite_difference_check(build, &mut store, &params, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ParamGroup, TextBatch};
    use crate::tensor::Tensor;
    use crate::training::StepPlan;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn batch() -> PairBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let images = Tensor::new(vec![4, 192, 64, 3], (0..4 * 192 * 64 * 3).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let text = TextBatch::new([
            (vec![1, 2, 3, 4], vec![vec![2, 3], vec![4]]),
            (vec![5, 6, 7], vec![vec![6, 7]]),
            (vec![8, 9, 1, 2, 3], vec![vec![9], vec![2], vec![3]]),
            (vec![4, 6], vec![]),
        ])
        .unwrap();
        PairBatch { images, text, labels: vec![0, 1, 2, 0] }
    }

    #[test]
    fn synthetic_batch_has_phrases() {
        let caps = synthetic_captions(40, 1);
        let vocab = Vocabulary::build(caps.iter().map(String::as_str), 1);
        let b = synthetic_batch(&vocab, &Lexicon::builtin(), 3, 4, 9);
        assert_eq!(b.images.shape(), [4, 192, 64, 3]);
        assert_eq!(b.labels, [0, 1, 2, 0]);
        assert!(b.text.phrase_counts().iter().all(|&m| m >= 2));
    }

    #[test]
    fn param_sets_follow_terms() {
        let m = Model::new(ModelConfig::desk(12, 3), StepPlan::default()).unwrap();
        let s3 = loss_params(&m, 3);
        assert!(m.group_params(ParamGroup::BfmMlpV).iter().all(|id| s3.contains(id)));
        assert!(m.group_params(ParamGroup::Classifier).iter().all(|id| !s3.contains(id)));
        let s2 = loss_params(&m, 2);
        assert!(m.group_params(ParamGroup::RgaMlpT).iter().all(|id| s2.contains(id)));
        assert!(m.group_params(ParamGroup::BfmMlpT).iter().all(|id| !s2.contains(id)));
    }

    #[test]
    fn small_check_passes_on_steps_two_and_three() {
        let m = Model::new(ModelConfig::desk(12, 3), StepPlan::default()).unwrap();
        let opts = GradCheckOptions { samples: 30, ..GradCheckOptions::default() };
        for step in [2, 3] {
            let r = check_step_gradients(&m, &batch(), step, &LossOptions::default(), &opts).unwrap();
            assert!(r.passed, "step {step}: {:?}", r.worst());
        }
    }
}
