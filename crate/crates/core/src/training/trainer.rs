use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, OptimError};
use super::checkpoint::{save_checkpoint, Checkpoint, CheckpointError, CheckpointMeta};
use super::config::TrainConfig;
use crate::autodiff::{GradMode, GraphError, ParamId, ParamStore, Step};
use crate::data::Dataset;
use crate::model::{images_to_nhwc, Model, ModelConfig, TextBatch};
use crate::objectives::{LossError, LossOptions, LossReport, PairBatch};
use crate::tensor::Tensor;
use crate::text::Vocabulary;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("step {requested} cannot run now; completed steps {completed:?}, next is {next:?}")]
    Order { requested: Step, completed: Vec<Step>, next: Option<Step> },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training data: {0}")]
    Data(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("step {step}, epoch {epoch}: {source}")]
    Optim { step: Step, epoch: usize, source: OptimError },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl From<crate::data::DataError> for TrainError {
    fn from(e: crate::data::DataError) -> Self {
        TrainError::Data(e.to_string())
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub loss: LossReport,
}

/// Caption tokens of every training pair, numericalized once.
pub struct PreparedPairs<'d> {
    data: &'d Dataset,
    /// (sample, caption slot)
    pub pairs: Vec<(usize, usize)>,
    text: Vec<(Vec<usize>, Vec<Vec<usize>>)>,
}

impl<'d> PreparedPairs<'d> {
    pub fn new(data: &'d Dataset, vocab: &Vocabulary) -> Result<Self, TrainError> {
        let pairs = data.pairs();
        let text = pairs.iter().map(|&(i, k)| data.encode_caption(vocab, i, k)).collect();
        for i in 0..data.len() {
            data.image(i)?;
        }
        Ok(Self { data, pairs, text })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Builds a batch from pair indices, mirroring the images flagged in `mirror`.
    pub fn batch(&self, indices: &[usize], mirror: &[bool]) -> Result<PairBatch, TrainError> {
        let mut images: Vec<&Tensor> = Vec::with_capacity(indices.len());
        for &p in indices {
            images.push(self.data.image(self.pairs[p].0)?);
        }
        let text = TextBatch::new(indices.iter().map(|&p| self.text[p].clone())).map_err(TrainError::Data)?;
        let labels = indices.iter().map(|&p| self.data.samples[self.pairs[p].0].label).collect();
        Ok(PairBatch { images: images_to_nhwc(&images, mirror), text, labels })
    }
}

/// Owns the model being trained together with everything saved alongside it.
pub struct Trainer {
    pub model: Model,
    pub vocab: Vocabulary,
    pub config: TrainConfig,
    pub completed: Vec<Step>,
    pub corpus: Option<String>,
}

impl Trainer {
    /// Fresh model with a vocabulary built from the training captions.
    pub fn new(data: &Dataset, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate().map_err(TrainError::Config)?;
        if data.is_empty() {
            return Err(TrainError::Data(format!("{} has no samples", data.manifest.display())));
        }
        let vocab = Vocabulary::build(data.caption_texts(), config.min_count);
        let mut mc = match config.model_size.as_str() {
            "full" => ModelConfig::full(vocab.size(), data.num_ids),
            _ => ModelConfig::desk(vocab.size(), data.num_ids),
        };
        mc.seed = config.seed;
        mc.temperature = config.temperature;
        let mut model = Model::new(mc, config.plan()).map_err(TrainError::Config)?;
        round_to_f32(&mut model.store);
        Ok(Self { model, vocab, config, completed: Vec::new(), corpus: None })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Self {
        Self { model: ck.model, vocab: ck.meta.vocab, config: ck.meta.train, completed: ck.meta.completed_steps, corpus: ck.meta.corpus }
    }

    pub fn next_step(&self) -> Option<Step> {
        self.model.plan.steps().iter().copied().find(|s| !self.completed.contains(s))
    }

    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            vocab: self.vocab.clone(),
            model: self.model.config.clone(),
            plan: self.model.plan,
            completed_steps: self.completed.clone(),
            train: self.config.clone(),
            corpus: self.corpus.clone(),
        }
    }

    pub fn save(&self, path: &Path, optimizer: Option<&Adam>) -> Result<(), TrainError> {
        save_checkpoint(path, &self.model, &self.meta(), optimizer)?;
        Ok(())
    }

    fn check_data(&self, data: &Dataset) -> Result<(), TrainError> {
        if data.num_ids != self.model.config.num_ids {
            return Err(TrainError::Data(format!(
                "training split has {} identities, model was built for {}",
                data.num_ids, self.model.config.num_ids
            )));
        }
        Ok(())
    }

    /// Runs one whole step with a fresh optimizer. Steps must run in plan
    /// order; each epoch's mean losses are passed to `on_epoch`.
    pub fn run_step(&mut self, data: &Dataset, step: Step, on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<(Vec<EpochLog>, Adam), TrainError> {
        let next = self.next_step();
        if next != Some(step) {
            return Err(TrainError::Order { requested: step, completed: self.completed.clone(), next });
        }
        self.check_data(data)?;
        let terms = self.model.plan.terms(step).expect("planned step has terms");
        let prepared = PreparedPairs::new(data, &self.vocab)?;
        let opts = LossOptions { margin: self.config.margin, same_id_negatives: self.config.same_id_negatives };
        let trainable: Vec<ParamId> = self
            .model
            .store
            .iter()
            .filter(|(_, p)| p.trainable_in_steps.contains(step))
            .map(|(id, _)| id)
            .collect();
        let mut adam = Adam::new(self.model.store.len());
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(step as u64);
        let schedule = self.config.schedule(step).clone();
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        let mut logs = Vec::with_capacity(schedule.epochs);
        for epoch in 0..schedule.epochs {
            let lr = schedule.lr_at(epoch);
            order.shuffle(&mut rng);
            let mut reports = Vec::new();
            for chunk in order.chunks(self.config.batch_size) {
                let mirror: Vec<bool> = chunk.iter().map(|_| self.config.mirror && rng.gen_bool(0.5)).collect();
                let batch = prepared.batch(chunk, &mirror)?;
                self.model.store.zero_grads();
                let (graph, loss) = {
                    let mut s = self.model.session(GradMode::Step(step));
                    let loss = self.model.step_loss(&mut s, &batch, terms, step, &opts)?;
                    (s.g, loss)
                };
                graph.backward(loss.total, &mut self.model.store)?;
                reports.push((loss.report(&graph)?, chunk.len()));
                adam.step(&mut self.model.store, &trainable, lr)
                    .map_err(|source| TrainError::Optim { step, epoch, source })?;
            }
            let log = EpochLog { epoch, lr, loss: LossReport::mean_of(&reports) };
            on_epoch(&log);
            logs.push(log);
        }
        round_to_f32(&mut self.model.store);
        self.completed.push(step);
        Ok((logs, adam))
    }

    /// Runs every remaining step, checkpointing after each one when `save_to` is set.
    pub fn run_all(&mut self, data: &Dataset, save_to: Option<&Path>, on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<Vec<EpochLog>, TrainError> {
        let mut all = Vec::new();
        while let Some(step) = self.next_step() {
            let (logs, adam) = self.run_step(data, step, on_epoch)?;
            all.extend(logs);
            if let Some(path) = save_to {
                self.save(path, Some(&adam))?;
            }
        }
        Ok(all)
    }
}

/// Checkpoints hold f32. Keeping parameters on that grid at step
/// boundaries lets a resumed run continue from exactly the state an
/// uninterrupted run has, and leaves frozen parameters bit-identical.
fn round_to_f32(store: &mut ParamStore) {
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.get_mut(id).value.data_mut() {
            *v = *v as f32 as f64;
        }
    }
}
