//! Learnable parameters of the full model and the encoders built on them.

mod encoders;

pub use encoders::{images_to_nhwc, ImageFeatures, TextBatch, TextFeatures};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{GradMode, Graph, NodeId, ParamError, ParamId, ParamStore, StepSet};
use crate::tensor::Tensor;
use crate::training::StepPlan;

/// Architecture sizes. `desk()` is the default used for training on the
/// synthetic corpus; `full()` has the full-size dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub num_ids: usize,
    pub embed_dim: usize,
    /// GRU hidden size per direction.
    pub hidden: usize,
    /// Shared dimension of I, T, N_j and MLP outputs.
    pub joint_dim: usize,
    /// Part feature dimension before lifting.
    pub part_dim: usize,
    pub mlp_hidden: usize,
    /// Output channels of the four stride-2 backbone blocks.
    pub channels: Vec<usize>,
    pub parts: usize,
    pub image_h: usize,
    pub image_w: usize,
    /// Softmax temperature for all attention maps.
    pub temperature: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn desk(vocab_size: usize, num_ids: usize) -> Self {
        Self {
            vocab_size,
            num_ids,
            embed_dim: 32,
            hidden: 64,
            joint_dim: 128,
            part_dim: 64,
            mlp_hidden: 128,
            channels: vec![8, 16, 32, 64],
            parts: 6,
            image_h: 192,
            image_w: 64,
            temperature: 1.0,
            seed: 42,
        }
    }

    pub fn full(vocab_size: usize, num_ids: usize) -> Self {
        Self {
            embed_dim: 300,
            hidden: 1024,
            joint_dim: 1024,
            part_dim: 256,
            mlp_hidden: 512,
            channels: vec![8, 16, 32, 512],
            ..Self::desk(vocab_size, num_ids)
        }
    }

    /// Feature-map height and width after the backbone.
    pub fn feature_hw(&self) -> (usize, usize) {
        let f = 1 << self.channels.len();
        (self.image_h / f, self.image_w / f)
    }

    pub fn feature_channels(&self) -> usize {
        *self.channels.last().expect("backbone has at least one block")
    }

    pub fn validate(&self) -> Result<(), String> {
        let (fh, fw) = self.feature_hw();
        if self.channels.is_empty() {
            return Err("backbone needs at least one block".into());
        }
        if fh == 0 || fw == 0 || self.image_h % (1 << self.channels.len()) != 0 || self.image_w % (1 << self.channels.len()) != 0 {
            return Err(format!("image {}x{} does not reduce evenly through {} stride-2 blocks", self.image_h, self.image_w, self.channels.len()));
        }
        if self.parts == 0 || fh % self.parts != 0 {
            return Err(format!("feature height {fh} is not divisible by {} parts", self.parts));
        }
        if self.num_ids < 2 {
            return Err(format!("identity objective needs at least 2 identities, got {}", self.num_ids));
        }
        if self.temperature <= 0.0 {
            return Err("temperature must be positive".into());
        }
        Ok(())
    }
}

/// Parameter groups, the unit of step freezing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Backbone,
    GlobalVisualFc,
    PartConv,
    Embedding,
    Gru,
    SentenceFc,
    PhraseFc,
    RgaMlpV,
    RgaMlpT,
    BfmMlpV,
    BfmMlpT,
    Classifier,
}

/// A graph bound to a parameter store; each parameter enters the tape once.
pub struct Session<'a> {
    pub g: Graph,
    store: &'a ParamStore,
    bound: Vec<Option<NodeId>>,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ParamStore, mode: GradMode) -> Self {
        Self {
            g: Graph::with_mode(mode),
            store,
            bound: vec![None; store.len()],
        }
    }

    /// Continues recording onto an existing graph.
    pub fn from_graph(store: &'a ParamStore, g: Graph) -> Self {
        Self { g, store, bound: vec![None; store.len()] }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn p(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.bound[id.index()] {
            return n;
        }
        let n = self.g.param(self.store, id);
        self.bound[id.index()] = Some(n);
        n
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    /// `x·W + b` over rows of `x`.
    pub fn forward(&self, s: &mut Session, x: NodeId) -> NodeId {
        let (w, b) = (s.p(self.weight), s.p(self.bias));
        s.g.affine(x, w, b)
    }
}

/// Linear → ReLU → linear.
#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub layer1: Linear,
    pub layer2: Linear,
}

impl Mlp {
    pub fn forward(&self, s: &mut Session, x: NodeId) -> NodeId {
        let h = self.layer1.forward(s, x);
        let h = s.g.relu(h);
        self.layer2.forward(s, h)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GruDirection {
    /// Input projection `[E, 3H]` for update, reset and candidate.
    pub w_x: ParamId,
    /// Recurrent projection `[H, 2H]` for update and reset.
    pub u_zr: ParamId,
    /// Recurrent projection `[H, H]` for the candidate.
    pub u_h: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub kernel: ParamId,
    pub bias: ParamId,
}

/// Handles to every learnable tensor, grouped by module.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub plan: StepPlan,
    pub store: ParamStore,
    pub backbone: Vec<ConvBlock>,
    pub visual_fc: Linear,
    pub part_conv: Linear,
    pub embedding: ParamId,
    pub gru_fwd: GruDirection,
    pub gru_bwd: GruDirection,
    pub sentence_fc: Linear,
    pub phrase_fc: Linear,
    pub rga_mlp_v: Mlp,
    pub rga_mlp_t: Mlp,
    pub bfm_mlp_v: Mlp,
    pub bfm_mlp_t: Mlp,
    pub classifier: Linear,
}

struct Builder<'a> {
    store: ParamStore,
    rng: ChaCha8Rng,
    plan: &'a StepPlan,
}

impl Builder<'_> {
    fn steps(&self, group: ParamGroup) -> StepSet {
        self.plan.trainable(group)
    }

    /// Glorot-uniform matrix with the given fans.
    fn glorot(&mut self, name: &str, shape: &[usize], fan_in: usize, fan_out: usize, group: ParamGroup) -> Result<ParamId, ParamError> {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-a..a)).collect();
        let t = Tensor::new(shape.to_vec(), data).expect("finite init");
        self.store.register(name, t, self.steps(group))
    }

    fn zeros(&mut self, name: &str, shape: &[usize], group: ParamGroup) -> Result<ParamId, ParamError> {
        self.store.register(name, Tensor::zeros(shape), self.steps(group))
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize, group: ParamGroup) -> Result<Linear, ParamError> {
        Ok(Linear {
            weight: self.glorot(&format!("{prefix}.weight"), &[fan_in, fan_out], fan_in, fan_out, group)?,
            bias: self.zeros(&format!("{prefix}.bias"), &[fan_out], group)?,
        })
    }

    fn mlp(&mut self, prefix: &str, input: usize, hidden: usize, output: usize, group: ParamGroup) -> Result<Mlp, ParamError> {
        Ok(Mlp {
            layer1: self.linear(&format!("{prefix}.layer1"), input, hidden, group)?,
            layer2: self.linear(&format!("{prefix}.layer2"), hidden, output, group)?,
        })
    }

    fn gru(&mut self, prefix: &str, e: usize, h: usize) -> Result<GruDirection, ParamError> {
        Ok(GruDirection {
            w_x: self.glorot(&format!("{prefix}.w_x"), &[e, 3 * h], e, h, ParamGroup::Gru)?,
            u_zr: self.glorot(&format!("{prefix}.u_zr"), &[h, 2 * h], h, h, ParamGroup::Gru)?,
            u_h: self.glorot(&format!("{prefix}.u_h"), &[h, h], h, h, ParamGroup::Gru)?,
            bias: self.zeros(&format!("{prefix}.bias"), &[3 * h], ParamGroup::Gru)?,
        })
    }
}

impl Model {
    pub fn new(config: ModelConfig, plan: StepPlan) -> Result<Self, String> {
        config.validate()?;
        let mut b = Builder {
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            plan: &plan,
        };
        let c = &config;
        let build = |b: &mut Builder| -> Result<Model, ParamError> {
            let mut backbone = Vec::new();
            let mut cin = 3;
            for (i, &cout) in c.channels.iter().enumerate() {
                backbone.push(ConvBlock {
                    kernel: b.glorot(&format!("backbone.conv{i}.weight"), &[3, 3, cin, cout], 9 * cin, 9 * cout, ParamGroup::Backbone)?,
                    bias: b.zeros(&format!("backbone.conv{i}.bias"), &[cout], ParamGroup::Backbone)?,
                });
                cin = cout;
            }
            let cf = c.feature_channels();
            let (e, h, d) = (c.embed_dim, c.hidden, c.joint_dim);
            Ok(Model {
                visual_fc: b.linear("visual.fc", cf, d, ParamGroup::GlobalVisualFc)?,
                part_conv: b.linear("visual.part_conv", cf, c.part_dim, ParamGroup::PartConv)?,
                embedding: b.glorot("text.embedding", &[c.vocab_size, e], c.vocab_size, e, ParamGroup::Embedding)?,
                gru_fwd: b.gru("text.gru.fwd", e, h)?,
                gru_bwd: b.gru("text.gru.bwd", e, h)?,
                sentence_fc: b.linear("text.sentence_fc", 2 * h, d, ParamGroup::SentenceFc)?,
                phrase_fc: b.linear("text.phrase_fc", 2 * h, d, ParamGroup::PhraseFc)?,
                rga_mlp_v: b.mlp("rga.mlp_v", c.part_dim, c.mlp_hidden, d, ParamGroup::RgaMlpV)?,
                rga_mlp_t: b.mlp("rga.mlp_t", d, c.mlp_hidden, d, ParamGroup::RgaMlpT)?,
                bfm_mlp_v: b.mlp("bfm.mlp_v", c.part_dim, c.mlp_hidden, d, ParamGroup::BfmMlpV)?,
                bfm_mlp_t: b.mlp("bfm.mlp_t", d, c.mlp_hidden, d, ParamGroup::BfmMlpT)?,
                classifier: b.linear("classifier", d, c.num_ids, ParamGroup::Classifier)?,
                backbone,
                config: c.clone(),
                plan,
                store: ParamStore::new(),
            })
        };
        let mut model = build(&mut b).map_err(|e| e.to_string())?;
        model.store = b.store;
        Ok(model)
    }

    /// Names of the parameters in a group.
    pub fn group_params(&self, group: ParamGroup) -> Vec<ParamId> {
        let lin = |l: &Linear| vec![l.weight, l.bias];
        let mlp = |m: &Mlp| [lin(&m.layer1), lin(&m.layer2)].concat();
        let gru = |g: &GruDirection| vec![g.w_x, g.u_zr, g.u_h, g.bias];
        match group {
            ParamGroup::Backbone => self.backbone.iter().flat_map(|c| [c.kernel, c.bias]).collect(),
            ParamGroup::GlobalVisualFc => lin(&self.visual_fc),
            ParamGroup::PartConv => lin(&self.part_conv),
            ParamGroup::Embedding => vec![self.embedding],
            ParamGroup::Gru => [gru(&self.gru_fwd), gru(&self.gru_bwd)].concat(),
            ParamGroup::SentenceFc => lin(&self.sentence_fc),
            ParamGroup::PhraseFc => lin(&self.phrase_fc),
            ParamGroup::RgaMlpV => mlp(&self.rga_mlp_v),
            ParamGroup::RgaMlpT => mlp(&self.rga_mlp_t),
            ParamGroup::BfmMlpV => mlp(&self.bfm_mlp_v),
            ParamGroup::BfmMlpT => mlp(&self.bfm_mlp_t),
            ParamGroup::Classifier => lin(&self.classifier),
        }
    }

    pub fn session(&self, mode: GradMode) -> Session<'_> {
        Session::new(&self.store, mode)
    }
}

pub const ALL_GROUPS: [ParamGroup; 12] = [
    ParamGroup::Backbone,
    ParamGroup::GlobalVisualFc,
    ParamGroup::PartConv,
    ParamGroup::Embedding,
    ParamGroup::Gru,
    ParamGroup::SentenceFc,
    ParamGroup::PhraseFc,
    ParamGroup::RgaMlpV,
    ParamGroup::RgaMlpT,
    ParamGroup::BfmMlpV,
    ParamGroup::BfmMlpT,
    ParamGroup::Classifier,
];

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Model {
        Model::new(ModelConfig::desk(20, 4), StepPlan::default()).unwrap()
    }

    #[test]
    fn groups_partition_the_store() {
        let m = tiny();
        let mut all: Vec<ParamId> = ALL_GROUPS.iter().flat_map(|&g| m.group_params(g)).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), m.store.len());
    }

    #[test]
    fn init_is_seeded() {
        let (a, b) = (tiny(), tiny());
        for ((_, p), (_, q)) in a.store.iter().zip(b.store.iter()) {
            assert_eq!(p.value, q.value);
        }
        let mut cfg = ModelConfig::desk(20, 4);
        cfg.seed = 1;
        let c = Model::new(cfg, StepPlan::default()).unwrap();
        assert_ne!(a.store.by_name("text.embedding").unwrap().value, c.store.by_name("text.embedding").unwrap().value);
    }

    #[test]
    fn biases_start_at_zero_and_weights_within_bound() {
        let m = tiny();
        let w = &m.store.get(m.visual_fc.weight).value;
        let a = (6.0 / (64.0 + 128.0f64)).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= a));
        assert!(m.store.get(m.visual_fc.bias).value.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::desk(20, 4);
        cfg.parts = 5;
        assert!(cfg.validate().unwrap_err().contains("divisible"));
        let mut cfg = ModelConfig::desk(20, 1);
        assert!(cfg.validate().is_err());
        cfg.num_ids = 2;
        assert_eq!(ModelConfig::desk(20, 2).feature_hw(), (12, 4));
    }
}
