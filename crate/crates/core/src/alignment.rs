//! The five cross-modal similarities and their fusion.
//!
//! Every function here scores all image × caption combinations of a batch at
//! once and returns `[images, captions]` matrices, so the same code serves
//! training (square batches) and retrieval (rectangular galleries).

use serde::{Deserialize, Serialize};

use crate::autodiff::NodeId;
use crate::model::{ImageFeatures, Mlp, Model, Session, TextFeatures};
use crate::tensor::Tensor;

/// Score for padding slots; `exp` of it underflows to exactly zero.
const PAD_SCORE: f64 = -1e4;

/// Which similarity matrices to build.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Wanted {
    pub rga: bool,
    pub bfm: bool,
}

impl Wanted {
    pub const ALL: Wanted = Wanted { rga: true, bfm: true };
}

/// Similarity matrices `[images, captions]` for one batch.
#[derive(Clone, Copy, Debug)]
pub struct SimilarityNodes {
    pub s_g: NodeId,
    pub s_i: Option<NodeId>,
    pub s_t: Option<NodeId>,
    pub s_p: Option<NodeId>,
    pub s_n: Option<NodeId>,
}

/// Attention maps behind the similarities.
#[derive(Clone, Copy, Debug, Default)]
pub struct AttentionNodes {
    /// v: `[images, captions, n]`.
    pub v: Option<NodeId>,
    /// t: `[captions, images, M]` with padded phrase slots at zero weight.
    pub t: Option<NodeId>,
    /// α: `[P, images, n]`, one row per phrase.
    pub alpha: Option<NodeId>,
    /// β: `[captions, images·n, M]`.
    pub beta: Option<NodeId>,
}

/// Index bookkeeping for grouping phrases by caption into padded slots.
struct PhraseLayout {
    /// Row of each padded slot in `[P + 1]` (P = padding row), caption-major.
    gather: Vec<usize>,
    slots: usize,
    /// `[1, captions]` with 1 where the caption has phrases.
    has_phrases: Tensor,
    /// `[P, captions]` averaging matrix with 1/m_j entries.
    averaging: Tensor,
}

impl PhraseLayout {
    fn new(owner: &[usize], counts: &[usize]) -> Self {
        let captions = counts.len();
        let total = owner.len();
        let slots = counts.iter().copied().max().unwrap_or(0).max(1);
        let mut gather = vec![total; captions * slots];
        let mut fill = vec![0; captions];
        for (p, &j) in owner.iter().enumerate() {
            gather[j * slots + fill[j]] = p;
            fill[j] += 1;
        }
        let has = counts.iter().map(|&m| if m > 0 { 1.0 } else { 0.0 }).collect();
        let mut avg = vec![0.0; total.max(1) * captions];
        for (p, &j) in owner.iter().enumerate() {
            avg[p * captions + j] = 1.0 / counts[j] as f64;
        }
        Self {
            gather,
            slots,
            has_phrases: Tensor::new(vec![1, captions], has).expect("finite"),
            averaging: Tensor::new(vec![total.max(1), captions], avg).expect("finite"),
        }
    }
}

fn repeat_indices(block: usize, times: usize) -> Vec<usize> {
    (0..times).flat_map(|_| 0..block).collect()
}

impl Model {
    fn attention(&self, s: &mut Session, scores: NodeId) -> NodeId {
        let t = self.config.temperature;
        let scaled = if t == 1.0 { scores } else { s.g.scale(scores, 1.0 / t) };
        s.g.softmax(scaled)
    }

    /// Appends a padding row of `fill` and gathers rows into padded slots.
    fn pad_rows(&self, s: &mut Session, rows: NodeId, layout: &PhraseLayout, fill: f64) -> NodeId {
        let width = s.g.shape(rows)[1];
        let pad = s.g.input(Tensor::full(&[1, width], fill));
        let padded = s.g.concat(&[rows, pad], 0);
        s.g.gather_rows(padded, &layout.gather)
    }

    /// s_G: cosine of I and T.
    pub fn global_similarity(&self, s: &mut Session, img: &ImageFeatures, txt: &TextFeatures) -> NodeId {
        s.g.cosine_matrix(img.global, txt.global)
    }

    /// Relation-guided image→text direction: part attention v guided by T,
    /// aggregation of raw parts, lifted aggregate compared with T.
    pub fn rga_image_to_text(&self, s: &mut Session, img: &ImageFeatures, txt: &TextFeatures) -> (NodeId, NodeId) {
        let (bi, bc, n) = (img.batch, txt.batch(), self.config.parts);
        let pd = self.config.part_dim;
        let lifted = self.rga_mlp_v.forward(s, img.parts);
        let scores = s.g.cosine_matrix(lifted, txt.global);
        let scores = s.g.reshape(scores, &[bi, n, bc]);
        let scores = s.g.permute(scores, &[0, 2, 1]);
        let v = self.attention(s, scores);
        let parts = s.g.reshape(img.parts, &[bi, n, pd]);
        let agg = s.g.matmul(v, parts);
        let agg = s.g.reshape(agg, &[bi * bc, pd]);
        let agg = self.rga_mlp_v.forward(s, agg);
        let t_rep = s.g.gather_rows(txt.global, &repeat_indices(bc, bi));
        let sim = s.g.cosine(agg, t_rep);
        (s.g.reshape(sim, &[bi, bc]), v)
    }

    /// Relation-guided text→image direction: phrase attention t guided by I,
    /// aggregate of raw phrases compared with I.
    pub fn rga_text_to_image(&self, s: &mut Session, img: &ImageFeatures, txt: &TextFeatures, phrases: NodeId) -> (NodeId, NodeId) {
        let (bi, bc, d) = (img.batch, txt.batch(), self.config.joint_dim);
        let layout = PhraseLayout::new(&txt.owner, &txt.counts);
        let m = layout.slots;
        let lifted = self.rga_mlp_t.forward(s, phrases);
        let scores = s.g.cosine_matrix(lifted, img.global);
        let scores = self.pad_rows(s, scores, &layout, PAD_SCORE);
        let scores = s.g.reshape(scores, &[bc, m, bi]);
        let scores = s.g.permute(scores, &[0, 2, 1]);
        let t = self.attention(s, scores);
        let raw = self.pad_rows(s, phrases, &layout, 0.0);
        let raw = s.g.reshape(raw, &[bc, m, d]);
        let agg = s.g.matmul(t, raw);
        let agg = s.g.reshape(agg, &[bc * bi, d]);
        let i_rep = s.g.gather_rows(img.global, &repeat_indices(bi, bc));
        let sim = s.g.cosine(agg, i_rep);
        let sim = s.g.reshape(sim, &[bc, bi]);
        let sim = s.g.transpose(sim);
        let mask = s.g.input(layout.has_phrases);
        (s.g.mul(sim, mask), t)
    }

    /// Fine-grained matching in both directions. Returns (s_P, s_N, α, β).
    pub fn bfm(&self, s: &mut Session, img: &ImageFeatures, txt: &TextFeatures, phrases: NodeId) -> (NodeId, NodeId, NodeId, NodeId) {
        let (bi, bc, n) = (img.batch, txt.batch(), self.config.parts);
        let (pd, d) = (self.config.part_dim, self.config.joint_dim);
        let total = txt.owner.len();
        let layout = PhraseLayout::new(&txt.owner, &txt.counts);
        let m = layout.slots;
        let (mv, mt): (&Mlp, &Mlp) = (&self.bfm_mlp_v, &self.bfm_mlp_t);
        let lp = mv.forward(s, img.parts);
        let ln = mt.forward(s, phrases);
        let cos = s.g.cosine_matrix(ln, lp);
        let parts3 = s.g.reshape(img.parts, &[bi, n, pd]);

        // phrase direction: each phrase attends over the parts of each image
        let scores = s.g.reshape(cos, &[total, bi, n]);
        let alpha = self.attention(s, scores);
        let alpha_b = s.g.permute(alpha, &[1, 0, 2]);
        let agg = s.g.matmul(alpha_b, parts3);
        let agg = s.g.reshape(agg, &[bi * total, pd]);
        let agg = mv.forward(s, agg);
        let ln_rep = s.g.gather_rows(ln, &repeat_indices(total, bi));
        let per_phrase = s.g.cosine(agg, ln_rep);
        let per_phrase = s.g.reshape(per_phrase, &[bi, total]);
        let avg = s.g.input(layout.averaging.clone());
        let s_p = s.g.matmul(per_phrase, avg);

        // part direction: each part attends over the phrases of each caption
        let scores = self.pad_rows(s, cos, &layout, PAD_SCORE);
        let scores = s.g.reshape(scores, &[bc, m, bi * n]);
        let scores = s.g.permute(scores, &[0, 2, 1]);
        let beta = self.attention(s, scores);
        let raw = self.pad_rows(s, phrases, &layout, 0.0);
        let raw = s.g.reshape(raw, &[bc, m, d]);
        let agg = s.g.matmul(beta, raw);
        let agg = s.g.reshape(agg, &[bc * bi * n, d]);
        let agg = mt.forward(s, agg);
        let lp_rep = s.g.gather_rows(lp, &repeat_indices(bi * n, bc));
        let per_part = s.g.cosine(agg, lp_rep);
        let per_part = s.g.reshape(per_part, &[bc, bi, n]);
        let s_n = s.g.mean(per_part, 2);
        let s_n = s.g.transpose(s_n);
        let mask = s.g.input(layout.has_phrases);
        let s_n = s.g.mul(s_n, mask);
        (s_p, s_n, alpha, beta)
    }

    /// Builds the requested similarity matrices for all image × caption pairs.
    pub fn similarities(&self, s: &mut Session, img: &ImageFeatures, txt: &TextFeatures, wanted: Wanted) -> (SimilarityNodes, AttentionNodes) {
        let (bi, bc) = (img.batch, txt.batch());
        let s_g = self.global_similarity(s, img, txt);
        let mut sims = SimilarityNodes { s_g, s_i: None, s_t: None, s_p: None, s_n: None };
        let mut att = AttentionNodes::default();
        let zeros = |s: &mut Session| s.g.input(Tensor::zeros(&[bi, bc]));
        if wanted.rga {
            let (s_i, v) = self.rga_image_to_text(s, img, txt);
            sims.s_i = Some(s_i);
            att.v = Some(v);
            sims.s_t = Some(match txt.phrases {
                Some(ph) => {
                    let (s_t, t) = self.rga_text_to_image(s, img, txt, ph);
                    att.t = Some(t);
                    s_t
                }
                None => zeros(s),
            });
        }
        if wanted.bfm {
            match txt.phrases {
                Some(ph) => {
                    let (s_p, s_n, alpha, beta) = self.bfm(s, img, txt, ph);
                    sims.s_p = Some(s_p);
                    sims.s_n = Some(s_n);
                    att.alpha = Some(alpha);
                    att.beta = Some(beta);
                }
                None => {
                    sims.s_p = Some(zeros(s));
                    sims.s_n = Some(zeros(s));
                }
            }
        }
        (sims, att)
    }
}

/// The five similarities of one image–caption pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimilarityBundle {
    pub s_g: f64,
    pub s_i: f64,
    pub s_t: f64,
    pub s_p: f64,
    pub s_n: f64,
}

impl SimilarityBundle {
    pub fn s_r(&self) -> f64 {
        (self.s_i + self.s_t) / 2.0
    }

    pub fn s_l(&self) -> f64 {
        (self.s_p + self.s_n) / 2.0
    }

    /// `s_G + λ1·s_R + λ2·s_L`; zero weights contribute nothing, so
    /// `fuse(0, 0)` returns `s_G` bit-exactly.
    pub fn fuse(&self, lambda1: f64, lambda2: f64) -> f64 {
        let mut f = self.s_g;
        if lambda1 != 0.0 {
            f += lambda1 * self.s_r();
        }
        if lambda2 != 0.0 {
            f += lambda2 * self.s_l();
        }
        f
    }
}

#[cfg(test)]
mod tests;
