use serde::{Deserialize, Serialize};

use crate::alignment::{SimilarityBundle, Wanted};
use crate::autodiff::GradMode;
use crate::model::{images_to_nhwc, ImageFeatures, Model, TextBatch};
use crate::tensor::Tensor;

use super::recall::Granularity;

/// Encoded gallery: I rows `[G, D]` and stacked parts `[G·n, part_dim]`.
#[derive(Clone, Debug)]
pub struct Gallery {
    pub global: Tensor,
    pub parts: Tensor,
    pub len: usize,
}

/// The five similarity matrices, each `[queries, gallery]`.
#[derive(Clone, Debug)]
pub struct ScoreMatrices {
    pub queries: usize,
    pub gallery: usize,
    pub s_g: Vec<f64>,
    pub s_i: Vec<f64>,
    pub s_t: Vec<f64>,
    pub s_p: Vec<f64>,
    pub s_n: Vec<f64>,
}

impl ScoreMatrices {
    pub fn bundle(&self, q: usize, g: usize) -> SimilarityBundle {
        let k = q * self.gallery + g;
        SimilarityBundle { s_g: self.s_g[k], s_i: self.s_i[k], s_t: self.s_t[k], s_p: self.s_p[k], s_n: self.s_n[k] }
    }

    /// One similarity per entry under the selector; λ only affects s_F.
    pub fn select(&self, granularity: Granularity, lambda1: f64, lambda2: f64) -> Tensor {
        let data = (0..self.queries * self.gallery)
            .map(|k| {
                let b = self.bundle(k / self.gallery.max(1), k % self.gallery.max(1));
                match granularity {
                    Granularity::SG => b.s_g,
                    Granularity::SR => b.s_r(),
                    Granularity::SL => b.s_l(),
                    Granularity::SF => b.fuse(lambda1, lambda2),
                }
            })
            .collect();
        Tensor::new(vec![self.queries, self.gallery], data).expect("finite similarities")
    }

    pub fn transposed(&self) -> Self {
        let t = |m: &[f64]| {
            let mut out = vec![0.0; m.len()];
            for q in 0..self.queries {
                for g in 0..self.gallery {
                    out[g * self.queries + q] = m[q * self.gallery + g];
                }
            }
            out
        };
        Self {
            queries: self.gallery,
            gallery: self.queries,
            s_g: t(&self.s_g),
            s_i: t(&self.s_i),
            s_t: t(&self.s_t),
            s_p: t(&self.s_p),
            s_n: t(&self.s_n),
        }
    }
}

/// Attention maps of one image–caption pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairAttention {
    pub pair_id: String,
    /// Part weights guided by the caption, length n.
    pub v: Vec<f64>,
    /// Phrase weights guided by the image, length m.
    pub t: Vec<f64>,
    /// Per phrase, weights over parts (m × n).
    pub alpha: Vec<Vec<f64>>,
    /// Per part, weights over phrases (n × m).
    pub beta: Vec<Vec<f64>>,
}

const CHUNK: usize = 32;

impl Model {
    pub fn encode_gallery(&self, images: &[&Tensor]) -> Gallery {
        let d = self.config.joint_dim;
        let pd = self.config.part_dim;
        let mut global = Vec::with_capacity(images.len() * d);
        let mut parts = Vec::with_capacity(images.len() * self.config.parts * pd);
        for chunk in images.chunks(CHUNK) {
            let mut s = self.session(GradMode::Off);
            let batch = images_to_nhwc(chunk, &[]);
            let f = self.encode_images(&mut s, &batch);
            global.extend_from_slice(s.g.value(f.global).expect("forward pass").data());
            parts.extend_from_slice(s.g.value(f.parts).expect("forward pass").data());
        }
        let n = images.len();
        Gallery {
            global: Tensor::new(vec![n, d], global).expect("finite features"),
            parts: Tensor::new(vec![n * self.config.parts, pd], parts).expect("finite features"),
            len: n,
        }
    }

    /// Scores every query against the whole gallery. `attend[q]` names the
    /// gallery image whose attention maps are kept for query `q`.
    pub fn score_queries(&self, gallery: &Gallery, queries: &TextBatch, attend: Option<&[(usize, String)]>) -> (ScoreMatrices, Vec<PairAttention>) {
        let (nq, ng, n) = (queries.len(), gallery.len, self.config.parts);
        let mut out = ScoreMatrices {
            queries: nq,
            gallery: ng,
            s_g: vec![0.0; nq * ng],
            s_i: vec![0.0; nq * ng],
            s_t: vec![0.0; nq * ng],
            s_p: vec![0.0; nq * ng],
            s_n: vec![0.0; nq * ng],
        };
        let mut attention = Vec::new();
        let all: Vec<usize> = (0..nq).collect();
        for (c, chunk) in all.chunks(CHUNK).enumerate() {
            let first = c * CHUNK;
            let sub = queries.subset(chunk);
            let mut s = self.session(GradMode::Off);
            let img = ImageFeatures { global: s.g.input(gallery.global.clone()), parts: s.g.input(gallery.parts.clone()), batch: ng };
            let txt = self.encode_text(&mut s, &sub);
            let (sims, att) = self.similarities(&mut s, &img, &txt, Wanted::ALL);
            let value = |id| s.g.value(id).expect("forward pass").data().to_vec();
            let targets = [
                (&mut out.s_g, Some(sims.s_g)),
                (&mut out.s_i, sims.s_i),
                (&mut out.s_t, sims.s_t),
                (&mut out.s_p, sims.s_p),
                (&mut out.s_n, sims.s_n),
            ];
            for (dst, node) in targets {
                let Some(node) = node else { continue };
                // node values are [gallery, chunk]
                let m = value(node);
                for (qc, q) in chunk.iter().enumerate() {
                    for g in 0..ng {
                        dst[q * ng + g] = m[g * chunk.len() + qc];
                    }
                }
            }
            let Some(attend) = attend else { continue };
            let bc = chunk.len();
            let v = att.v.map(value);
            let t = att.t.map(|id| (s.g.shape(id)[2], value(id)));
            let alpha = att.alpha.map(value);
            let beta = att.beta.map(|id| (s.g.shape(id)[2], value(id)));
            let mut phrase_rows = vec![Vec::new(); bc];
            for (p, &o) in sub.owner.iter().enumerate() {
                phrase_rows[o].push(p);
            }
            for (qc, &q) in chunk.iter().enumerate() {
                let (gi, ref pair_id) = attend[q];
                let m = txt.counts[qc];
                let mut pa = PairAttention { pair_id: pair_id.clone(), v: Vec::new(), t: Vec::new(), alpha: Vec::new(), beta: Vec::new() };
                if let Some(v) = &v {
                    let at = (gi * bc + qc) * n;
                    pa.v = v[at..at + n].to_vec();
                }
                if let Some((mm, t)) = &t {
                    let at = (qc * ng + gi) * mm;
                    pa.t = t[at..at + m].to_vec();
                }
                if let Some(alpha) = &alpha {
                    pa.alpha = phrase_rows[qc].iter().map(|&p| alpha[(p * ng + gi) * n..(p * ng + gi + 1) * n].to_vec()).collect();
                }
                if let Some((mm, beta)) = &beta {
                    pa.beta = (0..n)
                        .map(|k| {
                            let at = (qc * ng * n + gi * n + k) * mm;
                            beta[at..at + m].to_vec()
                        })
                        .collect();
                }
                debug_assert!(first + qc == q);
                attention.push(pa);
            }
        }
        (out, attention)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::training::StepPlan;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn images(count: usize, seed: u64) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| Tensor::new(vec![3, 192, 64], (0..3 * 192 * 64).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap())
            .collect()
    }

    fn queries() -> TextBatch {
        TextBatch::new([
            (vec![1, 2, 3], vec![vec![2, 3]]),
            (vec![4, 5], vec![]),
            (vec![6, 7, 8, 9], vec![vec![6], vec![8, 9]]),
        ])
        .unwrap()
    }

    #[test]
    fn cached_gallery_matches_direct_batch() {
        let model = Model::new(ModelConfig::desk(12, 3), StepPlan::default()).unwrap();
        let imgs = images(2, 1);
        let refs: Vec<&Tensor> = imgs.iter().collect();
        let gal = model.encode_gallery(&refs);
        let q = queries();
        let attend: Vec<(usize, String)> = vec![(0, "a".into()), (1, "b".into()), (1, "c".into())];
        let (scores, att) = model.score_queries(&gal, &q, Some(&attend));

        let mut s = model.session(GradMode::Off);
        let img = model.encode_images(&mut s, &images_to_nhwc(&refs, &[]));
        let txt = model.encode_text(&mut s, &q);
        let (sims, nodes) = model.similarities(&mut s, &img, &txt, Wanted::ALL);
        let direct = s.g.value(sims.s_p.unwrap()).unwrap();
        for qi in 0..3 {
            for g in 0..2 {
                assert!((scores.bundle(qi, g).s_p - direct.data()[g * 3 + qi]).abs() < 1e-12);
            }
        }
        // caption without phrases
        assert_eq!(scores.bundle(1, 0).s_t, 0.0);
        assert!(att[1].t.is_empty() && att[1].alpha.is_empty());
        let v = s.g.value(nodes.v.unwrap()).unwrap();
        assert_eq!(att[2].v, v.data()[30..36].to_vec());
        assert_eq!(att[2].alpha.len(), 2);
        assert_eq!(att[2].beta.len(), 6);
        for row in att[2].alpha.iter().chain(&att[2].beta).chain([&att[2].v, &att[2].t]) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let t = scores.transposed();
        assert_eq!(t.bundle(1, 2), scores.bundle(2, 1));
    }
}
