use super::{GruDirection, Model, Session};
use crate::autodiff::NodeId;
use crate::tensor::Tensor;

/// Visual encodings for a batch of images.
#[derive(Clone, Copy, Debug)]
pub struct ImageFeatures {
    /// I, `[B, D]`.
    pub global: NodeId,
    /// P_k stacked image-major, `[B·n, part_dim]`.
    pub parts: NodeId,
    pub batch: usize,
}

/// Token indices for a batch of captions and their noun phrases.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TextBatch {
    pub captions: Vec<Vec<usize>>,
    pub phrases: Vec<Vec<usize>>,
    /// Caption index of every phrase.
    pub owner: Vec<usize>,
}

impl TextBatch {
    /// Each caption comes with its phrases' index lists.
    pub fn new(items: impl IntoIterator<Item = (Vec<usize>, Vec<Vec<usize>>)>) -> Result<Self, String> {
        let mut batch = TextBatch::default();
        for (j, (caption, phrases)) in items.into_iter().enumerate() {
            if caption.is_empty() {
                return Err(format!("caption {j} has no tokens"));
            }
            for p in phrases {
                if p.is_empty() {
                    return Err(format!("caption {j} has an empty phrase"));
                }
                batch.phrases.push(p);
                batch.owner.push(j);
            }
            batch.captions.push(caption);
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.captions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.captions.is_empty()
    }

    pub fn phrase_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.captions.len()];
        for &o in &self.owner {
            counts[o] += 1;
        }
        counts
    }

    pub fn subset(&self, captions: &[usize]) -> TextBatch {
        let mut out = TextBatch::default();
        for (new, &j) in captions.iter().enumerate() {
            out.captions.push(self.captions[j].clone());
            for (p, &o) in self.phrases.iter().zip(&self.owner) {
                if o == j {
                    out.phrases.push(p.clone());
                    out.owner.push(new);
                }
            }
        }
        out
    }
}

/// Textual encodings for a batch of captions.
#[derive(Clone, Debug)]
pub struct TextFeatures {
    /// T, `[Bc, D]`.
    pub global: NodeId,
    /// N_j of every phrase in batch order, `[P, D]`; `None` when no caption has phrases.
    pub phrases: Option<NodeId>,
    pub owner: Vec<usize>,
    pub counts: Vec<usize>,
}

impl TextFeatures {
    pub fn batch(&self) -> usize {
        self.counts.len()
    }
}

/// Converts stored `[3, H, W]` images into one NHWC batch, optionally mirrored.
pub fn images_to_nhwc(images: &[&Tensor], mirror: &[bool]) -> Tensor {
    let (h, w) = (images[0].shape()[1], images[0].shape()[2]);
    let mut data = Vec::with_capacity(images.len() * h * w * 3);
    for (i, img) in images.iter().enumerate() {
        assert_eq!(img.shape(), [3, h, w], "images must share shape [3, H, W]");
        let flip = mirror.get(i).copied().unwrap_or(false);
        let d = img.data();
        for y in 0..h {
            for x in 0..w {
                let sx = if flip { w - 1 - x } else { x };
                for c in 0..3 {
                    data.push(d[(c * h + y) * w + sx]);
                }
            }
        }
    }
    Tensor::new(vec![images.len(), h, w, 3], data).expect("image batch is finite")
}

impl Model {
    /// Four stride-2 conv + ReLU blocks: `[B, H, W, 3]` → `[B, H/16, W/16, Cf]`.
    pub fn feature_map(&self, s: &mut Session, images: NodeId) -> NodeId {
        let mut x = images;
        for block in &self.backbone {
            let (k, b) = (s.p(block.kernel), s.p(block.bias));
            x = s.g.conv2d(x, k, 2, 1);
            x = s.g.add(x, b);
            x = s.g.relu(x);
        }
        x
    }

    pub fn encode_images(&self, s: &mut Session, images: &Tensor) -> ImageFeatures {
        let c = &self.config;
        let batch = images.shape()[0];
        let expected = [batch, c.image_h, c.image_w, 3];
        let x = s.g.input(images.clone());
        let x = if images.shape() == expected { x } else { s.g.reshape(x, &expected) };
        let fm = self.feature_map(s, x);
        let global = self.global_visual(s, fm);
        let parts = self.part_features(s, fm);
        ImageFeatures { global, parts, batch }
    }

    /// Mean pooling over all positions, then the global FC.
    pub fn global_visual(&self, s: &mut Session, fm: NodeId) -> NodeId {
        let (fh, fw) = self.config.feature_hw();
        let cf = self.config.feature_channels();
        let b = s.g.shape(fm)[0];
        let flat = s.g.reshape(fm, &[b, fh * fw, cf]);
        let pooled = s.g.mean(flat, 1);
        self.visual_fc.forward(s, pooled)
    }

    /// Pooled horizontal stripes, `[B·n, Cf]`, before the shared 1×1 conv.
    pub fn stripe_means(&self, s: &mut Session, fm: NodeId) -> NodeId {
        let (fh, fw) = self.config.feature_hw();
        let (cf, n) = (self.config.feature_channels(), self.config.parts);
        let b = s.g.shape(fm)[0];
        let stripes = s.g.reshape(fm, &[b * n, (fh / n) * fw, cf]);
        s.g.mean(stripes, 1)
    }

    pub fn part_features(&self, s: &mut Session, fm: NodeId) -> NodeId {
        let pooled = self.stripe_means(s, fm);
        self.part_conv.forward(s, pooled)
    }

    /// Final forward and backward Bi-GRU states `[S, 2H]` for each sequence.
    pub fn encode_sequences(&self, s: &mut Session, seqs: &[Vec<usize>]) -> NodeId {
        let n = seqs.len();
        let len = seqs.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let mut idx = Vec::with_capacity(len * n);
        for t in 0..len {
            idx.extend(seqs.iter().map(|q| q.get(t).copied().unwrap_or(0)));
        }
        let masks: Vec<Option<NodeId>> = (0..len)
            .map(|t| {
                if seqs.iter().all(|q| t < q.len()) {
                    None
                } else {
                    let m = seqs.iter().map(|q| if t < q.len() { 1.0 } else { 0.0 }).collect();
                    Some(s.g.input(Tensor::new(vec![n, 1], m).expect("finite mask")))
                }
            })
            .collect();
        let table = s.p(self.embedding);
        let emb = s.g.gather_rows(table, &idx);
        let fwd = self.run_gru(s, &self.gru_fwd, emb, &masks, n, (0..len).collect());
        let bwd = self.run_gru(s, &self.gru_bwd, emb, &masks, n, (0..len).rev().collect());
        s.g.concat(&[fwd, bwd], 1)
    }

    fn run_gru(&self, s: &mut Session, dir: &GruDirection, emb: NodeId, masks: &[Option<NodeId>], n: usize, order: Vec<usize>) -> NodeId {
        let h_dim = self.config.hidden;
        let len = masks.len();
        let (wx, b, uzr, uh) = (s.p(dir.w_x), s.p(dir.bias), s.p(dir.u_zr), s.p(dir.u_h));
        let proj = s.g.affine(emb, wx, b);
        let proj = s.g.reshape(proj, &[len, n, 3 * h_dim]);
        let mut h = s.g.input(Tensor::zeros(&[n, h_dim]));
        for t in order {
            let xt = s.g.slice(proj, 0, t, 1);
            let xt = s.g.reshape(xt, &[n, 3 * h_dim]);
            let x_zr = s.g.slice(xt, 1, 0, 2 * h_dim);
            let x_h = s.g.slice(xt, 1, 2 * h_dim, h_dim);
            let h_zr = s.g.matmul(h, uzr);
            let pre = s.g.add(x_zr, h_zr);
            let zr = s.g.sigmoid(pre);
            let z = s.g.slice(zr, 1, 0, h_dim);
            let r = s.g.slice(zr, 1, h_dim, h_dim);
            let rh = s.g.mul(r, h);
            let rh_u = s.g.matmul(rh, uh);
            let cand_pre = s.g.add(x_h, rh_u);
            let cand = s.g.tanh(cand_pre);
            let diff = s.g.sub(cand, h);
            let mut delta = s.g.mul(z, diff);
            if let Some(m) = masks[t] {
                delta = s.g.mul(delta, m);
            }
            h = s.g.add(h, delta);
        }
        h
    }

    pub fn encode_text(&self, s: &mut Session, batch: &TextBatch) -> TextFeatures {
        let hidden = self.encode_sequences(s, &batch.captions);
        let global = self.sentence_fc.forward(s, hidden);
        let phrases = (!batch.phrases.is_empty()).then(|| {
            let hidden = self.encode_sequences(s, &batch.phrases);
            self.phrase_fc.forward(s, hidden)
        });
        TextFeatures {
            global,
            phrases,
            owner: batch.owner.clone(),
            counts: batch.phrase_counts(),
        }
    }
}
