use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::recall::{EvalError, Granularity, RetrievalReport};
use super::scores::{PairAttention, ScoreMatrices};
use crate::data::{Dataset, MaskEntry};
use crate::model::{Model, TextBatch};
use crate::tensor::Tensor;
use crate::text::Vocabulary;
use crate::training::Trained;

/// Number of horizontal bands the mention masks refer to.
pub const MASK_BANDS: usize = 6;

/// Cached similarity bundle of a whole split: captions are queries, images the gallery.
pub struct Evaluator {
    pub scores: ScoreMatrices,
    pub query_ids: Vec<usize>,
    pub gallery_ids: Vec<usize>,
    /// Caption id of every query.
    pub query_names: Vec<String>,
    pub trained: Trained,
    /// Attention of each query with its own image, when requested.
    pub attention: Vec<PairAttention>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda1: f64,
    pub lambda2: f64,
    #[serde(rename = "R@1")]
    pub r1: f64,
    #[serde(rename = "R@5")]
    pub r5: f64,
    #[serde(rename = "R@10")]
    pub r10: f64,
    #[serde(rename = "Total")]
    pub total: f64,
}

impl Evaluator {
    pub fn build(model: &Model, vocab: &Vocabulary, data: &Dataset, keep_attention: bool) -> Result<Self, EvalError> {
        let mut images = Vec::with_capacity(data.len());
        for i in 0..data.len() {
            images.push(data.image(i).map_err(|e| EvalError::Other(e.to_string()))?);
        }
        let gallery = model.encode_gallery(&images);
        let pairs = data.pairs();
        let queries = TextBatch::new(pairs.iter().map(|&(i, k)| data.encode_caption(vocab, i, k))).map_err(EvalError::Other)?;
        let query_names: Vec<String> = pairs.iter().map(|&(i, k)| data.samples[i].caption_id(k)).collect();
        let attend: Vec<(usize, String)> = pairs.iter().zip(&query_names).map(|(&(i, _), n)| (i, n.clone())).collect();
        let (scores, attention) = model.score_queries(&gallery, &queries, keep_attention.then_some(&attend[..]));
        Ok(Self {
            scores,
            query_ids: pairs.iter().map(|&(i, _)| data.samples[i].person_id).collect(),
            gallery_ids: data.samples.iter().map(|s| s.person_id).collect(),
            query_names,
            trained: model.plan.trained(),
            attention,
        })
    }

    pub fn report(&self, granularity: Granularity, lambda1: f64, lambda2: f64) -> Result<RetrievalReport, EvalError> {
        let s = self.scores.select(granularity, lambda1, lambda2);
        RetrievalReport::from_scores(&s, &self.query_ids, &self.gallery_ids, granularity, lambda1, lambda2)
    }

    /// Image queries against a caption gallery.
    pub fn report_image_to_text(&self, granularity: Granularity, lambda1: f64, lambda2: f64) -> Result<RetrievalReport, EvalError> {
        let s: Tensor = self.scores.transposed().select(granularity, lambda1, lambda2);
        RetrievalReport::from_scores(&s, &self.gallery_ids, &self.query_ids, granularity, lambda1, lambda2)
    }

    /// Warnings for similarities the checkpoint never trained.
    pub fn warnings(&self, granularity: Granularity, lambda1: f64, lambda2: f64) -> Vec<String> {
        let mut out = Vec::new();
        let uses_rga = granularity == Granularity::SR || (granularity == Granularity::SF && lambda1 != 0.0);
        let uses_bfm = granularity == Granularity::SL || (granularity == Granularity::SF && lambda2 != 0.0);
        if uses_rga && !self.trained.rga {
            out.push(format!("{granularity} uses s_R (λ1 = {lambda1}) but the RGA module was never trained; set λ1 = 0"));
        }
        if uses_bfm && !self.trained.bfm {
            out.push(format!("{granularity} uses s_L (λ2 = {lambda2}) but the BFM module was never trained; set λ2 = 0"));
        }
        out
    }

    /// s_F over every (λ1, λ2) in the grid, from the cached bundle.
    pub fn sweep(&self, lambda1: &[f64], lambda2: &[f64]) -> Result<Vec<SweepRow>, EvalError> {
        if lambda1.is_empty() || lambda2.is_empty() {
            return Err(EvalError::EmptyGrid);
        }
        let mut rows = Vec::with_capacity(lambda1.len() * lambda2.len());
        for &l1 in lambda1 {
            for &l2 in lambda2 {
                let r = self.report(Granularity::SF, l1, l2)?;
                rows.push(SweepRow { lambda1: l1, lambda2: l2, r1: r.r1, r5: r.r5, r10: r.r10, total: r.total });
            }
        }
        Ok(rows)
    }

    /// Writes one `<pair_id>.json` per kept attention record.
    pub fn dump_attention(&self, dir: &Path) -> Result<usize, EvalError> {
        let io = |e: std::io::Error| EvalError::Other(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io)?;
        for pa in &self.attention {
            let name: String = pa.pair_id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' { c } else { '_' }).collect();
            let json = serde_json::to_string(pa).expect("serializable attention");
            fs::write(dir.join(format!("{name}.json")), json).map_err(io)?;
        }
        Ok(self.attention.len())
    }
}

/// Mean RGA part attention on mentioned versus unmentioned parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionMass {
    pub mentioned: f64,
    pub unmentioned: f64,
    pub gap: f64,
    /// Pairs with both mentioned and unmentioned parts.
    pub pairs: usize,
}

/// Parts of an `n`-stripe split whose rows overlap any of the mask bands.
pub fn parts_for_bands(bands: &[usize], n: usize) -> Vec<bool> {
    let mut hit = vec![false; n];
    for &b in bands {
        // band b covers [b/B, (b+1)/B); part k covers [k/n, (k+1)/n)
        for (k, h) in hit.iter_mut().enumerate() {
            if k * MASK_BANDS < (b + 1) * n && b * n < (k + 1) * MASK_BANDS {
                *h = true;
            }
        }
    }
    hit
}

/// Averages, over pairs, the mean weight v puts on a mentioned part and on an
/// unmentioned part.
pub fn attention_mass(attention: &[PairAttention], masks: &HashMap<String, MaskEntry>) -> Result<AttentionMass, EvalError> {
    let (mut on, mut off, mut pairs) = (0.0, 0.0, 0usize);
    for pa in attention {
        let mask = masks.get(&pa.pair_id).ok_or_else(|| EvalError::Other(format!("no mention mask for {}", pa.pair_id)))?;
        if pa.v.is_empty() {
            return Err(EvalError::Other("attention records carry no part weights".into()));
        }
        let mentioned = parts_for_bands(&mask.bands, pa.v.len());
        let mean = |want: bool| {
            let w: Vec<f64> = pa.v.iter().zip(&mentioned).filter(|(_, &m)| m == want).map(|(&x, _)| x).collect();
            (!w.is_empty()).then(|| w.iter().sum::<f64>() / w.len() as f64)
        };
        if let (Some(a), Some(b)) = (mean(true), mean(false)) {
            on += a;
            off += b;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(EvalError::Other("no pair has both mentioned and unmentioned parts".into()));
    }
    let (mentioned, unmentioned) = (on / pairs as f64, off / pairs as f64);
    Ok(AttentionMass { mentioned, unmentioned, gap: mentioned - unmentioned, pairs })
}

/// Full evaluation of one selector, with warnings for untrained granularities.
pub fn evaluate(model: &Model, vocab: &Vocabulary, data: &Dataset, lambda1: f64, lambda2: f64, granularity: Granularity) -> Result<(RetrievalReport, Vec<String>), EvalError> {
    let ev = Evaluator::build(model, vocab, data, false)?;
    Ok((ev.report(granularity, lambda1, lambda2)?, ev.warnings(granularity, lambda1, lambda2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_dataset, load_masks, split_path, synth_generate, SynthConfig};
    use crate::model::ModelConfig;
    use crate::text::Lexicon;
    use crate::training::{Ablation, StepPlan};

    #[test]
    fn band_overlap() {
        assert_eq!(parts_for_bands(&[0, 5], 6), [true, false, false, false, false, true]);
        assert_eq!(parts_for_bands(&[1], 3), [true, false, false]);
        assert_eq!(parts_for_bands(&[2, 3], 3), [false, true, false]);
        assert_eq!(parts_for_bands(&[0], 1), [true]);
    }

    #[test]
    fn mass_of_hand_weights() {
        let masks: HashMap<String, MaskEntry> = [("p".to_string(), MaskEntry { caption_id: "p".into(), attributes: vec![], bands: vec![0, 1] })].into();
        let pa = PairAttention { pair_id: "p".into(), v: vec![0.3, 0.3, 0.1, 0.1, 0.1, 0.1], t: vec![], alpha: vec![], beta: vec![] };
        let m = attention_mass(&[pa], &masks).unwrap();
        assert!((m.gap - 0.2).abs() < 1e-12 && m.pairs == 1);
    }

    #[test]
    fn untrained_model_on_synthetic_split() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { train_ids: 3, test_ids: 2, images_per_id: 2, min_hamming: 2, ..SynthConfig::default() };
        synth_generate(&cfg, dir.path()).unwrap();
        let data = load_dataset(&split_path(dir.path(), "test"), &Lexicon::builtin()).unwrap();
        let vocab = Vocabulary::build(data.caption_texts(), 1);
        let model = Model::new(ModelConfig::desk(vocab.size(), 3), StepPlan::new(Ablation::Gc, false)).unwrap();
        let ev = Evaluator::build(&model, &vocab, &data, true).unwrap();
        assert_eq!(ev.scores.queries, 8);
        assert_eq!(ev.scores.gallery, 4);
        let sg = ev.report(Granularity::SG, 0.0, 0.0).unwrap();
        assert!(sg.r1 <= sg.r5 && sg.r5 <= sg.r10);
        // fusion cache soundness
        let rows = ev.sweep(&[0.0, 0.5], &[0.0, 1.0]).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!((rows[0].r1, rows[0].total), (sg.r1, sg.total));
        let direct = ev.report(Granularity::SF, 0.5, 1.0).unwrap();
        assert_eq!((rows[3].r1, rows[3].r5, rows[3].r10), (direct.r1, direct.r5, direct.r10));
        assert!(ev.sweep(&[], &[1.0]).is_err());
        // GC plan never trains RGA or BFM
        assert_eq!(ev.warnings(Granularity::SF, 1.0, 0.5).len(), 2);
        assert!(ev.warnings(Granularity::SF, 0.0, 0.0).is_empty());
        let masks = load_masks(&dir.path().join("masks.jsonl")).unwrap();
        let mass = attention_mass(&ev.attention, &masks).unwrap();
        assert!(mass.pairs > 0 && mass.mentioned > 0.0);
        let out = dir.path().join("attn");
        assert_eq!(ev.dump_attention(&out).unwrap(), 8);
        let one: PairAttention = serde_json::from_str(&fs::read_to_string(fs::read_dir(&out).unwrap().next().unwrap().unwrap().path()).unwrap()).unwrap();
        assert_eq!(one.v.len(), 6);
        let i2t = ev.report_image_to_text(Granularity::SG, 0.0, 0.0).unwrap();
        assert_eq!(i2t.queries, 4);
    }
}
