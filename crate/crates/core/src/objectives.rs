//! Identity classification and Sum-of-Hinge matching objectives, and the
//! per-step composite losses.

use serde::{Deserialize, Serialize};

use crate::alignment::Wanted;
use crate::autodiff::{Graph, GraphError, NodeId, Step};
use crate::model::{Model, Session, TextBatch};
use crate::tensor::Tensor;
use crate::training::StepTerms;

#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error("identity {id} out of range for {classes} classes")]
    IdOutOfRange { id: usize, classes: usize },
    #[error("similarity matrix must be square, got {0:?}")]
    NotSquare(Vec<usize>),
    #[error("step {0} is not part of the training plan")]
    UnknownStep(Step),
    #[error("batch needs matching image, caption and label counts ({images}, {captions}, {labels})")]
    BatchShape { images: usize, captions: usize, labels: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// `−log softmax(logits)[true_id]`, computed stably.
pub fn cross_entropy(logits: &[f64], true_id: usize) -> Result<f64, LossError> {
    if true_id >= logits.len() {
        return Err(LossError::IdOutOfRange { id: true_id, classes: logits.len() });
    }
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + logits.iter().map(|z| (z - mx).exp()).sum::<f64>().ln();
    Ok(lse - logits[true_id])
}

/// Mean cross-entropy over the rows of `logits` `[B, ID]`.
pub fn cross_entropy_node(g: &mut Graph, logits: NodeId, labels: &[usize]) -> Result<NodeId, LossError> {
    let shape = g.shape(logits).to_vec();
    let (b, classes) = (shape[0], shape[1]);
    if let Some(&id) = labels.iter().find(|&&id| id >= classes) {
        return Err(LossError::IdOutOfRange { id, classes });
    }
    let z = g.value(logits)?;
    let maxes: Vec<f64> = z.data().chunks(classes).map(|r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect();
    let mut onehot = vec![0.0; b * classes];
    for (i, &y) in labels.iter().enumerate() {
        onehot[i * classes + y] = 1.0;
    }
    let shift = g.input(Tensor::new(vec![b, 1], maxes).expect("finite logits"));
    let onehot = g.input(Tensor::new(vec![b, classes], onehot).expect("finite"));
    let shifted = g.sub(logits, shift);
    let e = g.exp(shifted);
    let total = g.sum(e, 1);
    let lse = g.log(total);
    let picked = g.mul(shifted, onehot);
    let picked = g.sum(picked, 1);
    let per_row = g.sub(lse, picked);
    Ok(g.mean_all(per_row))
}

/// `Σ_i Σ_{j≠i} [α − S_ii + S_ij]₊ + [α − S_ii + S_ji]₊` over a square matrix.
pub fn sh_loss(s: &Tensor, margin: f64) -> Result<f64, LossError> {
    let b = match s.shape() {
        &[r, c] if r == c => r,
        other => return Err(LossError::NotSquare(other.to_vec())),
    };
    let at = |i: usize, j: usize| s.data()[i * b + j];
    let mut total = 0.0;
    for i in 0..b {
        for j in 0..b {
            if i != j {
                total += (margin - at(i, i) + at(i, j)).max(0.0) + (margin - at(i, i) + at(j, i)).max(0.0);
            }
        }
    }
    Ok(total)
}

/// Graph form of [`sh_loss`]: hinge terms are kept where `keep[i][j]` is 1.
/// The default keep mask is every off-diagonal entry.
pub fn sh_loss_node(g: &mut Graph, s: NodeId, margin: f64, keep: Option<&Tensor>) -> Result<NodeId, LossError> {
    let b = match g.shape(s) {
        &[r, c] if r == c => r,
        other => return Err(LossError::NotSquare(other.to_vec())),
    };
    let eye = Tensor::new(vec![b, b], (0..b * b).map(|k| if k / b == k % b { 1.0 } else { 0.0 }).collect()).expect("finite");
    let keep = match keep {
        Some(k) => k.clone(),
        None => Tensor::new(vec![b, b], eye.data().iter().map(|v| 1.0 - v).collect()).expect("finite"),
    };
    let eye = g.input(eye);
    let keep = g.input(keep);
    let diag = g.mul(s, eye);
    let diag = g.sum(diag, 1);
    let diag_col = g.reshape(diag, &[b, 1]);
    let st = g.transpose(s);
    let mut terms = Vec::new();
    for m in [s, st] {
        let gap = g.sub(m, diag_col);
        let gap = g.add_scalar(gap, margin);
        let h = g.hinge(gap);
        let h = g.mul(h, keep);
        terms.push(g.sum_all(h));
    }
    Ok(g.add(terms[0], terms[1]))
}

#[derive(Clone, Debug)]
pub struct LossOptions {
    pub margin: f64,
    /// Treat other pairs of the same identity as negatives.
    pub same_id_negatives: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self { margin: 0.2, same_id_negatives: false }
    }
}

/// A batch of matched image–caption pairs.
#[derive(Clone, Debug)]
pub struct PairBatch {
    /// `[B, H, W, 3]`.
    pub images: Tensor,
    pub text: TextBatch,
    pub labels: Vec<usize>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Loss terms of one step. Inactive terms are 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step_id: Step,
    #[serde(rename = "L_I")]
    pub l_i: f64,
    #[serde(rename = "L_T")]
    pub l_t: f64,
    #[serde(rename = "L_M_G")]
    pub l_m_g: f64,
    #[serde(rename = "L_M_IT")]
    pub l_m_it: f64,
    #[serde(rename = "L_M_TI")]
    pub l_m_ti: f64,
    #[serde(rename = "L_M_PN")]
    pub l_m_pn: f64,
    #[serde(rename = "L_M_NP")]
    pub l_m_np: f64,
    pub total: f64,
}

impl LossReport {
    pub fn l1(&self) -> f64 {
        self.l_i + self.l_t
    }

    pub fn l2(&self) -> f64 {
        self.l1() + self.l_m_g + (self.l_m_it + self.l_m_ti)
    }

    pub fn l3(&self) -> f64 {
        self.l_m_pn + self.l_m_np
    }

    fn accumulate(&mut self, other: &LossReport, weight: f64) {
        self.l_i += weight * other.l_i;
        self.l_t += weight * other.l_t;
        self.l_m_g += weight * other.l_m_g;
        self.l_m_it += weight * other.l_m_it;
        self.l_m_ti += weight * other.l_m_ti;
        self.l_m_pn += weight * other.l_m_pn;
        self.l_m_np += weight * other.l_m_np;
        self.total += weight * other.total;
    }

    /// Weighted mean of per-batch reports.
    pub fn mean_of(reports: &[(LossReport, usize)]) -> LossReport {
        let n: usize = reports.iter().map(|r| r.1).sum();
        let mut out = LossReport::default();
        for (r, w) in reports {
            out.step_id = r.step_id;
            out.accumulate(r, *w as f64 / n.max(1) as f64);
        }
        out
    }
}

/// Scalar loss nodes of one step.
#[derive(Clone, Debug)]
pub struct StepLoss {
    pub total: NodeId,
    terms: Vec<(Term, NodeId)>,
    pub step_id: Step,
}

#[derive(Clone, Copy, Debug)]
enum Term {
    LI,
    LT,
    MG,
    MIT,
    MTI,
    MPN,
    MNP,
}

impl StepLoss {
    pub fn report(&self, g: &Graph) -> Result<LossReport, GraphError> {
        let mut r = LossReport { step_id: self.step_id, total: g.scalar(self.total)?, ..Default::default() };
        for &(term, node) in &self.terms {
            let v = g.scalar(node)?;
            match term {
                Term::LI => r.l_i = v,
                Term::LT => r.l_t = v,
                Term::MG => r.l_m_g = v,
                Term::MIT => r.l_m_it = v,
                Term::MTI => r.l_m_ti = v,
                Term::MPN => r.l_m_pn = v,
                Term::MNP => r.l_m_np = v,
            }
        }
        Ok(r)
    }
}

/// Keep mask over hinge terms and the number of anchor pairs it covers.
fn keep_mask(labels: &[usize], included: &[bool], same_id_negatives: bool) -> (Tensor, usize) {
    let b = labels.len();
    let mut keep = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            let negative = i != j && (same_id_negatives || labels[i] != labels[j]);
            if negative && included[i] && included[j] {
                keep[i * b + j] = 1.0;
            }
        }
    }
    let anchors = included.iter().filter(|&&x| x).count();
    (Tensor::new(vec![b, b], keep).expect("finite"), anchors)
}

impl Model {
    /// Builds the loss of one step on a batch. Identity terms are batch means;
    /// each matching term is its hinge sum divided by the number of anchor
    /// pairs (captions without phrases are not anchors for phrase terms).
    pub fn step_loss(&self, s: &mut Session, batch: &PairBatch, terms: StepTerms, step_id: Step, opts: &LossOptions) -> Result<StepLoss, LossError> {
        let b = batch.len();
        if batch.images.shape()[0] != b || batch.text.len() != b {
            return Err(LossError::BatchShape { images: batch.images.shape()[0], captions: batch.text.len(), labels: b });
        }
        let img = self.encode_images(s, &batch.images);
        let txt = self.encode_text(s, &batch.text);
        let mut out: Vec<(Term, NodeId)> = Vec::new();
        if terms.identity {
            for (term, feats) in [(Term::LI, img.global), (Term::LT, txt.global)] {
                let logits = self.classifier.forward(s, feats);
                out.push((term, cross_entropy_node(&mut s.g, logits, &batch.labels)?));
            }
        }
        if terms.global || terms.rga || terms.bfm {
            let (sims, _) = self.similarities(s, &img, &txt, Wanted { rga: terms.rga, bfm: terms.bfm });
            let all = vec![true; b];
            let with_phrases: Vec<bool> = txt.counts.iter().map(|&m| m > 0).collect();
            let mut add = |s: &mut Session, term: Term, mat: Option<NodeId>, included: &[bool]| -> Result<(), LossError> {
                let (keep, anchors) = keep_mask(&batch.labels, included, opts.same_id_negatives);
                let raw = sh_loss_node(&mut s.g, mat.expect("requested similarity"), opts.margin, Some(&keep))?;
                out.push((term, s.g.scale(raw, 1.0 / anchors.max(1) as f64)));
                Ok(())
            };
            if terms.global {
                add(s, Term::MG, Some(sims.s_g), &all)?;
            }
            if terms.rga {
                add(s, Term::MIT, sims.s_i, &all)?;
                add(s, Term::MTI, sims.s_t, &with_phrases)?;
            }
            if terms.bfm {
                add(s, Term::MPN, sims.s_p, &with_phrases)?;
                add(s, Term::MNP, sims.s_n, &with_phrases)?;
            }
        }
        let mut total = out[0].1;
        for &(_, n) in &out[1..] {
            total = s.g.add(total, n);
        }
        Ok(StepLoss { total, terms: out, step_id })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_check, GradCheckOptions, GradMode, ParamStore, StepSet};
    use proptest::prelude::*;

    #[test]
    fn cross_entropy_cases() {
        assert!((cross_entropy(&[0.0; 4], 0).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert!((cross_entropy(&[10.0, 0.0, 0.0, 0.0], 0).unwrap() - 1.3619e-4).abs() < 1e-7);
        assert!(matches!(cross_entropy(&[0.0; 4], 4), Err(LossError::IdOutOfRange { .. })));
    }

    #[test]
    fn cross_entropy_node_matches_scalar_oracle_and_gradient() {
        let logits = Tensor::matrix(&[vec![0.3, -1.2, 2.0], vec![5.0, 0.1, -0.4]]).unwrap();
        let labels = [2, 1];
        let mut store = ParamStore::new();
        let id = store.register("z", logits.clone(), StepSet::of(&[1])).unwrap();
        let mut g = Graph::new();
        let z = g.param(&store, id);
        let loss = cross_entropy_node(&mut g, z, &labels).unwrap();
        let want = (cross_entropy(logits.row(0), 2).unwrap() + cross_entropy(logits.row(1), 1).unwrap()) / 2.0;
        assert!((g.scalar(loss).unwrap() - want).abs() < 1e-14);
        g.backward(loss, &mut store).unwrap();
        // (softmax − onehot) / B
        let grad = store.get(id).grad.clone();
        for (r, &y) in labels.iter().enumerate() {
            let row = logits.row(r);
            let mx = row.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
            for c in 0..3 {
                let p = (row[c] - mx).exp() / z - if c == y { 1.0 } else { 0.0 };
                assert!((grad.row(r)[c] - p / 2.0).abs() < 1e-14);
            }
        }
        let report = finite_difference_check(
            |g, st| {
                let z = g.param(st, id);
                cross_entropy_node(g, z, &labels).unwrap()
            },
            &mut store,
            &[id],
            &GradCheckOptions { samples: 6, tolerance: 1e-7, ..Default::default() },
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn sh_hand_cases() {
        let a = Tensor::matrix(&[vec![0.9, 0.2], vec![0.1, 0.8]]).unwrap();
        let b = Tensor::matrix(&[vec![0.5, 0.6], vec![0.4, 0.5]]).unwrap();
        assert!(sh_loss(&a, 0.2).unwrap().abs() <= 1e-12);
        assert!((sh_loss(&b, 0.2).unwrap() - 0.8).abs() <= 1e-12);
        assert_eq!(sh_loss(&Tensor::matrix(&[vec![0.3]]).unwrap(), 0.2).unwrap(), 0.0);
        assert!(matches!(sh_loss(&Tensor::zeros(&[2, 3]), 0.2), Err(LossError::NotSquare(_))));
        for (m, want) in [(a, 0.0), (b, 0.8)] {
            let mut g = Graph::inference();
            let s = g.input(m);
            let l = sh_loss_node(&mut g, s, 0.2, None).unwrap();
            assert!((g.scalar(l).unwrap() - want).abs() <= 1e-12);
        }
    }

    fn square(values: Vec<f64>) -> Tensor {
        let b = (values.len() as f64).sqrt() as usize;
        Tensor::new(vec![b, b], values).unwrap()
    }

    proptest! {
        #[test]
        fn sh_graph_matches_scalar_and_is_shift_invariant(b in 1usize..6, seed in proptest::collection::vec(-1.0f64..1.0, 36), c in -2.0f64..2.0) {
            let m = square(seed[..b * b].to_vec());
            let base = sh_loss(&m, 0.2).unwrap();
            let mut g = Graph::inference();
            let s = g.input(m.clone());
            let l = sh_loss_node(&mut g, s, 0.2, None).unwrap();
            prop_assert!((g.scalar(l).unwrap() - base).abs() < 1e-12);
            let shifted = square(m.data().iter().map(|v| v + c).collect());
            prop_assert!((sh_loss(&shifted, 0.2).unwrap() - base).abs() < 1e-9);
        }

        #[test]
        fn sh_zero_iff_margins_hold(b in 2usize..6, seed in proptest::collection::vec(-1.0f64..1.0, 36), gap in 0.0f64..0.5) {
            // diagonal lifted above every off-diagonal entry by `gap`
            let mut m = square(seed[..b * b].to_vec());
            let mx = m.data().iter().cloned().fold(f64::MIN, f64::max);
            for i in 0..b {
                m.data_mut()[i * b + i] = mx + gap;
            }
            let mut min_gap = f64::INFINITY;
            for i in 0..b {
                for j in 0..b {
                    if i != j {
                        min_gap = min_gap.min(m.data()[i * b + i] - m.data()[i * b + j]).min(m.data()[i * b + i] - m.data()[j * b + i]);
                    }
                }
            }
            let loss = sh_loss(&m, 0.2).unwrap();
            prop_assert_eq!(loss == 0.0, min_gap >= 0.2);
        }
    }

    #[test]
    fn report_composites_are_additive() {
        let r = LossReport { l_i: 1.0, l_t: 2.0, l_m_g: 0.5, l_m_it: 0.25, l_m_ti: 0.125, l_m_pn: 0.3, l_m_np: 0.7, ..Default::default() };
        assert_eq!(r.l1(), 3.0);
        assert_eq!(r.l2(), 3.875);
        assert_eq!(r.l3(), 1.0);
        let json = serde_json::to_value(r).unwrap();
        assert!(json.get("L_M_IT").is_some());
    }

    fn tiny_batch(model: &Model) -> PairBatch {
        let c = &model.config;
        let n = 2 * c.image_h * c.image_w * 3;
        let images = Tensor::new(vec![2, c.image_h, c.image_w, 3], (0..n).map(|k| ((k * 7919) % 101) as f64 / 101.0).collect()).unwrap();
        let text = TextBatch::new([(vec![1, 2, 3], vec![vec![2, 3]]), (vec![4, 5], vec![])]).unwrap();
        PairBatch { images, text, labels: vec![0, 3] }
    }

    fn tiny_model() -> Model {
        Model::new(crate::model::ModelConfig::desk(8, 4), crate::training::StepPlan::default()).unwrap()
    }

    #[test]
    fn step_one_with_uniform_classifier() {
        let mut m = tiny_model();
        let (w, b) = (m.classifier.weight, m.classifier.bias);
        m.store.get_mut(w).value.fill(0.0);
        m.store.get_mut(b).value.fill(0.0);
        let batch = tiny_batch(&m);
        let mut s = m.session(GradMode::Step(1));
        let terms = m.plan.terms(1).unwrap();
        let loss = m.step_loss(&mut s, &batch, terms, 1, &LossOptions::default()).unwrap();
        let r = loss.report(&s.g).unwrap();
        assert!((r.l_i - 4f64.ln()).abs() < 1e-12);
        assert!((r.l1() - 2.0 * 4f64.ln()).abs() < 1e-12);
        assert_eq!(r.total, r.l1());
    }

    #[test]
    fn step_three_reports_only_fine_terms() {
        let m = tiny_model();
        let batch = tiny_batch(&m);
        let mut s = m.session(GradMode::Step(3));
        let loss = m.step_loss(&mut s, &batch, m.plan.terms(3).unwrap(), 3, &LossOptions::default()).unwrap();
        let r = loss.report(&s.g).unwrap();
        assert_eq!((r.l_i, r.l_t, r.l_m_g), (0.0, 0.0, 0.0));
        assert!((r.total - r.l3()).abs() < 1e-15);
        // the second caption has no phrases, so no anchor remains for phrase terms
        assert_eq!(r.l3(), 0.0);
    }

    #[test]
    fn step_two_decomposes() {
        let m = tiny_model();
        let mut batch = tiny_batch(&m);
        batch.text = TextBatch::new([(vec![1, 2, 3], vec![vec![2, 3]]), (vec![4, 5], vec![vec![5]])]).unwrap();
        let mut s = m.session(GradMode::Step(2));
        let opts = LossOptions { same_id_negatives: true, ..Default::default() };
        let loss = m.step_loss(&mut s, &batch, m.plan.terms(2).unwrap(), 2, &opts).unwrap();
        let r = loss.report(&s.g).unwrap();
        assert!((r.total - r.l2()).abs() < 1e-12);
        assert!(r.l_m_g >= 0.0 && r.l_m_it >= 0.0 && r.l_m_ti >= 0.0);
    }

    #[test]
    fn bad_label_is_rejected() {
        let m = tiny_model();
        let mut batch = tiny_batch(&m);
        batch.labels = vec![0, 9];
        let mut s = m.session(GradMode::Step(1));
        let err = m.step_loss(&mut s, &batch, m.plan.terms(1).unwrap(), 1, &LossOptions::default()).unwrap_err();
        assert!(matches!(err, LossError::IdOutOfRange { id: 9, .. }));
    }
}
