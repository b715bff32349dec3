use super::*;
use crate::autodiff::{GradMode, ParamStore};
use crate::model::{Linear, ModelConfig};
use crate::training::StepPlan;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(parts: usize, width: usize) -> ModelConfig {
    ModelConfig {
        joint_dim: width,
        part_dim: width,
        mlp_hidden: width,
        parts,
        ..ModelConfig::desk(10, 2)
    }
}

fn random_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn linear_apply(st: &ParamStore, l: &Linear, x: &[f64]) -> Vec<f64> {
    let w = &st.get(l.weight).value;
    let b = &st.get(l.bias).value;
    let (i, o) = (w.shape()[0], w.shape()[1]);
    (0..o).map(|j| b.data()[j] + (0..i).map(|k| x[k] * w.data()[k * o + j]).sum::<f64>()).collect()
}

fn mlp_apply(st: &ParamStore, m: &Mlp, x: &[f64]) -> Vec<f64> {
    let h: Vec<f64> = linear_apply(st, &m.layer1, x).into_iter().map(|v| v.max(0.0)).collect();
    linear_apply(st, &m.layer2, &h)
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt() + 1e-12;
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt() + 1e-12;
    dot / (na * nb)
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn weighted_sum(w: &[f64], rows: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; rows[0].len()];
    for (wi, r) in w.iter().zip(rows) {
        for (o, x) in out.iter_mut().zip(r) {
            *o += wi * x;
        }
    }
    out
}

/// Direct per-pair evaluation of all five similarities.
fn oracle_pair(m: &Model, i: &[f64], parts: &[Vec<f64>], t: &[f64], phrases: &[Vec<f64>]) -> SimilarityBundle {
    let st = &m.store;
    let s_g = cos(i, t);
    let v = softmax(&parts.iter().map(|p| cos(&mlp_apply(st, &m.rga_mlp_v, p), t)).collect::<Vec<_>>());
    let s_i = cos(&mlp_apply(st, &m.rga_mlp_v, &weighted_sum(&v, parts)), t);
    if phrases.is_empty() {
        return SimilarityBundle { s_g, s_i, ..Default::default() };
    }
    let tw = softmax(&phrases.iter().map(|n| cos(&mlp_apply(st, &m.rga_mlp_t, n), i)).collect::<Vec<_>>());
    let s_t = cos(&weighted_sum(&tw, phrases), i);
    let lp: Vec<Vec<f64>> = parts.iter().map(|p| mlp_apply(st, &m.bfm_mlp_v, p)).collect();
    let ln: Vec<Vec<f64>> = phrases.iter().map(|n| mlp_apply(st, &m.bfm_mlp_t, n)).collect();
    let mut s_p = 0.0;
    for k in 0..phrases.len() {
        let alpha = softmax(&lp.iter().map(|p| cos(&ln[k], p)).collect::<Vec<_>>());
        s_p += cos(&mlp_apply(st, &m.bfm_mlp_v, &weighted_sum(&alpha, parts)), &ln[k]);
    }
    let mut s_n = 0.0;
    for k in 0..parts.len() {
        let beta = softmax(&ln.iter().map(|n| cos(&lp[k], n)).collect::<Vec<_>>());
        s_n += cos(&mlp_apply(st, &m.bfm_mlp_t, &weighted_sum(&beta, phrases)), &lp[k]);
    }
    SimilarityBundle {
        s_g,
        s_i,
        s_t,
        s_p: s_p / phrases.len() as f64,
        s_n: s_n / parts.len() as f64,
    }
}

struct Fixture {
    images: Tensor,
    parts: Tensor,
    captions: Tensor,
    phrases: Tensor,
    owner: Vec<usize>,
    counts: Vec<usize>,
}

fn fixture(m: &Model, bi: usize, counts: &[usize], seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, pd, n) = (m.config.joint_dim, m.config.part_dim, m.config.parts);
    let owner: Vec<usize> = counts.iter().enumerate().flat_map(|(j, &c)| std::iter::repeat(j).take(c)).collect();
    Fixture {
        images: random_rows(&mut rng, bi, d),
        parts: random_rows(&mut rng, bi * n, pd),
        captions: random_rows(&mut rng, counts.len(), d),
        phrases: random_rows(&mut rng, owner.len().max(1), d),
        owner,
        counts: counts.to_vec(),
    }
}

fn run(m: &Model, f: &Fixture) -> (Vec<Tensor>, Vec<Option<Tensor>>) {
    let mut s = m.session(GradMode::Off);
    let img = ImageFeatures {
        global: s.g.input(f.images.clone()),
        parts: s.g.input(f.parts.clone()),
        batch: f.images.shape()[0],
    };
    let txt = TextFeatures {
        global: s.g.input(f.captions.clone()),
        phrases: (!f.owner.is_empty()).then(|| s.g.input(f.phrases.clone())),
        owner: f.owner.clone(),
        counts: f.counts.clone(),
    };
    let (sims, att) = m.similarities(&mut s, &img, &txt, Wanted::ALL);
    let get = |n: NodeId| s.g.value(n).unwrap().clone();
    let mats = [Some(sims.s_g), sims.s_i, sims.s_t, sims.s_p, sims.s_n].into_iter().map(|n| get(n.unwrap())).collect();
    let atts = [att.v, att.t, att.alpha, att.beta].into_iter().map(|n| n.map(get)).collect();
    (mats, atts)
}

fn model(parts: usize, width: usize, seed: u64) -> Model {
    let mut cfg = small_config(parts, width);
    cfg.seed = seed;
    Model::new(cfg, StepPlan::default()).unwrap()
}

#[test]
fn batched_matrices_match_per_pair_oracle() {
    let m = model(6, 8, 3);
    let counts = [2, 0, 3, 1];
    let f = fixture(&m, 3, &counts, 11);
    let (mats, _) = run(&m, &f);
    let n = m.config.parts;
    for i in 0..3 {
        let parts: Vec<Vec<f64>> = (0..n).map(|k| f.parts.row(i * n + k).to_vec()).collect();
        for j in 0..counts.len() {
            let phrases: Vec<Vec<f64>> = f.owner.iter().enumerate().filter(|&(_, &o)| o == j).map(|(p, _)| f.phrases.row(p).to_vec()).collect();
            let want = oracle_pair(&m, f.images.row(i), &parts, f.captions.row(j), &phrases);
            let got = [want.s_g, want.s_i, want.s_t, want.s_p, want.s_n];
            for (mat, w) in mats.iter().zip(got) {
                let v = mat.data()[i * counts.len() + j];
                assert!((v - w).abs() < 1e-12, "pair ({i},{j}): {v} vs {w}");
            }
        }
    }
}

#[test]
fn no_phrase_caption_scores_zero_on_phrase_terms() {
    let m = model(6, 8, 4);
    let f = fixture(&m, 2, &[0, 0], 5);
    let (mats, atts) = run(&m, &f);
    for mat in &mats[2..] {
        assert!(mat.data().iter().all(|&v| v == 0.0));
    }
    assert!(atts[1].is_none() && atts[2].is_none());
}

fn identity_mlps(m: &mut Model) {
    let w = m.config.joint_dim;
    let eye = Tensor::new(vec![w, w], (0..w * w).map(|k| if k / w == k % w { 1.0 } else { 0.0 }).collect()).unwrap();
    for mlp in [m.rga_mlp_v, m.rga_mlp_t, m.bfm_mlp_v, m.bfm_mlp_t] {
        for l in [mlp.layer1, mlp.layer2] {
            m.store.get_mut(l.weight).value = eye.clone();
        }
    }
}

#[test]
fn two_part_hand_softmax() {
    let mut m = model(2, 2, 1);
    identity_mlps(&mut m);
    let f = Fixture {
        images: Tensor::matrix(&[vec![1.0, 0.0]]).unwrap(),
        parts: Tensor::matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
        captions: Tensor::matrix(&[vec![1.0, 0.0]]).unwrap(),
        phrases: Tensor::matrix(&[vec![1.0, 0.0]]).unwrap(),
        owner: vec![0],
        counts: vec![1],
    };
    let (mats, atts) = run(&m, &f);
    let v = atts[0].as_ref().unwrap();
    let e = std::f64::consts::E;
    assert!((v.data()[0] - e / (e + 1.0)).abs() < 1e-12);
    assert!((v.data()[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
    // single phrase: t = 1 and T_R = N_1
    assert!((atts[1].as_ref().unwrap().data()[0] - 1.0).abs() < 1e-12);
    assert!((mats[2].data()[0] - 1.0).abs() < 1e-9);
}

#[test]
fn single_part_and_single_phrase_collapse() {
    let m = model(1, 8, 2);
    let f = fixture(&m, 1, &[1], 8);
    let (mats, atts) = run(&m, &f);
    for a in atts.iter().flatten() {
        assert!(a.data().iter().all(|&w| (w - 1.0).abs() < 1e-12));
    }
    // with n = 1 the aggregate is P_1 itself
    let st = &m.store;
    let want = cos(&mlp_apply(st, &m.rga_mlp_v, f.parts.row(0)), f.captions.row(0));
    assert!((mats[1].data()[0] - want).abs() < 1e-12);
    let want_t = cos(f.phrases.row(0), f.images.row(0));
    assert!((mats[2].data()[0] - want_t).abs() < 1e-12);
}

#[test]
fn identical_parts_get_uniform_attention() {
    let m = model(6, 8, 5);
    let mut f = fixture(&m, 1, &[2], 9);
    let row = f.parts.row(0).to_vec();
    for k in 0..6 {
        f.parts.data_mut()[k * 8..(k + 1) * 8].copy_from_slice(&row);
    }
    let (_, atts) = run(&m, &f);
    assert!(atts[0].as_ref().unwrap().data().iter().all(|&w| (w - 1.0 / 6.0).abs() < 1e-12));
}

#[test]
fn phrase_permutation_equivariance() {
    let m = model(6, 8, 6);
    let f = fixture(&m, 2, &[3], 10);
    let mut g = Fixture { phrases: f.phrases.clone(), ..fixture(&m, 2, &[3], 10) };
    let perm = [2, 0, 1];
    for (dst, &src) in perm.iter().enumerate() {
        let r = f.phrases.row(src).to_vec();
        g.phrases.data_mut()[dst * 8..(dst + 1) * 8].copy_from_slice(&r);
    }
    let (ma, aa) = run(&m, &f);
    let (mb, ab) = run(&m, &g);
    for (x, y) in ma.iter().zip(&mb) {
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    let (alpha_a, alpha_b) = (aa[2].as_ref().unwrap(), ab[2].as_ref().unwrap());
    let width = 2 * 6;
    for (dst, &src) in perm.iter().enumerate() {
        assert_eq!(&alpha_b.data()[dst * width..(dst + 1) * width], &alpha_a.data()[src * width..(src + 1) * width]);
    }
}

#[test]
fn fuse_hand_case_and_degeneracy() {
    let b = SimilarityBundle { s_g: 0.6, s_i: 0.5, s_t: 0.7, s_p: 0.3, s_n: 0.5 };
    assert!((b.s_r() - 0.6).abs() < 1e-15);
    assert!((b.s_l() - 0.4).abs() < 1e-15);
    assert!((b.fuse(1.0, 0.5) - 1.4).abs() < 1e-12);
    assert_eq!(b.fuse(0.0, 0.0).to_bits(), b.s_g.to_bits());
}

/// Every attention row over real slots is a distribution; padded slots get zero.
pub(crate) fn check_attention_rows(atts: &[Option<Tensor>], counts: &[usize], images: usize, parts: usize) -> Result<(), String> {
    let row_ok = |row: &[f64], what: &str| -> Result<(), String> {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&w| w <= 0.0) {
            return Err(format!("{what} row {row:?} sums to {sum}"));
        }
        Ok(())
    };
    if let Some(v) = &atts[0] {
        for row in v.data().chunks(parts) {
            row_ok(row, "v")?;
        }
    }
    let slots = counts.iter().copied().max().unwrap_or(0).max(1);
    if let Some(t) = &atts[1] {
        for (j, &m) in counts.iter().enumerate() {
            for i in 0..images {
                let row = &t.data()[(j * images + i) * slots..][..slots];
                if m > 0 {
                    row_ok(&row[..m], "t")?;
                    if row[m..].iter().any(|&w| w != 0.0) {
                        return Err("padded t slot has weight".into());
                    }
                }
            }
        }
    }
    if let Some(alpha) = &atts[2] {
        for row in alpha.data().chunks(parts) {
            row_ok(row, "alpha")?;
        }
    }
    if let Some(beta) = &atts[3] {
        for (j, &m) in counts.iter().enumerate() {
            for r in 0..images * parts {
                let row = &beta.data()[(j * images * parts + r) * slots..][..slots];
                if m > 0 {
                    row_ok(&row[..m], "beta")?;
                }
            }
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn attention_rows_are_distributions(seed in 0u64..1000, bi in 1usize..4, counts in proptest::collection::vec(0usize..4, 1..4)) {
        let m = model(6, 8, seed);
        let f = fixture(&m, bi, &counts, seed + 1);
        let (mats, atts) = run(&m, &f);
        prop_assert!(check_attention_rows(&atts, &counts, bi, 6).is_ok());
        for mat in mats {
            prop_assert!(mat.data().iter().all(|v| v.abs() <= 1.0 + 1e-12));
        }
    }
}
