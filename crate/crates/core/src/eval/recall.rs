use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("similarity matrix is {rows}×{cols} but there are {queries} query ids and {gallery} gallery ids")]
    Dimensions { rows: usize, cols: usize, queries: usize, gallery: usize },
    #[error("K must be at least 1")]
    ZeroK,
    #[error("empty λ grid")]
    EmptyGrid,
    #[error("bad grid {0:?}; expected start:stop:step, a comma list, or a single value")]
    BadGrid(String),
    #[error("{0}")]
    Other(String),
}

/// Which similarity a report ranks by.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Granularity {
    #[serde(rename = "sG")]
    SG,
    #[serde(rename = "sR")]
    SR,
    #[serde(rename = "sL")]
    SL,
    #[serde(rename = "sF")]
    SF,
}

impl Granularity {
    pub const ALL: [Granularity; 4] = [Granularity::SG, Granularity::SR, Granularity::SL, Granularity::SF];

    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::SG => "sG",
            Granularity::SR => "sR",
            Granularity::SL => "sL",
            Granularity::SF => "sF",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Granularity::ALL
            .into_iter()
            .find(|g| g.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown granularity {s:?}; expected sG, sR, sL or sF"))
    }
}

/// Descending score order; equal scores rank the lower gallery index first.
fn outranks(row: &[f64], a: usize, b: usize) -> Ordering {
    row[b].total_cmp(&row[a]).then(a.cmp(&b))
}

/// Gallery indices of one query row, best first.
pub fn rank_gallery(row: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| outranks(row, a, b));
    idx
}

/// 0-based rank of the best-placed gallery item whose id matches, if any.
fn first_hit_rank(row: &[f64], gallery_ids: &[usize], id: usize) -> Option<usize> {
    let best = (0..row.len())
        .filter(|&j| gallery_ids[j] == id)
        .min_by(|&a, &b| outranks(row, a, b))?;
    Some((0..row.len()).filter(|&l| outranks(row, l, best) == Ordering::Less).count())
}

fn check_dims(s: &Tensor, query_ids: &[usize], gallery_ids: &[usize]) -> Result<(usize, usize), EvalError> {
    let (rows, cols) = match s.shape() {
        [r, c] => (*r, *c),
        _ => (s.len(), 1),
    };
    if s.ndim() != 2 || rows != query_ids.len() || cols != gallery_ids.len() {
        return Err(EvalError::Dimensions { rows, cols, queries: query_ids.len(), gallery: gallery_ids.len() });
    }
    Ok((rows, cols))
}

/// Fraction of queries with an image of their person among the top `k`.
pub fn recall_at_k(s: &Tensor, query_ids: &[usize], gallery_ids: &[usize], k: usize) -> Result<f64, EvalError> {
    Ok(recall_at_ks(s, query_ids, gallery_ids, &[k])?[0])
}

/// Recall for several cutoffs from one pass over the matrix.
pub fn recall_at_ks(s: &Tensor, query_ids: &[usize], gallery_ids: &[usize], ks: &[usize]) -> Result<Vec<f64>, EvalError> {
    if ks.contains(&0) {
        return Err(EvalError::ZeroK);
    }
    let (rows, cols) = check_dims(s, query_ids, gallery_ids)?;
    let mut hits = vec![0usize; ks.len()];
    for q in 0..rows {
        let row = &s.data()[q * cols..(q + 1) * cols];
        if let Some(rank) = first_hit_rank(row, gallery_ids, query_ids[q]) {
            for (h, &k) in hits.iter_mut().zip(ks) {
                if rank < k {
                    *h += 1;
                }
            }
        }
    }
    Ok(hits.into_iter().map(|h| if rows == 0 { 0.0 } else { h as f64 / rows as f64 }).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub granularity: Granularity,
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
    pub queries: usize,
    pub gallery: usize,
    /// Gallery indices per query, best first.
    pub ranked: Vec<Vec<usize>>,
}

impl RetrievalReport {
    pub fn from_scores(s: &Tensor, query_ids: &[usize], gallery_ids: &[usize], granularity: Granularity, lambda1: f64, lambda2: f64) -> Result<Self, EvalError> {
        let r = recall_at_ks(s, query_ids, gallery_ids, &[1, 5, 10])?;
        let cols = gallery_ids.len();
        let ranked = s.data().chunks(cols.max(1)).take(query_ids.len()).map(rank_gallery).collect();
        Ok(Self {
            granularity,
            lambda1,
            lambda2,
            r1: r[0],
            r5: r[1],
            r10: r[2],
            total: r[0] + r[1] + r[2],
            queries: query_ids.len(),
            gallery: cols,
            ranked,
        })
    }
}

/// Parses `start:stop:step` (inclusive of `stop`), `a,b,c`, or a single value.
pub fn parse_grid(grid: &str) -> Result<Vec<f64>, EvalError> {
    let bad = || EvalError::BadGrid(grid.to_string());
    let num = |s: &str| s.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(bad);
    let values = if grid.contains(':') {
        let parts: Vec<&str> = grid.split(':').collect();
        let [start, stop, step] = parts[..] else { return Err(bad()) };
        let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
        if step <= 0.0 || stop < start {
            return Err(bad());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        // values are rounded to 12 places so 0.1·3 prints as 0.3
        (0..count).map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12).collect()
    } else if grid.trim().is_empty() {
        Vec::new()
    } else {
        grid.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if values.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    Ok(values)
}
