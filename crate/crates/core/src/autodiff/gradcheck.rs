//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::graph::{Graph, GraphError, NodeId};
use super::param::{ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub samples: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator; keeps entries whose true
    /// gradient is near zero from being judged on rounding noise alone.
    pub denominator_floor: f64,
    pub seed: u64,
    /// Redraws allowed per sample when `θ ± h` crosses a ReLU or hinge kink.
    pub kink_retries: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            samples: 200,
            step: 1e-5,
            tolerance: 1e-4,
            denominator_floor: 1e-6,
            seed: 7,
            kink_retries: 50,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradSample {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub samples: Vec<GradSample>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Entries redrawn because the difference straddled a kink.
    pub kinks_skipped: usize,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&GradSample> {
        self.samples.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GradCheckError {
    #[error("loss evaluation failed: {0}")]
    Graph(#[from] GraphError),
    #[error("loss is non-finite at perturbed point ({param}[{index}])")]
    NonFinite { param: String, index: usize },
    #[error("no parameters to check")]
    Empty,
    #[error("finite-difference step must be positive")]
    BadStep,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares analytic gradients of `build_loss` against central differences
/// `(f(θ+h) − f(θ−h)) / 2h` on randomly sampled parameter entries.
///
/// Samples are spread round-robin over `params` so that every listed
/// parameter is visited before any is visited twice. Parameter values are
/// restored bit-exactly afterwards.
pub fn finite_difference_check<F>(
    build_loss: F,
    store: &mut ParamStore,
    params: &[ParamId],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, GradCheckError>
where
    F: Fn(&mut Graph, &ParamStore) -> NodeId,
{
    if params.is_empty() {
        return Err(GradCheckError::Empty);
    }
    if !(opts.step > 0.0) {
        return Err(GradCheckError::BadStep);
    }
    store.zero_grads();
    let mut g = Graph::new();
    let root = build_loss(&mut g, store);
    g.scalar(root)?;
    g.backward(root, store)?;
    let base_pattern = g.kink_pattern();
    let mut kinks_skipped = 0;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<ParamId> = params.to_vec();
    let mut samples = Vec::with_capacity(opts.samples);
    for s in 0..opts.samples {
        if s % order.len() == 0 {
            // fresh shuffle each round
            for i in (1..order.len()).rev() {
                order.swap(i, rng.gen_range(0..=i));
            }
        }
        let pid = order[s % order.len()];
        let mut attempt = 0;
        let (index, plus, minus) = loop {
            let index = rng.gen_range(0..store.get(pid).value.len());
            let original = store.get(pid).value.data()[index];
            let mut eval_at = |value: f64| -> Result<(f64, bool), GradCheckError> {
                store.get_mut(pid).value.data_mut()[index] = value;
                let mut g = Graph::inference();
                let root = build_loss(&mut g, store);
                let result = g.scalar(root);
                store.get_mut(pid).value.data_mut()[index] = original;
                let loss = result.map_err(|e| match e {
                    GraphError::NonFinite { .. } => GradCheckError::NonFinite {
                        param: store.get(pid).name().to_string(),
                        index,
                    },
                    other => other.into(),
                })?;
                Ok((loss, g.kink_pattern() == base_pattern))
            };
            let (plus, smooth_plus) = eval_at(original + opts.step)?;
            let (minus, smooth_minus) = eval_at(original - opts.step)?;
            if (smooth_plus && smooth_minus) || attempt >= opts.kink_retries {
                break (index, plus, minus);
            }
            attempt += 1;
            kinks_skipped += 1;
        };
        let analytic = store.get(pid).grad.data()[index];
        let numeric = (plus - minus) / (2.0 * opts.step);
        samples.push(GradSample {
            param: store.get(pid).name().to_string(),
            index,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric, opts.denominator_floor),
        });
    }
    let max_rel_error = samples.iter().map(|s| s.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        samples,
        max_rel_error,
        tolerance: opts.tolerance,
        passed: max_rel_error <= opts.tolerance,
        kinks_skipped,
    })
}
