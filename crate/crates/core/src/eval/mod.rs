//! Text→image retrieval evaluation, λ sweeps and attention inspection.

mod evaluator;
mod recall;
mod scores;

pub use recall::{parse_grid, rank_gallery, recall_at_k, recall_at_ks, EvalError, Granularity, RetrievalReport};
pub use scores::{Gallery, PairAttention, ScoreMatrices};
pub use evaluator::{attention_mass, evaluate, parts_for_bands, AttentionMass, Evaluator, SweepRow, MASK_BANDS};
