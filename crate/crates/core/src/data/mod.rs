//! Synthetic attribute-person corpus and manifest-based dataset loading.

mod dataset;
mod synth;

pub use dataset::{caption_id, load_dataset, load_masks, split_path, DataError, Dataset, ManifestRecord, MaskEntry, Sample};
pub use synth::{render_image, synth_generate, template_caption, PersonSpec, Slot, SynthConfig, SynthSummary, COLORS};
