use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::tensor::{Tensor, TensorError};
use crate::text::{tokenize, Lexicon, TextSample, Vocabulary};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Manifest { path: String, line: usize, reason: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{0}")]
    Config(String),
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub person_id: usize,
    /// Relative to the manifest's directory, or absolute.
    pub image_path: String,
    pub captions: Vec<String>,
}

/// One `masks.jsonl` line: the attributes a caption mentions and the
/// feature-map stripes those attributes occupy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub caption_id: String,
    pub attributes: Vec<String>,
    pub bands: Vec<usize>,
}

pub fn caption_id(image_path: &str, k: usize) -> String {
    format!("{image_path}#{k}")
}

/// Manifest path of a split inside a corpus directory.
pub fn split_path(corpus: &Path, split: &str) -> PathBuf {
    corpus.join(format!("{split}.jsonl"))
}

pub struct Sample {
    pub person_id: usize,
    /// Dense identity label in `0..num_ids`.
    pub label: usize,
    pub image_rel: String,
    pub image_path: PathBuf,
    pub captions: Vec<TextSample>,
    image: OnceLock<Tensor>,
}

impl Sample {
    pub fn caption_id(&self, k: usize) -> String {
        caption_id(&self.image_rel, k)
    }
}

pub struct Dataset {
    pub manifest: PathBuf,
    pub samples: Vec<Sample>,
    pub num_ids: usize,
}

fn read_lines(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })
}

/// Reads a manifest, validates every image header, and runs the text
/// pipeline over all captions. Identity labels are assigned densely in
/// ascending order of the original ids.
pub fn load_dataset(manifest: &Path, lexicon: &Lexicon) -> Result<Dataset, DataError> {
    let text = read_lines(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| DataError::Manifest { path: manifest.display().to_string(), line: i + 1, reason };
        let r: ManifestRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if r.captions.len() != 2 {
            return Err(err(format!("expected 2 captions, found {}", r.captions.len())));
        }
        if let Some(k) = r.captions.iter().position(|c| tokenize(c).is_empty()) {
            return Err(err(format!("caption {k} has no words")));
        }
        let image_path = base.join(&r.image_path);
        let shape = Tensor::read_ten_shape(&image_path)?;
        if shape.len() != 3 || shape[0] != 3 {
            return Err(err(format!("{} has shape {shape:?}, expected [3, H, W]", image_path.display())));
        }
        records.push((r, image_path));
    }
    if records.is_empty() {
        return Err(DataError::Manifest { path: manifest.display().to_string(), line: 0, reason: "split is empty".into() });
    }
    let ids: BTreeMap<usize, usize> = records.iter().map(|(r, _)| (r.person_id, 0)).collect();
    let dense: BTreeMap<usize, usize> = ids.keys().enumerate().map(|(i, &id)| (id, i)).collect();
    let samples = records
        .into_iter()
        .map(|(r, image_path)| Sample {
            person_id: r.person_id,
            label: dense[&r.person_id],
            captions: r.captions.iter().map(|c| TextSample::process(c, lexicon)).collect(),
            image_rel: r.image_path,
            image_path,
            image: OnceLock::new(),
        })
        .collect();
    Ok(Dataset { manifest: manifest.to_path_buf(), samples, num_ids: dense.len() })
}

pub fn load_masks(path: &Path) -> Result<HashMap<String, MaskEntry>, DataError> {
    let text = read_lines(path)?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let m: MaskEntry = serde_json::from_str(line)
            .map_err(|e| DataError::Manifest { path: path.display().to_string(), line: i + 1, reason: e.to_string() })?;
        out.insert(m.caption_id.clone(), m);
    }
    Ok(out)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// The image of sample `i`, read from disk on first use.
    pub fn image(&self, i: usize) -> Result<&Tensor, DataError> {
        let s = &self.samples[i];
        if let Some(t) = s.image.get() {
            return Ok(t);
        }
        let t = Tensor::read_ten(&s.image_path)?;
        Ok(s.image.get_or_init(|| t))
    }

    /// Every (sample, caption) pair; each caption is one matched pair.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.samples.iter().enumerate().flat_map(|(i, s)| (0..s.captions.len()).map(move |k| (i, k))).collect()
    }

    pub fn caption_texts(&self) -> impl Iterator<Item = &str> {
        self.samples.iter().flat_map(|s| s.captions.iter().map(|c| c.caption.as_str()))
    }

    /// Caption and phrase index lists for one caption.
    pub fn encode_caption(&self, vocab: &Vocabulary, i: usize, k: usize) -> (Vec<usize>, Vec<Vec<usize>>) {
        self.samples[i].captions[k].encode(vocab)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};

    fn write_manifest(dir: &Path, records: &[ManifestRecord]) -> PathBuf {
        let img = Tensor::zeros(&[3, 4, 2]);
        img.write_ten(&dir.join("a.ten")).unwrap();
        let path = dir.join("m.jsonl");
        let body: String = records.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
        fs::write(&path, body).unwrap();
        path
    }

    fn rec(id: usize) -> ManifestRecord {
        ManifestRecord { person_id: id, image_path: "a.ten".into(), captions: vec!["a red hat".into(), "blue pants".into()] }
    }

    #[test]
    fn dense_reindexing() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(dir.path(), &[rec(7), rec(3), rec(7)]);
        let ds = load_dataset(&path, &Lexicon::builtin()).unwrap();
        assert_eq!(ds.num_ids, 2);
        assert_eq!(ds.labels(), [1, 0, 1]);
        // permuting records keeps the id → label map
        let path = write_manifest(dir.path(), &[rec(3), rec(7), rec(7)]);
        let ds = load_dataset(&path, &Lexicon::builtin()).unwrap();
        assert_eq!(ds.labels(), [0, 1, 1]);
        assert_eq!(ds.samples[0].captions[0].phrase_texts(), ["red hat"]);
        assert_eq!(ds.image(0).unwrap().shape(), [3, 4, 2]);
    }

    #[test]
    fn caption_count_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = rec(1);
        r.captions.pop();
        let path = write_manifest(dir.path(), &[rec(0), r]);
        let err = load_dataset(&path, &Lexicon::builtin()).err().unwrap().to_string();
        assert!(err.contains(":2:") && err.contains("2 captions"), "{err}");
        let mut r = rec(1);
        r.captions[1] = " ... ".into();
        let path = write_manifest(dir.path(), &[r]);
        let err = load_dataset(&path, &Lexicon::builtin()).err().unwrap().to_string();
        assert!(err.contains(":1:") && err.contains("caption 1 has no words"), "{err}");
    }

    #[test]
    fn corrupt_image_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(dir.path(), &[rec(0)]);
        fs::write(dir.path().join("a.ten"), b"NOPE\x01\x00\x00\x00").unwrap();
        let err = load_dataset(&path, &Lexicon::builtin()).err().unwrap().to_string();
        assert!(err.contains("a.ten"), "{err}");
        let missing = load_dataset(&dir.path().join("none.jsonl"), &Lexicon::builtin()).err().unwrap().to_string();
        assert!(missing.contains("none.jsonl"));
    }

    #[test]
    fn generated_corpus_is_deterministic_and_loads() {
        let cfg = SynthConfig { train_ids: 4, test_ids: 2, images_per_id: 2, ..Default::default() };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let summary = synth_generate(&cfg, a.path()).unwrap();
        synth_generate(&cfg, b.path()).unwrap();
        assert_eq!(summary.images, 12);
        assert_eq!(summary.captions, 24);
        for name in ["train.jsonl", "test.jsonl", "val.jsonl", "masks.jsonl", "images/train_00000.ten", "images/test_00011.ten"] {
            assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
        }
        let lex = Lexicon::builtin();
        let train = load_dataset(&split_path(a.path(), "train"), &lex).unwrap();
        let test = load_dataset(&split_path(a.path(), "test"), &lex).unwrap();
        assert_eq!((train.len(), train.num_ids, test.num_ids), (8, 4, 2));
        let train_ids: Vec<usize> = train.samples.iter().map(|s| s.person_id).collect();
        assert!(test.samples.iter().all(|s| !train_ids.contains(&s.person_id)));
        let masks = load_masks(&a.path().join("masks.jsonl")).unwrap();
        assert_eq!(masks.len(), 24);
        assert!(masks.contains_key(&train.samples[0].caption_id(1)));
        assert_eq!(train.image(3).unwrap().shape(), [3, 192, 64]);
    }
}
