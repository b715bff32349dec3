use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::TrainConfig;
use super::plan::StepPlan;
use crate::autodiff::Step;
use crate::model::{Model, ModelConfig};
use crate::tensor::{encode_shape_and_payload, Cursor, Tensor, TensorError};
use crate::text::Vocabulary;

const MAGIC: &[u8; 4] = b"MIAC";
const VERSION: u32 = 1;
const OPT_PREFIX: &str = "opt/";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {reason}")]
    Invalid { path: String, reason: String },
}

/// Everything besides the weights needed to rebuild a model, kept next to
/// the checkpoint as `<ckpt>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub vocab: Vocabulary,
    pub model: ModelConfig,
    pub plan: StepPlan,
    pub completed_steps: Vec<Step>,
    pub train: TrainConfig,
    /// Corpus directory the model was trained on.
    #[serde(default)]
    pub corpus: Option<String>,
}

pub struct Checkpoint {
    pub model: Model,
    pub meta: CheckpointMeta,
    pub optimizer: Option<Adam>,
}

pub fn sidecar_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_os_string();
    s.push(".json");
    PathBuf::from(s)
}

fn encode_block(buf: &mut Vec<u8>, entries: &[(String, &Tensor)]) {
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        encode_shape_and_payload(buf, t.shape(), t.data());
    }
}

fn decode_block(cur: &mut Cursor) -> Result<Vec<(String, Tensor)>, TensorError> {
    let count = cur.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(len)?).map_err(|_| cur.err("entry name is not UTF-8"))?.to_string();
        let shape = cur.shape()?;
        let data = cur.f32_payload(shape.iter().product())?;
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

/// Writes a `.miac` file: the parameter block, then an optional block of
/// optimizer state whose names start with `opt/`.
pub fn write_miac(path: &Path, params: &[(String, &Tensor)], opt: &[(String, &Tensor)]) -> Result<(), TensorError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    encode_block(&mut buf, params);
    if !opt.is_empty() {
        encode_block(&mut buf, opt);
    }
    let io = |source| TensorError::Io { path: path.display().to_string(), source };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(&buf).map_err(io)
}

pub type Entries = Vec<(String, Tensor)>;

pub fn read_miac(path: &Path) -> Result<(Entries, Entries), TensorError> {
    let bytes = fs::read(path).map_err(|source| TensorError::Io { path: path.display().to_string(), source })?;
    let mut cur = Cursor::new(&bytes, path);
    cur.magic(MAGIC, VERSION)?;
    let params = decode_block(&mut cur)?;
    let opt = if cur.at_end() { Vec::new() } else { decode_block(&mut cur)? };
    cur.finish()?;
    if let Some((name, _)) = opt.iter().find(|(n, _)| !n.starts_with(OPT_PREFIX)) {
        return Err(cur.err(&format!("optimizer entry {name:?} lacks the {OPT_PREFIX} prefix")));
    }
    Ok((params, opt))
}

pub fn save_checkpoint(path: &Path, model: &Model, meta: &CheckpointMeta, optimizer: Option<&Adam>) -> Result<(), CheckpointError> {
    let params: Vec<(String, &Tensor)> = model.store.iter().map(|(_, p)| (p.name().to_string(), &p.value)).collect();
    let step_t;
    let mut opt: Vec<(String, &Tensor)> = Vec::new();
    if let Some(adam) = optimizer {
        step_t = Tensor::scalar(adam.t as f64);
        opt.push((format!("{OPT_PREFIX}t"), &step_t));
        for (id, p) in model.store.iter() {
            if let Some((m, v)) = adam.moments(id) {
                opt.push((format!("{OPT_PREFIX}{}/m", p.name()), m));
                opt.push((format!("{OPT_PREFIX}{}/v", p.name()), v));
            }
        }
    }
    write_miac(path, &params, &opt)?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(meta).expect("serializable metadata");
    fs::write(&side, json).map_err(|source| TensorError::Io { path: side.display().to_string(), source })?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let invalid = |p: &Path, reason: String| CheckpointError::Invalid { path: p.display().to_string(), reason };
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|source| TensorError::Io { path: side.display().to_string(), source })?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| invalid(&side, e.to_string()))?;
    let (params, opt) = read_miac(path)?;
    let mut model = Model::new(meta.model.clone(), meta.plan).map_err(|e| invalid(&side, e))?;
    if params.len() != model.store.len() {
        return Err(invalid(path, format!("{} entries, model has {} parameters", params.len(), model.store.len())));
    }
    for (name, value) in params {
        model.store.set_value(&name, value).map_err(|e| invalid(path, e.to_string()))?;
    }
    let optimizer = if opt.is_empty() {
        None
    } else {
        let mut adam = Adam::new(model.store.len());
        for (name, t) in opt {
            let rest = &name[OPT_PREFIX.len()..];
            if rest == "t" {
                adam.t = t.item().unwrap_or(0.0) as u64;
                continue;
            }
            let (pname, which) = rest.rsplit_once('/').ok_or_else(|| invalid(path, format!("bad optimizer entry {name}")))?;
            let id = model.store.id(pname).ok_or_else(|| invalid(path, format!("optimizer entry for unknown parameter {pname}")))?;
            let slot = adam.moments[id.index()].get_or_insert_with(|| (t.clone(), t.clone()));
            match which {
                "m" => slot.0 = t,
                "v" => slot.1 = t,
                _ => return Err(invalid(path, format!("bad optimizer entry {name}"))),
            }
        }
        Some(adam)
    };
    Ok(Checkpoint { model, meta, optimizer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamStore;

    fn meta(model: &Model) -> CheckpointMeta {
        CheckpointMeta {
            vocab: Vocabulary::build(["a red hat"], 1),
            model: model.config.clone(),
            plan: model.plan,
            completed_steps: vec![1],
            train: TrainConfig::desk(),
            corpus: Some("corpus".into()),
        }
    }

    #[test]
    fn roundtrip_with_optimizer_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.miac");
        let model = Model::new(ModelConfig::desk(4, 3), StepPlan::default()).unwrap();
        let mut store: ParamStore = model.store.clone();
        let ids: Vec<_> = store.ids().take(3).collect();
        for &id in &ids {
            store.get_mut(id).grad.fill(0.5);
        }
        let mut adam = Adam::new(store.len());
        adam.step(&mut store, &ids, 0.01).unwrap();
        let model = Model { store, ..model };
        save_checkpoint(&path, &model, &meta(&model), Some(&adam)).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.meta, meta(&model));
        for ((_, a), (_, b)) in model.store.iter().zip(ck.model.store.iter()) {
            assert_eq!(a.name(), b.name());
            for (x, y) in a.value.data().iter().zip(b.value.data()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        let opt = ck.optimizer.unwrap();
        assert_eq!(opt.t, 1);
        assert!(opt.moments(ids[0]).is_some());
        assert!(opt.moments(ck.model.store.id("classifier.bias").unwrap()).is_none());
        // layout starts with magic, version and the entry count
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"MIAC");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize, model.store.len());
    }

    #[test]
    fn corrupt_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.miac");
        fs::write(&path, b"MIAT\x01\x00\x00\x00").unwrap();
        let err = read_miac(&path).unwrap_err().to_string();
        assert!(err.contains("bad.miac") && err.contains("MIAC"), "{err}");
        write_miac(&path, &[("w".into(), &Tensor::vector(&[1.0]))], &[("m".into(), &Tensor::vector(&[1.0]))]).unwrap();
        assert!(read_miac(&path).unwrap_err().to_string().contains("prefix"));
    }
}
