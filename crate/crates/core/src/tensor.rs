//! Dense row-major tensors and the `.ten` binary format.

use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

/// Magic bytes at the start of every `.ten` file.
pub const TEN_MAGIC: &[u8; 4] = b"MIAT";
pub const TEN_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} values but {actual} were supplied")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape {0:?} has a zero extent")]
    ZeroExtent(Vec<usize>),
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// A dense n-dimensional array of `f64` stored row-major.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ZeroExtent(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite(i));
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor without validation. Callers guarantee the length invariant.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![0.0; n])
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn vector(values: &[f64]) -> Self {
        Self::from_parts(vec![values.len().max(1)], if values.is_empty() { vec![0.0] } else { values.to_vec() })
    }

    /// Builds a `[rows, cols]` matrix from nested rows.
    pub fn matrix(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = *self.shape.last().unwrap_or(&1);
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len(), "reshape size mismatch");
        self.shape = shape.to_vec();
        self
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Writes the tensor as a `.ten` file (f32 payload).
    pub fn write_ten(&self, path: &Path) -> Result<(), TensorError> {
        let mut buf = Vec::with_capacity(16 + 4 * self.shape.len() + 4 * self.data.len());
        buf.extend_from_slice(TEN_MAGIC);
        buf.extend_from_slice(&TEN_VERSION.to_le_bytes());
        encode_shape_and_payload(&mut buf, &self.shape, &self.data);
        let io_err = |source| TensorError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = fs::File::create(path).map_err(io_err)?;
        f.write_all(&buf).map_err(io_err)
    }

    /// Reads a full `.ten` file.
    pub fn read_ten(path: &Path) -> Result<Self, TensorError> {
        let bytes = fs::read(path).map_err(|source| TensorError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cur = Cursor::new(&bytes, path);
        let shape = cur.ten_header()?;
        let data = cur.f32_payload(shape.iter().product())?;
        cur.finish()?;
        Ok(Self::from_parts(shape, data))
    }

    /// Reads only the header of a `.ten` file and returns its shape.
    pub fn read_ten_shape(path: &Path) -> Result<Vec<usize>, TensorError> {
        let io_err = |source| TensorError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = fs::File::open(path).map_err(io_err)?;
        let mut head = [0u8; 12];
        f.read_exact(&mut head).map_err(|_| format_err(path, "truncated header"))?;
        if &head[..4] != TEN_MAGIC {
            return Err(format_err(path, "bad magic bytes (expected MIAT)"));
        }
        let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
        if version != TEN_VERSION {
            return Err(format_err(path, &format!("unsupported version {version}")));
        }
        let ndim = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
        let mut dims = vec![0u8; 4 * ndim];
        f.read_exact(&mut dims).map_err(|_| format_err(path, "truncated header"))?;
        let shape: Vec<usize> = dims
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        if ndim == 0 || shape.iter().any(|&d| d == 0) {
            return Err(format_err(path, "empty or zero-extent shape"));
        }
        Ok(shape)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?}", self.shape)?;
        let head: Vec<_> = self.data.iter().take(SHOWN).collect();
        write!(f, " {head:?}")?;
        if self.data.len() > SHOWN {
            write!(f, "…")?;
        }
        Ok(())
    }
}

fn format_err(path: &Path, reason: &str) -> TensorError {
    TensorError::Format {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

pub(crate) fn encode_shape_and_payload(buf: &mut Vec<u8>, shape: &[usize], data: &[f64]) {
    buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Little-endian reader over an in-memory file, reporting errors against its path.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self { bytes, pos: 0, path }
    }

    pub(crate) fn err(&self, reason: &str) -> TensorError {
        format_err(self.path, reason)
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], TensorError> {
        if self.pos + n > self.bytes.len() {
            return Err(self.err("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32, TensorError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn magic(&mut self, magic: &[u8; 4], version: u32) -> Result<(), TensorError> {
        if self.take(4)? != magic {
            let name = String::from_utf8_lossy(magic);
            return Err(self.err(&format!("bad magic bytes (expected {name})")));
        }
        let v = self.u32()?;
        if v != version {
            return Err(self.err(&format!("unsupported version {v}")));
        }
        Ok(())
    }

    pub(crate) fn shape(&mut self) -> Result<Vec<usize>, TensorError> {
        let ndim = self.u32()? as usize;
        if ndim == 0 {
            return Err(self.err("tensor with zero dimensions"));
        }
        let shape = (0..ndim)
            .map(|_| self.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        if shape.iter().any(|&d| d == 0) {
            return Err(self.err("zero-extent dimension"));
        }
        Ok(shape)
    }

    fn ten_header(&mut self) -> Result<Vec<usize>, TensorError> {
        self.magic(TEN_MAGIC, TEN_VERSION)?;
        self.shape()
    }

    pub(crate) fn f32_payload(&mut self, count: usize) -> Result<Vec<f64>, TensorError> {
        let raw = self.take(count * 4)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(self.err("non-finite payload value"));
        }
        Ok(data)
    }

    pub(crate) fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }

    pub(crate) fn finish(&self) -> Result<(), TensorError> {
        if self.at_end() {
            Ok(())
        } else {
            Err(self.err("trailing bytes after payload"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch_and_nan() {
        assert!(matches!(
            Tensor::new(vec![2, 2], vec![1.0; 3]),
            Err(TensorError::LengthMismatch { expected: 4, actual: 3, .. })
        ));
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, f64::NAN]),
            Err(TensorError::NonFinite(1))
        ));
        assert!(Tensor::new(vec![0, 3], vec![]).is_err());
    }

    #[test]
    fn ten_file_round_trip_and_header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ten");
        let t = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 3.25, 0.0, 1e-3]).unwrap();
        t.write_ten(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"MIAT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 12 + 8 + 6 * 4);
        let back = Tensor::read_ten(&path).unwrap();
        assert_eq!(back.shape(), &[2, 3]);
        for (a, b) in back.data().iter().zip(t.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(Tensor::read_ten_shape(&path).unwrap(), vec![2, 3]);
    }

    #[test]
    fn corrupt_magic_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ten");
        fs::write(&path, b"NOPE\x01\x00\x00\x00\x01\x00\x00\x00\x01\x00\x00\x00\0\0\0\0").unwrap();
        let err = Tensor::read_ten(&path).unwrap_err().to_string();
        assert!(err.contains("bad.ten"), "{err}");
        assert!(err.contains("magic"), "{err}");
    }
}
