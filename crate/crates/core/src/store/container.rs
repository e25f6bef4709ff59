use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use half::{bf16, f16};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::StoreError;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F16,
    Bf16,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F16 | Dtype::Bf16 => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F32 => "F32",
            Dtype::F16 => "F16",
            Dtype::Bf16 => "BF16",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "F32" => Some(Dtype::F32),
            "F16" => Some(Dtype::F16),
            "BF16" => Some(Dtype::Bf16),
            _ => None,
        }
    }
}

/// An f32 tensor of arbitrary rank, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self { shape, data }
    }

    pub fn vector(data: Vec<f32>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn scalar(v: f32) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// View as a matrix: rank-2 as is, rank-1 as a single row.
    pub fn to_matrix(&self) -> Option<Matrix> {
        match self.shape.as_slice() {
            [r, c] => Some(Matrix::from_vec(*r, *c, self.data.clone())),
            [c] => Some(Matrix::from_vec(1, *c, self.data.clone())),
            _ => None,
        }
    }
}

impl From<&Matrix> for Tensor {
    fn from(m: &Matrix) -> Self {
        Tensor { shape: vec![m.rows(), m.cols()], data: m.as_slice().to_vec() }
    }
}

#[derive(Serialize, Deserialize)]
struct Entry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

/// Serializes tensors as f32 in name order. The header is space-padded to a
/// multiple of 8 bytes.
pub fn serialize_container<'a>(
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<Vec<u8>, StoreError> {
    let mut sorted: BTreeMap<&str, &Tensor> = BTreeMap::new();
    for (name, t) in tensors {
        if t.numel() != t.data.len() {
            return Err(StoreError::InvalidTensor {
                name: name.into(),
                shape: t.shape.clone(),
                len: t.data.len(),
            });
        }
        if sorted.insert(name, t).is_some() {
            return Err(StoreError::DuplicateName(name.into()));
        }
    }
    let mut header = serde_json::Map::new();
    let mut offset = 0;
    for (name, t) in &sorted {
        let len = t.data.len() * 4;
        let entry = Entry {
            dtype: Dtype::F32.as_str().into(),
            shape: t.shape.clone(),
            data_offsets: [offset, offset + len],
        };
        header.insert(name.to_string(), serde_json::to_value(entry).expect("entry serializes"));
        offset += len;
    }
    let mut header = serde_json::to_vec(&Value::Object(header)).expect("header serializes");
    while !header.len().is_multiple_of(8) {
        header.push(b' ');
    }
    let mut out = Vec::with_capacity(8 + header.len() + offset);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for t in sorted.values() {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes a container atomically: a temporary sibling is renamed into place.
pub fn write_container<'a>(
    path: &Path,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<(), StoreError> {
    let bytes = serialize_container(tensors)?;
    write_atomic(path, &bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = Path::new(&tmp);
    let mut f = fs::File::create(tmp).map_err(|e| StoreError::io(tmp, e))?;
    f.write_all(bytes).map_err(|e| StoreError::io(tmp, e))?;
    f.sync_all().map_err(|e| StoreError::io(tmp, e))?;
    drop(f);
    fs::rename(tmp, path).map_err(|e| StoreError::io(path, e))
}

pub fn read_container(path: &Path) -> Result<BTreeMap<String, Tensor>, StoreError> {
    let bytes = fs::read(path).map_err(|e| StoreError::io(path, e))?;
    parse_container(&bytes)
}

/// Parses and validates a container. Offsets must tile the payload exactly;
/// a `__metadata__` header entry is ignored.
pub fn parse_container(bytes: &[u8]) -> Result<BTreeMap<String, Tensor>, StoreError> {
    let len_bytes: [u8; 8] = bytes
        .get(..8)
        .and_then(|b| b.try_into().ok())
        .ok_or(StoreError::MissingHeaderLength(bytes.len()))?;
    let header_len = u64::from_le_bytes(len_bytes);
    let header_end = 8u64
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len() as u64)
        .ok_or(StoreError::HeaderOutOfBounds { header_len, file_len: bytes.len() })?
        as usize;
    let header: BTreeMap<String, Value> = serde_json::from_slice(&bytes[8..header_end])
        .map_err(|e| StoreError::MalformedHeader(e.to_string()))?;
    let payload = &bytes[header_end..];

    let mut entries = Vec::new();
    for (name, value) in header {
        if name == "__metadata__" {
            continue;
        }
        let entry: Entry = serde_json::from_value(value)
            .map_err(|e| StoreError::MalformedHeader(format!("tensor `{name}`: {e}")))?;
        let dtype = Dtype::parse(&entry.dtype).ok_or_else(|| StoreError::UnsupportedDtype {
            name: name.clone(),
            dtype: entry.dtype.clone(),
        })?;
        let [begin, end] = entry.data_offsets;
        let expected = entry.shape.iter().product::<usize>() * dtype.size();
        if end < begin || end - begin != expected {
            return Err(StoreError::ShapeMismatch {
                name,
                shape: entry.shape,
                expected,
                actual: end.saturating_sub(begin),
            });
        }
        entries.push((name, dtype, entry.shape, begin, end));
    }

    entries.sort_by(|a, b| (a.3, a.4, &a.0).cmp(&(b.3, b.4, &b.0)));
    let mut cursor = 0;
    let mut prev: Option<&str> = None;
    for (name, _, _, begin, end) in &entries {
        if *begin < cursor {
            return Err(StoreError::OverlappingOffsets {
                first: prev.unwrap_or_default().to_string(),
                second: name.clone(),
            });
        }
        if *begin > cursor {
            return Err(StoreError::OffsetGap { name: name.clone(), at: cursor });
        }
        cursor = *end;
        prev = Some(name);
    }
    if cursor > payload.len() {
        return Err(StoreError::TruncatedPayload { needed: cursor, available: payload.len() });
    }
    if cursor < payload.len() {
        return Err(StoreError::TrailingBytes { extra: payload.len() - cursor });
    }

    let mut seen = HashSet::new();
    let mut out = BTreeMap::new();
    for (name, dtype, shape, begin, end) in entries {
        if !seen.insert(name.clone()) {
            return Err(StoreError::DuplicateName(name));
        }
        let raw = &payload[begin..end];
        let data = match dtype {
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
            Dtype::F16 => raw
                .chunks_exact(2)
                .map(|c| f16::from_le_bytes([c[0], c[1]]).to_f32())
                .collect(),
            Dtype::Bf16 => raw
                .chunks_exact(2)
                .map(|c| bf16::from_le_bytes([c[0], c[1]]).to_f32())
                .collect(),
        };
        out.insert(name, Tensor { shape, data });
    }
    Ok(out)
}
