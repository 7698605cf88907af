//! Dense f32 tensors and the `CSPL` binary container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size        field
//! 0       4           magic "CSPL"
//! 4       4           version (u32, = 1)
//! 8       1           dtype code (u8, 0 = f32 LE)
//! 9       1           rank (u8, 1 or 2)
//! 10      2           reserved (u16, = 0)
//! 12      8 * rank    dims (u64 each)
//! ...     4 * numel   payload, row-major f32 LE
//! ```
//!
//! A rank-2 tensor stores one category, label or sample per row.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CSPL";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;

const FIXED_HEADER: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 2 {
            return Err(Error::Shape(format!("rank {} not in {{1, 2}}", dims.len())));
        }
        if dims.contains(&0) {
            return Err(Error::Shape(format!("zero-sized dim in {dims:?}")));
        }
        let numel: usize = dims.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {numel} elements, got {}",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self { dims, data })
    }

    pub fn vector(data: Vec<f32>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Stacks equal-length rows into a rank-2 tensor.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty("row list"))?;
        let cols = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::DimMismatch {
                    expected: cols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Number of rows; a rank-1 tensor is a single row.
    pub fn rows(&self) -> usize {
        if self.dims.len() == 2 {
            self.dims[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        *self.dims.last().expect("rank >= 1")
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.cols())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FIXED_HEADER + 8 * self.rank() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(DTYPE_F32);
        out.push(self.rank() as u8);
        out.extend_from_slice(&0u16.to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::BadMagic(origin.to_path_buf()));
        }
        if bytes.len() < FIXED_HEADER {
            return Err(Error::TruncatedPayload {
                needed: FIXED_HEADER,
                found: bytes.len(),
            });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        if bytes[8] != DTYPE_F32 {
            return Err(Error::UnsupportedDtype(bytes[8]));
        }
        let rank = bytes[9] as usize;
        if !(1..=2).contains(&rank) {
            return Err(Error::Shape(format!("rank {rank} not in {{1, 2}}")));
        }
        let header = FIXED_HEADER + 8 * rank;
        if bytes.len() < header {
            return Err(Error::TruncatedPayload {
                needed: header,
                found: bytes.len(),
            });
        }
        let dims: Vec<usize> = bytes[FIXED_HEADER..header]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Shape(format!("dims {dims:?} overflow")))?
            / 4;
        let payload = &bytes[header..];
        if payload.len() < 4 * numel {
            return Err(Error::TruncatedPayload {
                needed: 4 * numel,
                found: payload.len(),
            });
        }
        if payload.len() > 4 * numel {
            return Err(Error::Shape(format!(
                "{} trailing bytes after payload",
                payload.len() - 4 * numel
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(dims, data)
    }
}

fn check_finite(data: &[f32]) -> Result<()> {
    match data.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

pub fn save_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    // Tensors built through `new` are already finite; re-check anyway since
    // the file must never contain a value `load_tensor` would reject.
    check_finite(&t.data)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&t.to_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes, path)
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine of the angle between `a` and `b`, accumulated in f64.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}
