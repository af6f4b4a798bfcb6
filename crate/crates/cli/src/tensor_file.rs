//! Binary tensor files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SNIC"            4 bytes
//! version           u32
//! rank              u32
//! dims              rank × u32
//! payload           Π dims × f64, row-major
//! metadata length   u32
//! metadata          UTF-8
//! ```

use std::io::{Read, Write};
use std::path::Path;

use snica_core::numerics::Matrix;

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"SNIC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
    pub metadata: String,
}

impl Tensor {
    pub fn from_matrix(m: &Matrix, metadata: impl Into<String>) -> Self {
        Self {
            dims: vec![m.rows(), m.cols()],
            data: m.as_slice().to_vec(),
            metadata: metadata.into(),
        }
    }

    /// Rank-2 view; rank 1 becomes a single row.
    pub fn to_matrix(&self) -> Result<Matrix> {
        match self.dims.as_slice() {
            [r, c] => Ok(Matrix::from_vec(*r, *c, self.data.clone())),
            [c] => Ok(Matrix::from_vec(1, *c, self.data.clone())),
            d => Err(CliError::Format(format!("expected a rank-2 tensor, found dims {d:?}"))),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.dims.len() + 8 * self.data.len() + self.metadata.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        out.extend_from_slice(self.metadata.as_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(CliError::Format("bad magic, not a tensor file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(CliError::Format(format!(
                "tensor file version {version} is not supported (this build reads version {VERSION})"
            )));
        }
        let rank = read_u32(&mut r)? as usize;
        let dims = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        if r.len() < 8 * count {
            return Err(CliError::Format("payload shorter than its dims".into()));
        }
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let mut b = [0u8; 8];
            read_exact(&mut r, &mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        let len = read_u32(&mut r)? as usize;
        if r.len() != len {
            return Err(CliError::Format("metadata length does not match the file size".into()));
        }
        let metadata = String::from_utf8(r.to_vec()).map_err(|_| CliError::Format("metadata is not UTF-8".into()))?;
        Ok(Self { dims, data, metadata })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
        f.write_all(&self.encode()).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::decode(&bytes)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| CliError::Format("file truncated".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_matrix(path: &Path, m: &Matrix, metadata: &str) -> Result<()> {
    Tensor::from_matrix(m, metadata).write(path)
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    Tensor::read(path)?.to_matrix()
}
