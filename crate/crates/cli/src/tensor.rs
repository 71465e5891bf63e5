//! `RTEN` tensor files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset 0   magic   b"RTEN"
//! offset 4   version u32 (= 1)
//! offset 8   ndim    u32
//! offset 12  dims    ndim x u32
//! ...        payload product(dims) x f32, row-major
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayD, IxDyn};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"RTEN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(
            dims.iter().product::<usize>(),
            data.len(),
            "dims do not match data"
        );
        Self { dims, data }
    }

    pub fn from_array<D: ndarray::Dimension>(a: &ndarray::Array<f32, D>) -> Self {
        Self::new(a.shape().to_vec(), a.iter().copied().collect())
    }

    pub fn into_array(self) -> ArrayD<f32> {
        ArrayD::from_shape_vec(IxDyn(&self.dims), self.data).expect("dims match data")
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses a tensor, reporting the byte offset of the first problem.
    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let err = |offset: usize, msg: String| CliError::Tensor {
            path: path.to_path_buf(),
            offset,
            msg,
        };
        let read_u32 = |offset: usize, what: &str| -> Result<u32> {
            bytes
                .get(offset..offset + 4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
                .ok_or_else(|| err(offset, format!("truncated while reading {what}")))
        };
        match bytes.get(0..4) {
            Some(m) if m == MAGIC => {}
            Some(_) => return Err(err(0, "bad magic, expected \"RTEN\"".into())),
            None => return Err(err(0, "truncated while reading magic".into())),
        }
        let version = read_u32(4, "version")?;
        if version != VERSION {
            return Err(err(4, format!("unsupported version {version}")));
        }
        let ndim = read_u32(8, "ndim")? as usize;
        let mut dims = Vec::with_capacity(ndim.min(16));
        let mut count: usize = 1;
        for k in 0..ndim {
            let offset = 12 + 4 * k;
            let d = read_u32(offset, "dims")? as usize;
            count = count
                .checked_mul(d)
                .ok_or_else(|| err(offset, "element count overflows".into()))?;
            dims.push(d);
        }
        let start = 12 + 4 * ndim;
        let expected = count
            .checked_mul(4)
            .and_then(|n| n.checked_add(start))
            .ok_or_else(|| err(start, "payload size overflows".into()))?;
        if bytes.len() != expected {
            return Err(err(
                bytes.len().min(expected),
                format!(
                    "payload is {} bytes, dims {:?} need {}",
                    bytes.len().saturating_sub(start),
                    dims,
                    count * 4
                ),
            ));
        }
        let data = bytes[start..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::decode(&bytes, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| CliError::io(path, e))
    }

    /// `H x W`, also accepting a leading singleton channel.
    pub fn into_array2(self, path: &Path) -> Result<Array2<f32>> {
        let dims = match self.dims.as_slice() {
            [h, w] | [1, h, w] => (*h, *w),
            other => return Err(shape_error(path, other, "H x W or 1 x H x W")),
        };
        Ok(Array2::from_shape_vec(dims, self.data).expect("dims match data"))
    }

    pub fn into_array3(self, path: &Path) -> Result<Array3<f32>> {
        let dims = match self.dims.as_slice() {
            [c, h, w] => (*c, *h, *w),
            other => return Err(shape_error(path, other, "C x H x W")),
        };
        Ok(Array3::from_shape_vec(dims, self.data).expect("dims match data"))
    }
}

fn shape_error(path: &Path, dims: &[usize], want: &str) -> CliError {
    CliError::Tensor {
        path: path.to_path_buf(),
        offset: 8,
        msg: format!("dims {dims:?}, expected {want}"),
    }
}
