//! FMAT: a little-endian binary container for one row-major f32 matrix.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "FMAT"
//! 4       4     u32 version (1)
//! 8       4     u32 rows
//! 12      4     u32 cols
//! 16      4*r*c f32 values, row-major
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"FMAT";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        offset,
        msg: msg.into(),
    }
}

pub fn encode(m: &Tensor<f32>) -> Result<Vec<u8>> {
    let (rows, cols) = m.dims2()?;
    m.ensure_finite("matrix to serialize")?;
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Argument(format!("{what} {v} does not fit in u32")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(rows, "rows")?.to_le_bytes());
    out.extend_from_slice(&to_u32(cols, "cols")?.to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4-byte slice"))
}

pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(format_err(0, "bad magic, expected \"FMAT\""));
    }
    if bytes.len() < HEADER_LEN {
        return Err(format_err(bytes.len(), "truncated header"));
    }
    let version = read_u32(bytes, 4);
    if version != VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    let rows = read_u32(bytes, 8) as usize;
    let cols = read_u32(bytes, 12) as usize;
    let payload = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| format_err(8, "matrix size overflows"))?;
    let end = HEADER_LEN + payload;
    if bytes.len() < end {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload: {rows}x{cols} needs {end} bytes"),
        ));
    }
    if bytes.len() > end {
        return Err(format_err(end, "trailing bytes after payload"));
    }
    let data = bytes[HEADER_LEN..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    Tensor::from_vec(&[rows, cols], data)
}

pub fn write_file(path: impl AsRef<Path>, m: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(m)?).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format { offset, msg } => Error::Format {
            offset,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}
