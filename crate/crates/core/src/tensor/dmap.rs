//! `DMAP` tensor container: magic, `u32` version, dtype byte, five `u32` dims, raw values.
//! All integers and values are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};

pub const DMAP_MAGIC: &[u8; 4] = b"DMAP";
pub const DMAP_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 1 + 5 * 4;

pub fn write_dmap<T: Scalar, W: Write>(out: &mut W, tensor: &Tensor<T>) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(HEADER_LEN + tensor.len() * T::DTYPE.size());
    buf.extend_from_slice(DMAP_MAGIC);
    buf.extend_from_slice(&DMAP_VERSION.to_le_bytes());
    buf.push(T::DTYPE.code());
    for &dim in &tensor.shape().0 {
        let dim = u32::try_from(dim).map_err(|_| {
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "dimension exceeds u32")
        })?;
        buf.extend_from_slice(&dim.to_le_bytes());
    }
    for &v in tensor.data() {
        v.write_le(&mut buf);
    }
    out.write_all(&buf)
}

/// Reads one container from the stream, converting to `T` if the stored dtype differs.
pub fn read_dmap<T: Scalar, R: Read>(input: &mut R) -> Result<Tensor<T>> {
    let fmt_err = |reason: String| Error::Format {
        what: "DMAP container",
        reason,
    };
    let mut header = [0u8; HEADER_LEN];
    input
        .read_exact(&mut header)
        .map_err(|e| fmt_err(format!("truncated header: {e}")))?;
    if &header[0..4] != DMAP_MAGIC {
        return Err(fmt_err(format!("bad magic {:?}", &header[0..4])));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != DMAP_VERSION {
        return Err(fmt_err(format!("unsupported version {version}")));
    }
    let dtype = DType::from_code(header[8])
        .ok_or_else(|| fmt_err(format!("unknown dtype code {}", header[8])))?;
    let mut dims = [0usize; 5];
    for (i, dim) in dims.iter_mut().enumerate() {
        let at = 9 + 4 * i;
        *dim = u32::from_le_bytes(header[at..at + 4].try_into().unwrap()) as usize;
    }
    let shape = Shape(dims);
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(dtype.size()).map(|bytes| (n, bytes)));
    let (numel, bytes) = count.ok_or_else(|| fmt_err(format!("dims {shape} overflow")))?;
    let mut raw = vec![0u8; bytes];
    input
        .read_exact(&mut raw)
        .map_err(|e| fmt_err(format!("expected {numel} values for {shape}: {e}")))?;
    let data = match dtype {
        d if d == T::DTYPE => raw.chunks_exact(d.size()).map(T::read_le).collect(),
        DType::F32 => raw
            .chunks_exact(4)
            .map(|b| convert::<f32, T>(f32::read_le(b)))
            .collect(),
        DType::F64 => raw
            .chunks_exact(8)
            .map(|b| convert::<f64, T>(f64::read_le(b)))
            .collect(),
    };
    Tensor::from_vec(shape, data)
}

#[inline]
fn convert<S: Scalar, T: Scalar>(v: S) -> T {
    T::from_f64_lossy(v.to_f64_lossy())
}

pub fn save_dmap<T: Scalar>(path: impl AsRef<Path>, tensor: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_dmap(&mut w, tensor).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_dmap<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dmap(&mut BufReader::new(file))
}
