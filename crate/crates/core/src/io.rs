//! Tensor file format shared by checkpoints and datasets.
//!
//! Layout: magic bytes `EXPT`, format version (u32 LE), rank (u32 LE), one
//! u64 LE extent per axis, then the values as little-endian 32-bit floats in
//! row-major order. No compression.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::TensorError;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"EXPT";
const VERSION: u32 = 1;

fn io_err(path: &Path, source: std::io::Error) -> TensorError {
    TensorError::Io { path: path.display().to_string(), source }
}

fn format_err(path: &Path, detail: impl Into<String>) -> TensorError {
    TensorError::FileFormat { path: path.display().to_string(), detail: detail.into() }
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<(), TensorError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(|e| io_err(path, e));
    write(MAGIC)?;
    write(&VERSION.to_le_bytes())?;
    write(&(tensor.rank() as u32).to_le_bytes())?;
    for &ext in tensor.shape() {
        write(&(ext as u64).to_le_bytes())?;
    }
    for &v in tensor.values() {
        write(&(v as f32).to_le_bytes())?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor, TensorError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut input = BufReader::new(file);

    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(|_| format_err(path, "missing or short header"))?;
    if &magic != MAGIC {
        return Err(format_err(path, format!("bad magic bytes {magic:?}")));
    }
    let mut u32buf = [0u8; 4];
    input.read_exact(&mut u32buf).map_err(|_| format_err(path, "truncated version"))?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    input.read_exact(&mut u32buf).map_err(|_| format_err(path, "truncated rank"))?;
    let rank = u32::from_le_bytes(u32buf) as usize;
    if rank > 8 {
        return Err(format_err(path, format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut u64buf = [0u8; 8];
    for axis in 0..rank {
        input.read_exact(&mut u64buf).map_err(|_| format_err(path, "truncated extents"))?;
        let ext = u64::from_le_bytes(u64buf);
        if ext == 0 || ext > u32::MAX as u64 {
            return Err(format_err(path, format!("invalid extent {ext} on axis {axis}")));
        }
        shape.push(ext as usize);
    }
    let numel: usize = shape.iter().product();
    let mut values = Vec::with_capacity(numel);
    let mut f32buf = [0u8; 4];
    for i in 0..numel {
        input
            .read_exact(&mut f32buf)
            .map_err(|_| format_err(path, format!("payload ends at value {i} of {numel}")))?;
        values.push(f32::from_le_bytes(f32buf) as f64);
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing).map_err(|e| io_err(path, e))? != 0 {
        return Err(format_err(path, "trailing bytes after payload"));
    }
    Tensor::new(&shape, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_quantizes_to_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.expt");
        let t = Tensor::new(&[2, 3], vec![1.5, -2.25, 0.0, 1e-3, 7.0, -0.5]).unwrap();
        write_tensor(&path, &t).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (b, v) in back.values().iter().zip(t.values()) {
            assert_eq!(*b, (*v as f32) as f64);
        }
    }

    #[test]
    fn scalar_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.expt");
        write_tensor(&path, &Tensor::scalar(4.5)).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back.rank(), 0);
        assert_eq!(back.item(), 4.5);
    }

    #[test]
    fn header_layout_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.expt");
        write_tensor(&path, &Tensor::new(&[2, 1], vec![1.0, 2.0]).unwrap()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"EXPT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[20..28].try_into().unwrap()), 1);
        assert_eq!(bytes.len(), 28 + 2 * 4);
    }

    #[test]
    fn truncation_and_garbage_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.expt");
        let t = Tensor::new(&[4], vec![1.0; 4]).unwrap();
        write_tensor(&path, &t).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 2);
        std::fs::write(&path, &bytes).unwrap();
        let err = read_tensor(&path).unwrap_err();
        assert!(err.to_string().contains("bad.expt"), "got: {err}");

        std::fs::write(&path, b"NOPE").unwrap();
        assert!(read_tensor(&path).is_err());
    }
}
