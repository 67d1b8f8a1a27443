//! Binary matrix file format used by the CLI for tensor I/O.
//!
//! Layout: magic `SASA`, format version u32, rows u32, cols u32
//! (little-endian), then row-major f64 little-endian data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub const MATRIX_MAGIC: &[u8; 4] = b"SASA";
pub const MATRIX_FORMAT_VERSION: u32 = 1;

pub fn write_matrix(m: &Matrix, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&MATRIX_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&u32::try_from(m.rows()).map_err(|_| Error::invalid("rows exceed u32"))?.to_le_bytes())?;
    w.write_all(&u32::try_from(m.cols()).map_err(|_| Error::invalid("cols exceed u32"))?.to_le_bytes())?;
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MATRIX_MAGIC {
        return Err(Error::format(format!(
            "{}: bad magic {:?}",
            path.display(),
            magic
        )));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != MATRIX_FORMAT_VERSION {
        return Err(Error::format(format!(
            "{}: unsupported matrix format version {version}",
            path.display()
        )));
    }
    r.read_exact(&mut word)?;
    let rows = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let cols = u32::from_le_bytes(word) as usize;
    let mut data = vec![0.0f64; rows * cols];
    let mut buf = [0u8; 8];
    for v in data.iter_mut() {
        r.read_exact(&mut buf)?;
        *v = f64::from_le_bytes(buf);
    }
    Matrix::from_vec(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let m = Matrix::from_fn(7, 3, |r, c| (r as f64 + 0.5) * (c as f64 - 1.25));
        write_matrix(&m, &path).unwrap();
        let back = read_matrix(&path).unwrap();
        assert_eq!(m.rows(), back.rows());
        assert_eq!(m.cols(), back.cols());
        for (a, b) in m.as_slice().iter().zip(back.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(read_matrix(&path), Err(Error::Format(_))));
    }
}
