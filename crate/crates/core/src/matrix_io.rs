//! Little-endian dense matrix files.
//!
//! Layout: 4-byte magic `SLMX`, `u32` format version, `u64` rows, `u64` cols,
//! then `rows * cols` row-major `f64` values.

use std::io::{self, Read, Write};

use ndarray::Array2;

pub const MAGIC: &[u8; 4] = b"SLMX";
pub const VERSION: u32 = 1;

pub fn write_matrix<W: Write>(mut w: W, m: &Array2<f64>) -> io::Result<()> {
    let (rows, cols) = m.dim();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(rows as u64).to_le_bytes())?;
    w.write_all(&(cols as u64).to_le_bytes())?;
    for v in m.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

pub fn encode_matrix(m: &Array2<f64>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(24 + 8 * m.len());
    write_matrix(&mut buf, m).expect("writing to a Vec cannot fail");
    buf
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub fn read_matrix<R: Read>(mut r: R) -> io::Result<Array2<f64>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(invalid("not a matrix file (bad magic)"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(invalid(format!("unsupported matrix format version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let rows = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let cols = u64::from_le_bytes(b8) as usize;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| invalid("matrix dimensions overflow"))?;
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        r.read_exact(&mut b8)?;
        data.push(f64::from_le_bytes(b8));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(invalid("trailing bytes after matrix data"));
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| invalid(e.to_string()))
}
