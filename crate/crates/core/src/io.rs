//! Binary containers and CSV export.
//!
//! Container layout, all little-endian:
//!
//! ```text
//! magic   8 bytes  "NNSPMAT\0"
//! version u32      1
//! dtype   u32      1 = f64
//! rank    u32      2 or 4
//! layout  u32      0 = dense row-major, 1 = packed symmetric (i ≤ j ≤ k ≤ l, colex)
//! dims    u64 × rank
//! body    f64 values
//! ```

use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::cumulants::SymTensor4;
use crate::error::{Error, Result};
use crate::kernels::KernelMatrix;

const MAGIC: &[u8; 8] = b"NNSPMAT\0";
const VERSION: u32 = 1;
const DTYPE_F64: u32 = 1;
const LAYOUT_DENSE: u32 = 0;
const LAYOUT_PACKED: u32 = 1;

pub(crate) struct ByteWriter<W: Write> {
    inner: W,
}

impl<W: Write> ByteWriter<W> {
    pub(crate) fn new(inner: W) -> Self {
        Self { inner }
    }

    pub(crate) fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b)?;
        Ok(())
    }

    pub(crate) fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }

    pub(crate) fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub(crate) fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub(crate) fn u128(&mut self, v: u128) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub(crate) fn f64s(&mut self, v: &[f64]) -> Result<()> {
        for x in v {
            self.bytes(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub(crate) fn len_f64s(&mut self, v: &[f64]) -> Result<()> {
        self.u64(v.len() as u64)?;
        self.f64s(v)
    }
}

pub(crate) struct ByteReader<R: Read> {
    inner: R,
}

impl<R: Read> ByteReader<R> {
    pub(crate) fn new(inner: R) -> Self {
        Self { inner }
    }

    pub(crate) fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format("truncated input".into()),
            _ => Error::Io(e),
        })?;
        Ok(b)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub(crate) fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.array()?))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    /// A length prefix, refused when it exceeds `cap` elements.
    pub(crate) fn len(&mut self, cap: usize) -> Result<usize> {
        let n = self.u64()?;
        if n > cap as u64 {
            return Err(Error::Format(format!("length {n} exceeds limit {cap}")));
        }
        Ok(n as usize)
    }

    pub(crate) fn len_f64s(&mut self, cap: usize) -> Result<Vec<f64>> {
        let n = self.len(cap)?;
        self.f64s(n)
    }
}

/// Upper bound on element counts read from untrusted headers.
pub(crate) const MAX_ELEMENTS: usize = 1 << 32;

fn write_header<W: Write>(w: &mut ByteWriter<W>, layout: u32, dims: &[usize]) -> Result<()> {
    w.bytes(MAGIC)?;
    w.u32(VERSION)?;
    w.u32(DTYPE_F64)?;
    w.u32(dims.len() as u32)?;
    w.u32(layout)?;
    for &d in dims {
        w.u64(d as u64)?;
    }
    Ok(())
}

fn read_header<R: Read>(r: &mut ByteReader<R>) -> Result<(u32, Vec<usize>)> {
    if &r.array::<8>()? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dtype = r.u32()?;
    if dtype != DTYPE_F64 {
        return Err(Error::Format(format!("unsupported dtype {dtype}")));
    }
    let rank = r.u32()?;
    if rank != 2 && rank != 4 {
        return Err(Error::Format(format!("unsupported rank {rank}")));
    }
    let layout = r.u32()?;
    let dims = (0..rank).map(|_| r.len(MAX_ELEMENTS)).collect::<Result<Vec<_>>>()?;
    Ok((layout, dims))
}

pub fn write_matrix<W: Write>(out: W, m: &DMatrix<f64>) -> Result<()> {
    let mut w = ByteWriter::new(out);
    write_header(&mut w, LAYOUT_DENSE, &[m.nrows(), m.ncols()])?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.bytes(&m[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_matrix<R: Read>(input: R) -> Result<DMatrix<f64>> {
    let mut r = ByteReader::new(input);
    let (layout, dims) = read_header(&mut r)?;
    if layout != LAYOUT_DENSE || dims.len() != 2 {
        return Err(Error::Format("expected a dense rank-2 container".into()));
    }
    let count = dims[0].checked_mul(dims[1]).filter(|c| *c <= MAX_ELEMENTS);
    let count = count.ok_or_else(|| Error::Format("matrix too large".into()))?;
    let v = r.f64s(count)?;
    Ok(DMatrix::from_row_slice(dims[0], dims[1], &v))
}

pub fn write_kernel<W: Write>(out: W, k: &KernelMatrix) -> Result<()> {
    write_matrix(out, k.values())
}

/// Reads a kernel matrix, checking symmetry.
pub fn read_kernel<R: Read>(input: R) -> Result<KernelMatrix> {
    KernelMatrix::new(read_matrix(input)?)
}

pub fn write_tensor4<W: Write>(out: W, t: &SymTensor4) -> Result<()> {
    let mut w = ByteWriter::new(out);
    let n = t.n();
    write_header(&mut w, LAYOUT_PACKED, &[n, n, n, n])?;
    w.f64s(t.values())
}

pub fn read_tensor4<R: Read>(input: R) -> Result<SymTensor4> {
    let mut r = ByteReader::new(input);
    let (layout, dims) = read_header(&mut r)?;
    if layout != LAYOUT_PACKED || dims.len() != 4 || dims.iter().any(|d| *d != dims[0]) {
        return Err(Error::Format("expected a packed symmetric rank-4 container".into()));
    }
    let n = dims[0];
    if n > 1 << 12 {
        return Err(Error::Format(format!("tensor side {n} too large")));
    }
    let v = r.f64s(SymTensor4::len_for(n))?;
    SymTensor4::from_values(n, v)
}

/// Minimal RFC-4180 field quoting.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Write a header and rows as CSV with `\n` line endings. Floats use the
/// shortest representation that round-trips.
pub fn write_csv<W: Write>(mut out: W, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let line = |fields: Vec<String>| fields.join(",") + "\n";
    out.write_all(line(header.iter().map(|h| csv_field(h)).collect()).as_bytes())?;
    for r in rows {
        out.write_all(line(r.iter().map(|f| csv_field(f)).collect()).as_bytes())?;
    }
    Ok(())
}

/// One row per entry: `(row, col, value)`.
pub fn matrix_csv<W: Write>(out: W, m: &DMatrix<f64>) -> Result<()> {
    let rows: Vec<Vec<String>> = (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| vec![i.to_string(), j.to_string(), m[(i, j)].to_string()])
        .collect();
    write_csv(out, &["row", "col", "value"], &rows)
}

/// One row per sorted quadruple: `(a1, a2, a3, a4, value)`.
pub fn tensor4_csv<W: Write>(out: W, t: &SymTensor4) -> Result<()> {
    let n = t.n();
    let mut rows = Vec::with_capacity(t.len());
    for l in 0..n {
        for k in 0..=l {
            for j in 0..=k {
                for i in 0..=j {
                    rows.push(vec![
                        i.to_string(),
                        j.to_string(),
                        k.to_string(),
                        l.to_string(),
                        t.get(i, j, k, l).to_string(),
                    ]);
                }
            }
        }
    }
    write_csv(out, &["a1", "a2", "a3", "a4", "value"], &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_and_layout() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, -0.5]);
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        assert_eq!(buf.len(), 8 + 16 + 16 + 48);
        // Row-major body: the second value is m[(0, 1)].
        assert_eq!(f64::from_le_bytes(buf[48..56].try_into().unwrap()), 2.0);
        assert_eq!(read_matrix(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn tensor_round_trip() {
        let t = SymTensor4::from_fn(3, |q| (q[0] + 2 * q[1] + 3 * q[2] + 5 * q[3]) as f64);
        let mut buf = Vec::new();
        write_tensor4(&mut buf, &t).unwrap();
        assert_eq!(read_tensor4(buf.as_slice()).unwrap(), t);
        assert!(read_matrix(buf.as_slice()).is_err());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let m = DMatrix::from_element(2, 2, 1.0);
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        assert!(matches!(read_matrix(&buf[..buf.len() - 1]), Err(Error::Format(_))));
        buf[0] = b'X';
        assert!(matches!(read_matrix(buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn csv_quoting() {
        let mut out = Vec::new();
        write_csv(&mut out, &["a", "b"], &[vec!["1".into(), "x,\"y\"".into()]]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "a,b\n1,\"x,\"\"y\"\"\"\n");
    }
}
