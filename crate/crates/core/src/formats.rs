//! On-disk formats shared by the command-line tool.
//!
//! All binary formats are little-endian:
//!
//! * `KBPF` profile matrix: magic, `u32 k`, `u32 rows`, then `rows * 4^k`
//!   `u32` counts row-major.
//! * `KBEM` embedding matrix: magic, `u32 k`, `u32 d`, then `f32` values
//!   row-major. The row count follows from the file length: `4^k` rows for
//!   k-mer embeddings, one row per read for read embeddings.
//! * `KBNL` model file, see [`crate::nonlinear`].

use std::io::{BufRead, Read, Write};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::kmer::{self, KmerProfile};

pub const KBPF_MAGIC: &[u8; 4] = b"KBPF";
pub const KBEM_MAGIC: &[u8; 4] = b"KBEM";
pub const KBNL_MAGIC: &[u8; 4] = b"KBNL";

/// Format versions reported by `kbin --version`.
pub const KBPF_VERSION: u32 = 1;
pub const KBEM_VERSION: u32 = 1;
pub const KBNL_VERSION: u32 = 1;

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format("unexpected end of file".into()))?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format("file too short for header".into()))?;
    if &b != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&b),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, values: impl Iterator<Item = f64>) -> Result<()> {
    for v in values {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("truncated f32 block".into()))?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Writes profiles in the `KBPF` binary layout.
pub fn write_kbpf<W: Write>(profiles: &[KmerProfile], k: usize, mut w: W) -> Result<()> {
    w.write_all(KBPF_MAGIC)?;
    write_u32(&mut w, k as u32)?;
    write_u32(&mut w, profiles.len() as u32)?;
    let dim = 1usize << (2 * k);
    for p in profiles {
        if p.counts.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.counts.len(),
            });
        }
        for &c in &p.counts {
            write_u32(&mut w, c)?;
        }
    }
    Ok(())
}

/// Reads a `KBPF` file back as `(k, count rows)`.
pub fn read_kbpf<R: Read>(mut r: R) -> Result<(usize, Vec<Vec<u32>>)> {
    expect_magic(&mut r, KBPF_MAGIC)?;
    let k = read_u32(&mut r)? as usize;
    if k == 0 || k > kmer::MAX_K {
        return Err(Error::Format(format!("k = {k} out of range")));
    }
    let rows = read_u32(&mut r)? as usize;
    let dim = 1usize << (2 * k);
    let mut out = Vec::with_capacity(rows);
    for _ in 0..rows {
        let mut row = Vec::with_capacity(dim);
        for _ in 0..dim {
            row.push(read_u32(&mut r)?);
        }
        out.push(row);
    }
    Ok((k, out))
}

/// Profile TSV: header `read_id` followed by every k-mer in lexicographic
/// order, then one row of counts per read.
pub fn write_profile_tsv<W: Write>(
    ids: &[String],
    profiles: &[KmerProfile],
    k: usize,
    mut w: W,
) -> Result<()> {
    let dim = 1usize << (2 * k);
    write!(w, "read_id")?;
    for x in 0..dim {
        write!(w, "\t{}", String::from_utf8_lossy(&kmer::unrank(x, k)))?;
    }
    writeln!(w)?;
    for (id, p) in ids.iter().zip(profiles) {
        write!(w, "{id}")?;
        for c in &p.counts {
            write!(w, "\t{c}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// A dense embedding matrix as stored in `KBEM` files.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub k: usize,
    pub values: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn row_vecs(&self) -> Vec<Vec<f64>> {
        self.values.rows().into_iter().map(|r| r.to_vec()).collect()
    }
}

pub fn write_kbem<W: Write>(m: &EmbeddingMatrix, mut w: W) -> Result<()> {
    w.write_all(KBEM_MAGIC)?;
    write_u32(&mut w, m.k as u32)?;
    write_u32(&mut w, m.dim() as u32)?;
    write_f32s(&mut w, m.values.iter().copied())
}

pub fn read_kbem<R: Read>(mut r: R) -> Result<EmbeddingMatrix> {
    expect_magic(&mut r, KBEM_MAGIC)?;
    let k = read_u32(&mut r)? as usize;
    let d = read_u32(&mut r)? as usize;
    if d == 0 {
        return Err(Error::Format("embedding dimension is zero".into()));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if rest.len() % (4 * d) != 0 {
        return Err(Error::Format(format!(
            "payload of {} bytes is not a whole number of {d}-wide f32 rows",
            rest.len()
        )));
    }
    let rows = rest.len() / (4 * d);
    let values = read_f32s(&mut rest.as_slice(), rows * d)?;
    let values = Array2::from_shape_vec((rows, d), values)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok(EmbeddingMatrix { k, values })
}

/// Tab-separated matrix with a leading id column.
pub fn write_matrix_tsv<W: Write>(ids: &[String], m: &Array2<f64>, mut w: W) -> Result<()> {
    for (id, row) in ids.iter().zip(m.rows()) {
        write!(w, "{id}")?;
        for v in row {
            write!(w, "\t{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// One id per line, as written next to read-embedding files.
pub fn read_ids<R: BufRead>(r: R) -> Result<Vec<String>> {
    r.lines()
        .map(|l| l.map_err(Error::from))
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kmer::{profile_bases, KmerConfig};

    #[test]
    fn kbpf_roundtrip() {
        let cfg = KmerConfig::new(2).unwrap();
        let ps = vec![
            profile_bases(b"ACGTTGCA", &cfg).unwrap(),
            profile_bases(b"AAAAC", &cfg).unwrap(),
        ];
        let mut buf = Vec::new();
        write_kbpf(&ps, 2, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"KBPF");
        assert_eq!(buf.len(), 12 + 2 * 16 * 4);
        let (k, rows) = read_kbpf(buf.as_slice()).unwrap();
        assert_eq!(k, 2);
        assert_eq!(rows[0], ps[0].counts);
        assert_eq!(rows[1], ps[1].counts);
    }

    #[test]
    fn kbem_header_and_rows() {
        let m = EmbeddingMatrix {
            k: 4,
            values: Array2::from_shape_vec((3, 2), vec![1.0, -2.0, 0.5, 0.25, 3.0, 4.0]).unwrap(),
        };
        let mut buf = Vec::new();
        write_kbem(&m, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"KBEM");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(read_kbem(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn bad_magic_and_truncation() {
        assert!(read_kbem(&b"KBPF\0\0\0\0\x01\0\0\0"[..]).is_err());
        let mut buf = Vec::new();
        write_kbem(
            &EmbeddingMatrix {
                k: 1,
                values: Array2::zeros((2, 3)),
            },
            &mut buf,
        )
        .unwrap();
        buf.pop();
        assert!(read_kbem(buf.as_slice()).is_err());
    }

    #[test]
    fn profile_tsv_header() {
        let cfg = KmerConfig::new(4).unwrap();
        let p = profile_bases(b"ACGTACGT", &cfg).unwrap();
        let mut buf = Vec::new();
        write_profile_tsv(&["r1".into()], &[p], 4, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header: Vec<&str> = text.lines().next().unwrap().split('\t').collect();
        assert_eq!(header.len(), 257);
        assert_eq!(header[1], "AAAA");
        assert_eq!(header[256], "TTTT");
    }
}
