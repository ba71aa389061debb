//! k-mer encoding, profiles and the distance/similarity functions used for
//! binning.
//!
//! k-mers over `ACGT` are ranked lexicographically (`A < C < G < T`), so the
//! profile of a read is a dense count vector of length `4^k` whose entry
//! `rank(x)` counts the overlapping windows equal to `x`.

use crate::error::{Error, Result};
use crate::seqio::Read;

/// Largest supported k; `4^15` still indexes comfortably in `usize`.
pub const MAX_K: usize = 15;

/// Settings for profile extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KmerConfig {
    pub k: usize,
    /// Count each window under the lexicographically smaller of itself and
    /// its reverse complement.
    pub canonical_fold: bool,
}

impl KmerConfig {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 || k > MAX_K {
            return Err(Error::Usage(format!("k must be in 1..={MAX_K}, got {k}")));
        }
        Ok(KmerConfig {
            k,
            canonical_fold: false,
        })
    }

    pub fn folded(mut self) -> Self {
        self.canonical_fold = true;
        self
    }

    pub fn dim(&self) -> usize {
        1 << (2 * self.k)
    }
}

/// Digit of a base: `A=0, C=1, G=2, T=3`; `None` for anything else.
#[inline]
pub fn base_digit(b: u8) -> Option<usize> {
    match b {
        b'A' | b'a' => Some(0),
        b'C' | b'c' => Some(1),
        b'G' | b'g' => Some(2),
        b'T' | b't' => Some(3),
        _ => None,
    }
}

#[inline]
pub fn digit_base(d: usize) -> u8 {
    b"ACGT"[d & 3]
}

/// Lexicographic rank of a k-mer in `[0, 4^k)`.
pub fn rank(kmer: &[u8]) -> Result<usize> {
    kmer.iter().try_fold(0usize, |acc, &b| {
        base_digit(b)
            .map(|d| acc * 4 + d)
            .ok_or(Error::InvalidSymbol { symbol: b as char })
    })
}

/// Inverse of [`rank`] for a fixed k.
pub fn unrank(mut index: usize, k: usize) -> Vec<u8> {
    let mut out = vec![b'A'; k];
    for slot in out.iter_mut().rev() {
        *slot = digit_base(index & 3);
        index >>= 2;
    }
    out
}

pub fn reverse_complement(seq: &[u8]) -> Vec<u8> {
    seq.iter()
        .rev()
        .map(|&b| match b {
            b'A' => b'T',
            b'C' => b'G',
            b'G' => b'C',
            b'T' => b'A',
            b'a' => b't',
            b'c' => b'g',
            b'g' => b'c',
            b't' => b'a',
            other => other,
        })
        .collect()
}

/// Rank of the reverse complement of the k-mer with rank `r`.
#[inline]
fn rc_rank(mut r: usize, k: usize) -> usize {
    let mut out = 0;
    for _ in 0..k {
        out = (out << 2) | (3 - (r & 3));
        r >>= 2;
    }
    out
}

/// Raw k-mer counts of one sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct KmerProfile {
    pub k: usize,
    pub counts: Vec<u32>,
    pub total: u64,
    pub source_length: usize,
}

impl KmerProfile {
    pub fn zeros(k: usize) -> Self {
        KmerProfile {
            k,
            counts: vec![0; 1 << (2 * k)],
            total: 0,
            source_length: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    /// Counts divided by the total (all zeros when the total is zero).
    pub fn frequencies(&self) -> Vec<f64> {
        let t = self.total as f64;
        if t == 0.0 {
            return vec![0.0; self.dim()];
        }
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    /// Non-zero entries as `(rank, count)` in rank order.
    pub fn nonzero(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (i, c))
    }
}

/// Ranks of every valid window of `seq`, in order. Windows containing a
/// non-`ACGT` symbol are skipped.
pub fn window_ranks(seq: &[u8], k: usize) -> Vec<usize> {
    let mask = (1usize << (2 * k)) - 1;
    let mut out = Vec::with_capacity(seq.len().saturating_sub(k) + 1);
    let mut acc = 0usize;
    let mut run = 0usize;
    for &b in seq {
        match base_digit(b) {
            Some(d) => {
                acc = ((acc << 2) | d) & mask;
                run += 1;
                if run >= k {
                    out.push(acc);
                }
            }
            None => run = 0,
        }
    }
    out
}

/// Profile of a raw sequence.
pub fn profile_bases(seq: &[u8], cfg: &KmerConfig) -> Result<KmerProfile> {
    if seq.len() < cfg.k {
        return Err(Error::ReadTooShort {
            len: seq.len(),
            k: cfg.k,
        });
    }
    let mut p = KmerProfile::zeros(cfg.k);
    p.source_length = seq.len();
    for r in window_ranks(seq, cfg.k) {
        let idx = if cfg.canonical_fold {
            r.min(rc_rank(r, cfg.k))
        } else {
            r
        };
        p.counts[idx] += 1;
        p.total += 1;
    }
    Ok(p)
}

/// Profile of a read (see [`profile_bases`]).
pub fn profile(read: &Read, cfg: &KmerConfig) -> Result<KmerProfile> {
    profile_bases(&read.bases, cfg)
}

fn check_same_k(p: &KmerProfile, q: &KmerProfile) -> Result<()> {
    if p.counts.len() != q.counts.len() {
        return Err(Error::DimensionMismatch {
            expected: p.counts.len(),
            got: q.counts.len(),
        });
    }
    Ok(())
}

/// `sum_x |p[x] - q[x]|`.
pub fn l1_distance(p: &KmerProfile, q: &KmerProfile) -> Result<f64> {
    check_same_k(p, q)?;
    Ok(l1_counts(&p.counts, &q.counts) as f64)
}

#[inline]
pub(crate) fn l1_counts(a: &[u32], b: &[u32]) -> u64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as i64 - y as i64).unsigned_abs())
        .sum()
}

/// `exp(-l1(p, q))`.
pub fn exp_l1_similarity(p: &KmerProfile, q: &KmerProfile) -> Result<f64> {
    Ok((-l1_distance(p, q)?).exp())
}

fn check_dims(u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    Ok(())
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    check_dims(u, v)?;
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

pub fn euclidean_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    check_dims(u, v)?;
    Ok(u.iter()
        .zip(v)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Number of mismatching positions between equal-length sequences.
pub fn hamming_distance(r: &[u8], q: &[u8]) -> Result<usize> {
    if r.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: r.len(),
            got: q.len(),
        });
    }
    Ok(r.iter().zip(q).filter(|(a, b)| a != b).count())
}
