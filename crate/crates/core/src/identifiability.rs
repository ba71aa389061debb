//! When is a read the only sequence with its k-mer profile?
//!
//! Think of a read of length `l` as a walk through its `(k-1)`-mers: node
//! `p` (0-based) is `bases[p..p+k-1]`, there are `m = l-k+2` nodes and each
//! k-mer window is an edge. Another read with the same profile is another
//! walk over the same multiset of edges. Three local moves produce one:
//!
//! 1. the walk is closed (first and last `(k-1)`-mer agree) and not constant,
//!    so it can be rotated;
//! 2. two interleaved repeats `X..Y..X..Y` allow swapping the `X→Y` segments;
//! 3. a `(k-1)`-mer occurring three times `X..X..X` allows swapping the two
//!    loops.
//!
//! [`check_conditions`] looks for a witness of each move,
//! [`oracle_preimages`] enumerates every same-profile read by brute force, and
//! [`verify_lipschitz`] samples pairs against the l1/Hamming bounds.

use std::collections::HashMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kmer::{self, base_digit, digit_base, KmerConfig, KmerProfile};
use crate::seqio::Dataset;

/// Outcome of [`check_conditions`].
///
/// `witness_indices` are 1-based node positions: `[i]` for condition 1 (a
/// base differing from the first), `[i, g, j, h]` for condition 2 and
/// `[i, j, h]` for condition 3.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IdentifiabilityVerdict {
    pub identifiable: bool,
    pub violated_condition: Option<u8>,
    pub witness_indices: Option<Vec<usize>>,
}

impl IdentifiabilityVerdict {
    fn identifiable() -> Self {
        IdentifiabilityVerdict {
            identifiable: true,
            violated_condition: None,
            witness_indices: None,
        }
    }

    fn violated(condition: u8, witness: Vec<usize>) -> Self {
        IdentifiabilityVerdict {
            identifiable: false,
            violated_condition: Some(condition),
            witness_indices: Some(witness),
        }
    }
}

/// How the "spanned substrings are unequal" clause of conditions 2 and 3 is
/// evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reading {
    /// The swapped segments differ as strings. Misses periodic repeats such
    /// as `GACACACAT` (k=2), where unequal segments commute and the swap
    /// reproduces the read.
    Literal,
    /// The swap must produce a different read. This is the reading that
    /// agrees with exhaustive enumeration.
    #[default]
    Effective,
}

/// Node ranks of the `(k-1)`-mer walk.
fn node_walk(bases: &[u8], k: usize) -> Vec<usize> {
    let m = bases.len() + 2 - k;
    if k == 1 {
        return vec![0; m];
    }
    let mut out = Vec::with_capacity(m);
    let mut acc = 0usize;
    let mask = (1usize << (2 * (k - 1))) - 1;
    for (idx, &b) in bases.iter().enumerate() {
        acc = ((acc << 2) | base_digit(b).unwrap_or(0)) & mask;
        if idx + 1 >= k - 1 {
            out.push(acc);
        }
    }
    out
}

fn validate(bases: &[u8], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Usage("k must be positive".into()));
    }
    if bases.len() < k {
        return Err(Error::ReadTooShort {
            len: bases.len(),
            k,
        });
    }
    if let Some(&b) = bases.iter().find(|&&b| base_digit(b).is_none()) {
        return Err(Error::InvalidSymbol { symbol: b as char });
    }
    Ok(())
}

#[inline]
fn concat_differs(a: &[u8], b: &[u8], c: &[u8]) -> bool {
    // a+b+c vs c+b+a
    !a.iter()
        .chain(b)
        .chain(c)
        .eq(c.iter().chain(b).chain(a))
}

/// Evaluates the three non-identifiability conditions on `bases` and
/// returns the first one that holds (with its witness), under the
/// [`Reading::Effective`] interpretation.
pub fn check_conditions(bases: &[u8], k: usize) -> Result<IdentifiabilityVerdict> {
    check_conditions_with(bases, k, Reading::Effective)
}

pub fn check_conditions_with(
    bases: &[u8],
    k: usize,
    reading: Reading,
) -> Result<IdentifiabilityVerdict> {
    validate(bases, k)?;
    let nodes = node_walk(bases, k);
    let m = nodes.len();
    // char appended by edge e is bases[e + k - 1]; segment of edges a..b
    let seg = |a: usize, b: usize| &bases[a + k - 1..b + k - 1];

    // condition 1: closed walk that is not constant
    if nodes[0] == nodes[m - 1] {
        if let Some(i) = bases.iter().position(|&b| b != bases[0]) {
            return Ok(IdentifiabilityVerdict::violated(1, vec![i + 1]));
        }
    }

    let swap_changes = |a: &[u8], b: &[u8], c: &[u8]| match reading {
        Reading::Literal => a != c,
        Reading::Effective => a != c && concat_differs(a, b, c),
    };

    // condition 2: X at i, j and Y at g, h with i < g < j < h
    for i in 0..m {
        for j in i + 2..m {
            if nodes[j] != nodes[i] {
                continue;
            }
            for g in i + 1..j {
                for h in j + 1..m {
                    if nodes[h] != nodes[g] {
                        continue;
                    }
                    if swap_changes(seg(i, g), seg(g, j), seg(j, h)) {
                        return Ok(IdentifiabilityVerdict::violated(
                            2,
                            vec![i + 1, g + 1, j + 1, h + 1],
                        ));
                    }
                }
            }
        }
    }

    // condition 3: X at i < j < h
    for i in 0..m {
        for j in i + 1..m {
            if nodes[j] != nodes[i] {
                continue;
            }
            for h in j + 1..m {
                if nodes[h] != nodes[i] {
                    continue;
                }
                if swap_changes(seg(i, j), &[], seg(j, h)) {
                    return Ok(IdentifiabilityVerdict::violated(3, vec![i + 1, j + 1, h + 1]));
                }
            }
        }
    }

    Ok(IdentifiabilityVerdict::identifiable())
}

/// Builds the same-profile read implied by a violated condition: a rotation
/// for condition 1, a segment swap for conditions 2 and 3. Returns `None`
/// for identifiable verdicts.
pub fn counterexample(
    bases: &[u8],
    k: usize,
    verdict: &IdentifiabilityVerdict,
) -> Result<Option<Vec<u8>>> {
    validate(bases, k)?;
    let w = match (&verdict.violated_condition, &verdict.witness_indices) {
        (Some(_), Some(w)) => w.iter().map(|&x| x - 1).collect::<Vec<_>>(),
        _ => return Ok(None),
    };
    let head = |i: usize| &bases[..i + k - 1];
    let seg = |a: usize, b: usize| &bases[a + k - 1..b + k - 1];
    let tail = |h: usize| &bases[h + k - 1..];
    let out = match verdict.violated_condition {
        Some(1) => {
            let edges = &bases[k - 1..];
            let n = edges.len();
            (1..n.max(1))
                .map(|t| {
                    let mut r = bases[t..t + k - 1].to_vec();
                    r.extend_from_slice(&edges[t..]);
                    r.extend_from_slice(&edges[..t]);
                    r
                })
                .find(|r| r != bases)
                .ok_or_else(|| Error::data("rotation witness does not change the read"))?
        }
        Some(2) => {
            let (i, g, j, h) = (w[0], w[1], w[2], w[3]);
            [head(i), seg(j, h), seg(g, j), seg(i, g), tail(h)].concat()
        }
        Some(3) => {
            let (i, j, h) = (w[0], w[1], w[2]);
            [head(i), seg(j, h), seg(i, j), tail(h)].concat()
        }
        _ => return Err(Error::data("unknown condition")),
    };
    Ok(Some(out))
}

/// Options for the brute-force preimage oracle.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleOptions {
    /// Skip the enumeration-size guard.
    pub allow_large: bool,
    /// Stop after this many preimages.
    pub limit: Option<usize>,
}

/// Enumeration size `a^l` must stay within `4^14`, where `a` is the number
/// of symbols used by the profile.
const ORACLE_BUDGET_LOG4: f64 = 14.0;

fn oracle_guard(p: &KmerProfile, len: usize, opts: &OracleOptions) -> Result<()> {
    if opts.allow_large {
        return Ok(());
    }
    let mut used = [false; 4];
    for (x, _) in p.nonzero() {
        for &b in &kmer::unrank(x, p.k) {
            used[base_digit(b).unwrap_or(0)] = true;
        }
    }
    let a = used.iter().filter(|&&u| u).count().max(1) as f64;
    if len as f64 * a.log(4.0) > ORACLE_BUDGET_LOG4 + 1e-9 {
        return Err(Error::Usage(format!(
            "oracle enumeration over {} symbols at length {len} exceeds the guard; set allow_large to override",
            a as usize
        )));
    }
    Ok(())
}

struct Enumerator<'a> {
    k: usize,
    mask: usize,
    len: usize,
    budget: Vec<u32>,
    buf: Vec<u8>,
    limit: usize,
    found: usize,
    sink: Option<&'a mut Vec<Vec<u8>>>,
}

impl Enumerator<'_> {
    fn run(&mut self) {
        for x in 0..self.budget.len() {
            if self.found >= self.limit {
                return;
            }
            if self.budget[x] == 0 {
                continue;
            }
            self.budget[x] -= 1;
            self.buf.clear();
            self.buf.extend(kmer::unrank(x, self.k));
            self.extend(x);
            self.budget[x] += 1;
        }
    }

    fn extend(&mut self, cur: usize) {
        if self.buf.len() == self.len {
            self.found += 1;
            if let Some(s) = self.sink.as_mut() {
                s.push(self.buf.clone());
            }
            return;
        }
        for d in 0..4 {
            if self.found >= self.limit {
                return;
            }
            let next = ((cur << 2) | d) & self.mask;
            if self.budget[next] == 0 {
                continue;
            }
            self.budget[next] -= 1;
            self.buf.push(digit_base(d));
            self.extend(next);
            self.buf.pop();
            self.budget[next] += 1;
        }
    }
}

fn enumerate(
    p: &KmerProfile,
    len: usize,
    limit: usize,
    sink: Option<&mut Vec<Vec<u8>>>,
) -> usize {
    if len < p.k || p.total != (len - p.k + 1) as u64 {
        return 0;
    }
    let mut e = Enumerator {
        k: p.k,
        mask: (1usize << (2 * p.k)) - 1,
        len,
        budget: p.counts.clone(),
        buf: Vec::with_capacity(len),
        limit,
        found: 0,
        sink,
    };
    e.run();
    e.found
}

/// Every read of length `len` whose k-mer profile equals `p`, in
/// lexicographic order, found by depth-first extension with a per-k-mer
/// remaining-count budget.
pub fn oracle_preimages(p: &KmerProfile, len: usize) -> Result<Vec<Vec<u8>>> {
    oracle_preimages_with(p, len, &OracleOptions::default())
}

pub fn oracle_preimages_with(
    p: &KmerProfile,
    len: usize,
    opts: &OracleOptions,
) -> Result<Vec<Vec<u8>>> {
    oracle_guard(p, len, opts)?;
    let mut out = Vec::new();
    enumerate(p, len, opts.limit.unwrap_or(usize::MAX), Some(&mut out));
    Ok(out)
}

/// Number of preimages, counting at most `limit`.
pub fn oracle_count(p: &KmerProfile, len: usize, limit: usize) -> Result<usize> {
    oracle_guard(
        p,
        len,
        &OracleOptions {
            allow_large: false,
            limit: Some(limit),
        },
    )?;
    Ok(enumerate(p, len, limit, None))
}

/// A read where the condition checker and the oracle disagree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Discrepancy {
    pub read: String,
    pub k: usize,
    pub checker_identifiable: bool,
    pub oracle_preimage_count: usize,
}

/// Summary of an exhaustive checker-vs-oracle sweep.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SweepSummary {
    pub alphabet: String,
    pub length: usize,
    pub k: usize,
    pub instances: u64,
    pub identifiable: u64,
    pub discrepancies: Vec<Discrepancy>,
}

/// Checks every read in `alphabet^len` against the oracle. Stops collecting
/// discrepancies after `max_report` but keeps counting instances.
pub fn exhaustive_sweep(
    alphabet: &[u8],
    len: usize,
    k: usize,
    reading: Reading,
    max_report: usize,
) -> Result<SweepSummary> {
    if len < k || alphabet.is_empty() {
        return Err(Error::Usage("sweep needs len >= k and a non-empty alphabet".into()));
    }
    let cfg = KmerConfig::new(k)?;
    let a = alphabet.len() as u64;
    let total = a.checked_pow(len as u32).ok_or_else(|| Error::Usage("sweep too large".into()))?;
    let chunk = 1u64 << 14;
    let chunks = total.div_ceil(chunk);

    let results: Vec<(u64, Vec<Discrepancy>)> = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<(u64, Vec<Discrepancy>)> {
            let mut read = vec![alphabet[0]; len];
            let mut ident = 0u64;
            let mut bad = Vec::new();
            for code in c * chunk..((c + 1) * chunk).min(total) {
                let mut x = code;
                for slot in read.iter_mut().rev() {
                    *slot = alphabet[(x % a) as usize];
                    x /= a;
                }
                let verdict = check_conditions_with(&read, k, reading)?;
                let p = kmer::profile_bases(&read, &cfg)?;
                let count = enumerate(&p, len, 2, None);
                if verdict.identifiable {
                    ident += 1;
                }
                if verdict.identifiable != (count == 1) && bad.len() < max_report {
                    bad.push(Discrepancy {
                        read: String::from_utf8_lossy(&read).into_owned(),
                        k,
                        checker_identifiable: verdict.identifiable,
                        oracle_preimage_count: enumerate(&p, len, usize::MAX, None),
                    });
                }
            }
            Ok((ident, bad))
        })
        .collect::<Result<_>>()?;

    let mut summary = SweepSummary {
        alphabet: String::from_utf8_lossy(alphabet).into_owned(),
        length: len,
        k,
        instances: total,
        ..Default::default()
    };
    for (ident, bad) in results {
        summary.identifiable += ident;
        for d in bad {
            if summary.discrepancies.len() < max_report {
                summary.discrepancies.push(d);
            }
        }
    }
    Ok(summary)
}

/// Writes the discrepancy report TSV
/// (`read, k, checker_verdict, oracle_preimage_count`).
pub fn write_discrepancy_report<W: Write>(rows: &[Discrepancy], mut out: W) -> Result<()> {
    writeln!(out, "read\tk\tchecker_verdict\toracle_preimage_count")?;
    for d in rows {
        let verdict = if d.checker_identifiable {
            "identifiable"
        } else {
            "non_identifiable"
        };
        writeln!(out, "{}\t{}\t{}\t{}", d.read, d.k, verdict, d.oracle_preimage_count)?;
    }
    Ok(())
}

/// Fraction of reads whose verdict is identifiable. Reads containing
/// ambiguity codes are not counted; an empty set yields 0.
pub fn identifiability_rate(dataset: &Dataset, k: usize) -> Result<f64> {
    let verdicts: Vec<bool> = dataset
        .reads()
        .par_iter()
        .filter(|r| r.is_unambiguous())
        .map(|r| check_conditions(&r.bases, k).map(|v| v.identifiable))
        .collect::<Result<_>>()?;
    if verdicts.is_empty() {
        return Ok(0.0);
    }
    Ok(verdicts.iter().filter(|&&v| v).count() as f64 / verdicts.len() as f64)
}

/// Result of sampling pairs against `alpha_l * d_H <= l1 <= alpha_u * d_H`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzCheck {
    pub k: usize,
    pub read_length: usize,
    pub alpha_l: f64,
    pub alpha_u: f64,
    pub pairs_checked: u64,
    pub violations: u64,
    /// Distinct pairs sharing a profile. Such reads are not identifiable and
    /// lie outside the domain of the bounds, so they are not violations.
    pub same_profile_pairs: u64,
    /// Largest observed `l1 / d_H` over pairs with `d_H > 0`.
    pub max_upper_ratio: f64,
}

impl LipschitzCheck {
    pub fn new(k: usize, read_length: usize) -> Self {
        LipschitzCheck {
            k,
            read_length,
            alpha_l: 1.0 / read_length as f64,
            alpha_u: k as f64 * 4f64.powi(k as i32),
            pairs_checked: 0,
            violations: 0,
            same_profile_pairs: 0,
            max_upper_ratio: 0.0,
        }
    }

    /// Records one equal-length pair.
    pub fn observe(&mut self, r: &[u8], q: &[u8], cfg: &KmerConfig) -> Result<()> {
        let dh = kmer::hamming_distance(r, q)? as u64;
        let pr = kmer::profile_bases(r, cfg)?;
        let pq = kmer::profile_bases(q, cfg)?;
        let l1 = kmer::l1_counts(&pr.counts, &pq.counts);
        self.merge_pair(dh, l1, r.len() as u64);
        Ok(())
    }

    fn merge_pair(&mut self, dh: u64, l1: u64, len: u64) {
        self.pairs_checked += 1;
        if dh > 0 && l1 == 0 {
            self.same_profile_pairs += 1;
            return;
        }
        let upper = (self.k as u64) << (2 * self.k);
        // (1/len) dh <= l1  and  l1 <= k 4^k dh, in integers
        if dh > len * l1 || l1 > upper * dh {
            self.violations += 1;
        }
        if dh > 0 {
            self.max_upper_ratio = self.max_upper_ratio.max(l1 as f64 / dh as f64);
        }
    }

    pub fn merge(&mut self, other: &LipschitzCheck) {
        self.pairs_checked += other.pairs_checked;
        self.violations += other.violations;
        self.same_profile_pairs += other.same_profile_pairs;
        self.max_upper_ratio = self.max_upper_ratio.max(other.max_upper_ratio);
    }
}

/// Copy of `bases` with `m` substitutions at distinct random positions.
pub fn mutate<R: Rng>(bases: &[u8], m: usize, rng: &mut R) -> Vec<u8> {
    let mut out = bases.to_vec();
    let m = m.min(bases.len());
    let positions = rand::seq::index::sample(rng, bases.len(), m);
    for pos in positions {
        let d = base_digit(out[pos]).unwrap_or(0);
        out[pos] = digit_base(d + rng.random_range(1..4));
    }
    out
}

/// Samples `trials` random equal-length read pairs and `trials` mutation
/// pairs (a read against a copy with 1 to `max(1, l/10)` substitutions)
/// and checks both bounds on each.
pub fn verify_lipschitz(
    dataset: &Dataset,
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<LipschitzCheck> {
    if trials == 0 {
        return Err(Error::Usage("trials must be at least 1".into()));
    }
    let cfg = KmerConfig::new(k)?;
    let mut by_len: HashMap<usize, Vec<&[u8]>> = HashMap::new();
    for r in dataset.reads() {
        if r.is_unambiguous() && r.len() >= k {
            by_len.entry(r.len()).or_default().push(&r.bases);
        }
    }
    let mut groups: Vec<(usize, Vec<&[u8]>)> =
        by_len.into_iter().filter(|(_, v)| v.len() >= 2).collect();
    if groups.is_empty() {
        return Err(Error::data("no equal-length pair available"));
    }
    groups.sort_by_key(|(len, _)| *len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_len = groups.last().map(|(l, _)| *l).unwrap_or(1);
    let mut check = LipschitzCheck::new(k, max_len);
    for _ in 0..trials {
        let (_, reads) = &groups[rng.random_range(0..groups.len())];
        let a = rng.random_range(0..reads.len());
        let mut b = rng.random_range(0..reads.len() - 1);
        if b >= a {
            b += 1;
        }
        check.observe(reads[a], reads[b], &cfg)?;

        let r = reads[a];
        let m = rng.random_range(1..=(r.len() / 10).max(1));
        let q = mutate(r, m, &mut rng);
        check.observe(r, &q, &cfg)?;
    }
    Ok(check)
}
