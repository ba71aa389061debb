//! Linear k-mer embeddings from a Poisson co-occurrence model.
//!
//! Windows `x` and `y` that start at most `window` bases apart co-occur; the
//! per-read average count `o[x][y]` is modelled as Poisson with rate
//! `exp(-|z_x - z_y|^2)`. Training minimises
//!
//! ```text
//! L = 1/2 sum_x sum_{y != x} o[x][y] |z_x - z_y|^2 + exp(-|z_x - z_y|^2)
//! ```
//!
//! with full-batch Adam, and a read embeds as the count-weighted mean of its
//! k-mer vectors.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::formats::EmbeddingMatrix;
use crate::kmer::{self, base_digit, KmerConfig};
use crate::optim::{Adam, AdamConfig};
use crate::seqio::{Dataset, Read};

/// Dense co-occurrence storage is `4^k x 4^k`; beyond this it stops fitting.
pub const MAX_POISSON_K: usize = 6;

/// Symmetric per-read average co-occurrence counts.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceStats {
    pub k: usize,
    pub window: usize,
    pub reads_seen: usize,
    /// `4^k x 4^k`; the diagonal is kept but ignored by the loss.
    pub o: Array2<f64>,
}

/// Window ranks with their start positions; ambiguous windows are absent.
fn positioned_windows(bases: &[u8], k: usize) -> Vec<(usize, usize)> {
    let mask = (1usize << (2 * k)) - 1;
    let mut out = Vec::new();
    let (mut acc, mut run) = (0usize, 0usize);
    for (i, &b) in bases.iter().enumerate() {
        match base_digit(b) {
            Some(d) => {
                acc = ((acc << 2) | d) & mask;
                run += 1;
                if run >= k {
                    out.push((i + 1 - k, acc));
                }
            }
            None => run = 0,
        }
    }
    out
}

fn count_read(bases: &[u8], k: usize, window: usize, n: usize, o: &mut [f64]) {
    let wins = positioned_windows(bases, k);
    for (a, &(i, x)) in wins.iter().enumerate() {
        for &(j, y) in &wins[a + 1..] {
            if j - i > window {
                break;
            }
            o[x * n + y] += 1.0;
            o[y * n + x] += 1.0;
        }
    }
}

/// Counts co-occurring window pairs `(i, j)`, `i < j <= i + window`, in
/// every read, mirrors each into both `o[x][y]` and `o[y][x]`, and divides
/// by the number of reads.
pub fn count_cooccurrences(dataset: &Dataset, k: usize, window: usize) -> Result<CooccurrenceStats> {
    if k == 0 || k > MAX_POISSON_K {
        return Err(Error::Usage(format!(
            "Poisson model supports 1 <= k <= {MAX_POISSON_K}, got {k}"
        )));
    }
    if window == 0 {
        return Err(Error::Usage("window must be at least 1".into()));
    }
    if let Some(r) = dataset.reads().iter().find(|r| r.len() < k) {
        return Err(Error::ReadTooShort { len: r.len(), k });
    }
    let n = 1usize << (2 * k);
    let o = dataset
        .reads()
        .par_iter()
        .fold(
            || vec![0.0; n * n],
            |mut acc, r| {
                count_read(&r.bases, k, window, n, &mut acc);
                acc
            },
        )
        .reduce(
            || vec![0.0; n * n],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let reads = dataset.len().max(1) as f64;
    let o = Array2::from_shape_vec((n, n), o)
        .expect("square buffer")
        .mapv(|v| v / reads);
    Ok(CooccurrenceStats {
        k,
        window,
        reads_seen: dataset.len(),
        o,
    })
}

/// Per-k-mer embedding vectors; row `x` is `z_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct KmerEmbeddings {
    pub k: usize,
    pub z: Array2<f64>,
}

impl KmerEmbeddings {
    pub fn dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn to_matrix(&self) -> EmbeddingMatrix {
        EmbeddingMatrix {
            k: self.k,
            values: self.z.clone(),
        }
    }

    pub fn from_matrix(m: EmbeddingMatrix) -> Result<Self> {
        let n = 1usize << (2 * m.k);
        if m.rows() != n {
            return Err(Error::Format(format!(
                "k-mer embedding file has {} rows, expected 4^{} = {n}",
                m.rows(),
                m.k
            )));
        }
        Ok(KmerEmbeddings {
            k: m.k,
            z: m.values,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoissonTrainConfig {
    pub epochs: usize,
    pub dim: usize,
    pub window: usize,
    pub reads_sampled: usize,
    pub init_std: f64,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for PoissonTrainConfig {
    fn default() -> Self {
        PoissonTrainConfig {
            epochs: 1000,
            dim: 256,
            window: 4,
            reads_sampled: 10_000,
            init_std: 0.1,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

fn check_shapes(stats: &CooccurrenceStats, emb: &KmerEmbeddings) -> Result<()> {
    if stats.o.nrows() != emb.z.nrows() {
        return Err(Error::DimensionMismatch {
            expected: stats.o.nrows(),
            got: emb.z.nrows(),
        });
    }
    if emb.z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite embedding entry".into()));
    }
    Ok(())
}

/// The Poisson loss, evaluated as the literal double sum over ordered pairs.
pub fn poisson_loss(stats: &CooccurrenceStats, emb: &KmerEmbeddings) -> Result<f64> {
    check_shapes(stats, emb)?;
    let n = emb.z.nrows();
    let mut total = 0.0;
    for x in 0..n {
        let zx = emb.z.row(x);
        for y in 0..n {
            if x == y {
                continue;
            }
            let d: f64 = zx
                .iter()
                .zip(emb.z.row(y))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += stats.o[[x, y]] * d + (-d).exp();
        }
    }
    Ok(0.5 * total)
}

/// Loss and gradient through Gram matrices:
/// `dL/dz_x = 2 sum_{y != x} (o[x][y] - exp(-D_xy)) (z_x - z_y)`.
pub fn poisson_loss_and_grad(
    stats: &CooccurrenceStats,
    emb: &KmerEmbeddings,
) -> Result<(f64, Array2<f64>)> {
    check_shapes(stats, emb)?;
    let z = &emb.z;
    let n = z.nrows();
    let gram = z.dot(&z.t());
    let sq: Array1<f64> = gram.diag().to_owned();
    let mut w = Array2::<f64>::zeros((n, n));
    let mut loss = 0.0;
    for x in 0..n {
        for y in 0..n {
            if x == y {
                continue;
            }
            let d = (sq[x] + sq[y] - 2.0 * gram[[x, y]]).max(0.0);
            let lambda = (-d).exp();
            loss += stats.o[[x, y]] * d + lambda;
            w[[x, y]] = stats.o[[x, y]] - lambda;
        }
    }
    // grad = 2 (diag(W 1) Z - W Z)
    let row_sums = w.sum_axis(Axis(1));
    let mut grad = w.dot(z);
    grad.zip_mut_with(&(z * &row_sums.insert_axis(Axis(1))), |g, dz| {
        *g = 2.0 * (dz - *g)
    });
    Ok((0.5 * loss, grad))
}

/// Trained embeddings and the loss before every epoch plus the final loss.
#[derive(Debug, Clone)]
pub struct PoissonFit {
    pub embeddings: KmerEmbeddings,
    pub trace: Vec<f64>,
}

/// Full-batch Adam on the Poisson loss from a seeded `N(0, init_std^2)`
/// start.
pub fn train_poisson(stats: &CooccurrenceStats, cfg: &PoissonTrainConfig) -> Result<PoissonFit> {
    if cfg.dim == 0 || cfg.epochs == 0 {
        return Err(Error::Usage("dim and epochs must be positive".into()));
    }
    let n = stats.o.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, cfg.init_std).map_err(|e| Error::Usage(e.to_string()))?;
    let z = Array2::from_shape_simple_fn((n, cfg.dim), || normal.sample(&mut rng));
    let mut emb = KmerEmbeddings { k: stats.k, z };
    let mut adam = Adam::new(cfg.adam, n * cfg.dim);
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..cfg.epochs {
        let (loss, grad) = poisson_loss_and_grad(stats, &emb)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                step: 0,
                loss,
            });
        }
        trace.push(loss);
        let params = emb.z.as_slice_mut().expect("standard layout");
        adam.step(params, grad.as_slice().expect("standard layout"));
    }
    let (last, _) = poisson_loss_and_grad(stats, &emb)?;
    if !last.is_finite() {
        return Err(Error::Diverged {
            epoch: cfg.epochs,
            step: 0,
            loss: last,
        });
    }
    trace.push(last);
    Ok(PoissonFit {
        embeddings: emb,
        trace,
    })
}

/// Samples at most `cfg.reads_sampled` reads (seeded, without replacement),
/// counts co-occurrences and trains.
pub fn fit_poisson(dataset: &Dataset, k: usize, cfg: &PoissonTrainConfig) -> Result<PoissonFit> {
    let sample = if dataset.len() > cfg.reads_sampled {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED);
        let mut idx = rand::seq::index::sample(&mut rng, dataset.len(), cfg.reads_sampled).into_vec();
        idx.sort_unstable();
        Dataset::new(idx.into_iter().map(|i| dataset.reads()[i].clone()).collect())?
    } else {
        dataset.clone()
    };
    let stats = count_cooccurrences(&sample, k, cfg.window)?;
    train_poisson(&stats, cfg)
}

/// Count-weighted mean of the k-mer vectors of a read.
pub fn embed_read_pois(read: &Read, emb: &KmerEmbeddings) -> Result<Vec<f64>> {
    let p = kmer::profile(read, &KmerConfig::new(emb.k)?)?;
    if p.total == 0 {
        return Err(Error::data(format!(
            "read {} has no valid {}-mer windows",
            read.id, emb.k
        )));
    }
    let mut out = vec![0.0; emb.dim()];
    for (x, c) in p.nonzero() {
        for (o, v) in out.iter_mut().zip(emb.z.row(x)) {
            *o += c as f64 * v;
        }
    }
    let t = p.total as f64;
    out.iter_mut().for_each(|v| *v /= t);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kmer::rank;
    use proptest::prelude::*;

    fn ds(seqs: &[&str]) -> Dataset {
        Dataset::new(
            seqs.iter()
                .enumerate()
                .map(|(i, s)| Read::new(format!("r{i}"), s))
                .collect(),
        )
        .unwrap()
    }

    fn r(s: &str) -> usize {
        rank(s.as_bytes()).unwrap()
    }

    #[test]
    fn homopolymer_only_diagonal() {
        let s = count_cooccurrences(&ds(&["AAAA"]), 2, 1).unwrap();
        let off: f64 = s
            .o
            .indexed_iter()
            .filter(|((x, y), _)| x != y)
            .map(|(_, v)| *v)
            .sum();
        assert_eq!(off, 0.0);
        assert!(s.o[[0, 0]] > 0.0);
    }

    #[test]
    fn adjacent_windows_acgt() {
        let s = count_cooccurrences(&ds(&["ACGT"]), 2, 1).unwrap();
        assert_eq!(s.o[[r("AC"), r("CG")]], 1.0);
        assert_eq!(s.o[[r("CG"), r("AC")]], 1.0);
        assert_eq!(s.o[[r("CG"), r("GT")]], 1.0);
        assert_eq!(s.o[[r("GT"), r("CG")]], 1.0);
        assert_eq!(s.o[[r("AC"), r("GT")]], 0.0);
        assert_eq!(s.o.sum(), 4.0);
    }

    #[test]
    fn per_read_average() {
        let one = count_cooccurrences(&ds(&["ACGTTGCA"]), 2, 3).unwrap();
        let two = count_cooccurrences(&ds(&["ACGTTGCA", "ACGTTGCA"]), 2, 3).unwrap();
        assert_eq!(one.o, two.o);
        assert_eq!(two.reads_seen, 2);
    }

    fn emb_from(z: Vec<f64>, n: usize, d: usize, k: usize) -> KmerEmbeddings {
        KmerEmbeddings {
            k,
            z: Array2::from_shape_vec((n, d), z).unwrap(),
        }
    }

    #[test]
    fn identical_embeddings_zero_counts() {
        let stats = CooccurrenceStats {
            k: 2,
            window: 1,
            reads_seen: 1,
            o: Array2::zeros((16, 16)),
        };
        let emb = emb_from(vec![0.3; 16 * 3], 16, 3, 2);
        let m = 16.0 * 15.0;
        assert!((poisson_loss(&stats, &emb).unwrap() - 0.5 * m).abs() < 1e-12);
        let (fast, _) = poisson_loss_and_grad(&stats, &emb).unwrap();
        assert!((fast - 0.5 * m).abs() < 1e-9);
    }

    #[test]
    fn far_apart_embeddings_vanish() {
        let stats = CooccurrenceStats {
            k: 1,
            window: 1,
            reads_seen: 1,
            o: Array2::zeros((4, 4)),
        };
        let z: Vec<f64> = (0..4).flat_map(|i| [1e3 * i as f64, 0.0]).collect();
        assert!(poisson_loss(&stats, &emb_from(z, 4, 2, 1)).unwrap() < 1e-300);
    }

    #[test]
    fn non_finite_rejected() {
        let stats = CooccurrenceStats {
            k: 1,
            window: 1,
            reads_seen: 1,
            o: Array2::zeros((4, 4)),
        };
        let mut z = vec![0.0; 8];
        z[3] = f64::NAN;
        assert!(poisson_loss(&stats, &emb_from(z, 4, 2, 1)).is_err());
    }

    fn random_instance(seed: u64, k: usize, d: usize) -> (CooccurrenceStats, KmerEmbeddings) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 1 << (2 * k);
        let mut o = Array2::<f64>::zeros((n, n));
        for x in 0..n {
            for y in x..n {
                let v = rng.random_range(0.0..3.0);
                o[[x, y]] = v;
                o[[y, x]] = v;
            }
        }
        let z = (0..n * d).map(|_| rng.random_range(-0.8..0.8)).collect();
        (
            CooccurrenceStats {
                k,
                window: 1,
                reads_seen: 1,
                o,
            },
            emb_from(z, n, d, k),
        )
    }

    /// Central differences of the literal double-sum loss.
    pub(crate) fn finite_difference_grad(
        stats: &CooccurrenceStats,
        emb: &KmerEmbeddings,
        h: f64,
    ) -> Array2<f64> {
        let mut g = Array2::zeros(emb.z.raw_dim());
        let mut e = emb.clone();
        for idx in 0..emb.z.len() {
            let (x, c) = (idx / emb.dim(), idx % emb.dim());
            let orig = e.z[[x, c]];
            e.z[[x, c]] = orig + h;
            let up = poisson_loss(stats, &e).unwrap();
            e.z[[x, c]] = orig - h;
            let down = poisson_loss(stats, &e).unwrap();
            e.z[[x, c]] = orig;
            g[[x, c]] = (up - down) / (2.0 * h);
        }
        g
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..5 {
            let (stats, emb) = random_instance(seed, 1, 3);
            let (loss, grad) = poisson_loss_and_grad(&stats, &emb).unwrap();
            assert!((loss - poisson_loss(&stats, &emb).unwrap()).abs() < 1e-10);
            let fd = finite_difference_grad(&stats, &emb, 1e-5);
            for (a, b) in grad.iter().zip(fd.iter()) {
                let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
                assert!(rel < 1e-5, "analytic {a} vs fd {b}");
            }
        }
    }

    #[test]
    fn training_decreases_loss_and_is_seeded() {
        let d = ds(&["ACGTTGCAACGGTACCATGA", "TTGACCAGTAGGCATCAAGT", "GGGCCCATATACGCGTTAAC"]);
        let stats = count_cooccurrences(&d, 2, 2).unwrap();
        let cfg = PoissonTrainConfig {
            epochs: 200,
            dim: 4,
            seed: 9,
            adam: AdamConfig {
                learning_rate: 1e-2,
                ..Default::default()
            },
            ..Default::default()
        };
        let a = train_poisson(&stats, &cfg).unwrap();
        let b = train_poisson(&stats, &cfg).unwrap();
        assert_eq!(a.embeddings, b.embeddings);
        assert_eq!(a.trace.len(), 201);
        assert!(a.trace.last().unwrap() <= &a.trace[0]);
    }

    #[test]
    fn strongly_cooccurring_pair_ends_close() {
        let n = 16;
        let mut o = Array2::<f64>::from_elem((n, n), 0.05);
        o[[3, 9]] = 20.0;
        o[[9, 3]] = 20.0;
        let stats = CooccurrenceStats {
            k: 2,
            window: 1,
            reads_seen: 1,
            o,
        };
        let cfg = PoissonTrainConfig {
            epochs: 500,
            dim: 8,
            seed: 1,
            init_std: 0.5,
            adam: AdamConfig {
                learning_rate: 1e-2,
                ..Default::default()
            },
            ..Default::default()
        };
        let z = train_poisson(&stats, &cfg).unwrap().embeddings.z;
        let dist = |a: usize, b: usize| -> f64 {
            z.row(a)
                .iter()
                .zip(z.row(b))
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        };
        let mut all: Vec<f64> = (0..n)
            .flat_map(|a| ((a + 1)..n).map(move |b| (a, b)))
            .map(|(a, b)| dist(a, b))
            .collect();
        all.sort_by(f64::total_cmp);
        let median = all[all.len() / 2];
        assert!(dist(3, 9) < median, "{} vs median {}", dist(3, 9), median);
    }

    #[test]
    fn read_embedding_examples() {
        let mut z = Array2::<f64>::zeros((16, 2));
        z[[r("AC"), 0]] = 1.0;
        z[[r("CA"), 1]] = 1.0;
        z[[r("AA"), 0]] = 0.25;
        z[[r("AA"), 1]] = -4.0;
        let emb = KmerEmbeddings { k: 2, z };
        let e = embed_read_pois(&Read::new("x", "ACAC"), &emb).unwrap();
        assert!((e[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((e[1] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(
            embed_read_pois(&Read::new("h", "AAAAA"), &emb).unwrap(),
            vec![0.25, -4.0]
        );
        assert!(embed_read_pois(&Read::new("n", "NNNN"), &emb).is_err());
    }

    proptest! {
        #[test]
        fn loss_translation_invariant(seed in any::<u64>(), shift in prop::collection::vec(-5.0f64..5.0, 3)) {
            let (stats, emb) = random_instance(seed, 1, 3);
            let mut moved = emb.clone();
            for mut row in moved.z.rows_mut() {
                for (v, s) in row.iter_mut().zip(&shift) {
                    *v += s;
                }
            }
            let a = poisson_loss(&stats, &emb).unwrap();
            let b = poisson_loss(&stats, &moved).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }

        #[test]
        fn rates_in_unit_interval(seed in any::<u64>()) {
            let (_, emb) = random_instance(seed, 1, 4);
            for x in 0..4 {
                for y in 0..4 {
                    let d: f64 = emb.z.row(x).iter().zip(emb.z.row(y)).map(|(a, b)| (a - b) * (a - b)).sum();
                    let lambda = (-d).exp();
                    prop_assert!(lambda > 0.0 && lambda <= 1.0);
                }
            }
        }

        #[test]
        fn same_profile_same_embedding(seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z = Array2::from_shape_simple_fn((16, 3), || rng.random_range(-1.0..1.0));
            let emb = KmerEmbeddings { k: 2, z };
            // rotations of a closed walk share the profile
            let a = embed_read_pois(&Read::new("a", "ACGTA"), &emb).unwrap();
            let b = embed_read_pois(&Read::new("b", "CGTAC"), &emb).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn embedding_in_convex_hull(seqs in prop::collection::vec(prop::sample::select(b"ACGT".to_vec()), 3..40), seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z = Array2::from_shape_simple_fn((16, 2), || rng.random_range(-1.0..1.0));
            let emb = KmerEmbeddings { k: 2, z: z.clone() };
            let read = Read::new("p", &seqs);
            let e = embed_read_pois(&read, &emb).unwrap();
            let p = kmer::profile(&read, &KmerConfig::new(2).unwrap()).unwrap();
            // coordinate-wise bounds of the used rows contain the mean
            for c in 0..2 {
                let used: Vec<f64> = p.nonzero().map(|(x, _)| z[[x, c]]).collect();
                let lo = used.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = used.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(e[c] >= lo - 1e-12 && e[c] <= hi + 1e-12);
            }
        }
    }
}
