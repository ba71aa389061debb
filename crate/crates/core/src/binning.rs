//! Clustering read embeddings into bins and scoring them against labels.
//!
//! The pipeline is: calibrate a similarity threshold on a labeled split,
//! cluster with a threshold-driven K-medoid, align clusters to species with
//! the Hungarian method and report per-species F1 scores.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kmer::{self, KmerConfig};
use crate::linear::{embed_read_pois, KmerEmbeddings};
use crate::nonlinear::{embed_reads_nl, MlpParams};
use crate::seqio::{Dataset, Read};

/// Similarity functions; larger means more similar for every kind.
///
/// `ExpL1` similarities `exp(-l1)` underflow for long reads, so its scores
/// are kept as `-l1` (the logarithm). Use [`SimilarityKind::to_score`] to
/// convert a user-facing similarity threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    Cosine,
    ExpL1,
    NegEuclidean,
}

impl std::str::FromStr for SimilarityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(SimilarityKind::Cosine),
            "expl1" | "exp_l1" => Ok(SimilarityKind::ExpL1),
            "negeuclid" | "neg_euclidean" => Ok(SimilarityKind::NegEuclidean),
            other => Err(Error::Usage(format!("unknown similarity {other:?}"))),
        }
    }
}

impl SimilarityKind {
    /// Internal score of a pair.
    pub fn score(self, a: &[f64], b: &[f64]) -> Result<f64> {
        match self {
            SimilarityKind::Cosine => kmer::cosine_similarity(a, b),
            SimilarityKind::ExpL1 => {
                if a.len() != b.len() {
                    return Err(Error::DimensionMismatch {
                        expected: a.len(),
                        got: b.len(),
                    });
                }
                Ok(-a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
            }
            SimilarityKind::NegEuclidean => Ok(-kmer::euclidean_distance(a, b)?),
        }
    }

    /// Similarity value for an internal score.
    pub fn to_similarity(self, score: f64) -> f64 {
        match self {
            SimilarityKind::ExpL1 => score.exp(),
            _ => score,
        }
    }

    /// Internal score for a similarity value.
    pub fn to_score(self, similarity: f64) -> f64 {
        match self {
            SimilarityKind::ExpL1 => similarity.ln(),
            _ => similarity,
        }
    }
}

fn check_finite(emb: ArrayView2<f64>) -> Result<()> {
    if emb.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical("non-finite embedding value".into()))
    }
}

/// Threshold (as an internal score) at the nearest-rank `percentile` of the
/// pooled centroid-to-member scores of every labeled group.
pub fn calibrate_threshold(
    emb: ArrayView2<f64>,
    labels: &[String],
    kind: SimilarityKind,
    percentile: f64,
) -> Result<f64> {
    if emb.nrows() == 0 {
        return Err(Error::data("empty calibration set"));
    }
    if labels.len() != emb.nrows() {
        return Err(Error::DimensionMismatch {
            expected: emb.nrows(),
            got: labels.len(),
        });
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::Usage("percentile must be in [0, 100]".into()));
    }
    check_finite(emb)?;
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let mut scores = Vec::with_capacity(emb.nrows());
    for members in groups.values() {
        let centroid = members
            .iter()
            .fold(ndarray::Array1::zeros(emb.ncols()), |acc, &i| acc + emb.row(i))
            / members.len() as f64;
        let c = centroid.to_vec();
        for &i in members {
            scores.push(kind.score(&c, &emb.row(i).to_vec())?);
        }
    }
    Ok(nearest_rank(&mut scores, percentile))
}

/// Nearest-rank percentile: the `ceil(p/100 * n)`-th smallest value, the
/// minimum for `p = 0`.
pub fn nearest_rank(values: &mut [f64], percentile: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let rank = ((percentile / 100.0) * n as f64).ceil() as usize;
    values[rank.clamp(1, n) - 1]
}

/// Full pairwise score matrix, rows computed in parallel.
pub fn score_matrix(emb: ArrayView2<f64>, kind: SimilarityKind) -> Result<Array2<f64>> {
    check_finite(emb)?;
    let n = emb.nrows();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = emb.row(i).to_vec();
            (0..n)
                .map(|j| kind.score(&a, &emb.row(j).to_vec()))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(Array2::from_shape_vec((n, n), rows.concat()).expect("square"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClusterAssignment {
    /// Cluster index of each read, in input order.
    pub cluster_of: Vec<usize>,
    /// Read index of each cluster's medoid.
    pub medoid_of: Vec<usize>,
}

impl ClusterAssignment {
    pub fn cluster_count(&self) -> usize {
        self.medoid_of.len()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.cluster_of.len())
            .filter(|&i| self.cluster_of[i] == cluster)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KmedoidConfig {
    /// Outer rounds before the remaining reads are made singletons.
    pub max_rounds: usize,
    /// Medoid refinement iterations per cluster.
    pub refine_iters: usize,
}

impl Default for KmedoidConfig {
    fn default() -> Self {
        KmedoidConfig {
            max_rounds: usize::MAX,
            refine_iters: 10,
        }
    }
}

/// Threshold-driven K-medoid on embeddings.
pub fn kmedoid_cluster(
    emb: ArrayView2<f64>,
    kind: SimilarityKind,
    threshold: f64,
    cfg: &KmedoidConfig,
) -> Result<ClusterAssignment> {
    if emb.nrows() == 0 {
        return Err(Error::data("nothing to cluster"));
    }
    let s = score_matrix(emb, kind)?;
    Ok(kmedoid_from_scores(&s, threshold, cfg))
}

/// Greedy clustering on a precomputed score matrix:
///
/// 1. the unassigned read with the most unassigned neighbours (score at
///    least `threshold`) seeds a cluster together with those neighbours,
///    ties going to the lowest index;
/// 2. the medoid moves to the member with the largest total score to the
///    other members and the cluster is re-collected around it, until the
///    medoid is stable or `refine_iters` is reached;
/// 3. repeat until every read is assigned.
pub fn kmedoid_from_scores(s: &Array2<f64>, threshold: f64, cfg: &KmedoidConfig) -> ClusterAssignment {
    let n = s.nrows();
    let near = |i: usize, j: usize| i != j && s[[i, j]] >= threshold;
    let mut counts: Vec<usize> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).filter(|&j| near(i, j)).count())
        .collect();
    let mut cluster_of = vec![usize::MAX; n];
    let mut medoid_of = Vec::new();
    let mut free = n;

    let assign = |members: &[usize], cluster_of: &mut Vec<usize>, counts: &mut Vec<usize>, c| {
        for &m in members {
            cluster_of[m] = c;
        }
        for &m in members {
            for j in 0..n {
                if cluster_of[j] == usize::MAX && near(m, j) {
                    counts[j] -= 1;
                }
            }
        }
    };

    let mut rounds = 0;
    while free > 0 {
        let seed = (0..n)
            .filter(|&i| cluster_of[i] == usize::MAX)
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
            .expect("free reads remain");
        if rounds >= cfg.max_rounds || counts[seed] == 0 {
            // only isolated reads are left
            for i in 0..n {
                if cluster_of[i] == usize::MAX {
                    let c = medoid_of.len();
                    medoid_of.push(i);
                    cluster_of[i] = c;
                }
            }
            break;
        }
        let collect = |m: usize, cluster_of: &[usize]| -> Vec<usize> {
            (0..n)
                .filter(|&j| cluster_of[j] == usize::MAX && (j == m || near(m, j)))
                .collect()
        };
        let mut medoid = seed;
        let mut members = collect(medoid, &cluster_of);
        for _ in 0..cfg.refine_iters {
            let best = members
                .iter()
                .copied()
                .map(|i| (i, members.iter().map(|&j| s[[i, j]]).sum::<f64>()))
                .fold(None::<(usize, f64)>, |acc, (i, t)| match acc {
                    Some((_, bt)) if bt >= t => acc,
                    _ => Some((i, t)),
                })
                .expect("medoid is a member")
                .0;
            if best == medoid {
                break;
            }
            medoid = best;
            members = collect(medoid, &cluster_of);
        }
        let c = medoid_of.len();
        medoid_of.push(medoid);
        assign(&members, &mut cluster_of, &mut counts, c);
        free -= members.len();
        rounds += 1;
    }
    ClusterAssignment {
        cluster_of,
        medoid_of,
    }
}

/// Minimum-cost assignment on a square cost matrix; returns the column of
/// each row. Shortest augmenting paths with potentials, `O(n^3)`.
pub fn min_cost_assignment(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "cost matrix must be square");
    // 1-based arrays, column 0 is the virtual start
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Maximum-overlap matching of rows (clusters) to columns (species).
/// Returns `Some(column)` per row, `None` for rows left on padding.
pub fn max_overlap_matching(overlap: &Array2<u64>) -> Vec<Option<usize>> {
    let (r, c) = overlap.dim();
    let n = r.max(c);
    let cost = Array2::from_shape_fn((n, n), |(i, j)| {
        if i < r && j < c {
            -(overlap[[i, j]] as f64)
        } else {
            0.0
        }
    });
    min_cost_assignment(&cost)
        .into_iter()
        .take(r)
        .map(|j| (j < c).then_some(j))
        .collect()
}

/// Contingency table of clusters against the sorted species list.
pub fn contingency(assign: &ClusterAssignment, truth: &[String]) -> (Array2<u64>, Vec<String>) {
    let mut species: Vec<String> = truth.to_vec();
    species.sort();
    species.dedup();
    let mut m = Array2::zeros((assign.cluster_count(), species.len()));
    for (i, t) in truth.iter().enumerate() {
        let s = species.binary_search(t).expect("species listed");
        m[[assign.cluster_of[i], s]] += 1;
    }
    (m, species)
}

/// Cluster-to-species alignment: `alignment[cluster] = Some(species)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    pub species: Vec<String>,
    pub cluster_to_species: Vec<Option<usize>>,
    pub total_overlap: u64,
}

pub fn hungarian_align(assign: &ClusterAssignment, truth: &[String]) -> Alignment {
    let (m, species) = contingency(assign, truth);
    let cluster_to_species = max_overlap_matching(&m);
    let total_overlap = cluster_to_species
        .iter()
        .enumerate()
        .filter_map(|(c, s)| s.map(|s| m[[c, s]]))
        .sum();
    Alignment {
        species,
        cluster_to_species,
        total_overlap,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeciesScore {
    pub species: String,
    pub matched_cluster: Option<usize>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Lower bounds of the F1 buckets, best first; each bucket is
/// `(lower, upper]` with 1.0 as the top upper bound.
pub const BUCKETS: [f64; 5] = [0.9, 0.8, 0.7, 0.6, 0.5];

pub const BUCKET_NAMES: [&str; 5] = [">0.9", "0.8-0.9", "0.7-0.8", "0.6-0.7", "0.5-0.6"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinningReport {
    pub per_species: Vec<SpeciesScore>,
    pub histogram: [usize; 5],
    pub detected_high_quality: usize,
    pub unmatched_species: Vec<String>,
    pub cluster_count: usize,
}

fn bucket_of(f1: f64) -> Option<usize> {
    BUCKETS.iter().position(|&lo| f1 > lo)
}

pub fn score(assign: &ClusterAssignment, truth: &[String], alignment: &Alignment) -> BinningReport {
    let (m, species) = contingency(assign, truth);
    debug_assert_eq!(species, alignment.species);
    let cluster_sizes: Vec<u64> = m.rows().into_iter().map(|r| r.sum()).collect();
    let species_sizes: Vec<u64> = m.columns().into_iter().map(|c| c.sum()).collect();
    let mut matched = vec![None; species.len()];
    for (c, s) in alignment.cluster_to_species.iter().enumerate() {
        if let Some(s) = s {
            matched[*s] = Some(c);
        }
    }
    let mut histogram = [0usize; 5];
    let mut unmatched_species = Vec::new();
    let per_species = species
        .iter()
        .enumerate()
        .map(|(s, name)| {
            let Some(c) = matched[s] else {
                unmatched_species.push(name.clone());
                return SpeciesScore {
                    species: name.clone(),
                    matched_cluster: None,
                    precision: 0.0,
                    recall: 0.0,
                    f1: 0.0,
                };
            };
            let both = m[[c, s]] as f64;
            let precision = both / cluster_sizes[c] as f64;
            let recall = both / species_sizes[s] as f64;
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            if let Some(b) = bucket_of(f1) {
                histogram[b] += 1;
            }
            SpeciesScore {
                species: name.clone(),
                matched_cluster: Some(c),
                precision,
                recall,
                f1,
            }
        })
        .collect();
    BinningReport {
        per_species,
        detected_high_quality: histogram[0],
        histogram,
        unmatched_species,
        cluster_count: assign.cluster_count(),
    }
}

/// Plain-text table of the F1 buckets.
pub fn render_histogram(report: &BinningReport) -> String {
    let mut out = String::from("f1_range\tclusters\n");
    for (name, count) in BUCKET_NAMES.iter().zip(report.histogram) {
        let _ = writeln!(out, "{name}\t{count}");
    }
    let _ = writeln!(out, "unmatched\t{}", report.unmatched_species.len());
    out
}

/// Embedding model used for binning.
#[derive(Debug, Clone)]
pub enum BinModel {
    /// Raw profiles compared with cosine similarity.
    KmerCosine { k: usize },
    /// Raw profiles compared with `exp(-l1)`.
    KmerL1 { k: usize },
    Pois(KmerEmbeddings),
    Nl(MlpParams),
}

impl BinModel {
    pub fn name(&self) -> &'static str {
        match self {
            BinModel::KmerCosine { .. } => "kmer-cosine",
            BinModel::KmerL1 { .. } => "kmer-l1",
            BinModel::Pois(_) => "pois",
            BinModel::Nl(_) => "nl",
        }
    }

    pub fn similarity(&self) -> SimilarityKind {
        match self {
            BinModel::KmerCosine { .. } => SimilarityKind::Cosine,
            BinModel::KmerL1 { .. } => SimilarityKind::ExpL1,
            _ => SimilarityKind::NegEuclidean,
        }
    }

    /// One embedding row per read.
    pub fn embed(&self, reads: &[Read]) -> Result<Array2<f64>> {
        match self {
            BinModel::KmerCosine { k } | BinModel::KmerL1 { k } => {
                let cfg = KmerConfig::new(*k)?;
                let rows = reads
                    .par_iter()
                    .map(|r| kmer::profile(r, &cfg).map(|p| p.as_f64()))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Array2::from_shape_vec((reads.len(), cfg.dim()), rows.concat())
                    .expect("rows have profile width"))
            }
            BinModel::Pois(emb) => {
                let rows = reads
                    .par_iter()
                    .map(|r| embed_read_pois(r, emb))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Array2::from_shape_vec((reads.len(), emb.dim()), rows.concat())
                    .expect("rows have embedding width"))
            }
            BinModel::Nl(params) => embed_reads_nl(reads, params),
        }
    }
}

fn labels_of(d: &Dataset) -> Result<Vec<String>> {
    d.reads()
        .iter()
        .map(|r| r.label.clone())
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::data("ground truth required for scoring"))
}

#[derive(Debug, Clone, Serialize)]
pub struct BinRun {
    pub model: &'static str,
    pub similarity: SimilarityKind,
    /// Calibrated threshold as an internal score.
    pub threshold: f64,
    pub assignment: ClusterAssignment,
    pub report: BinningReport,
}

/// Embeds, calibrates on `calib`, clusters `d` and scores it.
pub fn end_to_end_bin(
    d: &Dataset,
    model: &BinModel,
    calib: &Dataset,
    percentile: f64,
) -> Result<BinRun> {
    let truth = labels_of(d)?;
    let calib_labels = labels_of(calib)?;
    if d.is_empty() {
        return Err(Error::data("empty dataset"));
    }
    let kind = model.similarity();
    let calib_emb = model.embed(calib.reads())?;
    let threshold = calibrate_threshold(calib_emb.view(), &calib_labels, kind, percentile)?;
    let emb = model.embed(d.reads())?;
    let assignment = kmedoid_cluster(emb.view(), kind, threshold, &KmedoidConfig::default())?;
    let alignment = hungarian_align(&assignment, &truth);
    let report = score(&assignment, &truth, &alignment);
    Ok(BinRun {
        model: model.name(),
        similarity: kind,
        threshold,
        assignment,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(m: &Array2<u64>) -> u64 {
        let (r, c) = m.dim();
        let n = r.max(c);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = 0;
        permute(&mut perm, 0, &mut |p| {
            let total = (0..r)
                .filter(|&i| p[i] < c)
                .map(|i| m[[i, p[i]]])
                .sum::<u64>();
            best = best.max(total);
        });
        best
    }

    fn permute(p: &mut Vec<usize>, at: usize, f: &mut impl FnMut(&[usize])) {
        if at == p.len() {
            f(p);
            return;
        }
        for i in at..p.len() {
            p.swap(at, i);
            permute(p, at + 1, f);
            p.swap(at, i);
        }
    }

    fn optimal_matchings(m: &Array2<u64>) -> usize {
        let (r, c) = m.dim();
        let best = brute_force(m);
        let mut perm: Vec<usize> = (0..r.max(c)).collect();
        let mut seen = std::collections::BTreeSet::new();
        permute(&mut perm, 0, &mut |p| {
            let pairs: Vec<(usize, usize)> = (0..r).filter(|&i| p[i] < c && m[[i, p[i]]] > 0).map(|i| (i, p[i])).collect();
            let total: u64 = pairs.iter().map(|&(i, j)| m[[i, j]]).sum();
            if total == best {
                seen.insert(pairs);
            }
        });
        seen.len()
    }

    fn matched_total(m: &Array2<u64>) -> u64 {
        max_overlap_matching(m)
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| m[[i, j]]))
            .sum()
    }

    fn labels(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn nearest_rank_examples() {
        let mut v: Vec<f64> = (1..=10).rev().map(|i| i as f64 / 10.0).collect();
        assert_eq!(nearest_rank(&mut v, 70.0), 0.7);
        assert_eq!(nearest_rank(&mut v, 0.0), 0.1);
        assert_eq!(nearest_rank(&mut v, 100.0), 1.0);
    }

    #[test]
    fn calibration_identical_members() {
        let emb = Array2::from_shape_vec((4, 2), vec![1.0, 2.0, 1.0, 2.0, 0.0, 3.0, 0.0, 3.0]).unwrap();
        let t = calibrate_threshold(emb.view(), &labels(&["a", "a", "b", "b"]), SimilarityKind::Cosine, 70.0)
            .unwrap();
        assert!((t - 1.0).abs() < 1e-12);
        assert!(calibrate_threshold(Array2::zeros((0, 2)).view(), &[], SimilarityKind::Cosine, 70.0).is_err());
    }

    #[test]
    fn two_groups_two_clusters() {
        let emb = Array2::from_shape_vec(
            (6, 2),
            vec![0.0, 0.0, 0.1, 0.0, 0.0, 0.1, 10.0, 10.0, 10.1, 10.0, 10.0, 10.1],
        )
        .unwrap();
        let a = kmedoid_cluster(emb.view(), SimilarityKind::NegEuclidean, -1.0, &KmedoidConfig::default())
            .unwrap();
        assert_eq!(a.cluster_count(), 2);
        assert_eq!(a.cluster_of, vec![0, 0, 0, 1, 1, 1]);
        for (c, &m) in a.medoid_of.iter().enumerate() {
            assert_eq!(a.cluster_of[m], c);
        }
    }

    #[test]
    fn threshold_boundaries() {
        let emb = Array2::from_shape_vec((4, 1), vec![0.0, 1.0, 3.0, 7.0]).unwrap();
        let cfg = KmedoidConfig::default();
        let single = kmedoid_cluster(emb.view(), SimilarityKind::NegEuclidean, 1.0, &cfg).unwrap();
        assert_eq!(single.cluster_count(), 4);
        let one = kmedoid_cluster(emb.view(), SimilarityKind::NegEuclidean, -100.0, &cfg).unwrap();
        assert_eq!(one.cluster_count(), 1);
        let bad = Array2::from_shape_vec((1, 1), vec![f64::NAN]).unwrap();
        assert!(kmedoid_cluster(bad.view(), SimilarityKind::NegEuclidean, 0.0, &cfg).is_err());
    }

    #[test]
    fn refinement_moves_medoid_to_centre() {
        // read 0 has the most neighbours by index tie-break but read 1 sits
        // in the middle
        let emb = Array2::from_shape_vec((3, 1), vec![0.0, 1.0, 2.0]).unwrap();
        let a = kmedoid_cluster(emb.view(), SimilarityKind::NegEuclidean, -2.0, &KmedoidConfig::default())
            .unwrap();
        assert_eq!(a.medoid_of, vec![1]);
    }

    #[test]
    fn hungarian_examples() {
        let d = Array2::from_shape_vec((2, 2), vec![5, 0, 0, 5]).unwrap();
        assert_eq!(max_overlap_matching(&d), vec![Some(0), Some(1)]);
        let x = Array2::from_shape_vec((2, 2), vec![1, 2, 2, 1]).unwrap();
        assert_eq!(max_overlap_matching(&x), vec![Some(1), Some(0)]);
        assert_eq!(matched_total(&x), 4);
        let tall = Array2::from_shape_vec((3, 2), vec![4, 0, 0, 4, 1, 1]).unwrap();
        let m = max_overlap_matching(&tall);
        assert_eq!(m.iter().filter(|s| s.is_none()).count(), 1);
        assert_eq!(m, vec![Some(0), Some(1), None]);
    }

    #[test]
    fn score_examples() {
        let truth = labels(&["a", "a", "b", "b"]);
        let perfect = ClusterAssignment {
            cluster_of: vec![1, 1, 0, 0],
            medoid_of: vec![2, 0],
        };
        let r = score(&perfect, &truth, &hungarian_align(&perfect, &truth));
        assert!(r.per_species.iter().all(|s| s.f1 == 1.0));
        assert_eq!(r.histogram, [2, 0, 0, 0, 0]);
        assert_eq!(r.detected_high_quality, 2);

        // one cluster holds half of species a and nothing else
        let half = ClusterAssignment {
            cluster_of: vec![0, 1, 1, 1],
            medoid_of: vec![0, 1],
        };
        let r = score(&half, &truth, &hungarian_align(&half, &truth));
        let a = &r.per_species[0];
        assert_eq!((a.precision, a.recall), (1.0, 0.5));
        assert!((a.f1 - 2.0 / 3.0).abs() < 1e-12);

        // forced match with empty intersection
        let forced = Alignment {
            species: labels(&["a", "b"]),
            cluster_to_species: vec![Some(0), Some(1)],
            total_overlap: 0,
        };
        let r = score(&perfect, &truth, &forced);
        assert!(r.per_species.iter().all(|s| s.f1 == 0.0));
        assert_eq!(r.histogram, [0; 5]);

        // more species than clusters
        let lumped = ClusterAssignment {
            cluster_of: vec![0; 4],
            medoid_of: vec![0],
        };
        let r = score(&lumped, &truth, &hungarian_align(&lumped, &truth));
        assert_eq!(r.unmatched_species.len(), 1);
        assert!(render_histogram(&r).contains("unmatched\t1"));
    }

    #[test]
    fn unlabeled_evaluation_set() {
        let d = Dataset::new(vec![Read::new("x", "ACGTACGTAC")]).unwrap();
        let calib = Dataset::new(vec![Read::new("c", "ACGTACGTAC").with_label("s")]).unwrap();
        let err = end_to_end_bin(&d, &BinModel::KmerCosine { k: 2 }, &calib, 70.0).unwrap_err();
        assert!(err.to_string().contains("ground truth required for scoring"));
    }

    proptest! {
        #[test]
        fn hungarian_matches_brute_force(r in 1usize..6, c in 1usize..6, seed in any::<u64>()) {
            let mut x = seed;
            let m = Array2::from_shape_fn((r, c), |_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (x >> 59) as u64
            });
            prop_assert_eq!(matched_total(&m), brute_force(&m));
        }

        #[test]
        fn clustering_is_a_partition(
            pts in prop::collection::vec(-5.0f64..5.0, 1..40),
            t in -4.0f64..0.0,
        ) {
            let emb = Array2::from_shape_vec((pts.len(), 1), pts.clone()).unwrap();
            let a = kmedoid_cluster(emb.view(), SimilarityKind::NegEuclidean, t, &KmedoidConfig::default()).unwrap();
            prop_assert_eq!(a.cluster_of.len(), pts.len());
            let mut seen = vec![0usize; a.cluster_count()];
            for &c in &a.cluster_of {
                prop_assert!(c < a.cluster_count());
                seen[c] += 1;
            }
            prop_assert!(seen.iter().all(|&n| n > 0));
            for (c, &m) in a.medoid_of.iter().enumerate() {
                prop_assert_eq!(a.cluster_of[m], c);
            }
        }

        #[test]
        fn score_ignores_relabeling(
            cl in prop::collection::vec(0usize..4, 2..30),
            sp in prop::collection::vec(0usize..3, 2..30),
            shift in 1usize..4,
        ) {
            let n = cl.len().min(sp.len());
            let dense = |v: &[usize]| {
                let mut ids: Vec<usize> = v.to_vec();
                ids.sort();
                ids.dedup();
                v.iter().map(|x| ids.binary_search(x).unwrap()).collect::<Vec<_>>()
            };
            let cl = dense(&cl[..n]);
            let k = cl.iter().max().unwrap() + 1;
            let mk = |map: &dyn Fn(usize) -> usize| {
                let cluster_of: Vec<usize> = cl.iter().map(|&c| map(c)).collect();
                let mut medoid_of = vec![0; k];
                for (i, &c) in cluster_of.iter().enumerate() {
                    medoid_of[c] = i;
                }
                ClusterAssignment { cluster_of, medoid_of }
            };
            let a = mk(&|c| c);
            let b = mk(&|c| (c + shift) % k);
            let truth: Vec<String> = sp[..n].iter().map(|s| format!("s{s}")).collect();
            let renamed: Vec<String> = sp[..n].iter().map(|s| format!("t{}", 2 - s)).collect();
            let ra = score(&a, &truth, &hungarian_align(&a, &truth));
            let rb = score(&b, &renamed, &hungarian_align(&b, &renamed));
            prop_assert_eq!(hungarian_align(&a, &truth).total_overlap, hungarian_align(&b, &renamed).total_overlap);
            // with several optimal matchings the F1 values depend on which is found
            let (m, _) = contingency(&a, &truth);
            prop_assume!(optimal_matchings(&m) == 1);
            let mut fa: Vec<u64> = ra.per_species.iter().map(|s| (s.f1 * 1e9).round() as u64).collect();
            let mut fb: Vec<u64> = rb.per_species.iter().map(|s| (s.f1 * 1e9).round() as u64).collect();
            fa.sort();
            fb.sort();
            prop_assert_eq!(fa, fb);
            prop_assert_eq!(ra.histogram, rb.histogram);
        }

        #[test]
        fn affine_score_transform_keeps_clusters(
            pts in prop::collection::vec(-5.0f64..5.0, 2..30),
            labs in prop::collection::vec(0usize..3, 2..30),
            e in -4i32..5,
        ) {
            // powers of two scale exactly, so no ties are created or broken
            let a = 2f64.powi(e);
            let n = pts.len().min(labs.len());
            let emb = Array2::from_shape_vec((n, 1), pts[..n].to_vec()).unwrap();
            let s = score_matrix(emb.view(), SimilarityKind::NegEuclidean).unwrap();
            // centroid scores transformed the same way as the pair scores
            let truth: Vec<String> = labs[..n].iter().map(|l| l.to_string()).collect();
            let t = calibrate_threshold(emb.view(), &truth, SimilarityKind::NegEuclidean, 70.0).unwrap();
            let cfg = KmedoidConfig::default();
            let base = kmedoid_from_scores(&s, t, &cfg);
            let moved = kmedoid_from_scores(&s.mapv(|v| a * v), a * t, &cfg);
            prop_assert_eq!(base, moved);
        }
    }
}
