//! Sequence ingestion: FASTA/FASTQ parsing, label tables, the length and
//! abundance filters used for evaluation sets, and a seeded Markov-chain
//! genome simulator for desk-scale experiments.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};

/// A sequencing read. Bases are stored uppercased; symbols outside
/// `ACGT` are kept and skipped later by k-mer extraction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Read {
    pub id: String,
    pub bases: Vec<u8>,
    pub label: Option<String>,
}

impl Read {
    pub fn new(id: impl Into<String>, bases: impl AsRef<[u8]>) -> Self {
        Read {
            id: id.into(),
            bases: bases.as_ref().to_ascii_uppercase(),
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    /// True when every base is one of `A`, `C`, `G`, `T`.
    pub fn is_unambiguous(&self) -> bool {
        self.bases.iter().all(|b| matches!(b, b'A' | b'C' | b'G' | b'T'))
    }

    pub fn as_str(&self) -> &str {
        // bases are validated ASCII letters
        std::str::from_utf8(&self.bases).unwrap_or("")
    }
}

/// An ordered collection of reads with pairwise distinct ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    reads: Vec<Read>,
}

impl Dataset {
    /// Builds a dataset, rejecting duplicate read ids.
    pub fn new(reads: Vec<Read>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(reads.len());
        for r in &reads {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::data(format!("duplicate read id {}", r.id)));
            }
        }
        Ok(Dataset { reads })
    }

    pub fn reads(&self) -> &[Read] {
        &self.reads
    }

    pub fn into_reads(self) -> Vec<Read> {
        self.reads
    }

    pub fn len(&self) -> usize {
        self.reads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reads.is_empty()
    }

    /// Number of distinct non-empty labels (0 for an unlabeled dataset).
    pub fn species_count(&self) -> usize {
        self.species().len()
    }

    /// Distinct labels in sorted order.
    pub fn species(&self) -> Vec<String> {
        self.reads
            .iter()
            .filter_map(|r| r.label.as_deref())
            .filter(|l| !l.is_empty())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(str::to_owned)
            .collect()
    }

    /// True when every read carries a label.
    pub fn is_labeled(&self) -> bool {
        !self.reads.is_empty() && self.reads.iter().all(|r| r.label.is_some())
    }

    pub fn labels(&self) -> Vec<Option<String>> {
        self.reads.iter().map(|r| r.label.clone()).collect()
    }
}

fn validate_bases(line: &[u8], lineno: usize, out: &mut Vec<u8>) -> Result<()> {
    for &b in line {
        if b.is_ascii_alphabetic() {
            out.push(b.to_ascii_uppercase());
        } else if !b.is_ascii_whitespace() {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("invalid sequence character {:?}", b as char),
            });
        }
    }
    Ok(())
}

fn header_id(header: &str, lineno: usize) -> Result<String> {
    match header.split_whitespace().next() {
        Some(id) => Ok(id.to_string()),
        None => Err(Error::Parse {
            line: lineno,
            msg: "malformed header: missing read id".into(),
        }),
    }
}

/// Parses FASTA (or FASTQ, detected from a leading `@`) into a dataset.
///
/// The header token before the first whitespace becomes the read id, bases
/// are uppercased and multi-line records are joined. Errors carry the
/// 1-based line number of the offending line or record header.
pub fn parse_fasta<R: BufRead>(source: R) -> Result<Dataset> {
    let mut lines = Vec::new();
    for line in source.split(b'\n') {
        let mut line = line?;
        if line.last() == Some(&b'\r') {
            line.pop();
        }
        lines.push(line);
    }
    let first = lines.iter().find(|l| !l.iter().all(u8::is_ascii_whitespace));
    if matches!(first.and_then(|l| l.first()), Some(b'@')) {
        return parse_fastq_lines(&lines);
    }

    let mut reads = Vec::new();
    // (id, header line, bases)
    let mut current: Option<(String, usize, Vec<u8>)> = None;
    for (idx, line) in lines.iter().enumerate() {
        let lineno = idx + 1;
        if let Some(rest) = line.strip_prefix(b">") {
            if let Some((id, at, bases)) = current.take() {
                reads.push(finish_record(id, at, bases)?);
            }
            let header = String::from_utf8_lossy(rest);
            current = Some((header_id(&header, lineno)?, lineno, Vec::new()));
        } else if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        } else {
            match current.as_mut() {
                Some((_, _, bases)) => validate_bases(line, lineno, bases)?,
                None => {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: "malformed header: sequence data before any '>' record".into(),
                    })
                }
            }
        }
    }
    if let Some((id, at, bases)) = current.take() {
        reads.push(finish_record(id, at, bases)?);
    }
    Dataset::new(reads)
}

fn finish_record(id: String, header_line: usize, bases: Vec<u8>) -> Result<Read> {
    if bases.is_empty() {
        return Err(Error::Parse {
            line: header_line,
            msg: "empty sequence record".into(),
        });
    }
    Ok(Read {
        id,
        bases,
        label: None,
    })
}

fn parse_fastq_lines(lines: &[Vec<u8>]) -> Result<Dataset> {
    let mut reads = Vec::new();
    let mut idx = 0;
    while idx < lines.len() {
        if lines[idx].iter().all(u8::is_ascii_whitespace) {
            idx += 1;
            continue;
        }
        let lineno = idx + 1;
        let header = lines[idx].strip_prefix(b"@").ok_or_else(|| Error::Parse {
            line: lineno,
            msg: "malformed FASTQ header: expected '@'".into(),
        })?;
        let id = header_id(&String::from_utf8_lossy(header), lineno)?;
        let seq = lines.get(idx + 1).ok_or_else(|| Error::Parse {
            line: lineno,
            msg: "truncated FASTQ record".into(),
        })?;
        let mut bases = Vec::with_capacity(seq.len());
        validate_bases(seq, lineno + 1, &mut bases)?;
        match lines.get(idx + 2) {
            Some(plus) if plus.first() == Some(&b'+') => {}
            _ => {
                return Err(Error::Parse {
                    line: lineno + 2,
                    msg: "malformed FASTQ separator: expected '+'".into(),
                })
            }
        }
        if lines.get(idx + 3).is_none() {
            return Err(Error::Parse {
                line: lineno + 3,
                msg: "truncated FASTQ record: missing quality line".into(),
            });
        }
        reads.push(finish_record(id, lineno, bases)?);
        idx += 4;
    }
    Dataset::new(reads)
}

/// Writes reads as FASTA with sequence lines wrapped at 60 columns.
pub fn write_fasta<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    for r in dataset.reads() {
        writeln!(out, ">{}", r.id)?;
        for chunk in r.bases.chunks(60) {
            out.write_all(chunk)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Applies a `read_id<TAB>species_id` table to `dataset`.
pub fn load_labels<R: BufRead>(source: R, dataset: Dataset) -> Result<Dataset> {
    let mut index: HashMap<String, usize> = HashMap::new();
    for (i, r) in dataset.reads().iter().enumerate() {
        index.insert(r.id.clone(), i);
    }
    let mut assigned: HashMap<String, String> = HashMap::new();
    let mut reads = dataset.into_reads();
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (id, species) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: idx + 1,
            msg: "expected read_id<TAB>species_id".into(),
        })?;
        let species = species.trim();
        let pos = *index
            .get(id)
            .ok_or_else(|| Error::data(format!("unknown read id {id}")))?;
        if let Some(prev) = assigned.get(id) {
            if prev != species {
                return Err(Error::data(format!("conflicting label for {id}")));
            }
            continue;
        }
        assigned.insert(id.to_string(), species.to_string());
        reads[pos].label = Some(species.to_string());
    }
    Ok(Dataset { reads })
}

/// Reads a `read_id<TAB>species_id` table in file order.
pub fn parse_label_table<R: BufRead>(source: R) -> Result<Vec<(String, String)>> {
    let mut rows = Vec::new();
    let mut seen: HashMap<String, String> = HashMap::new();
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (id, species) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: idx + 1,
            msg: "expected read_id<TAB>species_id".into(),
        })?;
        let species = species.trim();
        match seen.get(id) {
            Some(prev) if prev != species => {
                return Err(Error::data(format!("conflicting label for {id}")))
            }
            Some(_) => continue,
            None => {
                seen.insert(id.to_string(), species.to_string());
                rows.push((id.to_string(), species.to_string()));
            }
        }
    }
    Ok(rows)
}

/// Writes the labels of all labeled reads as `read_id<TAB>species_id`.
pub fn write_labels<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    for r in dataset.reads() {
        if let Some(label) = &r.label {
            writeln!(out, "{}\t{}", r.id, label)?;
        }
    }
    Ok(())
}

/// Length and abundance filters applied to evaluation sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterConfig {
    pub max_len: usize,
    pub min_len: usize,
    pub min_per_species: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            max_len: 10_000,
            min_len: 2_500,
            min_per_species: 10,
        }
    }
}

/// Truncates reads longer than `max_len`, drops reads shorter than
/// `min_len`, then drops every species left with fewer than
/// `min_per_species` reads. Unlabeled reads are not subject to the
/// species floor.
pub fn filter_dataset(dataset: Dataset, cfg: &FilterConfig) -> Dataset {
    let mut reads: Vec<Read> = dataset
        .into_reads()
        .into_iter()
        .map(|mut r| {
            r.bases.truncate(cfg.max_len);
            r
        })
        .filter(|r| r.len() >= cfg.min_len)
        .collect();

    let mut per_species: HashMap<String, usize> = HashMap::new();
    for r in &reads {
        if let Some(l) = &r.label {
            *per_species.entry(l.clone()).or_default() += 1;
        }
    }
    reads.retain(|r| match &r.label {
        Some(l) => per_species[l] >= cfg.min_per_species,
        None => true,
    });
    Dataset { reads }
}

/// Parameters of the synthetic genome/read simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorSpec {
    pub genome_count: usize,
    pub genome_length: usize,
    pub reads_per_genome: usize,
    pub read_length: usize,
    pub markov_order: usize,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.genome_count == 0
            || self.genome_length == 0
            || self.reads_per_genome == 0
            || self.read_length == 0
        {
            return Err(Error::Usage(
                "genome_count, genome_length, reads_per_genome and read_length must be positive"
                    .into(),
            ));
        }
        if self.read_length > self.genome_length {
            return Err(Error::Usage(format!(
                "read length {} exceeds genome length {}",
                self.read_length, self.genome_length
            )));
        }
        if self.markov_order > 8 {
            return Err(Error::Usage("markov_order above 8 is not supported".into()));
        }
        Ok(())
    }
}

const BASES: [u8; 4] = *b"ACGT";

/// Reference genomes drawn from per-genome random Markov chains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticGenomes {
    pub genomes: Vec<Vec<u8>>,
}

impl SyntheticGenomes {
    /// Draws `spec.genome_count` genomes. Every genome gets its own
    /// transition table with rows sampled from a flat Dirichlet.
    pub fn generate(spec: &GeneratorSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let states = 4usize.pow(spec.markov_order as u32);
        let genomes = (0..spec.genome_count)
            .map(|_| {
                let table: Vec<[f64; 4]> = (0..states)
                    .map(|_| {
                        let w: [f64; 4] = std::array::from_fn(|_| rng.sample::<f64, _>(Exp1));
                        let s: f64 = w.iter().sum();
                        w.map(|x| x / s)
                    })
                    .collect();
                let mut genome = Vec::with_capacity(spec.genome_length);
                let mut state = 0usize;
                for pos in 0..spec.genome_length {
                    let digit = if pos < spec.markov_order {
                        rng.random_range(0..4)
                    } else {
                        let u: f64 = rng.random();
                        let row = &table[state];
                        let mut acc = 0.0;
                        let mut pick = 3;
                        for (d, p) in row.iter().enumerate() {
                            acc += p;
                            if u < acc {
                                pick = d;
                                break;
                            }
                        }
                        pick
                    };
                    genome.push(BASES[digit]);
                    if states > 1 {
                        state = (state * 4 + digit) % states;
                    }
                }
                genome
            })
            .collect();
        Ok(SyntheticGenomes { genomes })
    }

    /// Samples `per_genome` reads of `read_length` uniformly from every
    /// genome. Read ids are `{prefix}g{genome}_r{index}`, labels `g{genome}`.
    pub fn sample_reads(
        &self,
        per_genome: usize,
        read_length: usize,
        seed: u64,
        prefix: &str,
    ) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut reads = Vec::with_capacity(per_genome * self.genomes.len());
        for (g, genome) in self.genomes.iter().enumerate() {
            if read_length == 0 || read_length > genome.len() {
                return Err(Error::Usage(format!(
                    "read length {read_length} exceeds genome length {}",
                    genome.len()
                )));
            }
            for i in 0..per_genome {
                let start = rng.random_range(0..=genome.len() - read_length);
                reads.push(Read {
                    id: format!("{prefix}g{g}_r{i}"),
                    bases: genome[start..start + read_length].to_vec(),
                    label: Some(format!("g{g}")),
                });
            }
        }
        Dataset::new(reads)
    }
}

/// Generates a labeled synthetic read set. Identical specs give identical
/// datasets.
/// Offset that separates the read-sampling stream from genome drawing.
pub const READ_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn generate_synthetic(spec: &GeneratorSpec) -> Result<Dataset> {
    let genomes = SyntheticGenomes::generate(spec)?;
    genomes.sample_reads(
        spec.reads_per_genome,
        spec.read_length,
        spec.seed ^ READ_STREAM,
        "",
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Dataset> {
        parse_fasta(s.as_bytes())
    }

    #[test]
    fn minimal_fasta() {
        let d = parse(">r1\nACGT\n").unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.reads()[0].id, "r1");
        assert_eq!(d.reads()[0].bases, b"ACGT");
        assert_eq!(d.reads()[0].len(), 4);
    }

    #[test]
    fn multiline_and_case_folded() {
        let d = parse(">r1 some description\nac\ngt\n").unwrap();
        assert_eq!(d.reads()[0].id, "r1");
        assert_eq!(d.reads()[0].bases, b"ACGT");
    }

    #[test]
    fn empty_record_reports_line() {
        let err = parse(">r1\n\n>r2\nAC\n").unwrap_err();
        assert_eq!(err.to_string(), "empty sequence record at line 1");
    }

    #[test]
    fn sequence_before_header() {
        let err = parse("ACGT\n>r1\nAC\n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(parse(">r1\nA\n>r1\nC\n").is_err());
    }

    #[test]
    fn ambiguity_codes_kept() {
        let d = parse(">r1\nACNGT\n").unwrap();
        assert_eq!(d.reads()[0].bases, b"ACNGT");
        assert!(!d.reads()[0].is_unambiguous());
    }

    #[test]
    fn fastq_quality_discarded() {
        let d = parse("@q1 x\nacgt\n+\nIIII\n@q2\nGG\n+q2\nII\n").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.reads()[0].bases, b"ACGT");
        assert_eq!(d.reads()[1].id, "q2");
    }

    #[test]
    fn fasta_is_wrapped_at_60() {
        let d = Dataset::new(vec![Read::new("x", vec![b'A'; 130])]).unwrap();
        let mut buf = Vec::new();
        write_fasta(&d, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lens: Vec<usize> = text.lines().skip(1).map(str::len).collect();
        assert_eq!(lens, vec![60, 60, 10]);
    }

    #[test]
    fn labels_apply_and_count() {
        let d = parse(">r1\nACGT\n").unwrap();
        let d = load_labels("r1\tsA\n".as_bytes(), d).unwrap();
        assert_eq!(d.reads()[0].label.as_deref(), Some("sA"));
        assert_eq!(d.species_count(), 1);
    }

    #[test]
    fn unknown_label_id() {
        let d = parse(">r1\nACGT\n").unwrap();
        let err = load_labels("r9\tsA\n".as_bytes(), d).unwrap_err();
        assert_eq!(err.to_string(), "unknown read id r9");
    }

    #[test]
    fn conflicting_label() {
        let d = parse(">r1\nACGT\n").unwrap();
        let err = load_labels("r1\tsA\nr1\tsB\n".as_bytes(), d).unwrap_err();
        assert_eq!(err.to_string(), "conflicting label for r1");
    }

    fn labeled(len: usize, species: &str, n: usize, tag: &str) -> Vec<Read> {
        (0..n)
            .map(|i| Read::new(format!("{tag}{i}"), vec![b'A'; len]).with_label(species))
            .collect()
    }

    #[test]
    fn filter_rules() {
        let mut reads = labeled(12_000, "a", 10, "a");
        reads.extend(labeled(2_499, "a", 1, "short"));
        reads.extend(labeled(3_000, "b", 9, "b"));
        let d = filter_dataset(Dataset::new(reads).unwrap(), &FilterConfig::default());
        assert_eq!(d.len(), 10);
        assert!(d.reads().iter().all(|r| r.len() == 10_000));
        assert_eq!(d.species(), vec!["a".to_string()]);
    }

    #[test]
    fn generator_is_deterministic() {
        let spec = GeneratorSpec {
            genome_count: 2,
            genome_length: 1000,
            reads_per_genome: 5,
            read_length: 100,
            markov_order: 1,
            seed: 7,
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert_eq!(a.species_count(), 2);
    }

    #[test]
    fn single_genome_single_label() {
        let spec = GeneratorSpec {
            genome_count: 1,
            genome_length: 500,
            reads_per_genome: 7,
            read_length: 50,
            markov_order: 2,
            seed: 1,
        };
        let d = generate_synthetic(&spec).unwrap();
        assert_eq!(d.species_count(), 1);
    }

    #[test]
    fn full_length_reads_equal_genome() {
        let spec = GeneratorSpec {
            genome_count: 2,
            genome_length: 64,
            reads_per_genome: 3,
            read_length: 64,
            markov_order: 0,
            seed: 3,
        };
        let genomes = SyntheticGenomes::generate(&spec).unwrap();
        let d = generate_synthetic(&spec).unwrap();
        for r in d.reads() {
            let g: usize = r.label.as_ref().unwrap()[1..].parse().unwrap();
            assert_eq!(r.bases, genomes.genomes[g]);
        }
    }

    #[test]
    fn read_longer_than_genome_rejected() {
        let spec = GeneratorSpec {
            genome_count: 1,
            genome_length: 10,
            reads_per_genome: 1,
            read_length: 11,
            markov_order: 1,
            seed: 0,
        };
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn different_seeds_give_different_genomes() {
        let mk = |seed| GeneratorSpec {
            genome_count: 2,
            genome_length: 1000,
            reads_per_genome: 1,
            read_length: 10,
            markov_order: 1,
            seed,
        };
        let a = SyntheticGenomes::generate(&mk(1)).unwrap();
        let b = SyntheticGenomes::generate(&mk(2)).unwrap();
        assert_ne!(a.genomes[0], b.genomes[0]);
        assert_ne!(a.genomes[0], a.genomes[1]);
    }
}
