//! k-mer profiles of a few reads and the distances between them.
//!
//! ```text
//! cargo run --example profiles
//! ```

use kbin::kmer::{self, KmerConfig};
use kbin::seqio::Read;

fn main() -> kbin::Result<()> {
    let reads = [
        Read::new("a", "ACGTTGCAAGGCTTAACCGGTATGCA"),
        Read::new("b", "ACGTTGCAAGGCTTTACCGGTATGCA"),
        Read::new("c", "GGGGCCCCGGGGCCCCGGGGCCCCGG"),
    ];
    let cfg = KmerConfig::new(4)?;
    let profiles = reads
        .iter()
        .map(|r| kmer::profile(r, &cfg))
        .collect::<kbin::Result<Vec<_>>>()?;
    println!("profile dimension: {}", cfg.dim());
    for (r, p) in reads.iter().zip(&profiles) {
        let top: Vec<String> = p
            .nonzero()
            .take(4)
            .map(|(x, c)| format!("{}:{c}", String::from_utf8_lossy(&kmer::unrank(x, 4))))
            .collect();
        println!("{} total={} first k-mers {}", r.id, p.total, top.join(" "));
    }
    for i in 0..reads.len() {
        for j in i + 1..reads.len() {
            let (p, q) = (&profiles[i], &profiles[j]);
            println!(
                "{}-{}: l1 {:>4}  cosine {:.3}",
                reads[i].id,
                reads[j].id,
                kmer::l1_distance(p, q)?,
                kmer::cosine_similarity(&p.as_f64(), &q.as_f64())?
            );
        }
    }

    // strand-folded profiles merge a k-mer with its reverse complement
    let folded = KmerConfig::new(4)?.folded();
    let fwd = kmer::profile_bases(b"AACCGGTTAC", &folded)?;
    let rev = kmer::profile_bases(&kmer::reverse_complement(b"AACCGGTTAC"), &folded)?;
    println!("folded profiles equal across strands: {}", fwd.counts == rev.counts);
    Ok(())
}
