//! Which reads are determined by their k-mer profile, and a read that shares
//! the profile when one is not.
//!
//! ```text
//! cargo run --release --example identifiability
//! ```

use kbin::identifiability::{
    check_conditions, counterexample, exhaustive_sweep, oracle_preimages, Reading,
};
use kbin::kmer::{profile_bases, KmerConfig};

fn main() -> kbin::Result<()> {
    for (read, k) in [
        ("ACGTAC", 3),
        ("AACGTT", 3),
        ("ACAGTCAGTA", 2),
    ] {
        let v = check_conditions(read.as_bytes(), k)?;
        let p = profile_bases(read.as_bytes(), &KmerConfig::new(k)?)?;
        let pre = oracle_preimages(&p, read.len())?;
        println!(
            "{read} k={k}: identifiable={} condition={:?} witnesses={:?} preimages={}",
            v.identifiable,
            v.violated_condition,
            v.witness_indices,
            pre.len()
        );
        if let Some(other) = counterexample(read.as_bytes(), k, &v)? {
            println!("  same profile: {}", String::from_utf8_lossy(&other));
        }
    }

    // first reads of length 9 (lexicographic) that break each condition at k=3
    for cond in 1..=3u8 {
        let found = (0..1usize << 18).map(|i| read_of(i, 9)).find(|r| {
            check_conditions(r, 3)
                .map(|v| v.violated_condition == Some(cond))
                .unwrap_or(false)
        });
        if let Some(r) = found {
            let v = check_conditions(&r, 3)?;
            let other = counterexample(&r, 3, &v)?.expect("non-identifiable read");
            println!(
                "condition {cond}: {} witnesses {:?} -> {}",
                String::from_utf8_lossy(&r),
                v.witness_indices.unwrap_or_default(),
                String::from_utf8_lossy(&other)
            );
        }
    }

    let s = exhaustive_sweep(b"ACGT", 8, 3, Reading::Effective, 10)?;
    println!(
        "all {} reads of length 8, k=3: {} identifiable, {} checker/oracle disagreements",
        s.instances,
        s.identifiable,
        s.discrepancies.len()
    );
    Ok(())
}

fn read_of(mut i: usize, len: usize) -> Vec<u8> {
    let mut r = vec![b'A'; len];
    for slot in r.iter_mut().rev() {
        *slot = b"ACGT"[i % 4];
        i /= 4;
    }
    r
}
