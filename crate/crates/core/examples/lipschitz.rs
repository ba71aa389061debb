//! Checks that profile l1 distance and Hamming distance bound each other on
//! random and mutated read pairs.
//!
//! ```text
//! cargo run --release --example lipschitz
//! ```

use kbin::identifiability::verify_lipschitz;
use kbin::seqio::{generate_synthetic, GeneratorSpec};

fn main() -> kbin::Result<()> {
    let d = generate_synthetic(&GeneratorSpec {
        genome_count: 2,
        genome_length: 5_000,
        reads_per_genome: 20,
        read_length: 100,
        markov_order: 1,
        seed: 3,
    })?;
    for k in 2..=6 {
        let c = verify_lipschitz(&d, k, 2_000, 9)?;
        println!(
            "k={k}: {} pairs, {} violations, {} same-profile pairs, largest l1/d_H = {:.2} (bound {})",
            c.pairs_checked, c.violations, c.same_profile_pairs, c.max_upper_ratio, c.alpha_u
        );
    }
    Ok(())
}
