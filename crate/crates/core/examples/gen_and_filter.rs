//! Generates a small labeled community, writes it as FASTA and applies the
//! length and species-size filters.
//!
//! ```text
//! cargo run --example gen_and_filter
//! ```

use kbin::seqio::{filter_dataset, generate_synthetic, write_fasta, FilterConfig, GeneratorSpec};

fn main() -> kbin::Result<()> {
    let spec = GeneratorSpec {
        genome_count: 3,
        genome_length: 12_000,
        reads_per_genome: 15,
        read_length: 3_000,
        markov_order: 2,
        seed: 11,
    };
    let reads = generate_synthetic(&spec)?;
    println!("{} reads from {} species", reads.len(), reads.species_count());

    let mut fasta = Vec::new();
    write_fasta(&reads, &mut fasta)?;
    let text = String::from_utf8_lossy(&fasta);
    for line in text.lines().take(3) {
        println!("{line}");
    }

    // shorter reads than the default minimum: lower it and keep species
    // with at least 12 reads
    let cfg = FilterConfig {
        min_len: 2_000,
        min_per_species: 12,
        ..Default::default()
    };
    let kept = filter_dataset(reads, &cfg);
    println!("{} reads kept after filtering", kept.len());
    Ok(())
}
