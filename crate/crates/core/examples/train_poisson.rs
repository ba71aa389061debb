//! Fits Poisson k-mer embeddings on co-occurrence counts and embeds reads as
//! the mean of their k-mer vectors.
//!
//! ```text
//! cargo run --release --example train_poisson
//! ```

use kbin::linear::{embed_read_pois, fit_poisson, PoissonTrainConfig};
use kbin::seqio::{generate_synthetic, GeneratorSpec};

fn main() -> kbin::Result<()> {
    let d = generate_synthetic(&GeneratorSpec {
        genome_count: 2,
        genome_length: 10_000,
        reads_per_genome: 30,
        read_length: 1_000,
        markov_order: 1,
        seed: 5,
    })?;
    let cfg = PoissonTrainConfig {
        epochs: 300,
        dim: 16,
        seed: 5,
        ..Default::default()
    };
    let fit = fit_poisson(&d, 3, &cfg)?;
    println!(
        "loss {:.4} -> {:.4} over {} epochs",
        fit.trace[0],
        fit.trace[fit.trace.len() - 1],
        cfg.epochs
    );

    let reads = d.reads();
    let a = embed_read_pois(&reads[0], &fit.embeddings)?;
    let b = embed_read_pois(&reads[1], &fit.embeddings)?;
    let c = embed_read_pois(&reads[reads.len() - 1], &fit.embeddings)?;
    let dist = |x: &[f64], y: &[f64]| -> f64 {
        x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
    };
    println!(
        "same genome distance {:.4}, different genome distance {:.4}",
        dist(&a, &b),
        dist(&a, &c)
    );
    Ok(())
}
