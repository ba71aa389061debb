//! Trains the non-linear read embedder on read halves, saves and reloads it
//! and embeds whole reads.
//!
//! ```text
//! cargo run --release --example train_nl
//! ```

use kbin::nonlinear::{embed_reads_nl, read_kbnl, train_nl, write_kbnl, LossKind, NlTrainConfig};
use kbin::seqio::{generate_synthetic, GeneratorSpec};

fn main() -> kbin::Result<()> {
    let d = generate_synthetic(&GeneratorSpec {
        genome_count: 3,
        genome_length: 10_000,
        reads_per_genome: 40,
        read_length: 1_000,
        markov_order: 1,
        seed: 8,
    })?;
    for loss in [LossKind::Bernoulli, LossKind::Poisson, LossKind::Hinge] {
        let cfg = NlTrainConfig {
            k: 3,
            hidden: 64,
            d_out: 16,
            epochs: 20,
            minibatch: 256,
            negatives_per_positive: 5,
            loss,
            seed: 8,
            ..Default::default()
        };
        let fit = train_nl(&d, &cfg)?;
        println!(
            "{loss:?}: loss {:.4} -> {:.4}",
            fit.trace[0],
            fit.trace[fit.trace.len() - 1]
        );

        let mut file = Vec::new();
        write_kbnl(&fit.params, &mut file)?;
        let model = read_kbnl(file.as_slice())?;
        let emb = embed_reads_nl(d.reads(), &model)?;
        println!("  {} bytes on disk, embeddings {:?}", file.len(), emb.dim());
    }
    Ok(())
}
