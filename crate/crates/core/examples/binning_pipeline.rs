//! Bins a synthetic community with every embedding model and prints the
//! F1 histogram of each.
//!
//! ```text
//! cargo run --release --example binning_pipeline -- [seed]
//! ```

use std::time::Instant;

use kbin::binning::{end_to_end_bin, render_histogram, BinModel};
use kbin::linear::{fit_poisson, PoissonTrainConfig};
use kbin::nonlinear::{train_nl, NlTrainConfig};
use kbin::seqio::{GeneratorSpec, SyntheticGenomes};

fn main() -> kbin::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("seed must be an integer"))
        .unwrap_or(1);
    let spec = GeneratorSpec {
        genome_count: 8,
        genome_length: 20_000,
        reads_per_genome: 100,
        read_length: 2_000,
        markov_order: 1,
        seed,
    };
    let genomes = SyntheticGenomes::generate(&spec)?;
    let reads = genomes.sample_reads(100, 2_000, seed + 1, "")?;
    let calib = genomes.sample_reads(20, 2_000, seed + 2, "cal_")?;
    let train = genomes.sample_reads(100, 2_000, seed + 3, "tr_")?;

    let t = Instant::now();
    let pois = fit_poisson(
        &train,
        4,
        &PoissonTrainConfig {
            epochs: 1000,
            seed,
            ..Default::default()
        },
    )?;
    println!("poisson trained in {:.1?}", t.elapsed());

    let t = Instant::now();
    let nl = train_nl(
        &train,
        &NlTrainConfig {
            epochs: 50,
            minibatch: 512,
            negatives_per_positive: 20,
            seed,
            ..Default::default()
        },
    )?;
    println!(
        "nl trained in {:.1?}, loss {:.4} -> {:.4}",
        t.elapsed(),
        nl.trace[0],
        nl.trace[nl.trace.len() - 1]
    );

    let models = [
        BinModel::KmerCosine { k: 4 },
        BinModel::KmerL1 { k: 4 },
        BinModel::KmerL1 { k: 2 },
        BinModel::Pois(pois.embeddings),
        BinModel::Nl(nl.params),
    ];
    for model in &models {
        let t = Instant::now();
        let run = end_to_end_bin(&reads, model, &calib, 70.0)?;
        println!(
            "{} ({:?}): {} clusters, {} of 8 species above 0.9 F1 [{:.1?}]",
            run.model,
            model_k(model),
            run.report.cluster_count,
            run.report.detected_high_quality,
            t.elapsed()
        );
        print!("{}", render_histogram(&run.report));
    }
    Ok(())
}

fn model_k(m: &BinModel) -> Option<usize> {
    match m {
        BinModel::KmerCosine { k } | BinModel::KmerL1 { k } => Some(*k),
        _ => None,
    }
}
