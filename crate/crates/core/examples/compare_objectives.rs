//! All four objectives over three seeds, reported as mean±std.

use asem::data::{generate_synthetic, SyntheticSpec};
use asem::report::results_markdown;
use asem::trainer::{run_comparison, Comparison, DatasetSource, ObjectiveKind, TrainConfig};

fn main() -> asem::Result<()> {
    let spec = SyntheticSpec {
        n_concepts: 256,
        ..Default::default()
    };
    let cmp = Comparison {
        base: TrainConfig {
            dataset: DatasetSource::Synthetic(spec.clone()),
            epochs: 15,
            embed_dim: 64,
            seeds: vec![0, 1, 2],
            ..Default::default()
        },
        objectives: ObjectiveKind::ALL.to_vec(),
        batch_sizes: vec![32],
    };
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let reports = run_comparison(&cmp, &generate_synthetic(&spec)?, jobs)?;
    print!("{}", results_markdown(&reports));
    Ok(())
}
