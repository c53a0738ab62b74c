//! Each objective trained with batch 32 and with batch 128.

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
            embed_dim: 128,
            seeds: vec![0],
            ..Default::default()
        },
        objectives: ObjectiveKind::ALL.to_vec(),
        batch_sizes: vec![32, 128],
    };
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let reports = run_comparison(&cmp, &generate_synthetic(&spec)?, jobs)?;
    print!("{}", results_markdown(&reports));
    Ok(())
}
