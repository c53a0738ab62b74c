//! Trains one objective on synthetic data and prints the per-epoch curve.
//!
//! ```text
//! cargo run --release --example train_single -- nt-xent
//! ```

use asem::data::{generate_synthetic, Split, SyntheticSpec};
use asem::trainer::{evaluate_model, train_one, DatasetSource, ObjectiveKind, TrainConfig};

fn main() -> asem::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "nt-xent".into());
    let objective: ObjectiveKind = serde_json::from_value(serde_json::Value::String(name))?;
    let spec = SyntheticSpec {
        n_concepts: 256,
        ..Default::default()
    };
    let config = TrainConfig {
        dataset: DatasetSource::Synthetic(spec.clone()),
        objective,
        epochs: 20,
        embed_dim: 128,
        ..Default::default()
    };
    let dataset = generate_synthetic(&spec)?;
    let outcome = train_one(&config, &dataset, 0)?;
    println!("epoch        lr      loss  val sum");
    for e in &outcome.epochs {
        println!(
            "{:>5} {:>9.1e} {:>9.4} {:>8.3}",
            e.epoch,
            e.lr,
            e.train_loss,
            e.val.sum_of_recalls()
        );
    }
    println!("best epoch: {:?}", outcome.best_epoch);
    print!(
        "{}",
        evaluate_model(&outcome.best, dataset.split(Split::Test)?)?.to_table()
    );
    Ok(())
}
