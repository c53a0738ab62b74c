//! Generates the 256-concept synthetic dataset, writes it to disk and loads
//! it back.
//!
//! ```text
//! cargo run --example synthetic_dataset -- /tmp/synthetic
//! ```

use std::path::PathBuf;

use asem::data::{
    generate_synthetic, load_dataset, plan_batches, save_dataset, Split, SyntheticSpec,
};

fn main() -> asem::Result<()> {
    let dir = std::env::args().nth(1).map_or_else(
        || std::env::temp_dir().join("asem-synthetic"),
        PathBuf::from,
    );
    let spec = SyntheticSpec {
        n_concepts: 256,
        ..Default::default()
    };
    let dataset = generate_synthetic(&spec)?;
    let manifest = save_dataset(&dataset, &dir)?;
    let loaded = load_dataset(&manifest)?;
    assert_eq!(loaded, dataset);
    println!("wrote {}", manifest.display());
    for (split, s) in &loaded.splits {
        println!(
            "{split:>5}: {} audios, {} captions",
            s.audio_features().rows(),
            s.n_pairs()
        );
    }
    let plan = plan_batches(loaded.split(Split::Train)?, 32, 0, 0)?;
    println!(
        "epoch 0: {} batches of 32, {} pairs dropped",
        plan.batches.len(),
        plan.dropped
    );
    Ok(())
}
