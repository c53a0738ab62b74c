//! Recall@k for a hand-written score matrix with five captions per audio.

use asem::embedding::Matrix;
use asem::eval::{evaluate, query_ranks, RetrievalIndex};

fn main() -> asem::Result<()> {
    let index = RetrievalIndex::grouped(4, 5);
    // audio a scores caption t highly when t belongs to a, except audio 3,
    // which prefers the captions of audio 0
    let sims = Matrix::from_fn(4, 20, |a, t| {
        let owner = index.audio_of(t);
        let hit = if a == 3 { owner == 0 } else { owner == a };
        if hit {
            0.9 - 0.01 * t as f64
        } else {
            0.1 * ((a * 7 + t * 3) % 5) as f64
        }
    });
    let ranks = query_ranks(&index, &sims)?;
    println!("caption -> audio ranks: {:?}", ranks.text_to_audio);
    println!("audio -> caption ranks: {:?}", ranks.audio_to_text);
    print!("{}", evaluate(&index, &sims)?.to_table());
    print!("{}", evaluate(&index, &sims)?.to_csv());
    Ok(())
}
