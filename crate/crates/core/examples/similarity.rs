//! Cosine similarity of two small embedding batches.

use asem::embedding::{cosine_similarity_matrix, Matrix};

fn main() -> asem::Result<()> {
    let audio = Matrix::from_rows(&[[1.0, 0.0, 1.0], [0.0, 2.0, 0.0], [3.0, 1.0, 0.0]])?;
    let text = Matrix::from_rows(&[[2.0, 0.1, 2.0], [0.0, 1.0, 0.2], [1.0, 0.5, 0.0]])?;
    let s = cosine_similarity_matrix(&audio, &text)?;
    println!("s[i][j] = cos(audio_i, text_j):");
    for row in s.matrix().row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:+.4}")).collect();
        println!("  {}", cells.join("  "));
    }
    Ok(())
}
