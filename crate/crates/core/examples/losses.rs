//! The four objectives on one similarity matrix, with their gradients.
//!
//! ```text
//! cargo run --example losses
//! ```

use asem::embedding::SimilarityMatrix;
use asem::objectives::Objective;

fn main() -> asem::Result<()> {
    let s = SimilarityMatrix::from_rows(&[[0.9, 0.2, 0.5], [0.1, 0.8, 0.6], [0.3, 0.4, 0.7]])?;
    for name in ["triplet-sum", "triplet-max", "triplet-weighted", "nt-xent"] {
        let r = Objective::from_name(name)?.evaluate(&s)?;
        println!("{name:>16}: {:.6}", r.value);
        for row in r.grad_s.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:+.4}")).collect();
            println!("{:>18}{}", "", cells.join(" "));
        }
    }
    Ok(())
}
