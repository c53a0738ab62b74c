//! Central finite differences against the analytic gradient of a whole
//! batch step: both projection heads, normalization, similarity and loss.

use asem::embedding::{l2_normalize_rows, similarity_of_normalized, Matrix};
use asem::encoder::DualEncoder;
use asem::objectives::Objective;
use asem::trainer::batch_gradients;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loss(model: &DualEncoder, objective: &Objective, xa: &Matrix, xt: &Matrix) -> asem::Result<f64> {
    let a = l2_normalize_rows(&model.audio.embed(xa)?)?.into_result()?;
    let t = l2_normalize_rows(&model.text.embed(xt)?)?.into_result()?;
    Ok(objective
        .evaluate(&similarity_of_normalized(&a, &t)?)?
        .value)
}

fn main() -> asem::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (b, d_a, d_t) = (5, 6, 4);
    let xa = Matrix::from_fn(b, d_a, |_, _| rng.random_range(-1.0..1.0));
    let xt = Matrix::from_fn(b, d_t, |_, _| rng.random_range(-1.0..1.0));
    let h = 1e-5;
    for name in ["triplet-sum", "triplet-max", "triplet-weighted", "nt-xent"] {
        let objective = Objective::from_name(name)?;
        let mut model = DualEncoder::init(d_a, d_t, 8, 3, 1)?;
        let (_, ga, gt) = batch_gradients(&model, &objective, &xa, &xt)?.expect("finite batch");
        let analytic: Vec<f64> = ga
            .tensors()
            .into_iter()
            .chain(gt.tensors())
            .flatten()
            .copied()
            .collect();

        let mut worst: f64 = 0.0;
        let mut k = 0;
        for ti in 0..8 {
            for i in 0..model.tensors()[ti].len() {
                let orig = model.tensors()[ti][i];
                model.tensors_mut()[ti][i] = orig + h;
                let up = loss(&model, &objective, &xa, &xt)?;
                model.tensors_mut()[ti][i] = orig - h;
                let down = loss(&model, &objective, &xa, &xt)?;
                model.tensors_mut()[ti][i] = orig;
                let numeric = (up - down) / (2.0 * h);
                worst = worst.max((numeric - analytic[k]).abs());
                k += 1;
            }
        }
        println!("{name:>16}: {k} parameters, max |analytic - numeric| = {worst:.2e}");
    }
    Ok(())
}
