//! Independent reference implementations shared by the integration tests
//! and the acceptance runner. Nothing here calls into the code it checks
//! beyond plain data constructors.

#![allow(dead_code)]

use asem::data::PairedDataset;
use asem::embedding::{Matrix, SimilarityMatrix};
use asem::encoder::{DualEncoder, MlpParams};
use asem::objectives::{Objective, PolynomialWeights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_similarity(rng: &mut impl Rng, b: usize) -> SimilarityMatrix {
    let rows: Vec<Vec<f64>> = (0..b)
        .map(|_| (0..b).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .collect();
    SimilarityMatrix::from_rows(&rows).unwrap()
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn hinge(x: f64) -> f64 {
    x.max(0.0)
}

fn poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .map(|(p, c)| c * x.powi(p as i32))
        .sum()
}

pub fn naive_triplet_sum(s: &SimilarityMatrix, margin: f64) -> f64 {
    let b = s.b();
    let mut total = 0.0;
    for i in 0..b {
        for j in 0..b {
            if i != j {
                total += hinge(margin + s.get(i, j) - s.get(i, i));
                total += hinge(margin + s.get(j, i) - s.get(i, i));
            }
        }
    }
    total / b as f64
}

pub fn naive_triplet_max(s: &SimilarityMatrix, margin: f64) -> f64 {
    let b = s.b();
    let mut total = 0.0;
    for i in 0..b {
        let mut row_best: f64 = 0.0;
        let mut col_best: f64 = 0.0;
        for j in 0..b {
            if i != j {
                row_best = row_best.max(hinge(margin + s.get(i, j) - s.get(i, i)));
                col_best = col_best.max(hinge(margin + s.get(j, i) - s.get(i, i)));
            }
        }
        total += row_best + col_best;
    }
    total / b as f64
}

pub fn naive_triplet_weighted(s: &SimilarityMatrix, w: &PolynomialWeights) -> f64 {
    let b = s.b();
    let mut total = 0.0;
    for i in 0..b {
        let mut row_max = f64::NEG_INFINITY;
        let mut col_max = f64::NEG_INFINITY;
        for j in 0..b {
            if i != j {
                row_max = row_max.max(s.get(i, j));
                col_max = col_max.max(s.get(j, i));
            }
        }
        let pos = poly(&w.pos_coeffs, s.get(i, i));
        total += hinge(pos + poly(&w.neg_coeffs, row_max));
        total += hinge(pos + poly(&w.neg_coeffs, col_max));
    }
    total / b as f64
}

pub fn naive_nt_xent(s: &SimilarityMatrix, temperature: f64) -> f64 {
    let b = s.b();
    let mut total = 0.0;
    for i in 0..b {
        let row: f64 = (0..b).map(|j| (s.get(i, j) / temperature).exp()).sum();
        let col: f64 = (0..b).map(|j| (s.get(j, i) / temperature).exp()).sum();
        let pos = (s.get(i, i) / temperature).exp();
        total += (pos / row).ln() + (pos / col).ln();
    }
    -total / b as f64
}

pub fn naive_loss(objective: &Objective, s: &SimilarityMatrix) -> f64 {
    match objective {
        Objective::TripletSum(c) => naive_triplet_sum(s, c.margin),
        Objective::TripletMax(c) => naive_triplet_max(s, c.margin),
        Objective::TripletWeighted(w) => naive_triplet_weighted(s, w),
        Objective::NtXent(c) => naive_nt_xent(s, c.temperature),
    }
}

pub fn all_objectives() -> Vec<Objective> {
    ["triplet-sum", "triplet-max", "triplet-weighted", "nt-xent"]
        .iter()
        .map(|n| Objective::from_name(n).unwrap())
        .collect()
}

/// Smallest distance of any hinge argument to zero and of any hardest
/// negative to the runner-up, for the losses that have such kinks.
pub fn kink_distance(objective: &Objective, s: &SimilarityMatrix) -> f64 {
    let b = s.b();
    let mut d = f64::INFINITY;
    let gap = |vals: Vec<f64>| {
        let mut v = vals;
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if v.len() >= 2 {
            v[0] - v[1]
        } else {
            f64::INFINITY
        }
    };
    for i in 0..b {
        let row: Vec<f64> = (0..b).filter(|&j| j != i).map(|j| s.get(i, j)).collect();
        let col: Vec<f64> = (0..b).filter(|&j| j != i).map(|j| s.get(j, i)).collect();
        match objective {
            Objective::TripletSum(c) => {
                for v in row.iter().chain(&col) {
                    d = d.min((c.margin + v - s.get(i, i)).abs());
                }
            }
            Objective::TripletMax(c) => {
                for line in [&row, &col] {
                    let m = line.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    d = d
                        .min((c.margin + m - s.get(i, i)).abs())
                        .min(gap(line.clone()));
                }
            }
            Objective::TripletWeighted(w) => {
                for line in [&row, &col] {
                    let m = line.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let t = poly(&w.pos_coeffs, s.get(i, i)) + poly(&w.neg_coeffs, m);
                    d = d.min(t.abs()).min(gap(line.clone()));
                }
            }
            Objective::NtXent(_) => {}
        }
    }
    d
}

/// Naive `ReLU(x W1 + b1) W2 + b2` with explicit loops.
pub fn naive_mlp(p: &MlpParams, x: &Matrix) -> Matrix {
    let (d_in, d_hidden) = p.w1.shape();
    let d_out = p.w2.cols();
    Matrix::from_fn(x.rows(), d_out, |r, o| {
        let mut out = p.b2[o];
        for h in 0..d_hidden {
            let mut pre = p.b1[h];
            for i in 0..d_in {
                pre += x.get(r, i) * p.w1.get(i, h);
            }
            out += pre.max(0.0) * p.w2.get(h, o);
        }
        out
    })
}

fn naive_normalize(m: &Matrix) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| {
        let n = m.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        m.get(i, j) / n
    })
}

/// Cosine similarity of paired batches computed with explicit loops.
pub fn naive_cosine(audio: &Matrix, text: &Matrix) -> Vec<Vec<f64>> {
    let a = naive_normalize(audio);
    let t = naive_normalize(text);
    (0..a.rows())
        .map(|i| {
            (0..t.rows())
                .map(|j| (0..a.cols()).map(|k| a.get(i, k) * t.get(j, k)).sum())
                .collect()
        })
        .collect()
}

/// Loss of the full pipeline, evaluated with naive code only.
pub fn pipeline_loss(objective: &Objective, model: &DualEncoder, xa: &Matrix, xt: &Matrix) -> f64 {
    let s = naive_cosine(&naive_mlp(&model.audio, xa), &naive_mlp(&model.text, xt));
    naive_loss(objective, &SimilarityMatrix::from_rows(&s).unwrap())
}

/// Smallest |pre-activation| of both heads; finite differences are only
/// trusted away from the ReLU kink.
pub fn relu_distance(model: &DualEncoder, xa: &Matrix, xt: &Matrix) -> f64 {
    let mut d = f64::INFINITY;
    for (p, x) in [(&model.audio, xa), (&model.text, xt)] {
        let (d_in, d_hidden) = p.w1.shape();
        for r in 0..x.rows() {
            for h in 0..d_hidden {
                let pre: f64 =
                    p.b1[h] + (0..d_in).map(|i| x.get(r, i) * p.w1.get(i, h)).sum::<f64>();
                d = d.min(pre.abs());
            }
        }
    }
    d
}

/// Relative error `‖a − n‖ / max(‖a‖, ‖n‖)` (0 when both vanish).
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Brute-force recall: sort every candidate list and find the position of
/// the first relevant item.
pub fn full_sort_recalls(
    n_audios: usize,
    text_to_audio: &[usize],
    sims: &Matrix,
    k: usize,
) -> (f64, f64) {
    let n_texts = text_to_audio.len();
    let mut t2a_hits = 0;
    for (t, &target) in text_to_audio.iter().enumerate() {
        let mut order: Vec<usize> = (0..n_audios).collect();
        order.sort_by(|&a, &b| sims.get(b, t).partial_cmp(&sims.get(a, t)).unwrap());
        if order.iter().position(|&a| a == target).unwrap() < k {
            t2a_hits += 1;
        }
    }
    let mut a2t_hits = 0;
    let mut a2t_queries = 0;
    for a in 0..n_audios {
        if !text_to_audio.contains(&a) {
            continue;
        }
        a2t_queries += 1;
        let mut order: Vec<usize> = (0..n_texts).collect();
        order.sort_by(|&x, &y| sims.get(a, y).partial_cmp(&sims.get(a, x)).unwrap());
        if order.iter().position(|&t| text_to_audio[t] == a).unwrap() < k {
            a2t_hits += 1;
        }
    }
    (
        t2a_hits as f64 / n_texts as f64,
        a2t_hits as f64 / a2t_queries as f64,
    )
}

/// Nearest-neighbour matching fraction: for each caption, is its own audio
/// the closest audio row (Euclidean) after mapping both into a shared space.
pub fn nn_accuracy(audio: &Matrix, text: &Matrix, split: &PairedDataset) -> f64 {
    let mut hits = 0;
    for p in split.pairs() {
        let t = text.row(p.text);
        let mut best = (f64::INFINITY, usize::MAX);
        for a in 0..audio.rows() {
            let d: f64 = audio
                .row(a)
                .iter()
                .zip(t)
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            if d < best.0 {
                best = (d, a);
            }
        }
        if best.1 == p.audio {
            hits += 1;
        }
    }
    hits as f64 / split.n_pairs() as f64
}

/// Draws a random small model and batch whose similarity matrix and hidden
/// pre-activations keep at least `min_gap` away from every kink, then
/// returns `(analytic, numeric)` parameter gradients of the full pipeline
/// (heads, normalization, cosine similarity, loss) with central differences
/// of step `h`.
pub fn pipeline_gradients(
    objective: &Objective,
    rng: &mut impl Rng,
    h: f64,
    min_gap: f64,
) -> (Vec<f64>, Vec<f64>) {
    loop {
        let b = rng.random_range(2..=6);
        let (d_a, d_t, d_h, d_o) = (
            rng.random_range(2..=5),
            rng.random_range(2..=5),
            rng.random_range(3..=6),
            rng.random_range(2..=4),
        );
        let mut model = DualEncoder::init(d_a, d_t, d_h, d_o, rng.random()).unwrap();
        for t in model.tensors_mut() {
            for v in t.iter_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        let xa = random_matrix(rng, b, d_a);
        let xt = random_matrix(rng, b, d_t);
        let s = naive_cosine(&naive_mlp(&model.audio, &xa), &naive_mlp(&model.text, &xt));
        let s = SimilarityMatrix::from_rows(&s).unwrap();
        if relu_distance(&model, &xa, &xt) < min_gap || kink_distance(objective, &s) < min_gap {
            continue;
        }
        let (_, ga, gt) = asem::trainer::batch_gradients(&model, objective, &xa, &xt)
            .unwrap()
            .expect("finite");
        let analytic: Vec<f64> = ga
            .tensors()
            .into_iter()
            .chain(gt.tensors())
            .flatten()
            .copied()
            .collect();

        let mut numeric = Vec::with_capacity(analytic.len());
        let n_tensors = model.tensors().len();
        for ti in 0..n_tensors {
            for k in 0..model.tensors()[ti].len() {
                let orig = model.tensors()[ti][k];
                model.tensors_mut()[ti][k] = orig + h;
                let up = pipeline_loss(objective, &model, &xa, &xt);
                model.tensors_mut()[ti][k] = orig - h;
                let down = pipeline_loss(objective, &model, &xa, &xt);
                model.tensors_mut()[ti][k] = orig;
                numeric.push((up - down) / (2.0 * h));
            }
        }
        return (analytic, numeric);
    }
}

/// Mean t2a R@1 and R@10 of random Gaussian unit embeddings over `seeds`
/// independent pools of `n` one-to-one pairs.
pub fn random_baseline(n: usize, dim: usize, seeds: u64) -> (f64, f64) {
    use asem::eval::{evaluate, RetrievalIndex};
    use rand_distr::StandardNormal;
    let (mut r1, mut r10) = (0.0, 0.0);
    for seed in 0..seeds {
        let mut rng = rng(1000 + seed);
        let mut draw = || Matrix::from_fn(n, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let (a, t) = (draw(), draw());
        let s = asem::embedding::cosine_similarity_matrix(&a, &t).unwrap();
        let report = evaluate(&RetrievalIndex::one_to_one(n), s.matrix()).unwrap();
        r1 += report.text_to_audio.r1;
        r10 += report.text_to_audio.r10;
    }
    (r1 / seeds as f64, r10 / seeds as f64)
}

/// Random retrieval instance: up to `max_audios` audios, each owning 1 to
/// `max_captions` captions (exactly `max_captions` when `grouped`), in a
/// shuffled caption order, with continuous random scores.
pub fn random_retrieval(
    rng: &mut impl Rng,
    max_audios: usize,
    max_captions: usize,
    grouped: bool,
) -> (usize, Vec<usize>, Matrix) {
    use rand::seq::SliceRandom;
    let n_audios = rng.random_range(1..=max_audios);
    let mut text_to_audio = Vec::new();
    for a in 0..n_audios {
        let c = if grouped {
            max_captions
        } else {
            rng.random_range(1..=max_captions)
        };
        text_to_audio.extend(std::iter::repeat_n(a, c));
    }
    text_to_audio.shuffle(rng);
    let sims = random_matrix(rng, n_audios, text_to_audio.len());
    (n_audios, text_to_audio, sims)
}
