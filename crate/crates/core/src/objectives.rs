//! Bidirectional metric-learning objectives over a batch similarity matrix.
//!
//! Every loss returns its value together with the exact (sub)gradient with
//! respect to each similarity entry. Chaining that gradient back through the
//! cosine similarity and row normalization is [`backprop_to_embeddings`].
//!
//! | Objective | Negatives used | Hyper-parameters |
//! |-----------|----------------|------------------|
//! | [`triplet_sum`] | every off-diagonal entry | margin |
//! | [`triplet_max`] | hardest per anchor and direction | margin |
//! | [`triplet_weighted`] | hardest per anchor and direction | polynomial weights |
//! | [`nt_xent`] | softmax over the full row / column | temperature |
//!
//! Conventions shared by all of them:
//!
//! - the hinge `[x]₊` has subgradient 0 at `x = 0`;
//! - hardest-negative ties go to the lowest index;
//! - sums run left to right in index order, so values are deterministic.

use serde::{Deserialize, Serialize};

use crate::embedding::{matmul, matmul_tn, Matrix, SimilarityMatrix};
use crate::error::{Error, Result};

pub const DEFAULT_MARGIN: f64 = 0.2;
pub const DEFAULT_TEMPERATURE: f64 = 0.07;
pub const DEFAULT_POS_COEFFS: [f64; 3] = [0.5, -0.7, 0.2];
pub const DEFAULT_NEG_COEFFS: [f64; 3] = [0.03, -0.4, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletConfig {
    pub margin: f64,
}

impl TripletConfig {
    pub fn new(margin: f64) -> Result<Self> {
        if !(margin.is_finite() && margin >= 0.0) {
            return Err(Error::InvalidHyperParameter(format!(
                "margin must be >= 0, got {margin}"
            )));
        }
        Ok(Self { margin })
    }
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self {
            margin: DEFAULT_MARGIN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NtXentConfig {
    pub temperature: f64,
}

impl NtXentConfig {
    pub fn new(temperature: f64) -> Result<Self> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::InvalidHyperParameter(format!(
                "temperature must be > 0, got {temperature}"
            )));
        }
        Ok(Self { temperature })
    }
}

impl Default for NtXentConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

/// Coefficients of the positive and negative weight polynomials, constant
/// term first. The polynomial order is the list length minus one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialWeights {
    pub pos_coeffs: Vec<f64>,
    pub neg_coeffs: Vec<f64>,
}

impl PolynomialWeights {
    pub fn new(pos_coeffs: Vec<f64>, neg_coeffs: Vec<f64>) -> Result<Self> {
        if pos_coeffs.is_empty() || neg_coeffs.is_empty() {
            return Err(Error::InvalidHyperParameter(
                "polynomial weights need at least a constant term".into(),
            ));
        }
        if pos_coeffs.iter().chain(&neg_coeffs).any(|c| !c.is_finite()) {
            return Err(Error::InvalidHyperParameter(
                "polynomial coefficients must be finite".into(),
            ));
        }
        Ok(Self {
            pos_coeffs,
            neg_coeffs,
        })
    }

    pub fn pos_order(&self) -> usize {
        self.pos_coeffs.len() - 1
    }

    pub fn neg_order(&self) -> usize {
        self.neg_coeffs.len() - 1
    }
}

impl Default for PolynomialWeights {
    fn default() -> Self {
        Self {
            pos_coeffs: DEFAULT_POS_COEFFS.to_vec(),
            neg_coeffs: DEFAULT_NEG_COEFFS.to_vec(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossResult {
    pub value: f64,
    /// `∂L/∂s_ij`, same shape as the similarity matrix.
    pub grad_s: Matrix,
}

/// Horner evaluation of `Σ c_k x^k` and its derivative.
fn horner(coeffs: &[f64], x: f64) -> (f64, f64) {
    let mut value = 0.0;
    let mut deriv = 0.0;
    for &c in coeffs.iter().rev() {
        deriv = deriv * x + value;
        value = value * x + c;
    }
    (value, deriv)
}

/// Positive-pair weight polynomial evaluated at a positive similarity.
pub fn g_pos(s_ii: f64, w: &PolynomialWeights) -> f64 {
    horner(&w.pos_coeffs, s_ii).0
}

/// Negative-pair weight polynomial evaluated at a negative similarity.
pub fn g_neg(s_ij: f64, w: &PolynomialWeights) -> f64 {
    horner(&w.neg_coeffs, s_ij).0
}

/// Index of the largest off-diagonal entry in row `i`, lowest index on ties.
fn hardest_in_row(s: &SimilarityMatrix, i: usize) -> usize {
    let mut best = usize::MAX;
    let mut best_val = f64::NEG_INFINITY;
    for j in (0..s.b()).filter(|&j| j != i) {
        let v = s.get(i, j);
        if best == usize::MAX || v > best_val {
            best = j;
            best_val = v;
        }
    }
    best
}

/// Index of the largest off-diagonal entry in column `i`, lowest index on ties.
fn hardest_in_col(s: &SimilarityMatrix, i: usize) -> usize {
    let mut best = usize::MAX;
    let mut best_val = f64::NEG_INFINITY;
    for j in (0..s.b()).filter(|&j| j != i) {
        let v = s.get(j, i);
        if best == usize::MAX || v > best_val {
            best = j;
            best_val = v;
        }
    }
    best
}

/// Hinge triplet loss summed over every negative, in both directions.
pub fn triplet_sum(s: &SimilarityMatrix, cfg: &TripletConfig) -> LossResult {
    let b = s.b();
    let scale = 1.0 / b as f64;
    let mut grad = Matrix::zeros(b, b);
    let mut total = 0.0;
    for i in 0..b {
        let pos = s.get(i, i);
        for j in (0..b).filter(|&j| j != i) {
            // audio anchor i against caption j
            let h = cfg.margin + s.get(i, j) - pos;
            if h > 0.0 {
                total += h;
                grad.add_at(i, j, scale);
                grad.add_at(i, i, -scale);
            }
            // caption anchor i against audio j
            let h = cfg.margin + s.get(j, i) - pos;
            if h > 0.0 {
                total += h;
                grad.add_at(j, i, scale);
                grad.add_at(i, i, -scale);
            }
        }
    }
    LossResult {
        value: total * scale,
        grad_s: grad,
    }
}

/// Hinge triplet loss on the hardest negative of each anchor, both
/// directions.
pub fn triplet_max(s: &SimilarityMatrix, cfg: &TripletConfig) -> LossResult {
    let b = s.b();
    let scale = 1.0 / b as f64;
    let mut grad = Matrix::zeros(b, b);
    let mut total = 0.0;
    if b < 2 {
        return LossResult {
            value: 0.0,
            grad_s: grad,
        };
    }
    for i in 0..b {
        let pos = s.get(i, i);
        let j = hardest_in_row(s, i);
        let h = cfg.margin + s.get(i, j) - pos;
        if h > 0.0 {
            total += h;
            grad.add_at(i, j, scale);
            grad.add_at(i, i, -scale);
        }
        let j = hardest_in_col(s, i);
        let h = cfg.margin + s.get(j, i) - pos;
        if h > 0.0 {
            total += h;
            grad.add_at(j, i, scale);
            grad.add_at(i, i, -scale);
        }
    }
    LossResult {
        value: total * scale,
        grad_s: grad,
    }
}

/// Maximum polynomial loss: the positive similarity and the hardest
/// negative similarity of each anchor are passed through their weight
/// polynomials and hinged, in both directions.
pub fn triplet_weighted(s: &SimilarityMatrix, w: &PolynomialWeights) -> Result<LossResult> {
    let b = s.b();
    if b < 2 {
        return Err(Error::BatchTooSmall(b));
    }
    let scale = 1.0 / b as f64;
    let mut grad = Matrix::zeros(b, b);
    let mut total = 0.0;
    for i in 0..b {
        let (gp, dgp) = horner(&w.pos_coeffs, s.get(i, i));

        let j = hardest_in_row(s, i);
        let (gn, dgn) = horner(&w.neg_coeffs, s.get(i, j));
        let t = gp + gn;
        if t > 0.0 {
            total += t;
            grad.add_at(i, i, dgp * scale);
            grad.add_at(i, j, dgn * scale);
        }

        let j = hardest_in_col(s, i);
        let (gn, dgn) = horner(&w.neg_coeffs, s.get(j, i));
        let t = gp + gn;
        if t > 0.0 {
            total += t;
            grad.add_at(i, i, dgp * scale);
            grad.add_at(j, i, dgn * scale);
        }
    }
    Ok(LossResult {
        value: total * scale,
        grad_s: grad,
    })
}

/// Log-softmax cross entropy of the diagonal entry along one line of the
/// matrix, returning `-log p_diag` and the softmax probabilities.
fn line_cross_entropy(logits: &[f64], diag: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = -(logits[diag] - max - sum.ln());
    (loss, exps.into_iter().map(|e| e / sum).collect())
}

/// Normalized temperature-scaled cross entropy, summed over the row-wise
/// (audio anchors) and column-wise (caption anchors) softmax.
pub fn nt_xent(s: &SimilarityMatrix, cfg: &NtXentConfig) -> LossResult {
    let b = s.b();
    let inv_t = 1.0 / cfg.temperature;
    let scale = 1.0 / b as f64;
    let mut grad = Matrix::zeros(b, b);
    let mut total = 0.0;
    let mut logits = vec![0.0; b];
    for i in 0..b {
        for (j, l) in logits.iter_mut().enumerate() {
            *l = s.get(i, j) * inv_t;
        }
        let (loss, p) = line_cross_entropy(&logits, i);
        total += loss;
        for (j, pj) in p.into_iter().enumerate() {
            let target = if j == i { 1.0 } else { 0.0 };
            grad.add_at(i, j, (pj - target) * inv_t * scale);
        }
    }
    for i in 0..b {
        for (j, l) in logits.iter_mut().enumerate() {
            *l = s.get(j, i) * inv_t;
        }
        let (loss, p) = line_cross_entropy(&logits, i);
        total += loss;
        for (j, pj) in p.into_iter().enumerate() {
            let target = if j == i { 1.0 } else { 0.0 };
            grad.add_at(j, i, (pj - target) * inv_t * scale);
        }
    }
    // exact 0 for the degenerate single-item batch (ln 1 can round)
    let value = if b == 1 {
        0.0
    } else {
        (total * scale).max(0.0)
    };
    LossResult {
        value,
        grad_s: grad,
    }
}

/// Any of the four objectives with its hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    TripletSum(TripletConfig),
    TripletMax(TripletConfig),
    TripletWeighted(PolynomialWeights),
    NtXent(NtXentConfig),
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::TripletSum(_) => "triplet-sum",
            Objective::TripletMax(_) => "triplet-max",
            Objective::TripletWeighted(_) => "triplet-weighted",
            Objective::NtXent(_) => "nt-xent",
        }
    }

    /// Objective by name with default hyper-parameters.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "triplet-sum" => Objective::TripletSum(TripletConfig::default()),
            "triplet-max" => Objective::TripletMax(TripletConfig::default()),
            "triplet-weighted" => Objective::TripletWeighted(PolynomialWeights::default()),
            "nt-xent" => Objective::NtXent(NtXentConfig::default()),
            other => {
                return Err(Error::Config(format!(
                    "unknown objective `{other}` (expected triplet-sum, triplet-max, triplet-weighted or nt-xent)"
                )))
            }
        })
    }

    pub fn evaluate(&self, s: &SimilarityMatrix) -> Result<LossResult> {
        Ok(match self {
            Objective::TripletSum(c) => triplet_sum(s, c),
            Objective::TripletMax(c) => triplet_max(s, c),
            Objective::TripletWeighted(w) => triplet_weighted(s, w)?,
            Objective::NtXent(c) => nt_xent(s, c),
        })
    }
}

/// Chains `∂L/∂s` back to the un-normalized embeddings.
///
/// With `s = Â·T̂ᵀ`, the gradient on the unit rows is `G·T̂` (audio) and
/// `Gᵀ·Â` (text); each row is then pushed through the Jacobian of
/// `x ↦ x/‖x‖`, which is `(I − x̂x̂ᵀ)/‖x‖`.
pub fn backprop_to_embeddings(
    grad_s: &Matrix,
    audio_norm: &Matrix,
    text_norm: &Matrix,
    audio_raw: &Matrix,
    text_raw: &Matrix,
) -> Result<(Matrix, Matrix)> {
    let b = grad_s.rows();
    if grad_s.cols() != b
        || audio_norm.rows() != b
        || text_norm.rows() != b
        || audio_norm.shape() != audio_raw.shape()
        || text_norm.shape() != text_raw.shape()
        || audio_norm.cols() != text_norm.cols()
    {
        return Err(Error::shape(
            "backprop_to_embeddings",
            format!("{b}x{b} gradient with {b}-row embedding batches of one width"),
            format!(
                "grad {:?}, audio {:?}/{:?}, text {:?}/{:?}",
                grad_s.shape(),
                audio_norm.shape(),
                audio_raw.shape(),
                text_norm.shape(),
                text_raw.shape()
            ),
        ));
    }
    let g_audio_unit = matmul(grad_s, text_norm)?;
    let g_text_unit = matmul_tn(grad_s, audio_norm)?;
    let ga = through_normalization(&g_audio_unit, audio_norm, audio_raw)?;
    let gt = through_normalization(&g_text_unit, text_norm, text_raw)?;
    Ok((ga, gt))
}

fn through_normalization(g_unit: &Matrix, unit: &Matrix, raw: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(raw.rows(), raw.cols());
    for i in 0..raw.rows() {
        let n = crate::embedding::norm(raw.row(i));
        if n < crate::embedding::ZERO_NORM_EPS {
            return Err(Error::ZeroNormRow(i));
        }
        let u = unit.row(i);
        let g = g_unit.row(i);
        let radial = crate::embedding::dot(u, g);
        for ((o, &gk), &uk) in out.row_mut(i).iter_mut().zip(g).zip(u) {
            *o = (gk - uk * radial) / n;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sm(rows: &[&[f64]]) -> SimilarityMatrix {
        SimilarityMatrix::from_rows(rows).unwrap()
    }

    fn worked() -> SimilarityMatrix {
        sm(&[&[0.5, 0.4], &[0.45, 0.3]])
    }

    #[test]
    fn triplet_sum_examples() {
        let cfg = TripletConfig::default();
        let r = triplet_sum(&sm(&[&[0.7]]), &cfg);
        assert_eq!(r.value, 0.0);
        assert_eq!(r.grad_s.as_slice(), &[0.0]);

        assert_eq!(
            triplet_sum(&sm(&[&[1.0, -1.0], &[-1.0, 1.0]]), &cfg).value,
            0.0
        );
        assert_abs_diff_eq!(triplet_sum(&worked(), &cfg).value, 0.45, epsilon = 1e-12);
    }

    #[test]
    fn triplet_max_examples() {
        let cfg = TripletConfig::default();
        assert_eq!(triplet_max(&sm(&[&[0.1]]), &cfg).value, 0.0);
        assert_abs_diff_eq!(triplet_max(&worked(), &cfg).value, 0.45, epsilon = 1e-12);
        let s = sm(&[&[0.9, 0.2, 0.5], &[0.1, 0.8, 0.6], &[0.3, 0.4, 0.7]]);
        let r = triplet_max(&s, &cfg);
        assert_abs_diff_eq!(r.value, 0.1 / 3.0, epsilon = 1e-12);
        // only caption anchor 2 against audio 1 is active
        let third = 1.0 / 3.0;
        let mut expect = Matrix::zeros(3, 3);
        expect.set(1, 2, third);
        expect.set(2, 2, -third);
        assert!(r.grad_s.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn triplet_max_breaks_ties_by_lowest_index() {
        let s = sm(&[&[0.0, 0.5, 0.5], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let r = triplet_max(&s, &TripletConfig::default());
        assert!(r.grad_s.get(0, 1) > 0.0);
        assert_eq!(r.grad_s.get(0, 2), 0.0);
    }

    #[test]
    fn weight_polynomials() {
        let w = PolynomialWeights::default();
        assert_abs_diff_eq!(g_pos(1.0, &w), 0.0, epsilon = 1e-15);
        assert_eq!(g_neg(0.0, &w), 0.03);
        assert_abs_diff_eq!(g_neg(0.4, &w), 0.014, epsilon = 1e-15);
        assert_eq!(w.pos_order(), 2);
        assert_eq!(w.neg_order(), 2);
        let (_, d) = horner(&[1.0, 2.0, 3.0], 0.5);
        assert_abs_diff_eq!(d, 2.0 + 6.0 * 0.5, epsilon = 1e-15);
    }

    #[test]
    fn triplet_weighted_examples() {
        let w = PolynomialWeights::default();
        assert_abs_diff_eq!(
            triplet_weighted(&worked(), &w).unwrap().value,
            0.55425,
            epsilon = 1e-12
        );

        let clamp = PolynomialWeights::new(vec![-1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]).unwrap();
        let r = triplet_weighted(&worked(), &clamp).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.grad_s.as_slice().iter().all(|&g| g == 0.0));

        let diag = sm(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_abs_diff_eq!(
            triplet_weighted(&diag, &w).unwrap().value,
            0.06,
            epsilon = 1e-12
        );

        assert!(matches!(
            triplet_weighted(&sm(&[&[1.0]]), &w),
            Err(Error::BatchTooSmall(1))
        ));
    }

    #[test]
    fn nt_xent_examples() {
        let cfg = NtXentConfig::default();
        assert_eq!(nt_xent(&sm(&[&[0.3]]), &cfg).value, 0.0);
        let c = Matrix::from_fn(5, 5, |_, _| -0.25);
        let r = nt_xent(&SimilarityMatrix::new(c).unwrap(), &cfg);
        assert_abs_diff_eq!(r.value, 2.0 * 5f64.ln(), epsilon = 1e-12);
        // high-precision reference value
        assert_abs_diff_eq!(
            nt_xent(&worked(), &cfg).value,
            2.255_244_541_480_796,
            epsilon = 1e-12
        );
    }

    #[test]
    fn hyper_parameter_validation() {
        assert!(TripletConfig::new(-0.1).is_err());
        assert!(TripletConfig::new(0.0).is_ok());
        assert!(NtXentConfig::new(0.0).is_err());
        assert!(NtXentConfig::new(f64::NAN).is_err());
        assert!(PolynomialWeights::new(vec![], vec![1.0]).is_err());
        assert!(Objective::from_name("contrastive").is_err());
        for n in ["triplet-sum", "triplet-max", "triplet-weighted", "nt-xent"] {
            assert_eq!(Objective::from_name(n).unwrap().name(), n);
        }
    }

    #[test]
    fn backprop_zero_and_tangential() {
        let a = Matrix::from_rows(&[[0.6, 0.8]]).unwrap();
        let t = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let (ga, gt) = backprop_to_embeddings(&Matrix::zeros(1, 1), &a, &t, &a, &t).unwrap();
        assert!(ga.as_slice().iter().chain(gt.as_slice()).all(|&v| v == 0.0));

        let g = Matrix::from_rows(&[[1.0]]).unwrap();
        let (ga, gt) = backprop_to_embeddings(&g, &a, &t, &a, &t).unwrap();
        // t minus its projection on a, and vice versa
        let c = 0.6;
        assert_abs_diff_eq!(ga.get(0, 0), 1.0 - c * 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(ga.get(0, 1), 0.0 - c * 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(gt.get(0, 0), 0.6 - c * 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(gt.get(0, 1), 0.8, epsilon = 1e-15);
    }

    #[test]
    fn backprop_errors() {
        let a = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let z = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
        let g = Matrix::from_rows(&[[1.0]]).unwrap();
        assert!(matches!(
            backprop_to_embeddings(&g, &a, &a, &a, &z),
            Err(Error::ZeroNormRow(0))
        ));
        assert!(matches!(
            backprop_to_embeddings(&Matrix::zeros(2, 2), &a, &a, &a, &a),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
