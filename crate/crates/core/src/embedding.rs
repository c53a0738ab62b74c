//! Dense row-major matrices, row normalization and the cosine similarity
//! matrix between an audio-side batch and a text-side batch.
//!
//! Everything here is `f64`. Rows are items, columns are feature
//! dimensions.

use std::fmt;

use crate::error::{Error, Result};

/// Rows with a Euclidean norm below this are treated as degenerate.
pub const ZERO_NORM_EPS: f64 = 1e-12;

/// Numeric slack admitted around the cosine range [-1, 1].
pub const COSINE_SLACK: f64 = 1e-9;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} ", self.rows, self.cols)?;
        f.debug_list()
            .entries(self.data.chunks(self.cols.max(1)))
            .finish()
    }
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite values.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{} values for {rows}x{cols}", rows * cols),
                data.len(),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from a slice of equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(
                    "Matrix::from_rows",
                    format!("{cols} columns"),
                    format!("{} in row {i}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Skips validation. Used for results of arithmetic on already
    /// validated inputs; downstream finiteness checks catch overflow.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub(crate) fn add_at(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] += v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix::from_raw(
            self.rows,
            self.cols,
            self.data.iter().map(|v| v * c).collect(),
        )
    }

    /// Gathers the given rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_raw(indices.len(), self.cols, data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute entrywise difference. Panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape(
            "matmul",
            format!("lhs cols == rhs rows ({})", a.cols),
            format!("{}x{} · {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b.data[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Ok(Matrix::from_raw(n, m, out))
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::shape(
            "matmul_tn",
            format!("lhs rows == rhs rows ({})", a.rows),
            format!("{}x{}ᵀ · {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let (k, n, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; n * m];
    for p in 0..k {
        let arow = a.row(p);
        let brow = b.row(p);
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * m..(i + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(Matrix::from_raw(n, m, out))
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::shape(
            "matmul_nt",
            format!("lhs cols == rhs cols ({})", a.cols),
            format!("{}x{} · {}x{}ᵀ", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let mut out = Vec::with_capacity(a.rows * b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.rows {
            out.push(dot(arow, b.row(j)));
        }
    }
    Ok(Matrix::from_raw(a.rows, b.rows, out))
}

/// Result of [`l2_normalize_rows`]: the normalized matrix plus the indices
/// of rows that were too short to normalize and were left untouched.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub matrix: Matrix,
    pub norms: Vec<f64>,
    pub zero_rows: Vec<usize>,
}

impl Normalized {
    /// Treats any degenerate row as fatal.
    pub fn into_result(self) -> Result<Matrix> {
        match self.zero_rows.first() {
            Some(&i) => Err(Error::ZeroNormRow(i)),
            None => Ok(self.matrix),
        }
    }
}

/// Scales every row to unit Euclidean norm.
///
/// Rows with norm below [`ZERO_NORM_EPS`] are copied unchanged and listed in
/// [`Normalized::zero_rows`].
pub fn l2_normalize_rows(m: &Matrix) -> Result<Normalized> {
    if m.cols == 0 {
        return Err(Error::shape("l2_normalize_rows", ">= 1 column", 0));
    }
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows);
    let mut zero_rows = Vec::new();
    for i in 0..m.rows {
        let n = norm(m.row(i));
        norms.push(n);
        if n < ZERO_NORM_EPS {
            zero_rows.push(i);
            continue;
        }
        for v in out.row_mut(i) {
            *v /= n;
        }
    }
    Ok(Normalized {
        matrix: out,
        norms,
        zero_rows,
    })
}

/// Square matrix of cosine scores; entry `(i, j)` compares audio row `i`
/// with text row `j`. Row `i` minus its diagonal is the negative set of
/// audio anchor `i`, column `j` minus its diagonal that of text anchor `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix(Matrix);

impl SimilarityMatrix {
    /// Validates squareness and the cosine range (with [`COSINE_SLACK`]).
    pub fn new(s: Matrix) -> Result<Self> {
        if s.rows != s.cols {
            return Err(Error::shape(
                "SimilarityMatrix::new",
                "square matrix",
                format!("{}x{}", s.rows, s.cols),
            ));
        }
        for i in 0..s.rows {
            for j in 0..s.cols {
                let v = s.get(i, j);
                if !(-1.0 - COSINE_SLACK..=1.0 + COSINE_SLACK).contains(&v) {
                    return Err(Error::SimilarityOutOfRange {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
        }
        Ok(Self(s))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    /// Batch size.
    #[inline]
    pub fn b(&self) -> usize {
        self.0.rows
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// Swaps the roles of the audio and text sides.
    pub fn transpose(&self) -> SimilarityMatrix {
        SimilarityMatrix(self.0.transpose())
    }
}

fn check_pair(op: &'static str, audio: &Matrix, text: &Matrix) -> Result<()> {
    if audio.rows != text.rows || audio.cols != text.cols || audio.rows == 0 {
        return Err(Error::shape(
            op,
            "two non-empty batches of equal shape",
            format!(
                "{}x{} vs {}x{}",
                audio.rows, audio.cols, text.rows, text.cols
            ),
        ));
    }
    Ok(())
}

/// Cosine similarity between every audio row and every text row.
pub fn cosine_similarity_matrix(audio: &Matrix, text: &Matrix) -> Result<SimilarityMatrix> {
    check_pair("cosine_similarity_matrix", audio, text)?;
    let a = l2_normalize_rows(audio)?.into_result()?;
    let t = l2_normalize_rows(text)?.into_result()?;
    similarity_of_normalized(&a, &t)
}

/// Similarity of rows that are already unit length, i.e. `A · Tᵀ`.
pub fn similarity_of_normalized(
    audio_unit: &Matrix,
    text_unit: &Matrix,
) -> Result<SimilarityMatrix> {
    check_pair("similarity_of_normalized", audio_unit, text_unit)?;
    SimilarityMatrix::new(matmul_nt(audio_unit, text_unit)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(matches!(
            Matrix::from_vec(2, 2, vec![1.0; 3]),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(matches!(
            Matrix::from_vec(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite(1))
        ));
        assert!(matches!(
            Matrix::from_vec(1, 1, vec![f64::INFINITY]),
            Err(Error::NonFinite(0))
        ));
    }

    #[test]
    fn normalize_examples() {
        let n = l2_normalize_rows(&m(&[&[3.0, 4.0]]))
            .unwrap()
            .into_result()
            .unwrap();
        assert_eq!(n.row(0), &[0.6, 0.8]);

        let n = l2_normalize_rows(&m(&[&[1.0, 0.0, 0.0]]))
            .unwrap()
            .into_result()
            .unwrap();
        assert_eq!(n.row(0), &[1.0, 0.0, 0.0]);

        let n = l2_normalize_rows(&m(&[&[2.0, 2.0], &[-1.0, 1.0]]))
            .unwrap()
            .into_result()
            .unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let expect = m(&[&[h, h], &[-h, h]]);
        assert!(n.max_abs_diff(&expect) < 1e-8);
    }

    #[test]
    fn normalize_flags_zero_rows() {
        let r = l2_normalize_rows(&m(&[&[1.0, 1.0], &[0.0, 1e-13]])).unwrap();
        assert_eq!(r.zero_rows, vec![1]);
        assert_eq!(r.matrix.row(1), &[0.0, 1e-13]);
        assert!(matches!(r.into_result(), Err(Error::ZeroNormRow(1))));
        assert!(l2_normalize_rows(&Matrix::zeros(2, 0)).is_err());
    }

    #[test]
    fn cosine_examples() {
        let s = cosine_similarity_matrix(&m(&[&[1.0, 0.0]]), &m(&[&[1.0, 0.0]])).unwrap();
        assert_eq!(s.get(0, 0), 1.0);

        let s = cosine_similarity_matrix(
            &m(&[&[1.0, 0.0], &[0.0, 1.0]]),
            &m(&[&[0.0, 1.0], &[1.0, 0.0]]),
        )
        .unwrap();
        assert_eq!(s.matrix(), &m(&[&[0.0, 1.0], &[1.0, 0.0]]));

        let s = cosine_similarity_matrix(&m(&[&[1.0, 1.0]]), &m(&[&[1.0, 0.0]])).unwrap();
        assert_abs_diff_eq!(s.get(0, 0), 1.0 / 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn cosine_errors() {
        let a = m(&[&[1.0, 0.0]]);
        assert!(matches!(
            cosine_similarity_matrix(&a, &m(&[&[1.0, 0.0, 0.0]])),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(matches!(
            cosine_similarity_matrix(&a, &m(&[&[0.0, 0.0]])),
            Err(Error::ZeroNormRow(0))
        ));
    }

    #[test]
    fn similarity_rejects_non_square_and_out_of_range() {
        assert!(SimilarityMatrix::new(Matrix::zeros(2, 3)).is_err());
        assert!(matches!(
            SimilarityMatrix::from_rows(&[[1.5]]),
            Err(Error::SimilarityOutOfRange { .. })
        ));
        assert!(SimilarityMatrix::from_rows(&[[1.0 + 1e-10]]).is_ok());
    }

    #[test]
    fn matmul_examples() {
        let x = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&Matrix::identity(2), &x).unwrap(), x);
        assert_eq!(
            matmul(&m(&[&[1.0, 2.0]]), &m(&[&[3.0], &[4.0]]))
                .unwrap()
                .as_slice(),
            &[11.0]
        );
        assert!(matches!(
            matmul(&x, &Matrix::zeros(3, 1)),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn transposed_products_agree_with_matmul() {
        let a = Matrix::from_fn(3, 4, |i, j| (i as f64 * 0.7 - j as f64 * 0.3).sin());
        let b = Matrix::from_fn(3, 2, |i, j| (i as f64 + 2.0 * j as f64).cos());
        let c = Matrix::from_fn(5, 4, |i, j| (i * j) as f64 * 0.1 - 0.4);
        let tn = matmul_tn(&a, &b).unwrap();
        assert!(tn.max_abs_diff(&matmul(&a.transpose(), &b).unwrap()) < 1e-14);
        let nt = matmul_nt(&a, &c).unwrap();
        assert!(nt.max_abs_diff(&matmul(&a, &c.transpose()).unwrap()) < 1e-14);
    }
}
