//! Dense vector/matrix primitives and scalar kernels.
//!
//! Everything is 64-bit and row-major. Feature vectors are plain `[f64]`
//! slices; batches and square matrices share the [`Matrix`] container.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};

/// Norm below which a vector is treated as zero by [`cosine_sim`].
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// A batch of feature vectors, one per row.
pub type FeatureMatrix = Matrix;

/// A `D x D` matrix, used for class covariances.
pub type SquareMatrix = Matrix;

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// An empty batch of `cols`-dimensional rows.
    pub fn empty(cols: usize) -> Self {
        Self::zeros(0, cols)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return invalid_arg(format!(
                "buffer of length {} cannot hold a {rows}x{cols} matrix",
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows. An empty slice is rejected
    /// because the column count would be unknown.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return invalid_arg("cannot infer dimension of an empty row list");
        };
        let cols = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return invalid_arg(format!(
                    "row {i} has dimension {}, expected {cols}",
                    row.len()
                ));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact on a zero-width matrix would panic
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.cols {
            return invalid_arg(format!(
                "row has dimension {}, expected {}",
                row.len(),
                self.cols
            ));
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    /// Copies the listed rows, in the listed order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Largest absolute entry of `M - M^T`; zero for exactly symmetric input.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols.min(self.rows) {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// `M v`.
    pub fn mat_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return invalid_arg(format!(
                "vector of dimension {} does not match {} columns",
                v.len(),
                self.cols
            ));
        }
        Ok(self.iter_rows().map(|row| dot(row, v)).collect())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Inner product. Callers guarantee equal lengths.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `ln(sum(exp(x)))`, evaluated with max subtraction.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Softmax in place over already-scaled logits, using max subtraction.
pub(crate) fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in values.iter_mut() {
        *v /= total;
    }
}

/// `softmax(logits / temperature)`.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return invalid_arg("softmax of empty logits");
    }
    if !(temperature > 0.0) || !temperature.is_finite() {
        return invalid_arg(format!("temperature must be positive, got {temperature}"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return invalid_arg("softmax logits must be finite");
    }
    let mut probs: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    softmax_in_place(&mut probs);
    Ok(probs)
}

/// Cosine similarity. Returns 0 when either vector has norm below
/// [`DEGENERATE_NORM`], so argmax over similarities stays total.
pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return invalid_arg(format!(
            "cosine similarity of vectors with dimensions {} and {}",
            u.len(),
            v.len()
        ));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu < DEGENERATE_NORM || nv < DEGENERATE_NORM {
        return Ok(0.0);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Coordinate-wise arithmetic mean of the rows.
pub fn mean_rows(m: &Matrix) -> Result<Vec<f64>> {
    if m.is_empty() {
        return invalid_arg("mean of an empty matrix");
    }
    let mut mean = vec![0.0; m.cols()];
    for row in m.iter_rows() {
        for (acc, x) in mean.iter_mut().zip(row) {
            *acc += x;
        }
    }
    let n = m.rows() as f64;
    mean.iter_mut().for_each(|v| *v /= n);
    Ok(mean)
}

/// Unbiased sample covariance (divisor `N - 1`). A single row yields the
/// zero matrix. The result is exactly symmetric.
pub fn covariance(m: &Matrix) -> Result<SquareMatrix> {
    let mean = mean_rows(m)?;
    let dim = m.cols();
    let mut cov = Matrix::zeros(dim, dim);
    if m.rows() < 2 {
        return Ok(cov);
    }
    let mut centered = vec![0.0; dim];
    for row in m.iter_rows() {
        for ((c, x), mu) in centered.iter_mut().zip(row).zip(&mean) {
            *c = x - mu;
        }
        for i in 0..dim {
            let ci = centered[i];
            for j in i..dim {
                cov[(i, j)] += ci * centered[j];
            }
        }
    }
    let denom = (m.rows() - 1) as f64;
    for i in 0..dim {
        for j in i..dim {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(cov)
}

/// `v^T M v`.
pub fn quad_form(v: &[f64], m: &SquareMatrix) -> Result<f64> {
    if !m.is_square() || m.rows() != v.len() {
        return invalid_arg(format!(
            "quadratic form of a {}-vector with a {}x{} matrix",
            v.len(),
            m.rows(),
            m.cols()
        ));
    }
    Ok(m.iter_rows().zip(v).map(|(row, vi)| vi * dot(row, v)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0], 1.0).unwrap(), vec![0.5, 0.5]);
        for a in [-3.0, 0.0, 12.5] {
            for t in [0.3, 1.0, 7.0] {
                for p in softmax(&[a, a, a], t).unwrap() {
                    assert!(close(p, 1.0 / 3.0, 1e-15));
                }
            }
        }
        // scalar oracle: e^{1/0.3} / (e^{1/0.3} + e^0)
        let e = (1.0f64 / 0.3).exp();
        let expected = [e / (e + 1.0), 1.0 / (e + 1.0)];
        let got = softmax(&[1.0, 0.0], 0.3).unwrap();
        assert!(close(got[0], expected[0], 1e-15));
        assert!(close(got[1], expected[1], 1e-15));
        assert!(close(got[0], 0.965_554_804_6, 1e-9));
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(matches!(
            softmax(&[], 1.0),
            Err(crate::Error::InvalidArgument(_))
        ));
        assert!(softmax(&[1.0], 0.0).is_err());
        assert!(softmax(&[1.0], -1.0).is_err());
        assert!(softmax(&[f64::NAN], 1.0).is_err());
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let p = softmax(&[1000.0, 999.0], 0.3).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!(close(p.iter().sum::<f64>(), 1.0, 1e-12));
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_sim(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(close(
            cosine_sim(&[1.0, 2.0], &[2.0, 4.0]).unwrap(),
            1.0,
            1e-15
        ));
        assert_eq!(cosine_sim(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(cosine_sim(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mean_examples() {
        let m = Matrix::from_rows(&[[1.0, 1.0]]).unwrap();
        assert_eq!(mean_rows(&m).unwrap(), vec![1.0, 1.0]);
        let m = Matrix::from_rows(&[[0.0, 0.0], [2.0, 0.0]]).unwrap();
        assert_eq!(mean_rows(&m).unwrap(), vec![1.0, 0.0]);
        let m = Matrix::from_rows(&vec![vec![2.5; 3]; 7]).unwrap();
        assert_eq!(mean_rows(&m).unwrap(), vec![2.5; 3]);
        assert!(mean_rows(&Matrix::empty(3)).is_err());
    }

    #[test]
    fn covariance_examples() {
        let constant = Matrix::from_rows(&vec![vec![4.0, -1.0]; 5]).unwrap();
        assert_eq!(covariance(&constant).unwrap(), Matrix::zeros(2, 2));
        let single = Matrix::from_rows(&[[3.0, 1.0]]).unwrap();
        assert_eq!(covariance(&single).unwrap(), Matrix::zeros(2, 2));
        // deviations are (-1, 0) and (1, 0): sum of squares 2, divided by N-1 = 1
        let pair = Matrix::from_rows(&[[0.0, 0.0], [2.0, 0.0]]).unwrap();
        assert_eq!(covariance(&pair).unwrap(), Matrix::diag(&[2.0, 0.0]));
        assert!(covariance(&Matrix::empty(2)).is_err());
    }

    #[test]
    fn quad_form_examples() {
        assert_eq!(quad_form(&[3.0, 4.0], &Matrix::identity(2)).unwrap(), 25.0);
        assert_eq!(quad_form(&[3.0, -7.0], &Matrix::zeros(2, 2)).unwrap(), 0.0);
        // 2*1^2 + 1*2^2
        assert_eq!(
            quad_form(&[1.0, 2.0], &Matrix::diag(&[2.0, 1.0])).unwrap(),
            6.0
        );
        assert!(quad_form(&[1.0], &Matrix::identity(2)).is_err());
        assert!(quad_form(&[1.0, 2.0], &Matrix::zeros(2, 3)).is_err());
    }

    fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-50.0f64..50.0, len)
    }

    fn matrix_strategy() -> impl Strategy<Value = Matrix> {
        (1usize..12, 1usize..6).prop_flat_map(|(n, d)| {
            prop::collection::vec(-20.0f64..20.0, n * d)
                .prop_map(move |data| Matrix::from_vec(n, d, data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(logits in prop::collection::vec(-100.0f64..100.0, 1..20), t in 0.01f64..=10.0) {
            let p = softmax(&logits, t).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn softmax_temperature_is_logit_scaling(logits in prop::collection::vec(-30.0f64..30.0, 1..10), t in 0.05f64..=10.0) {
            let a = softmax(&logits, t).unwrap();
            let scaled: Vec<f64> = logits.iter().map(|z| z / t).collect();
            let b = softmax(&scaled, 1.0).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(
            (u, v) in (1usize..8).prop_flat_map(|d| (finite_vec(d), finite_vec(d))),
            alpha in 0.01f64..100.0,
            beta in 0.01f64..100.0,
        ) {
            prop_assume!(norm(&u) > 1e-3 && norm(&v) > 1e-3);
            let s = cosine_sim(&u, &v).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
            prop_assert!((s - cosine_sim(&v, &u).unwrap()).abs() <= 1e-12);
            let au: Vec<f64> = u.iter().map(|x| alpha * x).collect();
            let bv: Vec<f64> = v.iter().map(|x| beta * x).collect();
            prop_assert!((s - cosine_sim(&au, &bv).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn covariance_symmetric_psd(m in matrix_strategy(), seed_x in prop::collection::vec(-5.0f64..5.0, 6)) {
            let c = covariance(&m).unwrap();
            prop_assert!(c.max_asymmetry() <= 1e-9);
            let x = &seed_x[..m.cols()];
            prop_assert!(quad_form(x, &c).unwrap() >= -1e-9);
        }

        #[test]
        fn covariance_translation_invariant(m in matrix_strategy(), shift in prop::collection::vec(-100.0f64..100.0, 6)) {
            let mut shifted = m.clone();
            for i in 0..shifted.rows() {
                for (x, t) in shifted.row_mut(i).iter_mut().zip(&shift) {
                    *x += t;
                }
            }
            let a = covariance(&m).unwrap();
            let b = covariance(&shifted).unwrap();
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }
    }
}
