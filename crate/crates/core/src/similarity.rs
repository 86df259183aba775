//! Embedding vectors and detection-to-candidate similarity matrices.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Index;

use crate::error::{Error, Result};

/// A finite real-valued appearance embedding.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEmbedding(pos));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(dot(&self.0, &self.0))
    }
}

impl Index<usize> for Embedding {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Dot product with a fixed reduction order (four interleaved partial sums).
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

// Four dot products (a0.b0, a0.b1, a1.b0, a1.b1) sharing loads, each with
// the reduction order of `dot`.
fn dot_2x2(a0: &[f64], a1: &[f64], b0: &[f64], b1: &[f64]) -> [f64; 4] {
    let n = a0.len();
    let (a1, b0, b1) = (&a1[..n], &b0[..n], &b1[..n]);
    let mut acc = [[0.0f64; 4]; 4];
    let body = n - n % 4;
    let mut i = 0;
    while i < body {
        for k in 0..4 {
            let (x0, x1, y0, y1) = (a0[i + k], a1[i + k], b0[i + k], b1[i + k]);
            acc[0][k] += x0 * y0;
            acc[1][k] += x0 * y1;
            acc[2][k] += x1 * y0;
            acc[3][k] += x1 * y1;
        }
        i += 4;
    }
    let mut tail = [0.0f64; 4];
    for i in body..n {
        tail[0] += a0[i] * b0[i];
        tail[1] += a0[i] * b1[i];
        tail[2] += a1[i] * b0[i];
        tail[3] += a1[i] * b1[i];
    }
    core::array::from_fn(|p| (acc[p][0] + acc[p][1]) + (acc[p][2] + acc[p][3]) + tail[p])
}

/// All pairwise dot products, row-major over `rows x cols`. Bit-identical to
/// calling [`dot`] on every pair; all vectors must share one length.
pub fn dot_matrix(rows: &[&[f64]], cols: &[&[f64]]) -> Vec<f64> {
    let m = cols.len();
    let mut out = vec![0.0; rows.len() * m];
    let mut i = 0;
    while i + 1 < rows.len() {
        let mut j = 0;
        while j + 1 < m {
            let [p00, p01, p10, p11] = dot_2x2(rows[i], rows[i + 1], cols[j], cols[j + 1]);
            out[i * m + j] = p00;
            out[i * m + j + 1] = p01;
            out[(i + 1) * m + j] = p10;
            out[(i + 1) * m + j + 1] = p11;
            j += 2;
        }
        if j < m {
            out[i * m + j] = dot(rows[i], cols[j]);
            out[(i + 1) * m + j] = dot(rows[i + 1], cols[j]);
        }
        i += 2;
    }
    if i < rows.len() {
        for j in 0..m {
            out[i * m + j] = dot(rows[i], cols[j]);
        }
    }
    out
}

/// Row-major `rows x cols` matrix. Rows index detections, columns index
/// matching candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * cols, "matrix storage does not match shape");
        Self { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column index of the largest entry in `row`, lower index on ties.
    /// `None` when every entry is `-inf` or NaN.
    pub fn argmax_row(&self, row: usize) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (j, &v) in self.row(row).iter().enumerate() {
            if v == f64::NEG_INFINITY || v.is_nan() {
                continue;
            }
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        best
    }
}

fn check_dims(dets: &[Embedding], cands: &[Embedding]) -> Result<()> {
    let Some(first) = dets.first().or(cands.first()) else {
        return Ok(());
    };
    let expected = first.dim();
    for e in dets.iter().chain(cands) {
        if e.dim() != expected {
            return Err(Error::DimensionMismatch { expected, found: e.dim() });
        }
    }
    Ok(())
}

/// Raw dot products `n_i . m_j`.
pub fn logits(dets: &[Embedding], cands: &[Embedding]) -> Result<SimilarityMatrix> {
    check_dims(dets, cands)?;
    let rows: Vec<&[f64]> = dets.iter().map(Embedding::as_slice).collect();
    let cols: Vec<&[f64]> = cands.iter().map(Embedding::as_slice).collect();
    Ok(SimilarityMatrix::from_values(dets.len(), cands.len(), dot_matrix(&rows, &cols)))
}

/// Cosine similarity of every detection/candidate pair.
pub fn cosine_matrix(dets: &[Embedding], cands: &[Embedding]) -> Result<SimilarityMatrix> {
    check_dims(dets, cands)?;
    let norms = |side: &'static str, es: &[Embedding]| -> Result<Vec<f64>> {
        es.iter()
            .enumerate()
            .map(|(index, e)| {
                let n = e.norm();
                if n > 0.0 {
                    Ok(n)
                } else {
                    Err(Error::ZeroNorm { side, index })
                }
            })
            .collect()
    };
    let dn = norms("detections", dets)?;
    let cn = norms("candidates", cands)?;
    let mut values = Vec::with_capacity(dets.len() * cands.len());
    for (d, &nd) in dets.iter().zip(&dn) {
        values.extend(
            cands
                .iter()
                .zip(&cn)
                .map(|(c, &nc)| (d.dot(c) / (nd * nc)).clamp(-1.0, 1.0)),
        );
    }
    Ok(SimilarityMatrix::from_values(dets.len(), cands.len(), values))
}

/// The two halves of the bi-directional softmax: `forward` normalizes each
/// row over candidates, `backward` normalizes each column over detections.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxTerms {
    pub forward: SimilarityMatrix,
    pub backward: SimilarityMatrix,
}

/// Row and column softmax of a logit matrix.
///
/// Entries equal to `-inf` are masked: they receive probability 0 and the
/// normalization runs over the remaining entries only. A fully masked row or
/// column yields all zeros.
pub fn softmax_terms(logits: &SimilarityMatrix) -> SoftmaxTerms {
    let (rows, cols) = (logits.rows, logits.cols);
    let v = &logits.values;

    let mut forward = vec![0.0; rows * cols];
    for i in 0..rows {
        let row = &v[i * cols..(i + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let out = &mut forward[i * cols..(i + 1) * cols];
        let mut sum = 0.0;
        for (o, &l) in out.iter_mut().zip(row) {
            *o = libm::exp(l - max);
            sum += *o;
        }
        for o in out.iter_mut() {
            *o /= sum;
        }
    }

    let mut col_max = vec![f64::NEG_INFINITY; cols];
    for i in 0..rows {
        for (m, &l) in col_max.iter_mut().zip(&v[i * cols..(i + 1) * cols]) {
            *m = m.max(l);
        }
    }
    let mut backward = vec![0.0; rows * cols];
    let mut col_sum = vec![0.0; cols];
    for i in 0..rows {
        for j in 0..cols {
            if col_max[j] == f64::NEG_INFINITY {
                continue;
            }
            let e = libm::exp(v[i * cols + j] - col_max[j]);
            backward[i * cols + j] = e;
            col_sum[j] += e;
        }
    }
    for i in 0..rows {
        for j in 0..cols {
            if col_sum[j] > 0.0 {
                backward[i * cols + j] /= col_sum[j];
            }
        }
    }

    SoftmaxTerms {
        forward: SimilarityMatrix::from_values(rows, cols, forward),
        backward: SimilarityMatrix::from_values(rows, cols, backward),
    }
}

/// Bi-directional softmax of precomputed (possibly masked) logits.
pub fn bisoftmax_from_logits(logits: &SimilarityMatrix) -> SimilarityMatrix {
    let terms = softmax_terms(logits);
    let values = terms
        .forward
        .values
        .iter()
        .zip(&terms.backward.values)
        .map(|(f, b)| 0.5 * (f + b))
        .collect();
    SimilarityMatrix::from_values(logits.rows, logits.cols, values)
}

/// Bi-directional softmax over raw (unnormalized) embedding dot products.
///
/// `f(i, j) = (softmax_j(n_i . m_j) + softmax_i(n_i . m_j)) / 2`
pub fn bisoftmax_matrix(dets: &[Embedding], cands: &[Embedding]) -> Result<SimilarityMatrix> {
    if dets.is_empty() || cands.is_empty() {
        return Err(Error::EmptySimilarity);
    }
    Ok(bisoftmax_from_logits(&logits(dets, cands)?))
}
