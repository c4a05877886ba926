use serde::{Deserialize, Serialize};

use super::DiffError;

/// Dense row-major array of `f64` values.
///
/// Most operations treat an array as a matrix: a 2-D shape `[rows, cols]`
/// is used directly, a 1-D shape `[n]` is a single row and a 0-D shape is a
/// 1×1 scalar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, DiffError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(DiffError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    /// Builds a `rows × cols` matrix. Panics if `data.len() != rows * cols`.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    /// Single-row matrix.
    pub fn row_vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::matrix(1, n, data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DiffError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(DiffError::Shape {
                    op: "from_rows",
                    left: vec![rows.len(), cols],
                    right: vec![1, r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self::matrix(rows.len(), cols, data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.data.len(), other.data.len());
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self::matrix(idx.len(), c, data)
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn vstack(parts: &[&Array]) -> Result<Self, DiffError> {
        let cols = parts.first().map_or(0, |a| a.cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols() != cols {
                return Err(DiffError::Shape {
                    op: "vstack",
                    left: vec![rows, cols],
                    right: p.shape.clone(),
                });
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        Ok(Self::matrix(rows, cols, data))
    }

    pub(crate) fn as_matrix_shape(&self) -> [usize; 2] {
        [self.rows(), self.cols()]
    }
}

/// `c = a · b` for `a: r×k`, `b: k×m`.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], c: &mut [f64], r: usize, k: usize, m: usize) {
    for i in 0..r {
        let crow = &mut c[i * m..(i + 1) * m];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `c += a · bᵀ` for `a: r×m`, `b: k×m`, giving `r×k`.
pub(crate) fn matmul_nt_into(a: &[f64], b: &[f64], c: &mut [f64], r: usize, m: usize, k: usize) {
    for i in 0..r {
        let arow = &a[i * m..(i + 1) * m];
        for j in 0..k {
            let brow = &b[j * m..(j + 1) * m];
            c[i * k + j] += dot(arow, brow);
        }
    }
}

/// `c += aᵀ · b` for `a: r×k`, `b: r×m`, giving `k×m`.
pub(crate) fn matmul_tn_into(a: &[f64], b: &[f64], c: &mut [f64], r: usize, k: usize, m: usize) {
    for i in 0..r {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * m..(p + 1) * m];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// Dense matrix product outside of any tape.
pub fn matmul(a: &Array, b: &Array) -> Result<Array, DiffError> {
    let [r, k] = a.as_matrix_shape();
    let [k2, m] = b.as_matrix_shape();
    if k != k2 {
        return Err(DiffError::Shape {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; r * m];
    matmul_into(a.data(), b.data(), &mut out, r, k, m);
    Ok(Array::matrix(r, m, out))
}

/// Compressed sparse row matrix, used for graph propagation.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from a dense matrix, keeping nonzero entries.
    pub fn from_dense(dense: &Array) -> Self {
        let [rows, cols] = dense.as_matrix_shape();
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for r in 0..rows {
            for (c, &v) in dense.row(r).iter().enumerate() {
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut indptr = vec![0; rows + 1];
        let mut indices: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < rows && c < cols, "triplet out of range");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn to_dense(&self) -> Array {
        let mut out = Array::zeros(&[self.rows, self.cols]);
        for r in 0..self.rows {
            for p in self.indptr[r]..self.indptr[r + 1] {
                out.data_mut()[r * self.cols + self.indices[p]] = self.values[p];
            }
        }
        out
    }

    /// `out += S · x` with `x: cols×m`.
    pub(crate) fn mul_into(&self, x: &[f64], m: usize, out: &mut [f64]) {
        for r in 0..self.rows {
            let orow = &mut out[r * m..(r + 1) * m];
            for p in self.indptr[r]..self.indptr[r + 1] {
                let v = self.values[p];
                let xrow = &x[self.indices[p] * m..(self.indices[p] + 1) * m];
                for (o, &xv) in orow.iter_mut().zip(xrow) {
                    *o += v * xv;
                }
            }
        }
    }

    /// `out += Sᵀ · g` with `g: rows×m`.
    pub(crate) fn mul_transpose_into(&self, g: &[f64], m: usize, out: &mut [f64]) {
        for r in 0..self.rows {
            let grow = &g[r * m..(r + 1) * m];
            for p in self.indptr[r]..self.indptr[r + 1] {
                let v = self.values[p];
                let c = self.indices[p];
                let orow = &mut out[c * m..(c + 1) * m];
                for (o, &gv) in orow.iter_mut().zip(grow) {
                    *o += v * gv;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_bad_length() {
        assert!(matches!(
            Array::new(vec![2, 3], vec![0.0; 5]),
            Err(DiffError::DataLength { .. })
        ));
    }

    #[test]
    fn matmul_small() {
        let a = Array::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let b = Array::matrix(2, 1, vec![5.0, 6.0]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[17.0, 39.0]);
        assert!(matmul(&b, &b).is_err());
    }

    #[test]
    fn transposed_kernels_agree_with_dense() {
        let a = Array::matrix(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.5]);
        let b = Array::matrix(4, 3, (0..12).map(|v| v as f64 * 0.25 - 1.0).collect());
        let mut nt = vec![0.0; 8];
        matmul_nt_into(a.data(), b.data(), &mut nt, 2, 3, 4);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|p| a.get(i, p) * b.get(j, p)).sum();
                assert_eq!(nt[i * 4 + j], want);
            }
        }
        let c = Array::matrix(2, 2, vec![1.0, 2.0, -1.0, 0.5]);
        let mut tn = vec![0.0; 6];
        matmul_tn_into(a.data(), c.data(), &mut tn, 2, 3, 2);
        for p in 0..3 {
            for j in 0..2 {
                let want: f64 = (0..2).map(|i| a.get(i, p) * c.get(i, j)).sum();
                assert!((tn[p * 2 + j] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sparse_roundtrip_and_products() {
        let dense = Array::matrix(3, 3, vec![0.5, 0.5, 0.0, 0.5, 0.25, 0.25, 0.0, 0.25, 0.75]);
        let s = SparseMatrix::from_dense(&dense);
        assert_eq!(s.nnz(), 7);
        assert_eq!(s.to_dense(), dense);
        let x = vec![1.0, 2.0, 3.0];
        let mut out = vec![0.0; 3];
        s.mul_into(&x, 1, &mut out);
        assert_eq!(out, matmul(&dense, &Array::matrix(3, 1, x.clone())).unwrap().into_data());
        let t = SparseMatrix::from_triplets(2, 2, vec![(1, 0, 1.0), (0, 1, 2.0), (1, 0, 0.5)]);
        assert_eq!(t.to_dense().data(), &[0.0, 2.0, 1.5, 0.0]);
        let mut tt = vec![0.0; 2];
        t.mul_transpose_into(&[1.0, 1.0], 1, &mut tt);
        assert_eq!(tt, vec![1.5, 2.0]);
    }
}
