//! Compressed sparse row storage.
//!
//! A [`Pattern`] is the shared sparsity structure (row pointers and column
//! indices). Edge-valued tensors in the autodiff graph are `nnz x 1` columns
//! whose k-th entry belongs to the k-th stored position of a pattern, so one
//! pattern can carry several value arrays (adjacency weights, masked
//! distances, attention scores) without copying the index structure.

use ndarray::Array2;

use super::NumError;

/// Sparsity structure in CSR order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pattern {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    rows: Vec<usize>,
}

impl Pattern {
    /// Builds a pattern from per-row sorted column lists.
    pub fn from_rows(ncols: usize, rows: &[Vec<usize>]) -> Result<Self, NumError> {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut row_of = Vec::new();
        indptr.push(0);
        for (i, cols) in rows.iter().enumerate() {
            let mut prev: Option<usize> = None;
            for &c in cols {
                if c >= ncols {
                    return Err(NumError::Index { op: "pattern", index: c, len: ncols });
                }
                if prev.is_some_and(|p| p >= c) {
                    return Err(NumError::Invalid(format!(
                        "pattern row {i} columns not strictly increasing"
                    )));
                }
                prev = Some(c);
                indices.push(c);
                row_of.push(i);
            }
            indptr.push(indices.len());
        }
        Ok(Self { nrows: rows.len(), ncols, indptr, indices, rows: row_of })
    }

    /// Pattern of every entry for which `keep(i, j)` holds.
    pub fn from_predicate(
        nrows: usize,
        ncols: usize,
        mut keep: impl FnMut(usize, usize) -> bool,
    ) -> Self {
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut row_of = Vec::new();
        indptr.push(0);
        for i in 0..nrows {
            for j in 0..ncols {
                if keep(i, j) {
                    indices.push(j);
                    row_of.push(i);
                }
            }
            indptr.push(indices.len());
        }
        Self { nrows, ncols, indptr, indices, rows: row_of }
    }

    /// Fully dense `n x m` pattern.
    pub fn dense(nrows: usize, ncols: usize) -> Self {
        Self::from_predicate(nrows, ncols, |_, _| true)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Row index of every stored entry.
    pub fn edge_rows(&self) -> &[usize] {
        &self.rows
    }

    /// Column indices of row `i`.
    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[self.indptr[i]..self.indptr[i + 1]]
    }

    /// Storage range of row `i`.
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.indptr[i]..self.indptr[i + 1]
    }

    /// Storage position of `(i, j)` if present.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let r = self.row_range(i);
        self.indices[r.clone()].binary_search(&j).ok().map(|k| r.start + k)
    }

    /// Iterator over `(k, i, j)` for every stored entry.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.indices.iter().enumerate().map(move |(k, &j)| (k, self.rows[k], j))
    }

    /// Fraction of stored entries.
    pub fn density(&self) -> f64 {
        if self.nrows == 0 || self.ncols == 0 {
            return 0.0;
        }
        self.nnz() as f64 / (self.nrows * self.ncols) as f64
    }

    /// Sub-pattern keeping the entries where `keep[k]` is set, plus the map
    /// from new positions to old positions.
    pub fn filter(&self, keep: &[bool]) -> (Pattern, Vec<usize>) {
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        let mut indices = Vec::new();
        let mut rows = Vec::new();
        let mut map = Vec::new();
        indptr.push(0);
        for i in 0..self.nrows {
            for k in self.row_range(i) {
                if keep[k] {
                    indices.push(self.indices[k]);
                    rows.push(i);
                    map.push(k);
                }
            }
            indptr.push(indices.len());
        }
        (Pattern { nrows: self.nrows, ncols: self.ncols, indptr, indices, rows }, map)
    }

    /// Scatters edge values into a dense matrix (zeros elsewhere).
    pub fn scatter(&self, values: &[f64]) -> Array2<f64> {
        let mut out = Array2::zeros((self.nrows, self.ncols));
        for (k, i, j) in self.iter() {
            out[[i, j]] = values[k];
        }
        out
    }

    /// Gathers the pattern's entries out of a dense matrix.
    pub fn gather(&self, dense: &Array2<f64>) -> Vec<f64> {
        self.iter().map(|(_, i, j)| dense[[i, j]]).collect()
    }
}

/// Sparse matrix: a pattern with one value per stored entry.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    pub pattern: Pattern,
    pub values: Vec<f64>,
}

impl Csr {
    pub fn new(pattern: Pattern, values: Vec<f64>) -> Result<Self, NumError> {
        if values.len() != pattern.nnz() {
            return Err(NumError::Invalid(format!(
                "csr: {} values for {} stored entries",
                values.len(),
                pattern.nnz()
            )));
        }
        Ok(Self { pattern, values })
    }

    /// Keeps the nonzero entries of `dense`.
    pub fn from_dense(dense: &Array2<f64>) -> Self {
        let (n, m) = dense.dim();
        let pattern = Pattern::from_predicate(n, m, |i, j| dense[[i, j]] != 0.0);
        let values = pattern.gather(dense);
        Self { pattern, values }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.pattern.nrows, self.pattern.ncols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        self.pattern.scatter(&self.values)
    }

    /// `self * rhs` for a dense right-hand side.
    pub fn matmul(&self, rhs: &Array2<f64>) -> Result<Array2<f64>, NumError> {
        spmm(&self.pattern, &self.values, rhs)
    }
}

/// Column ranges of a wide dense operand, sized so one block of a few
/// thousand rows stays cache-resident. Per-entry summation order does not
/// depend on the blocking.
pub fn column_blocks(d: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    const BLOCK: usize = 128;
    (0..d.div_ceil(BLOCK)).map(move |b| b * BLOCK..((b + 1) * BLOCK).min(d))
}

/// Sparse-times-dense product over a pattern with explicit values.
pub fn spmm(pattern: &Pattern, values: &[f64], rhs: &Array2<f64>) -> Result<Array2<f64>, NumError> {
    if pattern.ncols != rhs.nrows() {
        return Err(NumError::Shape {
            op: "spmm",
            lhs: (pattern.nrows, pattern.ncols),
            rhs: rhs.dim(),
        });
    }
    let d = rhs.ncols();
    let mut out = Array2::<f64>::zeros((pattern.nrows, d));
    let rhs_std = rhs.as_standard_layout();
    let rhs_s = rhs_std.as_slice().expect("standard layout");
    let out_s = out.as_slice_mut().expect("fresh array");
    for c in column_blocks(d) {
        for i in 0..pattern.nrows {
            let orow = &mut out_s[i * d + c.start..i * d + c.end];
            for k in pattern.row_range(i) {
                let v = values[k];
                if v == 0.0 {
                    continue;
                }
                let j = pattern.indices[k];
                let r = &rhs_s[j * d + c.start..j * d + c.end];
                for (o, x) in orow.iter_mut().zip(r) {
                    *o += v * x;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn spmm_matches_dense_product() {
        let a = array![[1.0, 0.0, 2.0], [0.0, 0.0, 0.0], [0.5, -1.0, 0.0]];
        let b = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let csr = Csr::from_dense(&a);
        assert_eq!(csr.nnz(), 4);
        let got = csr.matmul(&b).unwrap();
        assert_eq!(got, a.dot(&b));
    }

    #[test]
    fn filter_keeps_row_order() {
        let p = Pattern::dense(2, 3);
        let (f, map) = p.filter(&[true, false, true, false, true, false]);
        assert_eq!(f.row(0), &[0, 2]);
        assert_eq!(f.row(1), &[1]);
        assert_eq!(map, vec![0, 2, 4]);
        assert_eq!(f.position(1, 1), Some(2));
        assert_eq!(f.position(1, 0), None);
    }

    #[test]
    fn rejects_unsorted_rows() {
        assert!(Pattern::from_rows(3, &[vec![2, 1]]).is_err());
        assert!(Pattern::from_rows(3, &[vec![3]]).is_err());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let csr = Csr::from_dense(&Array2::eye(3));
        let err = csr.matmul(&Array2::zeros((2, 2))).unwrap_err();
        assert!(err.to_string().contains("spmm"));
    }
}
