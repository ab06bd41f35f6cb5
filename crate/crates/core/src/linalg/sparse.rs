use num_complex::Complex64;

/// Element types storable in a [`SparseMatrix`].
pub trait Scalar:
    Copy
    + PartialEq
    + std::fmt::Debug
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Neg<Output = Self>
{
    const ZERO: Self;
}

impl Scalar for f64 {
    const ZERO: f64 = 0.0;
}

impl Scalar for Complex64 {
    const ZERO: Complex64 = Complex64::new(0.0, 0.0);
}

/// Compressed sparse row matrix. Column indices are sorted within each row
/// and duplicates from assembly are summed; structural zeros are kept only
/// when the assembly produced them (e.g. exact cancellation).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix<T: Scalar = f64> {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> SparseMatrix<T> {
    /// Assemble from (row, col, value) triplets. Duplicate positions are
    /// summed, matching the usual finite-element/network assembly idiom.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> Self {
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r},{c}) out of bounds");
        }
        let mut sorted: Vec<(usize, usize, T)> = triplets.to_vec();
        sorted.sort_by_key(|t| (t.0, t.1));

        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<T> = Vec::with_capacity(sorted.len());
        let mut prev: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            if prev == Some((r, c)) {
                let last = values.last_mut().unwrap();
                *last = *last + v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                prev = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        SparseMatrix { nrows, ncols, row_ptr, col_idx, values }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        SparseMatrix {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self
    where
        T: From<f64>,
    {
        let triplets: Vec<(usize, usize, T)> = (0..n).map(|i| (i, i, T::from(1.0))).collect();
        Self::from_triplets(n, n, &triplets)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Value at (i, j); zero when the position is not stored.
    pub fn get(&self, i: usize, j: usize) -> T {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(pos) => self.values[lo + pos],
            Err(_) => T::ZERO,
        }
    }

    /// Stored entries of row `i` as (col, value) pairs, ascending by column.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi]
            .iter()
            .zip(&self.values[lo..hi])
            .map(|(&c, &v)| (c, v))
    }

    /// All stored entries as (row, col, value).
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(c, v)| (i, c, v)))
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.ncols, "matvec dimension mismatch");
        let mut y = vec![T::ZERO; self.nrows];
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = T::ZERO;
            for (c, v) in self.row(i) {
                acc = acc + v * x[c];
            }
            *yi = acc;
        }
        y
    }

    /// Multiply every stored value by `s`, keeping the pattern.
    pub fn scale(&self, s: T) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v = *v * s;
        }
        out
    }

    /// `alpha * a + b` with pattern union.
    pub fn scaled_add(alpha: T, a: &Self, b: &Self) -> Self {
        assert_eq!(a.nrows, b.nrows, "scaled_add shape mismatch");
        assert_eq!(a.ncols, b.ncols, "scaled_add shape mismatch");
        let mut row_ptr = vec![0usize; a.nrows + 1];
        let mut col_idx = Vec::with_capacity(a.nnz().max(b.nnz()));
        let mut values = Vec::with_capacity(a.nnz().max(b.nnz()));
        for i in 0..a.nrows {
            let mut ra = a.row(i).peekable();
            let mut rb = b.row(i).peekable();
            loop {
                match (ra.peek().copied(), rb.peek().copied()) {
                    (Some((ca, va)), Some((cb, vb))) => {
                        if ca == cb {
                            col_idx.push(ca);
                            values.push(alpha * va + vb);
                            ra.next();
                            rb.next();
                        } else if ca < cb {
                            col_idx.push(ca);
                            values.push(alpha * va);
                            ra.next();
                        } else {
                            col_idx.push(cb);
                            values.push(vb);
                            rb.next();
                        }
                    }
                    (Some((ca, va)), None) => {
                        col_idx.push(ca);
                        values.push(alpha * va);
                        ra.next();
                    }
                    (None, Some((cb, vb))) => {
                        col_idx.push(cb);
                        values.push(vb);
                        rb.next();
                    }
                    (None, None) => break,
                }
            }
            row_ptr[i + 1] = col_idx.len();
        }
        SparseMatrix { nrows: a.nrows, ncols: a.ncols, row_ptr, col_idx, values }
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut d = vec![vec![T::ZERO; self.ncols]; self.nrows];
        for (i, j, v) in self.iter() {
            d[i][j] = v;
        }
        d
    }

    /// Compressed sparse column view: (col_ptr, row_idx, values) with rows
    /// ascending within each column.
    pub(crate) fn to_csc(&self) -> (Vec<usize>, Vec<usize>, Vec<T>) {
        let mut col_counts = vec![0usize; self.ncols];
        for &c in &self.col_idx {
            col_counts[c] += 1;
        }
        let mut col_ptr = vec![0usize; self.ncols + 1];
        for c in 0..self.ncols {
            col_ptr[c + 1] = col_ptr[c] + col_counts[c];
        }
        let mut row_idx = vec![0usize; self.nnz()];
        let mut vals = vec![T::ZERO; self.nnz()];
        let mut next = col_ptr.clone();
        for i in 0..self.nrows {
            for (c, v) in self.row(i) {
                let slot = next[c];
                row_idx[slot] = i;
                vals[slot] = v;
                next[c] += 1;
            }
        }
        (col_ptr, row_idx, vals)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplet_assembly_sums_duplicates() {
        let m = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 1, 4.0)]);
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(1, 1), 4.0);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn empty_rows_are_preserved() {
        let m = SparseMatrix::from_triplets(4, 4, &[(0, 1, 1.0), (3, 2, 5.0)]);
        assert_eq!(m.row(1).count(), 0);
        assert_eq!(m.row(2).count(), 0);
        assert_eq!(m.get(3, 2), 5.0);
        let y = m.matvec(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(y, vec![2.0, 0.0, 0.0, 15.0]);
    }

    #[test]
    fn scaled_add_merges_patterns() {
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 0, 2.0)]);
        let b = SparseMatrix::from_triplets(2, 2, &[(0, 1, 3.0), (1, 0, 1.0)]);
        let c = SparseMatrix::scaled_add(2.0, &a, &b);
        assert_eq!(c.get(0, 0), 2.0);
        assert_eq!(c.get(0, 1), 3.0);
        assert_eq!(c.get(1, 0), 5.0);
    }

    #[test]
    fn csc_round_trip_matches_get() {
        let m = SparseMatrix::from_triplets(
            3,
            3,
            &[(0, 2, 1.5), (1, 0, -2.0), (2, 2, 4.0), (0, 0, 0.5)],
        );
        let (cp, ri, vs) = m.to_csc();
        let mut seen = 0;
        for c in 0..3 {
            for k in cp[c]..cp[c + 1] {
                assert_eq!(m.get(ri[k], c), vs[k]);
                seen += 1;
            }
        }
        assert_eq!(seen, m.nnz());
    }
}
