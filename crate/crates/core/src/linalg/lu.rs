use super::{LinalgError, SparseMatrix};

const UNPIVOTED: usize = usize::MAX;

/// Reusable LU factorization of a square sparse real matrix,
/// `P A = L U` with partial (row) pivoting.
///
/// `L` is unit lower triangular and stored column-wise with original row
/// indices; `U` is stored column-wise in pivot order. Repeated solves reuse
/// the factors; no refactorization happens after construction.
pub struct LuFactors {
    n: usize,
    l_cols: Vec<Vec<(usize, f64)>>,
    u_cols: Vec<Vec<(usize, f64)>>,
    u_diag: Vec<f64>,
    pivrow: Vec<usize>,
}

/// Left-looking sparse LU (Gilbert-Peierls) with partial pivoting.
/// Ties in pivot magnitude break toward the smallest row index, so the
/// factorization is deterministic for identical input.
pub fn lu_factorize(a: &SparseMatrix<f64>) -> Result<LuFactors, LinalgError> {
    if a.nrows() != a.ncols() {
        return Err(LinalgError::Dimension(format!(
            "LU needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let n = a.nrows();
    let (col_ptr, row_idx, vals) = a.to_csc();

    let mut pinv = vec![UNPIVOTED; n];
    let mut pivrow = vec![0usize; n];
    let mut l_cols: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    let mut u_cols: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    let mut u_diag = vec![0.0; n];

    let mut x = vec![0.0f64; n];
    let mut stamp = vec![usize::MAX; n];
    let mut topo: Vec<usize> = Vec::with_capacity(n);
    // explicit DFS stack of (node, next-child-position)
    let mut stack: Vec<(usize, usize)> = Vec::with_capacity(n);

    for j in 0..n {
        // symbolic step: pattern of L^{-1} a_j via depth-first search on the
        // directed graph of already-computed L columns
        topo.clear();
        for &start in &row_idx[col_ptr[j]..col_ptr[j + 1]] {
            if stamp[start] == j {
                continue;
            }
            stamp[start] = j;
            stack.push((start, 0));
            while let Some((node, child_pos)) = stack.pop() {
                let children: &[(usize, f64)] = if pinv[node] != UNPIVOTED {
                    &l_cols[pinv[node]]
                } else {
                    &[]
                };
                let mut advanced = false;
                let mut pos = child_pos;
                while pos < children.len() {
                    let (r, _) = children[pos];
                    pos += 1;
                    if stamp[r] != j {
                        stamp[r] = j;
                        stack.push((node, pos));
                        stack.push((r, 0));
                        advanced = true;
                        break;
                    }
                }
                if !advanced {
                    topo.push(node); // post-order
                }
            }
        }

        // numeric step: sparse triangular solve in topological order
        for &i in &topo {
            x[i] = 0.0;
        }
        for k in col_ptr[j]..col_ptr[j + 1] {
            x[row_idx[k]] = vals[k];
        }
        for &i in topo.iter().rev() {
            if pinv[i] != UNPIVOTED {
                let xi = x[i];
                if xi != 0.0 {
                    for &(r, lv) in &l_cols[pinv[i]] {
                        x[r] -= lv * xi;
                    }
                }
            }
        }

        // partial pivoting over the not-yet-pivoted rows of the pattern
        let mut piv = UNPIVOTED;
        let mut piv_abs = 0.0f64;
        for &i in &topo {
            if pinv[i] == UNPIVOTED {
                let a = x[i].abs();
                if a > piv_abs || (a == piv_abs && a > 0.0 && i < piv) {
                    piv = i;
                    piv_abs = a;
                }
            }
        }
        if piv == UNPIVOTED || piv_abs == 0.0 {
            return Err(LinalgError::Singular { col: j });
        }
        let piv_val = x[piv];

        let mut ucol: Vec<(usize, f64)> = topo
            .iter()
            .filter(|&&i| pinv[i] != UNPIVOTED)
            .map(|&i| (pinv[i], x[i]))
            .collect();
        ucol.sort_unstable_by_key(|&(k, _)| k);
        let lcol: Vec<(usize, f64)> = topo
            .iter()
            .filter(|&&i| pinv[i] == UNPIVOTED && i != piv && x[i] != 0.0)
            .map(|&i| (i, x[i] / piv_val))
            .collect();

        u_diag[j] = piv_val;
        u_cols.push(ucol);
        l_cols.push(lcol);
        pinv[piv] = j;
        pivrow[j] = piv;
    }

    Ok(LuFactors { n, l_cols, u_cols, u_diag, pivrow })
}

impl LuFactors {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Solve `A x = b` using the stored factors.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "solve dimension mismatch");
        let mut work = b.to_vec();
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            let t = work[self.pivrow[j]];
            y[j] = t;
            if t != 0.0 {
                for &(r, lv) in &self.l_cols[j] {
                    work[r] -= lv * t;
                }
            }
        }
        for j in (0..self.n).rev() {
            let t = y[j] / self.u_diag[j];
            y[j] = t;
            if t != 0.0 {
                for &(k, uv) in &self.u_cols[j] {
                    y[k] -= uv * t;
                }
            }
        }
        y
    }
}
