use super::{lu_factorize, LinalgError, LuFactors, SparseMatrix};

/// One step's frozen stage system for the semi-implicit engine.
///
/// The full 2n-by-2n matrix
///
/// ```text
///   E = [ I        -h*gamma*I   ]
///       [ -h*gamma*j21  -h*gamma*j22 ]
/// ```
///
/// is never materialized: block LDU elimination reduces every stage solve to
/// one pair of triangular solves with the n-by-n Schur factor
/// `S = h*gamma*j21 + j22`, factorized exactly once per step.
pub struct StageSystem {
    h: f64,
    gamma: f64,
    j21: SparseMatrix<f64>,
    j22: SparseMatrix<f64>,
    schur_lu: LuFactors,
}

/// Factorizes `h*gamma*j21 + j22`. A singular Schur block is a recoverable
/// event: the caller rejects the step and retries with a smaller h.
pub fn build_stage_system(
    h: f64,
    gamma: f64,
    j21: SparseMatrix<f64>,
    j22: SparseMatrix<f64>,
) -> Result<StageSystem, LinalgError> {
    assert!(h > 0.0 && gamma > 0.0, "stage system needs h > 0 and gamma > 0");
    if j21.nrows() != j21.ncols() || j22.nrows() != j22.ncols() || j21.nrows() != j22.nrows() {
        return Err(LinalgError::Dimension(format!(
            "stage blocks must be square and equal-sized, got {}x{} and {}x{}",
            j21.nrows(),
            j21.ncols(),
            j22.nrows(),
            j22.ncols()
        )));
    }
    let schur = SparseMatrix::scaled_add(h * gamma, &j21, &j22);
    let schur_lu = lu_factorize(&schur)?;
    Ok(StageSystem { h, gamma, j21, j22, schur_lu })
}

impl StageSystem {
    pub fn n(&self) -> usize {
        self.j22.nrows()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn j21(&self) -> &SparseMatrix<f64> {
        &self.j21
    }

    pub fn j22(&self) -> &SparseMatrix<f64> {
        &self.j22
    }

    /// Solve one stage of the block system:
    ///
    /// ```text
    ///   k - h*gamma*l                 = rhs_top
    ///   -h*gamma*(j21*k + j22*l)      = rhs_bot
    /// ```
    ///
    /// Eliminating `k = rhs_top + h*gamma*l` reduces to
    /// `S l = -rhs_bot/(h*gamma) - j21*rhs_top`; one forward/backward solve
    /// pair per call, no new factorization.
    pub fn stage_solve(&self, rhs_top: &[f64], rhs_bot: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        assert_eq!(rhs_top.len(), n, "stage_solve rhs_top length");
        assert_eq!(rhs_bot.len(), n, "stage_solve rhs_bot length");
        let hg = self.h * self.gamma;
        let j21_top = self.j21.matvec(rhs_top);
        let rhs: Vec<f64> = (0..n).map(|i| -rhs_bot[i] / hg - j21_top[i]).collect();
        let l = self.schur_lu.solve(&rhs);
        let k: Vec<f64> = (0..n).map(|i| rhs_top[i] + hg * l[i]).collect();
        (k, l)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rhs_gives_zero_stage() {
        let j21 = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)]);
        let j22 = SparseMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (1, 1, 2.0)]);
        let sys = build_stage_system(0.5, 0.6, j21, j22).unwrap();
        let (k, l) = sys.stage_solve(&[0.0, 0.0], &[0.0, 0.0]);
        assert_eq!(k, vec![0.0, 0.0]);
        assert_eq!(l, vec![0.0, 0.0]);
    }

    #[test]
    fn hand_worked_two_by_two() {
        // j21 = I, j22 = 2I, h = 1, gamma = 0.5; dense ground truth solved
        // from the full 4x4 system by hand:
        //   k - 0.5 l = rhs_top
        //   -0.5 (k + 2 l) = rhs_bot
        // with rhs_top = (1, 0), rhs_bot = (-1, 0):
        //   component 0: k - 0.5 l = 1 ; k + 2 l = 2  =>  l = 0.4, k = 1.2
        let j21: SparseMatrix<f64> = SparseMatrix::identity(2);
        let j22 = SparseMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (1, 1, 2.0)]);
        let sys = build_stage_system(1.0, 0.5, j21, j22).unwrap();
        let (k, l) = sys.stage_solve(&[1.0, 0.0], &[-1.0, 0.0]);
        assert!((k[0] - 1.2).abs() < 1e-14 && k[1].abs() < 1e-14);
        assert!((l[0] - 0.4).abs() < 1e-14 && l[1].abs() < 1e-14);
    }

    #[test]
    fn schur_block_tends_to_j22_as_h_vanishes() {
        let j21 = SparseMatrix::from_triplets(2, 2, &[(0, 0, 7.0), (0, 1, -3.0), (1, 1, 5.0)]);
        let j22 = SparseMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (1, 1, 2.0)]);
        let s = SparseMatrix::scaled_add(1e-12 * 0.57, &j21, &j22);
        for i in 0..2 {
            for j in 0..2 {
                assert!((s.get(i, j) - j22.get(i, j)).abs() < 1e-10);
            }
        }
    }
}
