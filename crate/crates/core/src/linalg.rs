//! Symmetric eigendecomposition helpers: pseudo-inverses, square roots and spectral functions.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative cutoff below which eigenvalues count as zero.
pub const PINV_REL: f64 = 1e-10;

/// Eigendecomposition of a symmetric matrix with a relative zero cutoff.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
    pub cutoff: f64,
}

impl SymEig {
    /// Decompose `m` after symmetrizing it.
    pub fn new(m: &DMatrix<f64>, rel: f64) -> Self {
        let sym = symmetrize(m);
        let eig = SymmetricEigen::new(sym);
        let max_abs = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        SymEig {
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
            cutoff: rel * max_abs,
        }
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Indices of eigenvalues above the cutoff.
    pub fn kept(&self) -> Vec<usize> {
        (0..self.values.len())
            .filter(|&i| self.values[i] > self.cutoff && self.values[i] > 0.0)
            .collect()
    }

    pub fn rank(&self) -> usize {
        self.kept().len()
    }

    /// `f(M) x` restricted to the numerically nonzero eigenspace.
    pub fn apply(&self, x: &DVector<f64>, f: impl Fn(f64) -> f64) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        for i in self.kept() {
            let col = self.vectors.column(i);
            let c = col.dot(x) * f(self.values[i]);
            out.axpy(c, &col, 1.0);
        }
        out
    }

    /// Matrix `f(M)` over the nonzero eigenspace.
    pub fn matrix(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let n = self.values.len();
        let mut out = DMatrix::zeros(n, n);
        for i in self.kept() {
            let col = self.vectors.column(i);
            out.ger(f(self.values[i]), &col, &col, 1.0);
        }
        symmetrize(&out)
    }

    /// Moore–Penrose pseudo-inverse applied to `x`.
    pub fn pinv_apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.apply(x, |l| 1.0 / l)
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `(sqrt M)^+` for a PSD matrix, clamping negative eigenvalues to zero.
pub fn sqrt_pinv(m: &DMatrix<f64>, rel: f64) -> DMatrix<f64> {
    SymEig::new(m, rel).matrix(|l| 1.0 / l.sqrt())
}

/// Eigenvalues of a symmetric matrix sorted descending.
pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut v: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}
