//! Dense real-symmetric linear algebra.
//!
//! Eigendecomposition, square and least-squares solves, and unitary
//! propagators `exp(-iHt)` built from a spectral decomposition. Matrices here
//! are small (a few hundred rows at most), so everything is dense.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen, SVD};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type ComplexMatrix = DMatrix<C64>;

/// Components below this magnitude are skipped when fixing eigenvector signs.
const SIGN_EPS: f64 = 1e-12;

/// Relative gap below which two eigenvalues are reported as tied.
const TIE_EPS: f64 = 1e-12;

/// Real symmetric matrix. Symmetry is exact: `m[(i, j)] == m[(j, i)]` bitwise.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    data: DMatrix<f64>,
}

impl SymMatrix {
    /// Builds a matrix from the upper triangle of `f`; the lower triangle is mirrored.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput(format!("matrix dimension {n} < 2")));
        }
        let mut data = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                data[(i, j)] = v;
                data[(j, i)] = v;
            }
        }
        Self::checked(data)
    }

    /// Takes ownership of `m`, rejecting it unless it is exactly symmetric.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidInput(format!(
                "matrix is {}x{}, expected square",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() < 2 {
            return Err(Error::InvalidInput(format!("matrix dimension {} < 2", m.nrows())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("symmetric matrix"));
        }
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::Asymmetric { row: i, col: j });
                }
            }
        }
        Self::checked(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput("rows have inconsistent lengths".into()));
        }
        Self::from_matrix(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    /// Averages `m` with its transpose. Used where a symmetric matrix is
    /// assembled from floating-point outer products.
    pub fn symmetrize(m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidInput("cannot symmetrize a non-square matrix".into()));
        }
        let n = m.nrows();
        Self::from_fn(n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
    }

    fn checked(data: DMatrix<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("symmetric matrix"));
        }
        Ok(Self { data })
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn trace(&self) -> f64 {
        self.data.trace()
    }

    /// `max |H[i][j] - H[n-1-i][n-1-j]|`; zero for centrosymmetric matrices.
    pub fn centrosymmetry_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.data[(i, j)] - self.data[(n - 1 - i, n - 1 - j)]).abs());
            }
        }
        worst
    }
}

/// Eigenvalues in ascending order with the matching orthonormal eigenvectors
/// as columns. Each column has its first non-negligible component positive.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    has_ties: bool,
}

impl EigenSystem {
    /// Assembles an eigensystem from explicit parts. Columns of `vectors` must
    /// be orthonormal; the caller is responsible for that. Values are sorted
    /// and the sign convention is applied.
    pub fn from_parts(values: DVector<f64>, vectors: DMatrix<f64>) -> Result<Self> {
        let n = values.len();
        if vectors.nrows() != n || vectors.ncols() != n {
            return Err(Error::InvalidInput("eigenvector matrix has the wrong shape".into()));
        }
        if values.iter().chain(vectors.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("eigensystem"));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));

        let eigenvalues = DVector::from_iterator(n, order.iter().map(|&k| values[k]));
        let mut eigenvectors = DMatrix::zeros(n, n);
        for (col, &k) in order.iter().enumerate() {
            let src = vectors.column(k);
            let sign = src
                .iter()
                .find(|v| v.abs() > SIGN_EPS)
                .map_or(1.0, |v| v.signum());
            eigenvectors.set_column(col, &(src * sign));
        }

        let scale = eigenvalues.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let has_ties = eigenvalues
            .as_slice()
            .windows(2)
            .any(|w| w[1] - w[0] <= TIE_EPS * scale);

        Ok(Self {
            eigenvalues,
            eigenvectors,
            has_ties,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// Component `site` of eigenvector `level` (both 0-based).
    pub fn component(&self, site: usize, level: usize) -> f64 {
        self.eigenvectors[(site, level)]
    }

    pub fn has_ties(&self) -> bool {
        self.has_ties
    }

    /// Smallest gap between consecutive eigenvalues.
    pub fn min_gap(&self) -> f64 {
        self.eigenvalues
            .as_slice()
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// `U diag(mu) U^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let u = &self.eigenvectors;
        u * DMatrix::from_diagonal(&self.eigenvalues) * u.transpose()
    }

    /// Max elementwise deviation of `U^T U` from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let n = self.dim();
        let gram = self.eigenvectors.transpose() * &self.eigenvectors;
        (gram - DMatrix::<f64>::identity(n, n)).abs().max()
    }

    /// Same eigenvectors with new eigenvalues. The caller keeps the order sorted.
    pub fn with_eigenvalues(&self, values: DVector<f64>) -> Result<Self> {
        Self::from_parts(values, self.eigenvectors.clone())
    }
}

pub fn eig_sym(m: &SymMatrix) -> Result<EigenSystem> {
    let eig = SymmetricEigen::new(m.as_matrix().clone());
    EigenSystem::from_parts(eig.eigenvalues, eig.eigenvectors)
}

#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub x: DVector<f64>,
    /// Ratio of the largest to the smallest singular value.
    pub condition: f64,
}

#[derive(Debug, Clone)]
pub struct LeastSquaresSolution {
    pub x: DVector<f64>,
    pub rank: usize,
    pub rank_deficient: bool,
    pub residual_norm: f64,
}

fn svd_rank_tol(svd: &SVD<f64, nalgebra::Dyn, nalgebra::Dyn>, rows: usize, cols: usize) -> f64 {
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    smax * rows.max(cols) as f64 * f64::EPSILON
}

fn check_finite(k: &DMatrix<f64>, e: &DVector<f64>) -> Result<()> {
    if k.iter().chain(e.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("linear system"));
    }
    Ok(())
}

/// Solves the square system `K x = e`.
pub fn solve_linear(k: &DMatrix<f64>, e: &DVector<f64>) -> Result<LinearSolution> {
    if !k.is_square() || k.nrows() != e.len() {
        return Err(Error::InvalidInput(format!(
            "system is {}x{} with rhs of length {}",
            k.nrows(),
            k.ncols(),
            e.len()
        )));
    }
    check_finite(k, e)?;
    let n = k.nrows();
    let svd = SVD::new(k.clone(), true, true);
    let tol = svd_rank_tol(&svd, n, n);
    let rank = svd.rank(tol);
    if rank < n {
        return Err(Error::Singular { rank, dim: n });
    }
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let x = svd
        .solve(e, tol)
        .map_err(|msg| Error::InvalidInput(msg.to_string()))?;
    Ok(LinearSolution {
        x,
        condition: smax / smin,
    })
}

/// Minimum-norm minimizer of `||K x - e||_2`. Rank deficiency is reported,
/// not treated as an error.
pub fn solve_least_squares(k: &DMatrix<f64>, e: &DVector<f64>) -> Result<LeastSquaresSolution> {
    if k.nrows() != e.len() {
        return Err(Error::InvalidInput(format!(
            "system has {} rows but rhs has length {}",
            k.nrows(),
            e.len()
        )));
    }
    check_finite(k, e)?;
    let (rows, cols) = k.shape();
    let svd = SVD::new(k.clone(), true, true);
    let tol = svd_rank_tol(&svd, rows, cols);
    let rank = svd.rank(tol);
    let x = svd
        .solve(e, tol)
        .map_err(|msg| Error::InvalidInput(msg.to_string()))?;
    let residual_norm = (k * &x - e).norm();
    Ok(LeastSquaresSolution {
        x,
        rank,
        rank_deficient: rank < rows.min(cols),
        residual_norm,
    })
}

/// The propagator `exp(-iHt) = U diag(exp(-i mu t)) U^T`.
pub fn evolve(es: &EigenSystem, t: f64) -> ComplexMatrix {
    let n = es.dim();
    let u = es.eigenvectors();
    let phases: Vec<C64> = es
        .eigenvalues()
        .iter()
        .map(|&mu| C64::from_polar(1.0, -mu * t))
        .collect();
    ComplexMatrix::from_fn(n, n, |i, j| {
        (0..n)
            .map(|m| phases[m] * (u[(i, m)] * u[(j, m)]))
            .sum()
    })
}
