//! Dense symmetric positive-definite kernels: Cholesky, Gaussian draws and
//! Gaussian conditioning.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{MeldError, Result};

/// Relative symmetry tolerance for [`SpdMatrix`].
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Cholesky pivots at or below this fraction of the largest diagonal entry fail.
pub const PIVOT_FLOOR: f64 = 1e-12;

/// A dense symmetric matrix that is expected to be positive definite.
///
/// Construction only checks symmetry; positive definiteness is established by
/// [`cholesky`], which reports the failing pivot.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(MeldError::Dimension(format!("{}x{} matrix is not square", m.nrows(), m.ncols())));
        }
        let scale = m.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(MeldError::Validation(format!("matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(MeldError::Validation("matrix has non-finite entries".into()));
        }
        Ok(SpdMatrix(m))
    }

    pub fn identity(n: usize) -> Self {
        SpdMatrix(DMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scaled(&self, s: f64) -> SpdMatrix {
        SpdMatrix(&self.0 * s)
    }
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = A`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: DMatrix<f64>,
}

/// Factor an SPD matrix.
pub fn cholesky(m: &SpdMatrix) -> Result<Cholesky> {
    Cholesky::factor(&m.0)
}

impl Cholesky {
    /// Factor a matrix already known to be symmetric (only the lower triangle is read).
    pub fn factor(a: &DMatrix<f64>) -> Result<Cholesky> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(MeldError::Dimension("cholesky of non-square matrix".into()));
        }
        let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(0.0f64, f64::max);
        let floor = PIVOT_FLOOR * max_diag.max(f64::MIN_POSITIVE);
        let mut l = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > floor) {
                return Err(MeldError::NotPositiveDefinite { pivot: j, value: d });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Cholesky { l })
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// ln det(A) = 2 Σ ln L_ii
    pub fn ln_det(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.l[(i, i)].ln()).sum::<f64>()
    }

    /// Solve L x = b.
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut x = b.clone();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.l[(i, k)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
        x
    }

    /// Solve Lᵀ x = b.
    pub fn solve_upper(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut x = b.clone();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
        x
    }

    /// Solve A x = b.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut inv = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut e = DVector::<f64>::zeros(n);
            e[j] = 1.0;
            inv.set_column(j, &self.solve(&e));
        }
        // symmetrize away rounding
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                inv[(i, j)] = v;
                inv[(j, i)] = v;
            }
        }
        inv
    }

    /// xᵀ A⁻¹ x
    pub fn inv_quad_form(&self, x: &DVector<f64>) -> f64 {
        self.solve_lower(x).norm_squared()
    }
}

fn std_normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Draw from N(mean, cov) as mean + L z.
pub fn mvn_sample<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &SpdMatrix, rng: &mut R) -> Result<DVector<f64>> {
    if mean.len() != cov.dim() {
        return Err(MeldError::Dimension(format!("mean has {} entries, covariance is {}", mean.len(), cov.dim())));
    }
    let chol = cholesky(cov)?;
    Ok(mean + chol.l() * std_normal_vector(mean.len(), rng))
}

/// Draw from the Gaussian with precision `P` and linear term `b`, i.e.
/// N(P⁻¹ b, P⁻¹), the canonical form of every conjugate full conditional.
pub fn mvn_sample_canonical<R: Rng + ?Sized>(
    precision: &DMatrix<f64>,
    linear: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let chol = Cholesky::factor(precision)?;
    let mean = chol.solve(linear);
    let z = std_normal_vector(linear.len(), rng);
    Ok(mean + chol.solve_upper(&z))
}

/// Conditional distribution of coordinate `index` of N(mean, cov) given the
/// other coordinates, by the partition formulas
///
/// μ̃ = μ_i + c_{i,−i} C_{−i,−i}⁻¹ (x_{−i} − μ_{−i}),
/// σ̃² = c_ii − c_{i,−i} C_{−i,−i}⁻¹ c_{−i,i}.
///
/// `values_at_others` lists the remaining coordinates in their original order.
pub fn conditional_normal(
    mean: &DVector<f64>,
    cov: &SpdMatrix,
    index: usize,
    values_at_others: &DVector<f64>,
) -> Result<(f64, f64)> {
    let n = cov.dim();
    if mean.len() != n || index >= n || values_at_others.len() + 1 != n {
        return Err(MeldError::Dimension(format!(
            "conditional_normal: dim {n}, mean {}, index {index}, others {}",
            mean.len(),
            values_at_others.len()
        )));
    }
    let c = cov.matrix();
    if n == 1 {
        return Ok((mean[0], c[(0, 0)]));
    }
    let others: Vec<usize> = (0..n).filter(|&j| j != index).collect();
    let sub = DMatrix::from_fn(n - 1, n - 1, |a, b| c[(others[a], others[b])]);
    let cross = DVector::from_fn(n - 1, |a, _| c[(others[a], index)]);
    let resid = DVector::from_fn(n - 1, |a, _| values_at_others[a] - mean[others[a]]);
    let chol = Cholesky::factor(&sub)?;
    let w = chol.solve(&cross);
    let mu = mean[index] + w.dot(&resid);
    let var = c[(index, index)] - w.dot(&cross);
    if !(var >= 0.0) {
        return Err(MeldError::Numerical(format!("conditional variance {var:e} is negative")));
    }
    Ok((mu, var))
}

/// Same conditional as [`conditional_normal`] computed from the joint
/// precision `Q = C⁻¹`: σ̃² = 1/Q_ii, μ̃ = μ_i − Σ_{j≠i} Q_ij (x_j − μ_j) / Q_ii.
///
/// `values` is the full vector; its entry at `index` is ignored.
pub fn conditional_from_precision(
    precision: &DMatrix<f64>,
    mean: &[f64],
    values: &[f64],
    index: usize,
) -> (f64, f64) {
    let qii = precision[(index, index)];
    let mut s = 0.0;
    for j in 0..mean.len() {
        if j != index {
            s += precision[(index, j)] * (values[j] - mean[j]);
        }
    }
    (mean[index] - s / qii, 1.0 / qii)
}
