//! Small dense symmetric-matrix helpers: correlation matrices, eigenvalue
//! repair, and square roots for correlated sampling.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};

/// Dense symmetric matrix with unit diagonal, serialized as nested rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix(pub DMatrix<f64>);

impl CorrelationMatrix {
    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(invalid("correlation matrix must be square"));
        }
        Ok(Self(DMatrix::from_fn(n, n, |i, j| rows[i][j])))
    }

    /// 2×2 matrix with off-diagonal `rho`.
    pub fn pair(rho: f64) -> Self {
        Self(DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| self.0[(i, j)]).collect())
            .collect()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.0)
    }

    /// Checks shape, symmetry, unit diagonal and finiteness (not definiteness).
    pub fn check_structure(&self, name: &str) -> Result<()> {
        let m = &self.0;
        if m.nrows() != m.ncols() {
            return Err(invalid(format!("{name} must be square")));
        }
        for i in 0..m.nrows() {
            if (m[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(invalid(format!(
                    "{name} diagonal entry ({i},{i}) is {}, expected 1",
                    m[(i, i)]
                )));
            }
            for j in 0..i {
                let (a, b) = (m[(i, j)], m[(j, i)]);
                if !a.is_finite() || (a - b).abs() > 1e-12 {
                    return Err(invalid(format!("{name} is not symmetric at ({i},{j})")));
                }
                if a.abs() > 1.0 {
                    return Err(invalid(format!(
                        "{name} entry ({i},{j}) = {a} lies outside [-1, 1]"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn check_psd(&self, name: &str) -> Result<()> {
        let min = self.min_eigenvalue();
        if min < -PSD_TOLERANCE {
            return Err(Error::NotPsd {
                name: name.to_string(),
                min_eigenvalue: min,
            });
        }
        Ok(())
    }
}

/// Eigenvalues above `-PSD_TOLERANCE` count as nonnegative.
pub const PSD_TOLERANCE: f64 = 1e-10;

impl Serialize for CorrelationMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for CorrelationMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        CorrelationMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Symmetric square root `V·diag(√max(λ,0))·Vᵀ`, returned row-major.
pub fn symmetric_sqrt(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let v = &eig.eigenvectors;
    let mut root = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            root[i * n + j] = (0..n)
                .map(|k| v[(i, k)] * eig.eigenvalues[k].max(0.0).sqrt() * v[(j, k)])
                .sum();
        }
    }
    root
}

/// Floor the spectrum of a symmetric unit-diagonal matrix at `floor` and rescale
/// back to unit diagonal.
///
/// The rescaling `D^{-1/2} A D^{-1/2}` can pull the smallest eigenvalue slightly
/// under `floor` again, so the floor-and-rescale step is repeated (at most a few
/// times) until the result's spectrum clears it. Inputs that already clear the
/// floor are returned unchanged.
pub fn repair_psd(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    assert!(floor > 0.0, "eigenvalue floor must be positive");
    let n = m.nrows();
    let mut current = symmetrize(m);
    for i in 0..n {
        current[(i, i)] = 1.0;
    }
    if n == 0 || min_eigenvalue(&current) >= floor {
        return current;
    }
    // Aim slightly above the floor so the rescale rarely needs another round.
    let target = floor * 1.01;
    for _ in 0..50 {
        let eig = SymmetricEigen::new(current.clone());
        let lambda = eig.eigenvalues.map(|l| l.max(target));
        let floored =
            &eig.eigenvectors * DMatrix::from_diagonal(&lambda) * eig.eigenvectors.transpose();
        let scale: Vec<f64> = (0..n).map(|i| floored[(i, i)].sqrt().recip()).collect();
        let mut next = DMatrix::from_fn(n, n, |i, j| floored[(i, j)] * scale[i] * scale[j]);
        next = symmetrize(&next);
        for i in 0..n {
            next[(i, i)] = 1.0;
        }
        current = next;
        if min_eigenvalue(&current) >= floor {
            break;
        }
    }
    current
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}
