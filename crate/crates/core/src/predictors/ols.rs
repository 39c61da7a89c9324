use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::TrainingSet;
use crate::error::{Error, Result};

/// Gram matrices with a condition estimate above this get a ridge term.
const MAX_CONDITION: f64 = 1e12;
/// Ridge strength relative to the mean diagonal of the Gram matrix.
const RIDGE_SCALE: f64 = 1e-8;

/// Least squares with an intercept, solved through the normal equations.
///
/// Features are used as given (no standardization). When the Gram matrix is
/// numerically singular a small ridge `1e-8 * trace / dim` is added to its
/// diagonal, which approximates the minimum-norm solution.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsModel {
    intercept: f64,
    slopes: Vec<f64>,
    ridge: f64,
}

impl OlsModel {
    pub fn fit(ts: &TrainingSet) -> Result<Self> {
        let n = ts.n_rows();
        if n == 0 {
            return Err(Error::EmptyTrainingSet);
        }
        let p = ts.n_features();
        if p == 0 {
            return Err(Error::InvalidConfig(
                "least squares needs at least one feature".into(),
            ));
        }
        let dim = p + 1;
        let mut gram = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        let mut x = vec![1.0; dim];
        for r in 0..n {
            x[1..].copy_from_slice(ts.row(r));
            let y = ts.responses()[r];
            for a in 0..dim {
                rhs[a] += x[a] * y;
                for b in 0..=a {
                    gram[(a, b)] += x[a] * x[b];
                }
            }
        }
        for a in 0..dim {
            for b in 0..a {
                gram[(b, a)] = gram[(a, b)];
            }
        }

        let (beta, ridge) = solve_normal_equations(gram, &rhs);
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("least-squares coefficients"));
        }
        Ok(Self {
            intercept: beta[0],
            slopes: beta.iter().skip(1).copied().collect(),
            ridge,
        })
    }

    pub fn from_coefficients(intercept: f64, slopes: Vec<f64>) -> Self {
        Self {
            intercept,
            slopes,
            ridge: 0.0,
        }
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    /// Ridge added to the Gram diagonal (0 when the system was well conditioned).
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn n_features(&self) -> usize {
        self.slopes.len()
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.intercept + self.slopes.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

/// Solves `gram * beta = rhs`, regularizing when the system is near singular.
/// Returns the solution and the ridge that was applied.
pub(crate) fn solve_normal_equations(gram: DMatrix<f64>, rhs: &DVector<f64>) -> (DVector<f64>, f64) {
    let dim = gram.nrows();
    let trace = gram.trace();
    let eig = SymmetricEigen::new(gram.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let well_conditioned = min > 0.0 && max / min <= MAX_CONDITION;
    if well_conditioned {
        if let Some(chol) = gram.cholesky() {
            return (chol.solve(rhs), 0.0);
        }
    }
    let ridge = RIDGE_SCALE * trace / dim as f64;
    let projected = eig.eigenvectors.transpose() * rhs;
    let scaled = DVector::from_iterator(
        dim,
        projected
            .iter()
            .zip(eig.eigenvalues.iter())
            .map(|(v, l)| v / (l + ridge)),
    );
    (&eig.eigenvectors * scaled, ridge)
}
