//! Population-level identification of the transfer weights.
//!
//! Given the true source coefficients `B` (p × K) and the target covariance
//! `Σ`, any `β` splits uniquely as `β = Bw + δ` with `BᵀΣδ = 0`:
//! `w = (BᵀΣB)⁻¹BᵀΣβ` and `δ = β − Bw`. That is the Σ-weighted projection of
//! `β` onto the span of the source vectors, and it is the ground truth the
//! estimator targets.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{solve_spd, sorted_eigen, MAX_CONDITION};

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationModel {
    pub b: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub w: DVector<f64>,
    pub delta: DVector<f64>,
    pub beta: DVector<f64>,
}

impl PopulationModel {
    /// Assembles `β = Bw + δ` from a given pair, which need not satisfy the
    /// identification condition.
    pub fn from_parts(
        b: DMatrix<f64>,
        sigma: DMatrix<f64>,
        w: DVector<f64>,
        delta: DVector<f64>,
    ) -> Result<Self> {
        let p = b.nrows();
        if sigma.shape() != (p, p) || w.len() != b.ncols() || delta.len() != p {
            return Err(Error::invalid("population model dimensions do not conform"));
        }
        let beta = &b * &w + &delta;
        Ok(PopulationModel {
            b,
            sigma,
            w,
            delta,
            beta,
        })
    }

    /// The canonical model for `β`, with `(w, δ)` from [`decompose`].
    pub fn canonical(beta: DVector<f64>, b: DMatrix<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let (w, delta) = decompose(&beta, &b, &sigma)?;
        Ok(PopulationModel {
            b,
            sigma,
            w,
            delta,
            beta,
        })
    }

    /// Per-source coefficient vectors `β⁽ᵏ⁾`.
    pub fn source_coefficients(&self) -> Vec<DVector<f64>> {
        self.b.column_iter().map(|c| c.into_owned()).collect()
    }
}

/// Canonical split of `β` into `(w, δ)` with `BᵀΣδ = 0`.
pub fn decompose(
    beta: &DVector<f64>,
    b: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let p = b.nrows();
    if beta.len() != p || sigma.shape() != (p, p) {
        return Err(Error::invalid("decompose: dimensions do not conform"));
    }
    let sigma_b = sigma * b;
    let normal = b.tr_mul(&sigma_b);
    let normal = (&normal + normal.transpose()) * 0.5;
    let (values, _) = sorted_eigen(&normal);
    let k = values.len();
    let lo = values[0];
    let hi = values[k - 1];
    if !(lo > 0.0) || hi / lo > MAX_CONDITION {
        return Err(Error::RankDeficient(format!(
            "BᵀΣB is singular (eigenvalues span [{lo:e}, {hi:e}])"
        )));
    }
    let rhs = sigma_b.tr_mul(beta);
    let w = solve_spd(&normal, &rhs).map_err(|e| Error::RankDeficient(e.to_string()))?;
    let delta = beta - b * &w;
    Ok((w, delta))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentificationCheck {
    pub holds: bool,
    /// `‖BᵀΣδ‖∞`.
    pub max_violation: f64,
}

/// Whether `‖BᵀΣδ‖∞ ≤ tol`.
pub fn check_identification(model: &PopulationModel, tol: f64) -> IdentificationCheck {
    let max_violation = model.b.tr_mul(&(&model.sigma * &model.delta)).amax();
    IdentificationCheck {
        holds: max_violation <= tol,
        max_violation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthonormal_projection() {
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let (w, d) = decompose(&DVector::from_vec(vec![2.0, 3.0]), &b, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(w, DVector::from_vec(vec![2.0]));
        assert_eq!(d, DVector::from_vec(vec![0.0, 3.0]));
    }

    #[test]
    fn in_span_has_zero_residual() {
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -1.0, 2.0, 0.0, 1.0]);
        let sigma = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 1.5]);
        let w0 = DVector::from_vec(vec![0.7, -1.3]);
        let (w, d) = decompose(&(&b * &w0), &b, &sigma).unwrap();
        assert!((w - w0).amax() < 1e-12);
        assert!(d.amax() < 1e-12);
    }

    #[test]
    fn singular_sources_rejected() {
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 0.0, 0.0]);
        let err = decompose(&DVector::zeros(3), &b, &DMatrix::identity(3, 3));
        assert!(matches!(err, Err(Error::RankDeficient(_))));
    }

    #[test]
    fn zero_delta_is_identified() {
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let model = PopulationModel::from_parts(
            b,
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![1.0]),
            DVector::zeros(2),
        )
        .unwrap();
        assert!(check_identification(&model, 0.0).holds);
    }

    #[test]
    fn canonical_model_is_identified() {
        let b = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 0.0]);
        let model = PopulationModel::canonical(
            DVector::from_vec(vec![1.0, 3.0, -2.0]),
            b,
            DMatrix::identity(3, 3),
        )
        .unwrap();
        assert!(check_identification(&model, 1e-12).holds);
        assert!((model.w[0] - 2.0).abs() < 1e-12);
    }
}
