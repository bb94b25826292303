//! The profiled transfer learning estimator.
//!
//! 1. Fit each source on its own data; stack the coefficient vectors as the
//!    columns of `B̂` (p × K).
//! 2. Transfer the target covariates, `Ẑ = X·B̂`, regress `y` on `Ẑ` by OLS to
//!    get `ŵ`, and form the profiled responses `ê = y − Ẑŵ`.
//! 3. Lasso of `ê` on `X`, tuned by cross-validation, gives `δ̂`.
//! 4. Assemble `β̂ = B̂ŵ + δ̂`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{gram_products, DataSet};
use crate::error::{Error, Result};
use crate::lasso::{cv_lasso, LassoOptions};
use crate::linalg::{solve_spd, sorted_eigen, MAX_CONDITION};
use crate::seed::derive_seed;

/// How a single source coefficient vector is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SourceEstimator {
    LassoCv,
    Ols,
    Ridge(f64),
}

impl SourceEstimator {
    /// Lasso when the source is not comfortably overdetermined (`n ≤ 2p`),
    /// OLS otherwise.
    pub fn auto(n: usize, p: usize) -> Self {
        if n <= 2 * p {
            SourceEstimator::LassoCv
        } else {
            SourceEstimator::Ols
        }
    }
}

impl fmt::Display for SourceEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceEstimator::LassoCv => f.write_str("lasso-cv"),
            SourceEstimator::Ols => f.write_str("ols"),
            SourceEstimator::Ridge(l) => write!(f, "ridge({l})"),
        }
    }
}

impl FromStr for SourceEstimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "lasso-cv" | "lasso" => return Ok(SourceEstimator::LassoCv),
            "ols" => return Ok(SourceEstimator::Ols),
            _ => {}
        }
        let inner = s
            .strip_prefix("ridge(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| s.strip_prefix("ridge:"))
            .ok_or_else(|| Error::config(format!("unknown source estimator `{s}`")))?;
        let lambda: f64 = inner
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("bad ridge penalty in `{s}`")))?;
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::config(format!("ridge penalty must be >= 0 in `{s}`")));
        }
        Ok(SourceEstimator::Ridge(lambda))
    }
}

impl TryFrom<String> for SourceEstimator {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SourceEstimator> for String {
    fn from(e: SourceEstimator) -> String {
        e.to_string()
    }
}

/// Estimated source coefficients, one column per source.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceBasis {
    pub b_hat: DMatrix<f64>,
    pub estimators: Vec<SourceEstimator>,
    /// Penalty used for each column (cross-validated λ, ridge λ, or `None` for OLS).
    pub penalties: Vec<Option<f64>>,
    /// Set when an OLS normal matrix was singular and a tiny ridge was used.
    pub ridge_fallback: Vec<bool>,
}

impl SourceBasis {
    /// Wraps a known coefficient matrix.
    pub fn from_matrix(b_hat: DMatrix<f64>) -> Result<Self> {
        if b_hat.ncols() == 0 {
            return Err(Error::invalid("a source basis needs at least one column"));
        }
        if b_hat.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("source basis has non-finite entries"));
        }
        let k = b_hat.ncols();
        Ok(SourceBasis {
            b_hat,
            estimators: vec![SourceEstimator::Ols; k],
            penalties: vec![None; k],
            ridge_fallback: vec![false; k],
        })
    }

    pub fn num_sources(&self) -> usize {
        self.b_hat.ncols()
    }

    pub fn p(&self) -> usize {
        self.b_hat.nrows()
    }
}

/// Fits one source dataset with the requested estimator.
pub fn fit_source(
    data: &DataSet,
    estimator: SourceEstimator,
    folds: usize,
    opts: &LassoOptions,
    seed: u64,
) -> Result<(DVector<f64>, Option<f64>, bool)> {
    let (n, p) = (data.n(), data.p());
    match estimator {
        SourceEstimator::LassoCv => {
            let cv = cv_lasso(data, folds, opts, seed)?;
            Ok((cv.fit.beta, Some(cv.best_lambda), false))
        }
        SourceEstimator::Ols => {
            if n <= p {
                return Err(Error::config(format!(
                    "OLS source fit needs n > p, got n = {n}, p = {p}"
                )));
            }
            let gram = gram_products(data.x(), data.y())?;
            let (values, _) = sorted_eigen(&gram.xtx);
            let (lo, hi) = (values[0], values[p - 1]);
            let well_posed = lo > 0.0 && hi / lo <= MAX_CONDITION;
            if well_posed {
                if let Ok(beta) = solve_spd(&gram.xtx, &gram.xty) {
                    return Ok((beta, None, false));
                }
            }
            let lambda = 1e-8 * gram.xtx.trace() / p as f64;
            log::warn!("singular OLS normal matrix, falling back to ridge with λ = {lambda:e}");
            Ok((ridge(&gram.xtx, &gram.xty, lambda)?, Some(lambda), true))
        }
        SourceEstimator::Ridge(lambda) => {
            let gram = gram_products(data.x(), data.y())?;
            Ok((ridge(&gram.xtx, &gram.xty, lambda)?, Some(lambda), false))
        }
    }
}

fn ridge(xtx: &DMatrix<f64>, xty: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let p = xtx.nrows();
    solve_spd(&(xtx + DMatrix::identity(p, p) * lambda), xty)
}

/// Fits every source (in parallel) and stacks the estimates as columns of `B̂`.
///
/// `estimators[k] = None` selects [`SourceEstimator::auto`]. Source `k` uses
/// the CV seed `derive_seed(seed, k)`.
pub fn fit_sources(
    sources: &[DataSet],
    estimators: &[Option<SourceEstimator>],
    folds: usize,
    opts: &LassoOptions,
    seed: u64,
) -> Result<SourceBasis> {
    if sources.is_empty() {
        return Err(Error::invalid("at least one source dataset is required"));
    }
    if estimators.len() != sources.len() {
        return Err(Error::invalid("one estimator choice per source is required"));
    }
    let p = sources[0].p();
    if sources.iter().any(|s| s.p() != p) {
        return Err(Error::invalid("all sources must share the same number of covariates"));
    }
    let chosen: Vec<SourceEstimator> = sources
        .iter()
        .zip(estimators)
        .map(|(s, e)| e.unwrap_or_else(|| SourceEstimator::auto(s.n(), s.p())))
        .collect();

    let fits = sources
        .par_iter()
        .zip(chosen.par_iter())
        .enumerate()
        .map(|(k, (data, &est))| fit_source(data, est, folds, opts, derive_seed(seed, k as u64)))
        .collect::<Result<Vec<_>>>()?;

    let mut b_hat = DMatrix::zeros(p, sources.len());
    let mut penalties = Vec::with_capacity(fits.len());
    let mut ridge_fallback = Vec::with_capacity(fits.len());
    for (k, (beta, penalty, fallback)) in fits.into_iter().enumerate() {
        b_hat.set_column(k, &beta);
        penalties.push(penalty);
        ridge_fallback.push(fallback);
    }
    Ok(SourceBasis {
        b_hat,
        estimators: chosen,
        penalties,
        ridge_fallback,
    })
}

/// `Ẑ = X·B̂`; row `i` is `B̂ᵀXᵢ`.
pub fn transfer_features(basis: &SourceBasis, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != basis.p() {
        return Err(Error::invalid(format!(
            "target has {} covariates but the source basis has {}",
            x.ncols(),
            basis.p()
        )));
    }
    Ok(x * &basis.b_hat)
}

/// OLS weights of the transferred features.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFit {
    pub w_hat: DVector<f64>,
    /// Condition number of `ẐᵀẐ`.
    pub condition: f64,
}

/// Solves `(ẐᵀẐ) w = Ẑᵀy`.
///
/// A condition number above 1e12 means the source estimates are (nearly)
/// linearly dependent; the error names the offending combination.
pub fn fit_w(z_hat: &DMatrix<f64>, y: &DVector<f64>) -> Result<WeightFit> {
    let (n, k) = z_hat.shape();
    if y.len() != n {
        return Err(Error::invalid("transferred features and response differ in length"));
    }
    if k >= n {
        return Err(Error::invalid(format!(
            "OLS stage needs more target observations than sources, got n = {n}, K = {k}"
        )));
    }
    let gram = gram_products(z_hat, y)?;
    let (values, vectors) = sorted_eigen(&gram.xtx);
    let (lo, hi) = (values[0], values[k - 1]);
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        let combo = vectors
            .column(0)
            .iter()
            .enumerate()
            .filter(|(_, c)| c.abs() > 1e-3)
            .map(|(j, c)| format!("{c:+.3}·source{}", j + 1))
            .collect::<Vec<_>>()
            .join(" ");
        return Err(Error::SingularDesign(format!(
            "condition number of the transferred-feature Gram matrix is {condition:.3e}; \
             near-null combination: {combo}"
        )));
    }
    let w_hat = solve_spd(&gram.xtx, &gram.xty)
        .map_err(|_| Error::SingularDesign("transferred-feature Gram matrix is not positive definite".into()))?;
    Ok(WeightFit { w_hat, condition })
}

/// `ê = y − Ẑŵ`.
pub fn profile_responses(
    y: &DVector<f64>,
    z_hat: &DMatrix<f64>,
    w_hat: &DVector<f64>,
) -> Result<DVector<f64>> {
    if z_hat.nrows() != y.len() || z_hat.ncols() != w_hat.len() {
        return Err(Error::invalid("profile_responses: dimensions do not conform"));
    }
    Ok(y - z_hat * w_hat)
}

/// Cross-validated lasso of the profiled responses on the target covariates.
pub fn fit_delta(
    x: &DMatrix<f64>,
    e_hat: &DVector<f64>,
    folds: usize,
    opts: &LassoOptions,
    seed: u64,
) -> Result<(DVector<f64>, f64)> {
    let data = DataSet::new(x.clone(), e_hat.clone())?;
    let cv = cv_lasso(&data, folds, opts, seed)?;
    Ok((cv.fit.beta, cv.best_lambda))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PtlConfig {
    pub folds: usize,
    pub lasso: LassoOptions,
    pub seed: u64,
    /// Per-source estimator override; missing entries use the automatic rule.
    pub source_estimators: Vec<Option<SourceEstimator>>,
}

impl Default for PtlConfig {
    fn default() -> Self {
        PtlConfig {
            folds: 5,
            lasso: LassoOptions::default(),
            seed: 0,
            source_estimators: Vec::new(),
        }
    }
}

impl PtlConfig {
    fn estimators_for(&self, k: usize) -> Vec<Option<SourceEstimator>> {
        (0..k)
            .map(|i| self.source_estimators.get(i).copied().flatten())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PtlDiagnostics {
    /// `‖ê‖₂`.
    pub profiled_residual_norm: f64,
    /// `‖y − Xβ̂‖₂`.
    pub fitted_residual_norm: f64,
    pub response_norm: f64,
    /// `‖Ẑᵀê‖∞` over the columns used in the OLS stage.
    pub orthogonality: f64,
    /// Condition number of the profiled normal matrix `ẐᵀẐ`.
    pub condition: f64,
    /// Sources whose estimate is identically zero; their weight is fixed at 0.
    pub dropped_sources: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PtlFit {
    pub basis: SourceBasis,
    pub w_hat: DVector<f64>,
    pub delta_hat: DVector<f64>,
    pub beta_hat: DVector<f64>,
    pub lambda_delta: f64,
    pub diagnostics: PtlDiagnostics,
}

impl PtlFit {
    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        x * &self.beta_hat
    }
}

/// Runs the whole pipeline: source fits, then [`fit_ptl_with_basis`].
pub fn fit_ptl(sources: &[DataSet], target: &DataSet, config: &PtlConfig) -> Result<PtlFit> {
    if sources.iter().any(|s| s.p() != target.p()) {
        return Err(Error::invalid("sources and target must share the same number of covariates"));
    }
    let basis = fit_sources(
        sources,
        &config.estimators_for(sources.len()),
        config.folds,
        &config.lasso,
        derive_seed(config.seed, 1),
    )?;
    fit_ptl_with_basis(basis, target, config)
}

/// Target-side steps for an already estimated `B̂`.
///
/// Columns of `B̂` that are identically zero carry no direction; they are left
/// out of the OLS stage and receive weight zero.
pub fn fit_ptl_with_basis(basis: SourceBasis, target: &DataSet, config: &PtlConfig) -> Result<PtlFit> {
    let k = basis.num_sources();
    if basis.p() != target.p() {
        return Err(Error::invalid("source basis and target differ in dimension"));
    }
    if k >= target.n() {
        return Err(Error::invalid(format!(
            "need more target observations than sources, got n = {}, K = {k}",
            target.n()
        )));
    }
    let (x, y) = (target.x(), target.y());

    let kept: Vec<usize> = (0..k)
        .filter(|&j| basis.b_hat.column(j).iter().any(|&v| v != 0.0))
        .collect();
    let dropped: Vec<usize> = (0..k).filter(|j| !kept.contains(j)).collect();

    let z_hat = transfer_features(&basis, x)?;
    let mut w_hat = DVector::zeros(k);
    let (e_hat, condition, orthogonality) = if kept.is_empty() {
        (y.clone(), 1.0, 0.0)
    } else {
        let z_kept = z_hat.select_columns(&kept);
        let fit = fit_w(&z_kept, y)?;
        for (i, &j) in kept.iter().enumerate() {
            w_hat[j] = fit.w_hat[i];
        }
        let e_hat = profile_responses(y, &z_kept, &fit.w_hat)?;
        let orthogonality = z_kept.tr_mul(&e_hat).amax();
        (e_hat, fit.condition, orthogonality)
    };

    let (delta_hat, lambda_delta) =
        fit_delta(x, &e_hat, config.folds, &config.lasso, derive_seed(config.seed, 2))?;
    let beta_hat = &basis.b_hat * &w_hat + &delta_hat;

    let diagnostics = PtlDiagnostics {
        profiled_residual_norm: e_hat.norm(),
        fitted_residual_norm: (y - x * &beta_hat).norm(),
        response_norm: y.norm(),
        orthogonality,
        condition,
        dropped_sources: dropped,
    };
    Ok(PtlFit {
        basis,
        w_hat,
        delta_hat,
        beta_hat,
        lambda_delta,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn estimator_names_round_trip() {
        for e in [
            SourceEstimator::LassoCv,
            SourceEstimator::Ols,
            SourceEstimator::Ridge(0.25),
        ] {
            assert_eq!(e.to_string().parse::<SourceEstimator>().unwrap(), e);
        }
        assert_eq!("ridge:2".parse::<SourceEstimator>().unwrap(), SourceEstimator::Ridge(2.0));
        assert!("ridge(-1)".parse::<SourceEstimator>().is_err());
        assert!("svm".parse::<SourceEstimator>().is_err());
    }

    #[test]
    fn auto_rule() {
        assert_eq!(SourceEstimator::auto(100, 50), SourceEstimator::LassoCv);
        assert_eq!(SourceEstimator::auto(101, 50), SourceEstimator::Ols);
    }

    #[test]
    fn noiseless_ols_source_is_exact() {
        let p = 8;
        let x = gaussian(2 * p, p, 1);
        let beta = DVector::from_fn(p, |j, _| j as f64 - 3.0);
        let data = DataSet::new(x.clone(), &x * &beta).unwrap();
        let basis = fit_sources(&[data], &[Some(SourceEstimator::Ols)], 5, &LassoOptions::default(), 0).unwrap();
        assert!((basis.b_hat.column(0) - &beta).amax() < 1e-8);
        assert_eq!(basis.penalties, vec![None]);
    }

    #[test]
    fn ols_needs_more_rows_than_columns() {
        let data = DataSet::new(gaussian(5, 5, 2), DVector::zeros(5)).unwrap();
        let err = fit_sources(&[data], &[Some(SourceEstimator::Ols)], 2, &LassoOptions::default(), 0);
        assert!(matches!(err, Err(Error::InvalidConfiguration(_))));
    }

    #[test]
    fn singular_ols_falls_back_to_ridge() {
        let mut x = gaussian(20, 3, 3);
        let c0 = x.column(0).into_owned();
        x.set_column(2, &c0);
        let y = x.column(0) * 2.0;
        let data = DataSet::new(x, y).unwrap();
        let basis = fit_sources(&[data], &[Some(SourceEstimator::Ols)], 2, &LassoOptions::default(), 0).unwrap();
        assert_eq!(basis.ridge_fallback, vec![true]);
        assert!(basis.b_hat.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_sources_give_zero_basis() {
        let sources: Vec<DataSet> = (0..3)
            .map(|k| DataSet::new(gaussian(30, 6, 10 + k), DVector::zeros(30)).unwrap())
            .collect();
        let basis = fit_sources(&sources, &[None, None, Some(SourceEstimator::Ridge(0.1))], 5, &LassoOptions::default(), 0).unwrap();
        assert_eq!(basis.b_hat, DMatrix::zeros(6, 3));
    }

    #[test]
    fn transfer_selects_coordinates() {
        let x = gaussian(4, 3, 4);
        let basis = SourceBasis::from_matrix(DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0])).unwrap();
        let z = transfer_features(&basis, &x).unwrap();
        assert_eq!(z, x.columns(0, 2).into_owned());

        let zero = SourceBasis::from_matrix(DMatrix::zeros(3, 2)).unwrap();
        assert_eq!(transfer_features(&zero, &x).unwrap(), DMatrix::zeros(4, 2));
        assert!(transfer_features(&zero, &gaussian(4, 2, 5)).is_err());
    }

    #[test]
    fn transfer_matches_hand_product() {
        let x = gaussian(4, 3, 6);
        let b = gaussian(3, 2, 7);
        let z = transfer_features(&SourceBasis::from_matrix(b.clone()).unwrap(), &x).unwrap();
        for i in 0..4 {
            for k in 0..2 {
                let s: f64 = (0..3).map(|j| x[(i, j)] * b[(j, k)]).sum();
                assert!((z[(i, k)] - s).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn w_perfect_fit_and_orthogonal_response() {
        let y = gaussian(10, 1, 8).column(0).into_owned();
        let z = DMatrix::from_column_slice(10, 1, y.as_slice());
        let fit = fit_w(&z, &y).unwrap();
        assert!((fit.w_hat[0] - 1.0).abs() < 1e-14);
        assert!(profile_responses(&y, &z, &fit.w_hat).unwrap().amax() < 1e-14);

        let z = DMatrix::from_column_slice(4, 1, &[1.0, 1.0, 0.0, 0.0]);
        let y = DVector::from_vec(vec![1.0, -1.0, 3.0, 2.0]);
        assert_eq!(fit_w(&z, &y).unwrap().w_hat[0], 0.0);
    }

    #[test]
    fn w_matches_pseudo_inverse() {
        let z = gaussian(50, 3, 9);
        let y = gaussian(50, 1, 10).column(0).into_owned();
        let fit = fit_w(&z, &y).unwrap();
        let pinv = z.clone().pseudo_inverse(1e-14).unwrap();
        let reference = pinv * &y;
        assert!((&fit.w_hat - reference).amax() < 1e-10);
        let e = profile_responses(&y, &z, &fit.w_hat).unwrap();
        assert!(z.tr_mul(&e).amax() <= 1e-8 * (1.0 + y.norm()));
    }

    #[test]
    fn w_rejects_collinear_sources() {
        let mut z = gaussian(30, 3, 11);
        let combo = z.column(0) * 2.0 - z.column(1);
        z.set_column(2, &combo);
        let err = fit_w(&z, &gaussian(30, 1, 12).column(0).into_owned());
        match err {
            Err(Error::SingularDesign(msg)) => assert!(msg.contains("source3"), "{msg}"),
            other => panic!("expected singular design, got {other:?}"),
        }
        assert!(fit_w(&gaussian(3, 3, 13), &DVector::zeros(3)).is_err());
    }

    #[test]
    fn ols_stage_scale_equivariance() {
        let z = gaussian(40, 3, 14);
        let y = gaussian(40, 1, 15).column(0).into_owned();
        let w1 = fit_w(&z, &y).unwrap().w_hat;
        let e1 = profile_responses(&y, &z, &w1).unwrap();
        let c = 4.0;
        let y4 = &y * c;
        let w4 = fit_w(&z, &y4).unwrap().w_hat;
        let e4 = profile_responses(&y4, &z, &w4).unwrap();
        assert_eq!(w4, &w1 * c);
        assert_eq!(e4, &e1 * c);
    }

    #[test]
    fn profile_with_zero_weights_is_identity() {
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let z = gaussian(3, 2, 16);
        assert_eq!(profile_responses(&y, &z, &DVector::zeros(2)).unwrap(), y);
    }

    #[test]
    fn delta_zero_and_noiseless() {
        let x = gaussian(100, 50, 17);
        let (d, _) = fit_delta(&x, &DVector::zeros(100), 5, &LassoOptions::default(), 0).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));

        let mut delta = DVector::zeros(50);
        delta[3] = 1.0;
        delta[20] = -2.0;
        delta[41] = 0.5;
        let e = &x * &delta;
        let (d1, l1) = fit_delta(&x, &e, 5, &LassoOptions::default(), 3).unwrap();
        assert!((&d1 - &delta).norm() <= 1e-2);
        let (d2, l2) = fit_delta(&x, &e, 5, &LassoOptions::default(), 3).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(l1, l2);
    }

    #[test]
    fn zero_response_everywhere() {
        let sources: Vec<DataSet> = (0..2)
            .map(|k| DataSet::new(gaussian(40, 10, 20 + k), DVector::zeros(40)).unwrap())
            .collect();
        let target = DataSet::new(gaussian(30, 10, 30), DVector::zeros(30)).unwrap();
        let fit = fit_ptl(&sources, &target, &PtlConfig::default()).unwrap();
        assert!(fit.beta_hat.iter().all(|&v| v == 0.0));
        assert_eq!(fit.diagnostics.dropped_sources, vec![0, 1]);
    }

    #[test]
    fn rejects_too_many_sources() {
        let basis = SourceBasis::from_matrix(gaussian(4, 3, 40)).unwrap();
        let target = DataSet::new(gaussian(3, 4, 41), DVector::zeros(3)).unwrap();
        assert!(fit_ptl_with_basis(basis, &target, &PtlConfig::default()).is_err());
    }
}
