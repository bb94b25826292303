//! ℓ1-penalized least squares by cyclic coordinate descent.
//!
//! The objective is `(2n)⁻¹‖y − Xβ‖² + λ‖β‖₁`. All solves run on the Gram
//! products `XᵀX/n`, `Xᵀy/n`, keeping the gradient `Xᵀ(y − Xβ)/n` up to date
//! after every nonzero coordinate move. After the first full sweep at a given
//! λ, sweeps are restricted to the active set until they settle; a full sweep
//! then confirms that no inactive coordinate wants to enter.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{gram_products, make_folds, DataSet, Gram};
use crate::error::{Error, Result};

/// Solver and path controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoOptions {
    /// Convergence threshold on the largest coefficient change in a sweep.
    pub tol: f64,
    pub max_sweeps: usize,
    pub n_lambdas: usize,
    /// `λ_min / λ_max`. `None` picks 0.01 when `n < p` and 1e-4 otherwise.
    pub lambda_min_ratio: Option<f64>,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            tol: 1e-7,
            max_sweeps: 10_000,
            n_lambdas: 100,
            lambda_min_ratio: None,
        }
    }
}

impl LassoOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be positive"));
        }
        if self.max_sweeps == 0 {
            return Err(Error::invalid("max_sweeps must be at least 1"));
        }
        if self.n_lambdas == 0 {
            return Err(Error::invalid("n_lambdas must be at least 1"));
        }
        if let Some(r) = self.lambda_min_ratio {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::invalid("lambda_min_ratio must lie in (0, 1)"));
            }
        }
        Ok(())
    }

    pub fn min_ratio_for(&self, n: usize, p: usize) -> f64 {
        self.lambda_min_ratio
            .unwrap_or(if n < p { 0.01 } else { 1e-4 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub beta: DVector<f64>,
    pub lambda: f64,
    pub sweeps_used: usize,
    /// Largest subgradient-stationarity residual at `beta`.
    pub kkt_violation: f64,
    pub converged: bool,
}

#[inline]
fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

fn stationarity_residual(grad: f64, beta: f64, lambda: f64) -> f64 {
    if beta > 0.0 {
        (grad - lambda).abs()
    } else if beta < 0.0 {
        (grad + lambda).abs()
    } else {
        (grad.abs() - lambda).max(0.0)
    }
}

/// Max over coordinates of the stationarity residual of `β` for the lasso
/// objective: `|gⱼ − λ·sign(βⱼ)|` on the support and `(|gⱼ| − λ)₊` off it,
/// where `g = Xᵀ(y − Xβ)/n`.
pub fn kkt_violation(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, lambda: f64) -> f64 {
    let n = x.nrows() as f64;
    let grad = x.tr_mul(&(y - x * beta)) / n;
    grad.iter()
        .zip(beta.iter())
        .map(|(&g, &b)| stationarity_residual(g, b, lambda))
        .fold(0.0, f64::max)
}

fn kkt_from_gradient(grad: &DVector<f64>, beta: &DVector<f64>, lambda: f64) -> f64 {
    grad.iter()
        .zip(beta.iter())
        .map(|(&g, &b)| stationarity_residual(g, b, lambda))
        .fold(0.0, f64::max)
}

/// Objective up to the constant `yᵀy/(2n)`, written in terms of the
/// maintained gradient so it costs O(p).
fn reduced_objective(gram: &Gram, grad: &DVector<f64>, beta: &DVector<f64>, lambda: f64) -> f64 {
    -0.5 * (beta.dot(&gram.xty) + beta.dot(grad)) + lambda * beta.lp_norm(1)
}

struct Workspace<'a> {
    gram: &'a Gram,
    beta: DVector<f64>,
    grad: DVector<f64>,
}

impl<'a> Workspace<'a> {
    fn new(gram: &'a Gram, start: Option<&DVector<f64>>) -> Self {
        match start {
            Some(b) => {
                let grad = &gram.xty - &gram.xtx * b;
                Workspace {
                    gram,
                    beta: b.clone(),
                    grad,
                }
            }
            None => Workspace {
                gram,
                beta: DVector::zeros(gram.xty.len()),
                grad: gram.xty.clone(),
            },
        }
    }

    #[inline]
    fn update(&mut self, j: usize, lambda: f64) -> f64 {
        let g = &self.gram.xtx;
        let diag = g[(j, j)];
        let old = self.beta[j];
        let new = if diag > 0.0 {
            soft_threshold(self.grad[j] + diag * old, lambda) / diag
        } else {
            0.0
        };
        let delta = new - old;
        if delta != 0.0 {
            self.beta[j] = new;
            self.grad.axpy(-delta, &g.column(j), 1.0);
        }
        delta.abs()
    }

    fn sweep(&mut self, coords: impl Iterator<Item = usize>, lambda: f64) -> f64 {
        let mut max_change = 0.0_f64;
        for j in coords {
            max_change = max_change.max(self.update(j, lambda));
        }
        max_change
    }
}

/// Coordinate descent on precomputed Gram products.
pub fn solve_gram(
    gram: &Gram,
    lambda: f64,
    opts: &LassoOptions,
    warm_start: Option<&DVector<f64>>,
) -> Result<LassoFit> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("penalty must be finite and >= 0, got {lambda}")));
    }
    opts.validate()?;
    let p = gram.xty.len();
    if let Some(w) = warm_start {
        if w.len() != p {
            return Err(Error::invalid("warm start has the wrong length"));
        }
    }

    let mut ws = Workspace::new(gram, warm_start);
    let mut sweeps = 0;
    let mut converged = false;
    let kkt_bound = 10.0 * opts.tol;
    let mut last_obj = reduced_objective(gram, &ws.grad, &ws.beta, lambda);

    let check_descent = |ws: &Workspace, last: &mut f64| {
        if cfg!(debug_assertions) {
            let obj = reduced_objective(gram, &ws.grad, &ws.beta, lambda);
            debug_assert!(
                obj <= *last + 1e-10 * (1.0 + last.abs()),
                "objective increased across a sweep: {last} -> {obj}"
            );
            *last = obj;
        }
    };

    while sweeps < opts.max_sweeps {
        let change = ws.sweep(0..p, lambda);
        sweeps += 1;
        check_descent(&ws, &mut last_obj);
        if change < opts.tol {
            // Refresh the gradient to shed accumulated rounding before judging.
            ws.grad = &gram.xty - &gram.xtx * &ws.beta;
            last_obj = reduced_objective(gram, &ws.grad, &ws.beta, lambda);
            if kkt_from_gradient(&ws.grad, &ws.beta, lambda) <= kkt_bound {
                converged = true;
                break;
            }
            continue;
        }
        let active: Vec<usize> = (0..p).filter(|&j| ws.beta[j] != 0.0).collect();
        while sweeps < opts.max_sweeps {
            let change = ws.sweep(active.iter().copied(), lambda);
            sweeps += 1;
            check_descent(&ws, &mut last_obj);
            if change < opts.tol {
                break;
            }
        }
    }

    let grad = &gram.xty - &gram.xtx * &ws.beta;
    let kkt = kkt_from_gradient(&grad, &ws.beta, lambda);
    Ok(LassoFit {
        beta: ws.beta,
        lambda,
        sweeps_used: sweeps,
        kkt_violation: kkt,
        converged,
    })
}

/// Minimizes `(2n)⁻¹‖y − Xβ‖² + λ‖β‖₁`.
///
/// Failure to converge within `max_sweeps` is reported through
/// [`LassoFit::converged`], not as an error.
pub fn solve_lasso(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    opts: &LassoOptions,
    warm_start: Option<&DVector<f64>>,
) -> Result<LassoFit> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("penalty must be >= 0, got {lambda}")));
    }
    let gram = gram_products(x, y)?;
    solve_gram(&gram, lambda, opts, warm_start)
}

/// Smallest penalty with an all-zero solution, `‖Xᵀy‖∞/n`.
pub fn lambda_max(gram: &Gram) -> f64 {
    gram.xty.amax()
}

/// Geometric grid from `λ_max` down to `λ_max · ratio`.
pub fn lambda_grid(lambda_max: f64, n_lambdas: usize, ratio: f64) -> Vec<f64> {
    if lambda_max == 0.0 {
        return vec![0.0];
    }
    if n_lambdas == 1 {
        return vec![lambda_max];
    }
    let last = (n_lambdas - 1) as f64;
    (0..n_lambdas)
        .map(|i| {
            if i == 0 {
                lambda_max
            } else {
                lambda_max * ratio.powf(i as f64 / last)
            }
        })
        .collect()
}

/// Descending penalty sequence for `(X, y)`; `{0}` when `Xᵀy = 0`.
pub fn lambda_path(x: &DMatrix<f64>, y: &DVector<f64>, opts: &LassoOptions) -> Result<Vec<f64>> {
    opts.validate()?;
    let gram = gram_products(x, y)?;
    Ok(lambda_grid(
        lambda_max(&gram),
        opts.n_lambdas,
        opts.min_ratio_for(x.nrows(), x.ncols()),
    ))
}

/// Fits every penalty in `lambdas` in order, warm-starting each from the last.
pub fn solve_path(gram: &Gram, lambdas: &[f64], opts: &LassoOptions) -> Result<Vec<LassoFit>> {
    let mut fits: Vec<LassoFit> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let warm = fits.last().map(|f| &f.beta);
        let fit = solve_gram(gram, lambda, opts, warm)?;
        fits.push(fit);
    }
    Ok(fits)
}

/// Cross-validated lasso.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoCv {
    pub best_lambda: f64,
    pub fit: LassoFit,
    pub lambdas: Vec<f64>,
    /// Held-out mean squared prediction error per penalty.
    pub cv_error: Vec<f64>,
}

/// Picks λ on the full-data path by `folds`-fold held-out squared error, then
/// refits on all rows. Ties go to the larger penalty.
pub fn cv_lasso(data: &DataSet, folds: usize, opts: &LassoOptions, seed: u64) -> Result<LassoCv> {
    opts.validate()?;
    let (x, y) = (data.x(), data.y());
    let n = data.n();
    let assignment = make_folds(n, folds, seed)?;
    let full = gram_products(x, y)?;
    // The grid has to be solvable on every training split, so the
    // high-dimensional floor applies as soon as a split has n_train <= p.
    // Near-square splits otherwise stall coordinate descent near λ = 0.
    let smallest_train = (0..folds)
        .map(|k| n - assignment.held_out(k).len())
        .min()
        .unwrap_or(n);
    let ratio = opts
        .lambda_min_ratio
        .unwrap_or(if smallest_train <= data.p() { 0.01 } else { 1e-4 });
    let lambdas = lambda_grid(lambda_max(&full), opts.n_lambdas, ratio);

    let per_fold: Vec<Vec<f64>> = (0..folds)
        .into_par_iter()
        .map(|k| -> Result<Vec<f64>> {
            let train = assignment.training(k);
            let test = assignment.held_out(k);
            let x_train = x.select_rows(&train);
            let y_train = y.select_rows(&train);
            let x_test = x.select_rows(&test);
            let y_test = y.select_rows(&test);
            let gram = gram_products(&x_train, &y_train)?;
            let fits = solve_path(&gram, &lambdas, opts)?;
            Ok(fits
                .iter()
                .map(|f| (&y_test - &x_test * &f.beta).norm_squared())
                .collect())
        })
        .collect::<Result<_>>()?;

    let cv_error: Vec<f64> = (0..lambdas.len())
        .map(|i| per_fold.iter().map(|sse| sse[i]).sum::<f64>() / n as f64)
        .collect();
    let mut best = 0;
    for i in 1..lambdas.len() {
        if cv_error[i] < cv_error[best] {
            best = i;
        }
    }

    let fit = solve_path(&full, &lambdas[..=best], opts)?
        .pop()
        .expect("path is nonempty");
    Ok(LassoCv {
        best_lambda: lambdas[best],
        fit,
        lambdas,
        cv_error,
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
    fn one_dimensional_soft_threshold() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let y = DVector::from_vec(vec![2.0, 0.0]);
        let fit = solve_lasso(&x, &y, 0.5, &LassoOptions::default(), None).unwrap();
        assert!(fit.converged);
        assert!((fit.beta[0] - 0.5).abs() < 1e-12);
        assert!(kkt_violation(&x, &y, &fit.beta, 0.5) <= 1e-12);
    }

    #[test]
    fn lambda_max_annihilates() {
        let x = gaussian(30, 10, 1);
        let y = gaussian(30, 1, 2).column(0).into_owned();
        let gram = gram_products(&x, &y).unwrap();
        let lmax = lambda_max(&gram);
        for lambda in [lmax, 2.0 * lmax] {
            let fit = solve_gram(&gram, lambda, &LassoOptions::default(), None).unwrap();
            assert!(fit.beta.iter().all(|&b| b == 0.0));
            assert!(fit.kkt_violation <= 1e-14);
        }
    }

    #[test]
    fn unpenalized_orthogonal_design_is_ols() {
        // XᵀX/n = I with n = 4, p = 2
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0]);
        let y = DVector::from_vec(vec![3.0, 1.0, -0.5, 2.0]);
        let fit = solve_lasso(&x, &y, 0.0, &LassoOptions::default(), None).unwrap();
        let ols = x.tr_mul(&y) / 4.0;
        assert!((fit.beta - ols).amax() < 1e-12);
    }

    #[test]
    fn negative_lambda_rejected() {
        let x = DMatrix::identity(2, 2);
        let y = DVector::zeros(2);
        assert!(matches!(
            solve_lasso(&x, &y, -1.0, &LassoOptions::default(), None),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn unconverged_is_flagged_not_an_error() {
        let x = gaussian(40, 20, 3);
        let y = gaussian(40, 1, 4).column(0).into_owned();
        let opts = LassoOptions {
            max_sweeps: 1,
            tol: 1e-15,
            ..LassoOptions::default()
        };
        let fit = solve_lasso(&x, &y, 0.01, &opts, None).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.sweeps_used, 1);
    }

    #[test]
    fn zero_variance_column_stays_zero() {
        let mut x = gaussian(20, 3, 5);
        x.column_mut(1).fill(0.0);
        let y = gaussian(20, 1, 6).column(0).into_owned();
        let fit = solve_lasso(&x, &y, 0.01, &LassoOptions::default(), None).unwrap();
        assert_eq!(fit.beta[1], 0.0);
        assert!(fit.converged);
    }

    #[test]
    fn grid_spacing() {
        let g = lambda_grid(1.0, 3, 0.01);
        assert_eq!(g.len(), 3);
        assert_eq!(g[0], 1.0);
        assert!((g[1] - 0.1).abs() < 1e-15);
        assert!((g[2] - 0.01).abs() < 1e-15);
        assert_eq!(lambda_grid(0.0, 100, 0.01), vec![0.0]);
    }

    #[test]
    fn path_of_zero_response() {
        let x = gaussian(10, 4, 7);
        let path = lambda_path(&x, &DVector::zeros(10), &LassoOptions::default()).unwrap();
        assert_eq!(path, vec![0.0]);
    }

    #[test]
    fn first_path_entry_zeroes_solution() {
        let x = gaussian(25, 40, 8);
        let y = gaussian(25, 1, 9).column(0).into_owned();
        let opts = LassoOptions::default();
        let path = lambda_path(&x, &y, &opts).unwrap();
        assert_eq!(path.len(), 100);
        assert!(path.windows(2).all(|w| w[0] > w[1]));
        assert!((path[99] / path[0] - 0.01).abs() < 1e-12);
        let fit = solve_lasso(&x, &y, path[0], &opts, None).unwrap();
        assert!(fit.beta.iter().all(|&b| b == 0.0));
        // just below λ_max something enters
        let fit = solve_lasso(&x, &y, path[1], &opts, None).unwrap();
        assert!(fit.beta.iter().any(|&b| b != 0.0));
    }

    #[test]
    fn warm_start_reaches_same_solution() {
        let x = gaussian(50, 30, 10);
        let y = gaussian(50, 1, 11).column(0).into_owned();
        let opts = LassoOptions::default();
        let cold = solve_lasso(&x, &y, 0.05, &opts, None).unwrap();
        let start = DVector::from_element(30, 0.3);
        let warm = solve_lasso(&x, &y, 0.05, &opts, Some(&start)).unwrap();
        assert!((cold.beta - warm.beta).amax() < 1e-6);
    }

    #[test]
    fn kkt_detects_perturbation() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let y = DVector::from_vec(vec![2.0, 0.0]);
        let beta = DVector::from_vec(vec![0.6]);
        assert!(kkt_violation(&x, &y, &beta, 0.5) > 0.05);
    }

    #[test]
    fn cv_noiseless_recovery() {
        let x = gaussian(100, 20, 12);
        let mut beta = DVector::zeros(20);
        beta[0] = 2.0;
        beta[5] = -1.5;
        beta[11] = 1.0;
        let y = &x * &beta;
        let data = DataSet::new(x, y).unwrap();
        let cv = cv_lasso(&data, 5, &LassoOptions::default(), 0).unwrap();
        assert!((&cv.fit.beta - &beta).norm() < 1e-2);
        let again = cv_lasso(&data, 5, &LassoOptions::default(), 0).unwrap();
        assert_eq!(cv.best_lambda, again.best_lambda);
        assert_eq!(cv.fit.beta, again.fit.beta);
    }

    #[test]
    fn cv_on_zero_response() {
        let data = DataSet::new(gaussian(30, 10, 13), DVector::zeros(30)).unwrap();
        let cv = cv_lasso(&data, 5, &LassoOptions::default(), 1).unwrap();
        assert_eq!(cv.best_lambda, 0.0);
        assert!(cv.fit.beta.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn cv_ties_prefer_larger_penalty() {
        // A response orthogonal to nothing useful: every path point predicts
        // zero on a design whose only column is zero.
        let x = DMatrix::zeros(10, 1);
        let y = DVector::from_fn(10, |i, _| i as f64);
        let data = DataSet::new(x, y).unwrap();
        let cv = cv_lasso(&data, 2, &LassoOptions::default(), 0).unwrap();
        assert_eq!(cv.best_lambda, cv.lambdas[0]);
    }
}
