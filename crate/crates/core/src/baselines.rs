//! Comparator estimators: target-only lasso and two-step Trans-LASSO.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::lasso::{cv_lasso, LassoOptions};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    Lasso,
    TransLasso,
}

impl fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineMethod::Lasso => f.write_str("lasso"),
            BaselineMethod::TransLasso => f.write_str("translasso"),
        }
    }
}

/// Trans-LASSO here always treats every source as informative.
pub const TRANSLASSO_VARIANT: &str = "oracle (all sources informative)";

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineFit {
    pub beta: DVector<f64>,
    pub method: BaselineMethod,
    /// Cross-validated penalties, in the order the steps ran.
    pub penalties: Vec<f64>,
}

pub fn fit_lasso_target(
    target: &DataSet,
    folds: usize,
    opts: &LassoOptions,
    seed: u64,
) -> Result<BaselineFit> {
    let cv = cv_lasso(target, folds, opts, seed)?;
    Ok(BaselineFit {
        beta: cv.fit.beta,
        method: BaselineMethod::Lasso,
        penalties: vec![cv.best_lambda],
    })
}

/// Pooled lasso over all sources plus the target gives a pilot vector; a
/// second lasso on the target residuals corrects it.
///
/// With no sources this is exactly [`fit_lasso_target`].
pub fn fit_translasso(
    sources: &[DataSet],
    target: &DataSet,
    folds: usize,
    opts: &LassoOptions,
    seed: u64,
) -> Result<BaselineFit> {
    if sources.is_empty() {
        let fit = fit_lasso_target(target, folds, opts, seed)?;
        return Ok(BaselineFit {
            method: BaselineMethod::TransLasso,
            ..fit
        });
    }
    let p = target.p();
    if sources.iter().any(|s| s.p() != p) {
        return Err(Error::invalid("sources and target must share the same number of covariates"));
    }

    let pooled_n = target.n() + sources.iter().map(DataSet::n).sum::<usize>();
    let mut x = DMatrix::zeros(pooled_n, p);
    let mut y = DVector::zeros(pooled_n);
    let mut row = 0;
    for d in std::iter::once(target).chain(sources) {
        x.rows_mut(row, d.n()).copy_from(d.x());
        y.rows_mut(row, d.n()).copy_from(d.y());
        row += d.n();
    }
    let pilot = cv_lasso(&DataSet::new(x, y)?, folds, opts, derive_seed(seed, 1))?;

    let residual = target.y() - target.x() * &pilot.fit.beta;
    let correction = cv_lasso(
        &DataSet::new(target.x().clone(), residual)?,
        folds,
        opts,
        derive_seed(seed, 2),
    )?;

    Ok(BaselineFit {
        beta: &pilot.fit.beta + &correction.fit.beta,
        method: BaselineMethod::TransLasso,
        penalties: vec![pilot.best_lambda, correction.best_lambda],
    })
}
