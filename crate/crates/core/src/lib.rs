//! Profiled transfer learning for high-dimensional linear regression.
//!
//! A small target sample is modelled as `y = Xβ + ε` with
//! `β = B w + δ`: a combination of the coefficient vectors `B` of several
//! larger source samples plus a sparse residual `δ`. The estimator fits the
//! sources, projects the target covariates onto the estimated source
//! directions, profiles those out by OLS and recovers `δ` with a
//! cross-validated lasso.
//!
//! ```
//! use nalgebra::{DMatrix, DVector};
//! use ptl::{fit_ptl, DataSet, PtlConfig, SourceEstimator};
//!
//! // one source, noiseless, β = 2·β⁽¹⁾
//! let x_src = DMatrix::from_fn(40, 4, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
//! let beta_src = DVector::from_vec(vec![1.0, 0.0, -1.0, 0.5]);
//! let source = DataSet::new(x_src.clone(), &x_src * &beta_src).unwrap();
//!
//! let x = DMatrix::from_fn(20, 4, |i, j| ((i * 5 + j * 2) % 7) as f64 - 3.0);
//! let target = DataSet::new(x.clone(), &x * (&beta_src * 2.0)).unwrap();
//!
//! let config = PtlConfig {
//!     source_estimators: vec![Some(SourceEstimator::Ols)],
//!     ..PtlConfig::default()
//! };
//! let fit = fit_ptl(&[source], &target, &config).unwrap();
//! assert!((fit.w_hat[0] - 2.0).abs() < 1e-8);
//! ```

pub mod baselines;
pub mod config;
pub mod data;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod lasso;
pub mod linalg;
pub mod oracle;
pub mod seed;
pub mod simgen;

pub use baselines::{fit_lasso_target, fit_translasso, BaselineFit, BaselineMethod};
pub use data::{gram_products, make_folds, DataSet, FoldAssignment, Gram};
pub use error::{Error, Result};
pub use estimator::{
    fit_delta, fit_ptl, fit_ptl_with_basis, fit_sources, fit_w, profile_responses,
    transfer_features, PtlConfig, PtlDiagnostics, PtlFit, SourceBasis, SourceEstimator,
};
pub use harness::{
    emit_results, evaluate_real, mse, r_squared, run_experiment, EstimatorKind, ExperimentResult,
    ExperimentSpec, Format,
};
pub use lasso::{cv_lasso, kkt_violation, lambda_path, solve_lasso, LassoCv, LassoFit, LassoOptions};
pub use oracle::{check_identification, decompose, PopulationModel};
pub use simgen::{sample_dataset, Example, GeneratedProblem, Role, SimConfig};

// The guide's code listings compile and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/lasso.md")]
    mod lasso {}
    #[doc = include_str!("../../../book/src/identification.md")]
    mod identification {}
    #[doc = include_str!("../../../book/src/estimator.md")]
    mod estimator {}
    #[doc = include_str!("../../../book/src/simulations.md")]
    mod simulations {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
