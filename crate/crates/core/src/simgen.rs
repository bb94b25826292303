//! Ground truth and Gaussian data for the four simulation designs.
//!
//! Every design builds the source matrix `B` from the left singular vectors
//! of a standard normal matrix `Ω`, sets the target coefficients to
//! `β = Bw + δ` with `w = (3/2, 3/4, 0, 0, −5/4)`, and then differs in how `δ`
//! and the covariances are chosen:
//!
//! | design | `B` rows                               | `δ`                                   | `Σ`      | `Σₖ`        | `σₖ²`         |
//! |--------|----------------------------------------|---------------------------------------|----------|-------------|---------------|
//! | 1      | `2U` (r₀ rows), `0.3` to row s, then 0 | `s_δ` Gaussian entries past row s     | `I`      | `I`         | 1             |
//! | 2      | shared block + source-specific rows    | null vector of `B_{S₀}B_{S₀}ᵀ`, norm h | `I`      | `I`         | 1             |
//! | 3      | as 1                                   | as 1                                  | `I`      | Toeplitz(k) | k             |
//! | 4      | as 1                                   | Gaussian entries anywhere             | AR(0.5)  | Toeplitz(k) | 1.25^(k−3)    |
//!
//! Design 4 deliberately violates `BᵀΣδ = 0`; its problem carries both the
//! generated pair and the canonical one from [`decompose`](crate::oracle::decompose).

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SVD};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_factor, sorted_eigen};
use crate::oracle::PopulationModel;

/// Transfer weights used by every design.
pub const TRUE_WEIGHTS: [f64; 5] = [1.5, 0.75, 0.0, 0.0, -1.25];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Example {
    One,
    Two,
    Three,
    Four,
}

impl TryFrom<u8> for Example {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Example::One),
            2 => Ok(Example::Two),
            3 => Ok(Example::Three),
            4 => Ok(Example::Four),
            _ => Err(Error::config(format!("example must be 1, 2, 3 or 4, got {v}"))),
        }
    }
}

impl From<Example> for u8 {
    fn from(e: Example) -> u8 {
        match e {
            Example::One => 1,
            Example::Two => 2,
            Example::Three => 3,
            Example::Four => 4,
        }
    }
}

impl fmt::Display for Example {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

impl FromStr for Example {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        s.trim()
            .parse::<u8>()
            .map_err(|_| Error::config(format!("bad example `{s}`")))
            .and_then(Example::try_from)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub example: Example,
    /// Target sample size.
    pub n: usize,
    /// Common source sample size.
    pub n_source: usize,
    pub p: usize,
    /// Number of sources.
    pub k: usize,
    /// Support size of the source coefficients.
    pub s: usize,
    /// Size budget for `δ`.
    pub h: f64,
    pub seed: u64,
    /// Size of the support shared by every source in design 2; `⌊s/2⌋` if unset.
    pub common_support: Option<usize>,
    /// Zero all noise variances.
    pub noiseless: bool,
    /// Force `δ = 0` after generation.
    pub zero_delta: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            example: Example::One,
            n: 200,
            n_source: 1000,
            p: 500,
            k: 5,
            s: 40,
            h: 6.0,
            seed: 0,
            common_support: None,
            noiseless: false,
            zero_delta: false,
        }
    }
}

impl SimConfig {
    /// `⌊s/3⌋`, rows carrying the singular-vector block in designs 1, 3, 4.
    pub fn r0(&self) -> usize {
        self.s / 3
    }

    /// `⌊s/5⌋`, support size of `δ`.
    pub fn s_delta(&self) -> usize {
        self.s / 5
    }

    pub fn s_common(&self) -> usize {
        self.common_support.unwrap_or(self.s / 2)
    }

    /// The fixed weights, truncated or zero-padded to `k` sources.
    pub fn weights(&self) -> DVector<f64> {
        DVector::from_fn(self.k, |i, _| TRUE_WEIGHTS.get(i).copied().unwrap_or(0.0))
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.k == 0 {
            return Err(Error::config("p and K must be positive"));
        }
        if self.s >= self.p {
            return Err(Error::config(format!("need s < p, got s = {}, p = {}", self.s, self.p)));
        }
        if !(self.h >= 0.0) || !self.h.is_finite() {
            return Err(Error::config("h must be finite and >= 0"));
        }
        if self.n == 0 || self.n_source == 0 {
            return Err(Error::config("sample sizes must be positive"));
        }
        Ok(())
    }
}

/// Factor `L` with `LLᵀ = Σ`, or a marker for the identity.
#[derive(Debug, Clone, PartialEq)]
enum CovFactor {
    Identity,
    Lower(DMatrix<f64>),
}

impl CovFactor {
    fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        if is_identity(sigma) {
            Ok(CovFactor::Identity)
        } else {
            cholesky_factor(sigma).map(CovFactor::Lower)
        }
    }
}

fn is_identity(m: &DMatrix<f64>) -> bool {
    m.is_square()
        && m.iter()
            .enumerate()
            .all(|(idx, &v)| v == if idx % (m.nrows() + 1) == 0 { 1.0 } else { 0.0 })
}

/// Which population a sample is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Target,
    /// Zero-based source index.
    Source(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedProblem {
    pub config: SimConfig,
    /// `(w, δ)` as generated.
    pub model: PopulationModel,
    /// `(w, δ)` from the canonical decomposition of `β`.
    pub canonical: PopulationModel,
    pub source_sigmas: Vec<DMatrix<f64>>,
    pub sigma2: f64,
    pub source_sigma2: Vec<f64>,
    target_factor: CovFactor,
    source_factors: Vec<CovFactor>,
}

impl GeneratedProblem {
    fn assemble(
        config: &SimConfig,
        b: DMatrix<f64>,
        delta: DVector<f64>,
        sigma: DMatrix<f64>,
        source_sigmas: Vec<DMatrix<f64>>,
        sigma2: f64,
        source_sigma2: Vec<f64>,
    ) -> Result<Self> {
        let delta = if config.zero_delta {
            DVector::zeros(config.p)
        } else {
            delta
        };
        let (sigma2, source_sigma2) = if config.noiseless {
            (0.0, vec![0.0; source_sigma2.len()])
        } else {
            (sigma2, source_sigma2)
        };
        let model = PopulationModel::from_parts(b.clone(), sigma.clone(), config.weights(), delta)?;
        let canonical = PopulationModel::canonical(model.beta.clone(), b, sigma)?;
        let target_factor = CovFactor::new(&model.sigma)?;
        let source_factors = source_sigmas
            .iter()
            .map(CovFactor::new)
            .collect::<Result<Vec<_>>>()?;
        Ok(GeneratedProblem {
            config: config.clone(),
            model,
            canonical,
            source_sigmas,
            sigma2,
            source_sigma2,
            target_factor,
            source_factors,
        })
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.model.beta
    }

    pub fn num_sources(&self) -> usize {
        self.source_sigmas.len()
    }
}

/// Dispatches on `cfg.example`.
pub fn generate<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<GeneratedProblem> {
    match cfg.example {
        Example::One => gen_example1(cfg, rng),
        Example::Two => gen_example2(cfg, rng),
        Example::Three => gen_example3(cfg, rng),
        Example::Four => gen_example4(cfg, rng),
    }
}

fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = StandardNormal.sample(rng);
        }
    }
    m
}

/// Flips `v` so its largest-magnitude entry is positive.
fn fix_sign(v: &mut DVector<f64>) {
    let idx = v.iamax();
    if v[idx] < 0.0 {
        v.neg_mut();
    }
}

/// Leading `k` left singular vectors of `omega` (rows ≥ k), sign-normalized.
pub fn leading_left_singular_vectors(omega: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    if omega.nrows() < k || omega.ncols() < k {
        return Err(Error::config(format!(
            "need a matrix with at least {k} rows and columns for {k} singular vectors"
        )));
    }
    let svd = SVD::new(omega.clone(), true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut out = DMatrix::zeros(omega.nrows(), k);
    for (col, &i) in order.iter().take(k).enumerate() {
        let mut v = u.column(i).into_owned();
        fix_sign(&mut v);
        out.set_column(col, &v);
    }
    Ok(out)
}

/// `B = (2U_Kᵀ, 0.3·1_{s−r₀,K}ᵀ, 0_{p−s,K}ᵀ)ᵀ` shared by designs 1, 3 and 4.
fn common_basis<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<DMatrix<f64>> {
    let r0 = cfg.r0();
    if r0 < cfg.k {
        return Err(Error::config(format!(
            "need r0 = floor(s/3) >= K, got r0 = {r0}, K = {}",
            cfg.k
        )));
    }
    let omega = standard_normal_matrix(r0, cfg.k, rng);
    let u = leading_left_singular_vectors(&omega, cfg.k)?;
    let mut b = DMatrix::zeros(cfg.p, cfg.k);
    b.rows_mut(0, r0).copy_from(&(u * 2.0));
    b.rows_mut(r0, cfg.s - r0).fill(0.3);
    Ok(b)
}

/// `s_δ` coordinates drawn without replacement from `pool`, each `N(0, h/s_δ)`.
fn gaussian_delta<R: Rng + ?Sized>(
    cfg: &SimConfig,
    pool: std::ops::Range<usize>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let s_delta = cfg.s_delta();
    let mut delta = DVector::zeros(cfg.p);
    if s_delta == 0 {
        return Ok(delta);
    }
    if pool.len() < s_delta {
        return Err(Error::config(format!(
            "cannot place {s_delta} residual coordinates among {} candidates",
            pool.len()
        )));
    }
    let normal = Normal::new(0.0, (cfg.h / s_delta as f64).sqrt())
        .map_err(|e| Error::config(e.to_string()))?;
    let start = pool.start;
    for idx in sample(rng, pool.len(), s_delta).into_iter() {
        delta[start + idx] = normal.sample(rng);
    }
    Ok(delta)
}

/// Symmetric Toeplitz matrix with first row `(1, 1_{2k−1}ᵀ/(k+1), 0ᵀ)`;
/// `k` is one-based.
pub fn toeplitz_source_cov(k: usize, p: usize) -> Result<DMatrix<f64>> {
    if k == 0 || 2 * k > p {
        return Err(Error::config(format!("Toeplitz covariance needs 1 <= k and 2k <= p, got k = {k}, p = {p}")));
    }
    let off = 1.0 / (k as f64 + 1.0);
    Ok(DMatrix::from_fn(p, p, |i, j| {
        let lag = i.abs_diff(j);
        if lag == 0 {
            1.0
        } else if lag < 2 * k {
            off
        } else {
            0.0
        }
    }))
}

/// `σᵢⱼ = ρ^|i−j|`.
pub fn ar1_cov(p: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| rho.powi(i.abs_diff(j) as i32))
}

fn toeplitz_sources(cfg: &SimConfig) -> Result<Vec<DMatrix<f64>>> {
    (1..=cfg.k)
        .map(|k| {
            let m = toeplitz_source_cov(k, cfg.p)?;
            if cholesky_factor(&m).is_err() {
                return Err(Error::NotPositiveDefinite(format!(
                    "Toeplitz covariance for source {k} with p = {}",
                    cfg.p
                )));
            }
            Ok(m)
        })
        .collect()
}

/// Sources share the target's support almost exactly; identity covariances.
pub fn gen_example1<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<GeneratedProblem> {
    cfg.validate()?;
    let b = common_basis(cfg, rng)?;
    let delta = gaussian_delta(cfg, cfg.s..cfg.p, rng)?;
    let p = cfg.p;
    GeneratedProblem::assemble(
        cfg,
        b,
        delta,
        DMatrix::identity(p, p),
        vec![DMatrix::identity(p, p); cfg.k],
        1.0,
        vec![1.0; cfg.k],
    )
}

/// Source supports differ: a shared block of `s_c` coordinates plus
/// `s − s_c` source-specific coordinates each. `δ` spans a null direction of
/// `B` restricted to a random `s_δ`-subset, so `Bᵀδ = 0`.
///
/// When `s_δ ≤ K` such a direction exists only if the restricted rows are
/// rank deficient; the subset is redrawn until it is.
pub fn gen_example2<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<GeneratedProblem> {
    cfg.validate()?;
    let (p, k, s) = (cfg.p, cfg.k, cfg.s);
    let s_c = cfg.s_common();
    if s_c > s {
        return Err(Error::config(format!("common support {s_c} exceeds s = {s}")));
    }
    if s < k {
        return Err(Error::config(format!("need s >= K, got s = {s}, K = {k}")));
    }
    let omega = standard_normal_matrix(s, k, rng);
    let u = leading_left_singular_vectors(&omega, k)?;

    let mut b = DMatrix::zeros(p, k);
    for src in 0..k {
        for j in 0..s_c {
            b[(j, src)] = 2.0 * u[(j, src)];
        }
        let own = sample(rng, p - s_c, s - s_c);
        for (j, idx) in own.into_iter().enumerate() {
            b[(s_c + idx, src)] = 2.0 * u[(j + s_c, src)];
        }
    }

    let s_delta = cfg.s_delta();
    let mut delta = DVector::zeros(p);
    if s_delta > 0 {
        const MAX_DRAWS: usize = 1000;
        let mut found = false;
        for _ in 0..MAX_DRAWS {
            let rows: Vec<usize> = sample(rng, p, s_delta).into_vec();
            let b_s0 = b.select_rows(&rows);
            let gram = &b_s0 * b_s0.transpose();
            let (values, vectors) = sorted_eigen(&gram);
            let scale = values[values.len() - 1].max(1.0);
            if values[0] > 1e-10 * scale {
                continue;
            }
            let mut tilde = vectors.column(0).into_owned();
            fix_sign(&mut tilde);
            let tilde = &tilde * (cfg.h / tilde.norm());
            for (i, &r) in rows.iter().enumerate() {
                delta[r] = tilde[i];
            }
            found = true;
            break;
        }
        if !found {
            return Err(Error::config(format!(
                "no residual support of size s_delta = {s_delta} admits a null direction of B"
            )));
        }
    }

    GeneratedProblem::assemble(
        cfg,
        b,
        delta,
        DMatrix::identity(p, p),
        vec![DMatrix::identity(p, p); k],
        1.0,
        vec![1.0; k],
    )
}

/// Design 1 coefficients with heterogeneous source covariances and noise.
pub fn gen_example3<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<GeneratedProblem> {
    cfg.validate()?;
    let b = common_basis(cfg, rng)?;
    let delta = gaussian_delta(cfg, cfg.s..cfg.p, rng)?;
    let p = cfg.p;
    GeneratedProblem::assemble(
        cfg,
        b,
        delta,
        DMatrix::identity(p, p),
        toeplitz_sources(cfg)?,
        1.0,
        (1..=cfg.k).map(|k| k as f64).collect(),
    )
}

/// `δ` may overlap the source support and `Σ` is AR(1), so the generated
/// pair breaks `BᵀΣδ = 0`.
pub fn gen_example4<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<GeneratedProblem> {
    cfg.validate()?;
    let b = common_basis(cfg, rng)?;
    let delta = gaussian_delta(cfg, 0..cfg.p, rng)?;
    GeneratedProblem::assemble(
        cfg,
        b,
        delta,
        ar1_cov(cfg.p, 0.5),
        toeplitz_sources(cfg)?,
        1.0,
        (1..=cfg.k).map(|k| 1.25_f64.powi(k as i32 - 3)).collect(),
    )
}

/// Draws `n` rows `Xᵢ ~ N(0, Σ_role)` and `y = Xβ_role + ε`, `ε ~ N(0, σ²_role)`.
pub fn sample_dataset<R: Rng + ?Sized>(
    problem: &GeneratedProblem,
    n: usize,
    role: Role,
    rng: &mut R,
) -> Result<DataSet> {
    let p = problem.config.p;
    let (factor, beta, variance) = match role {
        Role::Target => (&problem.target_factor, problem.model.beta.clone(), problem.sigma2),
        Role::Source(k) => {
            if k >= problem.num_sources() {
                return Err(Error::invalid(format!("no source {k}")));
            }
            (
                &problem.source_factors[k],
                problem.model.b.column(k).into_owned(),
                problem.source_sigma2[k],
            )
        }
    };
    let z = standard_normal_matrix(n, p, rng);
    let x = match factor {
        CovFactor::Identity => z,
        CovFactor::Lower(l) => z * l.transpose(),
    };
    let mut y = &x * &beta;
    if variance > 0.0 {
        let sd = variance.sqrt();
        for v in y.iter_mut() {
            let e: f64 = StandardNormal.sample(rng);
            *v += sd * e;
        }
    }
    DataSet::new(x, y)
}

/// One replication's worth of data: `K` sources of size `N`, then the target.
pub fn sample_replication<R: Rng + ?Sized>(
    problem: &GeneratedProblem,
    rng: &mut R,
) -> Result<(Vec<DataSet>, DataSet)> {
    let cfg = &problem.config;
    let sources = (0..problem.num_sources())
        .map(|k| sample_dataset(problem, cfg.n_source, Role::Source(k), rng))
        .collect::<Result<Vec<_>>>()?;
    let target = sample_dataset(problem, cfg.n, Role::Target, rng)?;
    Ok((sources, target))
}
