//! Linear-Gaussian factor analysis on labelling matrices.
//!
//! Each row `x` of the labelling matrix is modelled as `x = W z + c + e`
//! with `z ~ N(0, I_k)` and `e ~ N(0, diag(psi))`, so that marginally
//! `x ~ N(c, W W^T + diag(psi))`.

mod em;
mod vi;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelling::LabelMatrix;

pub use em::{em_step, fit_fa_em, fit_fa_em_dense};
pub use vi::{elbo, fit_fa_vi, fit_fa_vi_dense, VariationalPosterior};

pub const DEFAULT_PSI_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    #[default]
    Svd,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Absolute improvement in the objective below which fitting stops.
    pub tol: f64,
    pub psi_floor: f64,
    pub seed: u64,
    pub init: Init,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            k: 1,
            max_iter: 1000,
            tol: 1e-4,
            psi_floor: DEFAULT_PSI_FLOOR,
            seed: 123,
            init: Init::Svd,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::invalid("tol must be a positive finite number"));
        }
        if !(self.psi_floor > 0.0 && self.psi_floor.is_finite()) {
            return Err(Error::invalid("psi_floor must be a positive finite number"));
        }
        Ok(())
    }

    pub(crate) fn check_data(&self, x: &DMatrix<f64>) -> Result<()> {
        self.validate()?;
        if x.nrows() < 2 {
            return Err(Error::invalid("fitting needs at least two rows"));
        }
        if self.k > x.ncols() {
            return Err(Error::invalid(format!(
                "k exceeds number of labelling functions ({} > {})",
                self.k,
                x.ncols()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("data contains non-finite values"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Em,
    Vi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub route: Route,
    pub iterations: usize,
    /// Log-likelihood for EM; the evidence lower bound for VI.
    pub final_log_likelihood: f64,
    /// Objective at initialisation followed by one entry per iteration.
    pub ll_trace: Vec<f64>,
    pub converged: bool,
}

/// Fitted factor-analysis parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FaParams {
    /// `m x k` loadings.
    pub w: DMatrix<f64>,
    pub c: DVector<f64>,
    pub psi: DVector<f64>,
    pub psi_floor: f64,
}

impl FaParams {
    pub fn new(
        w: DMatrix<f64>,
        c: DVector<f64>,
        psi: DVector<f64>,
        psi_floor: f64,
    ) -> Result<Self> {
        let p = FaParams {
            w,
            c,
            psi,
            psi_floor,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn m(&self) -> usize {
        self.w.nrows()
    }

    pub fn k(&self) -> usize {
        self.w.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (m, k) = self.w.shape();
        if k == 0 || m == 0 {
            return Err(Error::invalid("loading matrix must be non-empty"));
        }
        if k > m {
            return Err(Error::invalid(format!(
                "k exceeds number of labelling functions ({k} > {m})"
            )));
        }
        if self.c.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: self.c.len(),
            });
        }
        if self.psi.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: self.psi.len(),
            });
        }
        if !(self.psi_floor > 0.0 && self.psi_floor.is_finite()) {
            return Err(Error::invalid("psi_floor must be a positive finite number"));
        }
        if let Some((j, v)) = self
            .psi
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v >= self.psi_floor && v.is_finite()))
        {
            return Err(Error::invalid(format!(
                "psi[{j}] = {v} is below the floor {}",
                self.psi_floor
            )));
        }
        if self.w.iter().chain(self.c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite loading or bias"));
        }
        Ok(())
    }

    /// Model covariance `W W^T + diag(psi)`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mut sigma = &self.w * self.w.transpose();
        for j in 0..self.m() {
            sigma[(j, j)] += self.psi[j];
        }
        sigma
    }

    /// Negate column `col` of the loadings. The model covariance is unchanged.
    pub fn flip_factor(&self, col: usize) -> Self {
        let mut out = self.clone();
        out.w.column_mut(col).neg_mut();
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&FaParamsJson::from(self)).expect("params serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: FaParamsJson = serde_json::from_str(text)?;
        raw.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub fn save_params(params: &FaParams, path: impl AsRef<Path>) -> Result<()> {
    params.save(path)
}

pub fn load_params(path: impl AsRef<Path>) -> Result<FaParams> {
    FaParams::load(path)
}

/// On-disk layout: `W` is a list of `m` rows of length `k`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct FaParamsJson {
    pub k: usize,
    pub m: usize,
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub psi: Vec<f64>,
    #[serde(default = "default_floor")]
    pub psi_floor: f64,
}

fn default_floor() -> f64 {
    DEFAULT_PSI_FLOOR
}

impl From<&FaParams> for FaParamsJson {
    fn from(p: &FaParams) -> Self {
        FaParamsJson {
            k: p.k(),
            m: p.m(),
            w: p.w
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            c: p.c.iter().copied().collect(),
            psi: p.psi.iter().copied().collect(),
            psi_floor: p.psi_floor,
        }
    }
}

impl TryFrom<FaParamsJson> for FaParams {
    type Error = Error;

    fn try_from(raw: FaParamsJson) -> Result<Self> {
        if raw.k > raw.m {
            return Err(Error::invalid(format!(
                "k exceeds number of labelling functions ({} > {})",
                raw.k, raw.m
            )));
        }
        if raw.w.len() != raw.m {
            return Err(Error::DimensionMismatch {
                expected: raw.m,
                found: raw.w.len(),
            });
        }
        if let Some(row) = raw.w.iter().find(|r| r.len() != raw.k) {
            return Err(Error::DimensionMismatch {
                expected: raw.k,
                found: row.len(),
            });
        }
        let w = DMatrix::from_row_iterator(raw.m, raw.k, raw.w.into_iter().flatten());
        FaParams::new(
            w,
            DVector::from_vec(raw.c),
            DVector::from_vec(raw.psi),
            raw.psi_floor,
        )
    }
}

/// Posterior `p(z | x_i) = N(mean_i, cov)`; the covariance is shared by all rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMoments {
    /// `n x k`, one row per data point.
    pub mean: DMatrix<f64>,
    /// `k x k`.
    pub cov: DMatrix<f64>,
}

/// `G = (I + W^T Psi^-1 W)^-1` and the `m x k` projection `Psi^-1 W G`
/// such that a centred row maps to its posterior mean by `x^T (Psi^-1 W G)`.
pub(crate) fn posterior_operators(
    w: &DMatrix<f64>,
    psi: &DVector<f64>,
) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let k = w.ncols();
    let psi_inv_w = DMatrix::from_fn(w.nrows(), k, |j, l| w[(j, l)] / psi[j]);
    let precision = DMatrix::identity(k, k) + w.transpose() * &psi_inv_w;
    let g = symmetrize(precision.cholesky()?.inverse());
    let proj = psi_inv_w * &g;
    Some((g, proj))
}

pub fn posterior_moments(params: &FaParams, lm: &LabelMatrix) -> Result<PosteriorMoments> {
    if lm.m() != params.m() {
        return Err(Error::DimensionMismatch {
            expected: params.m(),
            found: lm.m(),
        });
    }
    params.validate()?;
    let (g, proj) =
        posterior_operators(&params.w, &params.psi).ok_or_else(|| Error::Numerical {
            iteration: 0,
            message: "posterior precision is not positive definite".into(),
        })?;
    let centred = centre(lm, &params.c);
    Ok(PosteriorMoments {
        mean: centred * proj,
        cov: g,
    })
}

pub(crate) fn centre(lm: &LabelMatrix, c: &DVector<f64>) -> DMatrix<f64> {
    centre_dense(lm.to_real(), c)
}

pub(crate) fn centre_dense(mut x: DMatrix<f64>, c: &DVector<f64>) -> DMatrix<f64> {
    for mut row in x.row_iter_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v -= c[j];
        }
    }
    x
}

/// Cholesky factor of the model covariance, or the smallest eigenvalue when
/// the matrix is not positive definite.
pub(crate) fn chol_or_eig(sigma: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite {
            min_eigenvalue: SymmetricEigen::new(sigma.clone())
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min),
        })
}

pub(crate) fn log_det_from_chol(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> f64 {
    2.0 * chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|d| d.ln())
        .sum::<f64>()
}

/// Multivariate normal log-density of every row under `N(c, W W^T + diag(psi))`,
/// summed over rows.
///
/// Identical rows share one density evaluation; the per-pattern terms are
/// accumulated in a fixed order, so stacking a matrix on itself doubles the
/// result exactly.
pub fn log_likelihood(params: &FaParams, lm: &LabelMatrix) -> Result<f64> {
    if lm.m() != params.m() {
        return Err(Error::DimensionMismatch {
            expected: params.m(),
            found: lm.m(),
        });
    }
    let m = params.m();
    let chol = chol_or_eig(&params.covariance())?;
    let log_norm = -0.5 * (m as f64 * (2.0 * PI).ln() + log_det_from_chol(&chol));

    let mut patterns: BTreeMap<&[i8], usize> = BTreeMap::new();
    for row in lm.rows() {
        *patterns.entry(row).or_default() += 1;
    }
    let mut total = 0.0;
    for (row, count) in patterns {
        let d = DVector::from_iterator(
            m,
            row.iter()
                .zip(params.c.iter())
                .map(|(&v, c)| f64::from(v) - c),
        );
        let quad = d.dot(&chol.solve(&d));
        total += count as f64 * (log_norm - 0.5 * quad);
    }
    Ok(total)
}

/// Log-likelihood from the scatter matrix `S = (1/n) sum (x_i - c)(x_i - c)^T`.
pub(crate) fn log_likelihood_from_scatter(
    sigma: &DMatrix<f64>,
    scatter: &DMatrix<f64>,
    n: usize,
) -> Result<f64> {
    let m = sigma.nrows();
    let chol = chol_or_eig(sigma)?;
    let trace = chol.solve(scatter).trace();
    Ok(-0.5 * n as f64 * (m as f64 * (2.0 * PI).ln() + log_det_from_chol(&chol) + trace))
}

/// Column means and the biased scatter matrix about them.
pub(crate) struct Moments {
    pub n: usize,
    pub mean: DVector<f64>,
    pub scatter: DMatrix<f64>,
}

impl Moments {
    pub fn of(x: &DMatrix<f64>) -> Self {
        let n = x.nrows();
        let mean = DVector::from_fn(x.ncols(), |j, _| x.column(j).sum() / n as f64);
        let xc = centre_dense(x.clone(), &mean);
        let scatter = symmetrize(xc.tr_mul(&xc) / n as f64);
        Moments { n, mean, scatter }
    }
}

pub(crate) fn symmetrize(a: DMatrix<f64>) -> DMatrix<f64> {
    let t = a.transpose();
    (a + t) * 0.5
}

pub(crate) fn all_finite(w: &DMatrix<f64>, psi: &DVector<f64>) -> bool {
    w.iter().chain(psi.iter()).all(|v| v.is_finite())
}
