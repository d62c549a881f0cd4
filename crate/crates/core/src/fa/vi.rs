//! Variational fitting route.
//!
//! Each row gets a Gaussian factor `q(z_i) = N(mu_i, V)`, and `(W, psi)` are
//! point estimates. Iterations alternate the closed-form optimum of the
//! evidence lower bound in `q` with a preconditioned gradient-ascent step in
//! `(W, log(psi - floor))` guarded by a backtracking line search. Both half
//! steps never decrease the bound.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::em::initialise;
use super::{
    all_finite, centre, centre_dense, posterior_operators, FaParams, FitConfig, FitReport, Moments,
    Route,
};
use crate::error::{Error, Result};
use crate::labelling::LabelMatrix;

const MAX_HALVINGS: usize = 40;

/// Per-row Gaussian factors `q(z_i) = N(mean_i, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalPosterior {
    pub mean: DMatrix<f64>,
    pub cov: DMatrix<f64>,
}

impl VariationalPosterior {
    /// The bound-maximising factors for fixed `(W, psi, c)`.
    pub fn optimal(params: &FaParams, lm: &LabelMatrix) -> Result<Self> {
        if lm.m() != params.m() {
            return Err(Error::DimensionMismatch {
                expected: params.m(),
                found: lm.m(),
            });
        }
        let x = centre(lm, &params.c);
        optimal_factors(&params.w, &params.psi, &x).ok_or_else(|| Error::Numerical {
            iteration: 0,
            message: "variational precision is not positive definite".into(),
        })
    }
}

fn optimal_factors(
    w: &DMatrix<f64>,
    psi: &DVector<f64>,
    x: &DMatrix<f64>,
) -> Option<VariationalPosterior> {
    let (cov, proj) = posterior_operators(w, psi)?;
    Some(VariationalPosterior {
        mean: x * proj,
        cov,
    })
}

/// Evidence lower bound summed over rows, evaluated row by row:
/// `E_q[log p(x_i | z_i)] - KL(q(z_i) || N(0, I))`.
pub fn elbo(params: &FaParams, q: &VariationalPosterior, lm: &LabelMatrix) -> Result<f64> {
    if lm.m() != params.m() {
        return Err(Error::DimensionMismatch {
            expected: params.m(),
            found: lm.m(),
        });
    }
    if q.mean.nrows() != lm.n() || q.mean.ncols() != params.k() {
        return Err(Error::DimensionMismatch {
            expected: lm.n(),
            found: q.mean.nrows(),
        });
    }
    let k = params.k();
    let log_det_v = log_det(&q.cov)
        .ok_or_else(|| Error::invalid("variational covariance is not positive definite"))?;
    let w = &params.w;
    let wvw = (w * &q.cov * w.transpose()).diagonal();
    let x = centre(lm, &params.c);
    let mut total = 0.0;
    for i in 0..lm.n() {
        let mu = q.mean.row(i);
        let mut expected_ll = 0.0;
        for j in 0..params.m() {
            let fit: f64 = w.row(j).iter().zip(mu.iter()).map(|(a, b)| a * b).sum();
            let r = x[(i, j)] - fit;
            expected_ll -=
                0.5 * ((2.0 * PI * params.psi[j]).ln() + (r * r + wvw[j]) / params.psi[j]);
        }
        let kl = 0.5 * (q.cov.trace() + mu.norm_squared() - k as f64 - log_det_v);
        total += expected_ll - kl;
    }
    Ok(total)
}

fn log_det(a: &DMatrix<f64>) -> Option<f64> {
    let chol = a.clone().cholesky()?;
    Some(
        2.0 * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>(),
    )
}

/// Sufficient statistics of `q` against the data.
struct Stats {
    n: f64,
    /// `sum_i x_ij^2`
    sxx: DVector<f64>,
    /// `sum_i x_i mu_i^T`
    sxm: DMatrix<f64>,
    /// `sum_i mu_i mu_i^T + n V`
    smm: DMatrix<f64>,
    /// terms of the bound that do not depend on `(W, psi)`
    neg_kl: f64,
}

impl Stats {
    fn new(x: &DMatrix<f64>, q: &VariationalPosterior) -> Option<Self> {
        let n = x.nrows() as f64;
        let k = q.cov.nrows() as f64;
        let mm = q.mean.tr_mul(&q.mean);
        let neg_kl = -0.5 * (n * q.cov.trace() + mm.trace() - n * k - n * log_det(&q.cov)?);
        Some(Stats {
            n,
            sxx: DVector::from_fn(x.ncols(), |j, _| x.column(j).norm_squared()),
            sxm: x.tr_mul(&q.mean),
            smm: mm + &q.cov * n,
            neg_kl,
        })
    }

    /// Residual sums `r_j = sum_i E_q[(x_ij - w_j^T z_i)^2]`.
    fn residuals(&self, w: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_fn(w.nrows(), |j, _| {
            let wj = w.row(j).transpose();
            self.sxx[j] - 2.0 * wj.dot(&self.sxm.row(j).transpose())
                + (wj.transpose() * &self.smm * &wj)[(0, 0)]
        })
    }

    fn bound(&self, w: &DMatrix<f64>, psi: &DVector<f64>) -> f64 {
        let r = self.residuals(w);
        let mut total = self.neg_kl;
        for j in 0..w.nrows() {
            total -= 0.5 * (self.n * (2.0 * PI * psi[j]).ln() + r[j] / psi[j]);
        }
        total
    }
}

/// Maximise the evidence lower bound. The reported objective is the bound.
pub fn fit_fa_vi(lm: &LabelMatrix, cfg: &FitConfig) -> Result<(FaParams, FitReport)> {
    fit_fa_vi_dense(&lm.to_real(), cfg)
}

/// [`fit_fa_vi`] on an arbitrary real-valued `n x m` data matrix.
pub fn fit_fa_vi_dense(data: &DMatrix<f64>, cfg: &FitConfig) -> Result<(FaParams, FitReport)> {
    cfg.check_data(data)?;
    let moments = Moments::of(data);
    let x = centre_dense(data.clone(), &moments.mean);
    let floor = cfg.psi_floor;
    let (mut w, psi0) = initialise(&moments, cfg);
    // psi = floor + exp(eta); keep a margin above the floor so eta is finite
    let mut eta = psi0.map(|p| (p - floor).max(floor).ln());
    let psi_of = |eta: &DVector<f64>| eta.map(|e| floor + e.exp());

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut step_size: f64 = 1.0;
    let mut last = f64::NEG_INFINITY;

    for iteration in 0..=cfg.max_iter {
        let psi = psi_of(&eta);
        let q = optimal_factors(&w, &psi, &x).ok_or_else(|| Error::Numerical {
            iteration,
            message: "variational precision is not positive definite".into(),
        })?;
        let stats = Stats::new(&x, &q).ok_or_else(|| Error::Numerical {
            iteration,
            message: "variational covariance is not positive definite".into(),
        })?;
        let current = stats.bound(&w, &psi);
        if !current.is_finite() {
            return Err(Error::Numerical {
                iteration,
                message: format!("evidence lower bound is {current}"),
            });
        }
        trace.push(current);
        iterations = iteration;
        if iteration > 0 && current - last < cfg.tol {
            converged = true;
            break;
        }
        last = current;
        if iteration == cfg.max_iter {
            break;
        }

        // gradient of the bound per row, preconditioned by psi_j for W
        let r = stats.residuals(&w);
        let grad_w = DMatrix::from_fn(w.nrows(), w.ncols(), |j, l| {
            let smm_w: f64 = (0..w.ncols()).map(|p| stats.smm[(l, p)] * w[(j, p)]).sum();
            (stats.sxm[(j, l)] - smm_w) / stats.n
        });
        let grad_eta = DVector::from_fn(w.nrows(), |j, _| {
            let p = psi[j];
            (eta[j].exp()) * (-stats.n / (2.0 * p) + r[j] / (2.0 * p * p)) / stats.n
        });

        let mut accepted = false;
        let mut t = (step_size * 2.0).min(1.0);
        for _ in 0..MAX_HALVINGS {
            let w_try = &w + &grad_w * t;
            let eta_try = &eta + &grad_eta * t;
            let psi_try = psi_of(&eta_try);
            if all_finite(&w_try, &psi_try) {
                let value = stats.bound(&w_try, &psi_try);
                if value.is_finite() && value >= current {
                    w = w_try;
                    eta = eta_try;
                    step_size = t;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            // no ascent direction left at working precision
            step_size = 1.0;
        }
    }

    let psi = psi_of(&eta);
    let params = FaParams::new(w, moments.mean, psi, floor)?;
    let final_objective = *trace.last().expect("at least one evaluation");
    Ok((
        params,
        FitReport {
            route: Route::Vi,
            iterations,
            final_log_likelihood: final_objective,
            ll_trace: trace,
            converged,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fa::{fit_fa_em, log_likelihood, DEFAULT_PSI_FLOOR};

    fn toy() -> LabelMatrix {
        LabelMatrix::from_rows_unnamed(&[
            vec![1, 1, 0],
            vec![1, 1, 1],
            vec![0, 0, -1],
            vec![0, -1, 0],
            vec![1, -1, 1],
            vec![-1, 0, 0],
            vec![1, 1, -1],
            vec![0, 0, 0],
        ])
        .unwrap()
    }

    #[test]
    fn zero_loadings_give_prior_factors() {
        let params = FaParams::new(
            DMatrix::zeros(3, 1),
            DVector::zeros(3),
            DVector::from_element(3, 1.0),
            DEFAULT_PSI_FLOOR,
        )
        .unwrap();
        let q = VariationalPosterior::optimal(&params, &toy()).unwrap();
        assert_eq!(q.cov, DMatrix::identity(1, 1));
        assert!(q.mean.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bound_is_tight_at_optimal_factors() {
        let (params, _) = fit_fa_em(&toy(), &FitConfig::default()).unwrap();
        let q = VariationalPosterior::optimal(&params, &toy()).unwrap();
        let bound = elbo(&params, &q, &toy()).unwrap();
        let ll = log_likelihood(&params, &toy()).unwrap();
        assert!((bound - ll).abs() < 1e-9, "{bound} vs {ll}");

        let mut loose = q.clone();
        loose.mean[(0, 0)] += 0.5;
        assert!(elbo(&params, &loose, &toy()).unwrap() < bound);
    }

    #[test]
    fn vi_trace_is_monotone_and_close_to_em() {
        let cfg = FitConfig {
            tol: 1e-9,
            max_iter: 5000,
            ..FitConfig::default()
        };
        let (_, vi) = fit_fa_vi(&toy(), &cfg).unwrap();
        let (_, em) = fit_fa_em(&toy(), &cfg).unwrap();
        for pair in vi.ll_trace.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-9);
        }
        assert!((vi.final_log_likelihood - em.final_log_likelihood).abs() < 1e-3 * 8.0);
    }

    #[test]
    fn constant_single_column_has_zero_factors() {
        let lm = LabelMatrix::from_rows_unnamed(&vec![vec![1]; 4]).unwrap();
        let (params, _) = fit_fa_vi(&lm, &FitConfig::default()).unwrap();
        let q = VariationalPosterior::optimal(&params, &lm).unwrap();
        assert!(q.mean.iter().all(|&v| v == 0.0));
    }
}
