use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    all_finite, log_likelihood_from_scatter, posterior_operators, symmetrize, FaParams, FitConfig,
    FitReport, Init, Moments, Route,
};
use crate::error::{Error, Result};
use crate::labelling::LabelMatrix;

/// Fit `(W, psi)` by expectation-maximisation with `c` fixed to the column means.
///
/// Every iteration works on the `m x m` scatter matrix, so its cost does not
/// depend on the number of rows.
pub fn fit_fa_em(lm: &LabelMatrix, cfg: &FitConfig) -> Result<(FaParams, FitReport)> {
    fit_fa_em_dense(&lm.to_real(), cfg)
}

/// [`fit_fa_em`] on an arbitrary real-valued `n x m` data matrix.
pub fn fit_fa_em_dense(x: &DMatrix<f64>, cfg: &FitConfig) -> Result<(FaParams, FitReport)> {
    cfg.check_data(x)?;
    let moments = Moments::of(x);
    let (mut w, mut psi) = initialise(&moments, cfg);

    let mut ll = log_likelihood_from_scatter(&covariance(&w, &psi), &moments.scatter, moments.n)
        .map_err(|e| numerical(0, e))?;
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;

    for iteration in 1..=cfg.max_iter {
        let (w_next, psi_next) =
            step(&w, &psi, &moments.scatter, cfg.psi_floor).ok_or_else(|| Error::Numerical {
                iteration,
                message: "posterior precision is not positive definite".into(),
            })?;
        if !all_finite(&w_next, &psi_next) {
            return Err(Error::Numerical {
                iteration,
                message: "non-finite parameter update".into(),
            });
        }
        let ll_next = log_likelihood_from_scatter(
            &covariance(&w_next, &psi_next),
            &moments.scatter,
            moments.n,
        )
        .map_err(|e| numerical(iteration, e))?;
        if !ll_next.is_finite() {
            return Err(Error::Numerical {
                iteration,
                message: format!("log-likelihood is {ll_next}"),
            });
        }
        w = w_next;
        psi = psi_next;
        trace.push(ll_next);
        iterations = iteration;
        let improvement = ll_next - ll;
        ll = ll_next;
        if improvement < cfg.tol {
            converged = true;
            break;
        }
    }

    let params = FaParams::new(w, moments.mean, psi, cfg.psi_floor)?;
    Ok((
        params,
        FitReport {
            route: Route::Em,
            iterations,
            final_log_likelihood: ll,
            ll_trace: trace,
            converged,
        },
    ))
}

/// One EM update of `params` on `lm`, keeping `c` as it is.
pub fn em_step(params: &FaParams, lm: &LabelMatrix) -> Result<FaParams> {
    if lm.m() != params.m() {
        return Err(Error::DimensionMismatch {
            expected: params.m(),
            found: lm.m(),
        });
    }
    let x = super::centre(lm, &params.c);
    let scatter = symmetrize(x.tr_mul(&x) / lm.n() as f64);
    let (w, psi) = step(&params.w, &params.psi, &scatter, params.psi_floor).ok_or_else(|| {
        Error::Numerical {
            iteration: 1,
            message: "posterior precision is not positive definite".into(),
        }
    })?;
    FaParams::new(w, params.c.clone(), psi, params.psi_floor)
}

/// E-step then M-step on sufficient statistics.
///
/// With `B = G W^T Psi^-1` the expected statistics are
/// `sum_i x_i E[z_i]^T = n S B^T` and `sum_i E[z_i z_i^T] = n (G + B S B^T)`.
fn step(
    w: &DMatrix<f64>,
    psi: &DVector<f64>,
    scatter: &DMatrix<f64>,
    psi_floor: f64,
) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let (g, proj) = posterior_operators(w, psi)?;
    // proj = Psi^-1 W G = B^T
    let s_bt = scatter * &proj;
    let ezz = symmetrize(g + proj.tr_mul(&s_bt));
    let w_next = s_bt.clone() * ezz.cholesky()?.inverse();
    let m = w.nrows();
    // Each psi_j maximises a unimodal objective, so clamping at the floor
    // gives the constrained maximiser.
    let psi_next = DVector::from_fn(m, |j, _| {
        let explained: f64 = w_next
            .row(j)
            .iter()
            .zip(s_bt.row(j).iter())
            .map(|(a, b)| a * b)
            .sum();
        (scatter[(j, j)] - explained).max(psi_floor)
    });
    Some((w_next, psi_next))
}

fn covariance(w: &DMatrix<f64>, psi: &DVector<f64>) -> DMatrix<f64> {
    let mut sigma = w * w.transpose();
    for j in 0..w.nrows() {
        sigma[(j, j)] += psi[j];
    }
    sigma
}

fn numerical(iteration: usize, e: Error) -> Error {
    Error::Numerical {
        iteration,
        message: e.to_string(),
    }
}

/// Starting point for EM.
///
/// `Svd` uses the principal directions of the centred data (the eigenvectors of
/// the scatter matrix, i.e. the right singular vectors of the centred matrix)
/// scaled as in the closed-form probabilistic PCA solution, with isotropic
/// noise equal to the mean discarded eigenvalue. `Random` draws loadings from
/// `N(0, 0.01)` and sets the noise to the column variances.
pub(crate) fn initialise(moments: &Moments, cfg: &FitConfig) -> (DMatrix<f64>, DVector<f64>) {
    let m = moments.scatter.nrows();
    let k = cfg.k;
    match cfg.init {
        Init::Svd => {
            let eig = SymmetricEigen::new(moments.scatter.clone());
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| {
                eig.eigenvalues[b]
                    .total_cmp(&eig.eigenvalues[a])
                    .then(a.cmp(&b))
            });
            let rest = &order[k..];
            let noise = if rest.is_empty() {
                0.0
            } else {
                rest.iter()
                    .map(|&i| eig.eigenvalues[i].max(0.0))
                    .sum::<f64>()
                    / rest.len() as f64
            };
            let mut w = DMatrix::zeros(m, k);
            for (l, &i) in order[..k].iter().enumerate() {
                let scale = (eig.eigenvalues[i] - noise).max(0.0).sqrt();
                let v = eig.eigenvectors.column(i);
                // sign convention: loadings sum to a non-negative value
                let sign = if v.sum() < 0.0 { -1.0 } else { 1.0 };
                for j in 0..m {
                    w[(j, l)] = sign * scale * v[j];
                }
            }
            (w, DVector::from_element(m, noise.max(cfg.psi_floor)))
        }
        Init::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let normal = Normal::new(0.0, 0.1).expect("valid normal");
            let w = DMatrix::from_fn(m, k, |_, _| normal.sample(&mut rng));
            let psi = DVector::from_fn(m, |j, _| moments.scatter[(j, j)].max(cfg.psi_floor));
            (w, psi)
        }
    }
}
