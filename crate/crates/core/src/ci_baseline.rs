//! Baseline label models: a conditionally-independent generative model fitted
//! by EM, and majority vote.
//!
//! In the generative model the true label `y` is latent and each LF emits one
//! of `{abstain, 0, 1}` from a per-class categorical distribution,
//! independently of the other LFs given `y`. Abstention is an ordinary
//! emission symbol, so LF coverage is part of the model.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fa::{FitReport, Route};
use crate::labelling::{LabelMatrix, ABSTAIN, NEGATIVE, POSITIVE};

pub const PROB_FLOOR: f64 = 1e-6;

/// Emission distribution of one LF under one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Emission {
    pub abstain: f64,
    pub vote_0: f64,
    pub vote_1: f64,
}

impl Emission {
    fn as_array(&self) -> [f64; 3] {
        [self.abstain, self.vote_0, self.vote_1]
    }

    fn from_array(a: [f64; 3]) -> Self {
        Emission {
            abstain: a[0],
            vote_0: a[1],
            vote_1: a[2],
        }
    }

    pub fn prob(&self, vote: i8) -> f64 {
        match vote {
            ABSTAIN => self.abstain,
            NEGATIVE => self.vote_0,
            _ => self.vote_1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfEmissions {
    pub name: String,
    pub negative_class: Emission,
    pub positive_class: Emission,
}

impl LfEmissions {
    fn class(&self, y: usize) -> &Emission {
        if y == 1 {
            &self.positive_class
        } else {
            &self.negative_class
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiParams {
    /// `P(y = 1)`.
    pub class_prior: f64,
    pub lfs: Vec<LfEmissions>,
}

impl CiParams {
    pub fn m(&self) -> usize {
        self.lfs.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.class_prior >= PROB_FLOOR && self.class_prior <= 1.0 - PROB_FLOOR) {
            return Err(Error::invalid(format!(
                "class prior {} outside [floor, 1 - floor]",
                self.class_prior
            )));
        }
        for lf in &self.lfs {
            for e in [&lf.negative_class, &lf.positive_class] {
                let a = e.as_array();
                if a.iter().any(|&p| p.is_nan() || p < PROB_FLOOR) {
                    return Err(Error::invalid(format!(
                        "LF '{}' has a probability below the floor",
                        lf.name
                    )));
                }
                if (a.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err(Error::invalid(format!(
                        "LF '{}' emissions do not sum to 1",
                        lf.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Swap the roles of the two classes. The data likelihood is unchanged.
    pub fn swapped(&self) -> Self {
        CiParams {
            class_prior: 1.0 - self.class_prior,
            lfs: self
                .lfs
                .iter()
                .map(|lf| LfEmissions {
                    name: lf.name.clone(),
                    negative_class: lf.positive_class,
                    positive_class: lf.negative_class,
                })
                .collect(),
        }
    }

    fn log_joint(&self, row: &[i8]) -> [f64; 2] {
        let mut lp = [(1.0 - self.class_prior).ln(), self.class_prior.ln()];
        for (lf, &v) in self.lfs.iter().zip(row) {
            for (y, slot) in lp.iter_mut().enumerate() {
                *slot += lf.class(y).prob(v).ln();
            }
        }
        lp
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: CiParams = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
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

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

fn check_dims(params: &CiParams, lm: &LabelMatrix) -> Result<()> {
    if lm.m() != params.m() {
        return Err(Error::DimensionMismatch {
            expected: params.m(),
            found: lm.m(),
        });
    }
    Ok(())
}

/// Exact `P(y = 1 | row)` for every row.
pub fn ci_posterior(params: &CiParams, lm: &LabelMatrix) -> Result<Vec<f64>> {
    check_dims(params, lm)?;
    Ok(lm
        .rows()
        .map(|row| {
            let [l0, l1] = params.log_joint(row);
            (l1 - log_sum_exp(l0, l1)).exp()
        })
        .collect())
}

/// Marginal log-likelihood of the rows.
pub fn ci_log_likelihood(params: &CiParams, lm: &LabelMatrix) -> Result<f64> {
    check_dims(params, lm)?;
    Ok(lm
        .rows()
        .map(|row| {
            let [l0, l1] = params.log_joint(row);
            log_sum_exp(l0, l1)
        })
        .sum())
}

/// Maximiser of `sum_e counts[e] ln p[e]` over the simplex with every
/// `p[e] >= floor`: entries whose unconstrained share would fall below the
/// floor are pinned to it and the rest are rescaled.
fn floored_categorical<const N: usize>(counts: [f64; N], floor: f64) -> [f64; N] {
    let mut pinned = [false; N];
    loop {
        let free_mass = 1.0 - floor * pinned.iter().filter(|&&p| p).count() as f64;
        let free_total: f64 = counts
            .iter()
            .zip(&pinned)
            .filter(|(_, &p)| !p)
            .map(|(c, _)| c)
            .sum();
        let mut out = [floor; N];
        let mut changed = false;
        for e in 0..N {
            if pinned[e] {
                continue;
            }
            let p = if free_total > 0.0 {
                free_mass * counts[e] / free_total
            } else {
                free_mass / pinned.iter().filter(|&&p| !p).count() as f64
            };
            if p < floor {
                pinned[e] = true;
                changed = true;
            }
            out[e] = p;
        }
        if !changed {
            return out;
        }
    }
}

fn emission_index(v: i8) -> usize {
    match v {
        ABSTAIN => 0,
        NEGATIVE => 1,
        _ => 2,
    }
}

/// Distinct rows with their multiplicities, in a fixed order.
fn patterns(lm: &LabelMatrix) -> Vec<(&[i8], f64)> {
    let mut map: BTreeMap<&[i8], usize> = BTreeMap::new();
    for row in lm.rows() {
        *map.entry(row).or_default() += 1;
    }
    map.into_iter().map(|(r, c)| (r, c as f64)).collect()
}

fn m_step(pats: &[(&[i8], f64)], resp: &[f64], names: &[String]) -> CiParams {
    let m = names.len();
    let mut class_counts = [0.0; 2];
    let mut emit = vec![[[0.0; 3]; 2]; m];
    for ((row, count), &r) in pats.iter().zip(resp) {
        let w = [count * (1.0 - r), count * r];
        class_counts[0] += w[0];
        class_counts[1] += w[1];
        for (j, &v) in row.iter().enumerate() {
            let e = emission_index(v);
            emit[j][0][e] += w[0];
            emit[j][1][e] += w[1];
        }
    }
    let prior = floored_categorical(class_counts, PROB_FLOOR);
    CiParams {
        class_prior: prior[1],
        lfs: names
            .iter()
            .zip(emit)
            .map(|(name, e)| LfEmissions {
                name: name.clone(),
                negative_class: Emission::from_array(floored_categorical(e[0], PROB_FLOOR)),
                positive_class: Emission::from_array(floored_categorical(e[1], PROB_FLOOR)),
            })
            .collect(),
    }
}

/// Fit by EM, starting from smoothed majority-vote responsibilities with a
/// small seeded jitter. After fitting, the class whose LFs emit `1` more often
/// on average is labelled positive.
pub fn fit_ci_em(
    lm: &LabelMatrix,
    max_iter: usize,
    tol: f64,
    seed: u64,
) -> Result<(CiParams, FitReport)> {
    if lm.n() < 2 {
        return Err(Error::invalid("fitting needs at least two rows"));
    }
    if max_iter == 0 || tol.is_nan() || tol <= 0.0 {
        return Err(Error::invalid("max_iter must be >= 1 and tol > 0"));
    }
    let pats = patterns(lm);
    let names = lm.lf_names().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init: Vec<f64> = pats
        .iter()
        .map(|(row, _)| {
            let pos = row.iter().filter(|&&v| v == POSITIVE).count() as f64;
            let neg = row.iter().filter(|&&v| v == NEGATIVE).count() as f64;
            let r = 0.1 + 0.8 * (pos + 0.5) / (pos + neg + 1.0);
            r + rng.gen_range(-0.01..0.01)
        })
        .collect();
    let mut params = m_step(&pats, &init, &names);

    let log_lik = |p: &CiParams| -> f64 {
        pats.iter()
            .map(|(row, c)| {
                let [l0, l1] = p.log_joint(row);
                c * log_sum_exp(l0, l1)
            })
            .sum()
    };
    let mut ll = log_lik(&params);
    if !ll.is_finite() {
        return Err(Error::Numerical {
            iteration: 0,
            message: format!("log-likelihood is {ll}"),
        });
    }
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    for iteration in 1..=max_iter {
        let resp: Vec<f64> = pats
            .iter()
            .map(|(row, _)| {
                let [l0, l1] = params.log_joint(row);
                (l1 - log_sum_exp(l0, l1)).exp()
            })
            .collect();
        params = m_step(&pats, &resp, &names);
        let next = log_lik(&params);
        if !next.is_finite() {
            return Err(Error::Numerical {
                iteration,
                message: format!("log-likelihood is {next}"),
            });
        }
        trace.push(next);
        iterations = iteration;
        let improvement = next - ll;
        ll = next;
        if improvement < tol {
            converged = true;
            break;
        }
    }

    let mean_vote_1 =
        |y: usize| params.lfs.iter().map(|lf| lf.class(y).vote_1).sum::<f64>() / params.m() as f64;
    if mean_vote_1(0) > mean_vote_1(1) {
        params = params.swapped();
    }
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

/// Hard labels from the posterior; exact 0.5 goes to 0.
pub fn ci_predict(params: &CiParams, lm: &LabelMatrix) -> Result<Vec<u8>> {
    Ok(ci_posterior(params, lm)?
        .into_iter()
        .map(|p| u8::from(p > 0.5))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// Ties and all-abstain rows are labelled 0.
    #[default]
    Negative,
    /// Ties and all-abstain rows are labelled 1.
    Positive,
    /// Abstentions count as votes for 0; remaining ties are labelled 0.
    AbstainAsNegative,
}

pub fn majority_vote(lm: &LabelMatrix, policy: TiePolicy) -> Vec<u8> {
    lm.rows()
        .map(|row| {
            let pos = row.iter().filter(|&&v| v == POSITIVE).count();
            let mut neg = row.iter().filter(|&&v| v == NEGATIVE).count();
            if policy == TiePolicy::AbstainAsNegative {
                neg += row.iter().filter(|&&v| v == ABSTAIN).count();
            }
            match pos.cmp(&neg) {
                std::cmp::Ordering::Greater => 1,
                std::cmp::Ordering::Less => 0,
                std::cmp::Ordering::Equal => u8::from(policy == TiePolicy::Positive),
            }
        })
        .collect()
}
