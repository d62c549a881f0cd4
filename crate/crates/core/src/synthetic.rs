//! Labelling matrices with known ground truth.
//!
//! Each row draws `y ~ Bernoulli(class_prior)`. LF `j` abstains with
//! probability `1 - propensity[j]`; otherwise it votes `y` with probability
//! `accuracy[j]` and `1 - y` otherwise, independently of the other LFs.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelling::{GoldLabels, LabelMatrix, ABSTAIN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub class_prior: f64,
    /// `P(correct vote | vote)` per LF, in `(0.5, 1]`.
    pub accuracy: Vec<f64>,
    /// `P(vote)` per LF, in `(0, 1]`.
    pub propensity: Vec<f64>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// `m` identical LFs.
    pub fn uniform(
        n: usize,
        m: usize,
        class_prior: f64,
        accuracy: f64,
        propensity: f64,
        seed: u64,
    ) -> Self {
        SyntheticSpec {
            n,
            class_prior,
            accuracy: vec![accuracy; m],
            propensity: vec![propensity; m],
            seed,
        }
    }

    /// `m` LFs whose accuracies are evenly spaced over `[lo, hi]`.
    pub fn spread(
        n: usize,
        m: usize,
        class_prior: f64,
        lo: f64,
        hi: f64,
        propensity: f64,
        seed: u64,
    ) -> Self {
        let accuracy = (0..m)
            .map(|j| {
                if m == 1 {
                    lo
                } else {
                    lo + (hi - lo) * j as f64 / (m - 1) as f64
                }
            })
            .collect();
        SyntheticSpec {
            n,
            class_prior,
            accuracy,
            propensity: vec![propensity; m],
            seed,
        }
    }

    pub fn m(&self) -> usize {
        self.accuracy.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("synthetic spec needs n >= 1"));
        }
        if self.accuracy.is_empty() {
            return Err(Error::invalid(
                "synthetic spec needs at least one labelling function",
            ));
        }
        if self.propensity.len() != self.accuracy.len() {
            return Err(Error::DimensionMismatch {
                expected: self.accuracy.len(),
                found: self.propensity.len(),
            });
        }
        if !(self.class_prior > 0.0 && self.class_prior < 1.0) {
            return Err(Error::invalid(format!(
                "class prior {} not in (0, 1)",
                self.class_prior
            )));
        }
        if let Some(a) = self.accuracy.iter().find(|&&a| !(a > 0.5 && a <= 1.0)) {
            return Err(Error::invalid(format!("accuracy {a} not in (0.5, 1]")));
        }
        if let Some(q) = self.propensity.iter().find(|&&q| !(q > 0.0 && q <= 1.0)) {
            return Err(Error::invalid(format!("propensity {q} not in (0, 1]")));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SyntheticSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<(LabelMatrix, GoldLabels)> {
    spec.validate()?;
    let m = spec.m();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut values = Vec::with_capacity(spec.n * m);
    let mut gold = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let y = u8::from(rng.gen_bool(spec.class_prior));
        gold.push(y);
        for j in 0..m {
            // both draws are always taken so that the stream layout is fixed
            let votes = rng.gen::<f64>() < spec.propensity[j];
            let correct = rng.gen::<f64>() < spec.accuracy[j];
            values.push(match (votes, correct) {
                (false, _) => ABSTAIN,
                (true, true) => y as i8,
                (true, false) => 1 - y as i8,
            });
        }
    }
    let names = (0..m).map(|j| format!("lf{j}")).collect();
    Ok((
        LabelMatrix::new(values, spec.n, names)?,
        GoldLabels::new(gold)?,
    ))
}

/// MAP label of every row under the true generating parameters. Abstentions
/// carry the same propensity factor under both classes and drop out. Exact
/// ties go to 0.
pub fn bayes_oracle(spec: &SyntheticSpec, lm: &LabelMatrix) -> Result<Vec<u8>> {
    spec.validate()?;
    if lm.m() != spec.m() {
        return Err(Error::DimensionMismatch {
            expected: spec.m(),
            found: lm.m(),
        });
    }
    let prior = [(1.0 - spec.class_prior).ln(), spec.class_prior.ln()];
    // Terms are summed in sorted order so that rows whose two classes share
    // the same multiset of factors tie exactly.
    let mut terms: [Vec<f64>; 2] = [
        Vec::with_capacity(lm.m() + 1),
        Vec::with_capacity(lm.m() + 1),
    ];
    Ok(lm
        .rows()
        .map(|row| {
            for (y, t) in terms.iter_mut().enumerate() {
                t.clear();
                t.push(prior[y]);
                for (j, &v) in row.iter().enumerate() {
                    if v != ABSTAIN {
                        let a = spec.accuracy[j];
                        t.push(if v as usize == y {
                            a.ln()
                        } else {
                            (1.0 - a).ln()
                        });
                    }
                }
                t.sort_by(f64::total_cmp);
            }
            let score = |t: &Vec<f64>| t.iter().sum::<f64>();
            u8::from(score(&terms[1]) > score(&terms[0]))
        })
        .collect())
}
