//! Binary pseudo-labels from the first latent factor.
//!
//! Training fits factor analysis, takes the posterior mean of the first
//! factor for every training row, fixes a sign so that higher scores go with
//! positive votes, and stores a threshold. Prediction scores new rows the same
//! way and compares against the threshold; exact ties go to label 0.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fa::{fit_fa_em, posterior_moments, FaParams, FaParamsJson, FitConfig};
use crate::labelling::{GoldLabels, LabelMatrix, ABSTAIN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdKind {
    #[default]
    Median,
    Mean,
    /// Youden-optimal cut on the normal CDF of the standardised score,
    /// chosen on a labelled development split.
    CdfYouden,
}

impl std::str::FromStr for ThresholdKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "median" => Ok(ThresholdKind::Median),
            "mean" => Ok(ThresholdKind::Mean),
            "cdf-youden" | "cdf_youden" => Ok(ThresholdKind::CdfYouden),
            other => Err(Error::invalid(format!("unknown threshold kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelModel {
    pub params: FaParams,
    pub threshold_kind: ThresholdKind,
    /// Raw first-factor units for `Median`/`Mean`, CDF units for `CdfYouden`.
    pub threshold_value: f64,
    /// Mean of the raw training first factor.
    pub train_mean: f64,
    /// Standard deviation of the raw training first factor.
    pub train_std: f64,
    pub orientation: i8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub labels: Vec<u8>,
    /// Oriented first-factor posterior means.
    pub scores: Vec<f64>,
    /// Threshold in the units the rule compares against: oriented score units
    /// for `Median`/`Mean`, CDF units for `CdfYouden`.
    pub threshold: f64,
}

impl Predictions {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("index,score,label\n");
        for (i, (s, l)) in self.scores.iter().zip(&self.labels).enumerate() {
            writeln!(out, "{i},{s:?},{l}").unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

/// Raw posterior mean of the first factor for every row.
pub fn first_factor(params: &FaParams, lm: &LabelMatrix) -> Result<Vec<f64>> {
    let post = posterior_moments(params, lm)?;
    Ok(post.mean.column(0).iter().copied().collect())
}

/// Sign that makes the factor correlate non-negatively with the per-row mean
/// of non-abstain votes. Rows where every LF abstains are skipped; `+1` when
/// the correlation is undefined.
pub fn orient_factor(z_train: &[f64], lm: &LabelMatrix) -> Result<i8> {
    if z_train.len() != lm.n() {
        return Err(Error::DimensionMismatch {
            expected: lm.n(),
            found: z_train.len(),
        });
    }
    let pairs: Vec<(f64, f64)> = lm
        .rows()
        .zip(z_train)
        .filter_map(|(row, &z)| {
            let votes: Vec<f64> = row
                .iter()
                .filter(|&&v| v != ABSTAIN)
                .map(|&v| f64::from(v))
                .collect();
            (!votes.is_empty()).then(|| (z, votes.iter().sum::<f64>() / votes.len() as f64))
        })
        .collect();
    if pairs.len() < 2 {
        return Ok(1);
    }
    let n = pairs.len() as f64;
    let mz = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut cov, mut vz, mut vv) = (0.0, 0.0, 0.0);
    for &(z, v) in &pairs {
        cov += (z - mz) * (v - mv);
        vz += (z - mz) * (z - mz);
        vv += (v - mv) * (v - mv);
    }
    if vz == 0.0 || vv == 0.0 || !cov.is_finite() {
        return Ok(1);
    }
    Ok(if cov >= 0.0 { 1 } else { -1 })
}

/// Average of the two middle order statistics for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Cut `t` maximising `TPR - FPR` for the rule `score > t`. Candidates are
/// every distinct score plus the lowest possible CDF value; ties keep the
/// smallest cut.
pub fn youden_threshold(scores: &[f64], gold: &[u8]) -> Result<f64> {
    if scores.len() != gold.len() {
        return Err(Error::DimensionMismatch {
            expected: gold.len(),
            found: scores.len(),
        });
    }
    let pos = gold.iter().filter(|&&g| g == 1).count();
    let neg = gold.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid(
            "Youden threshold needs both classes in the development labels",
        ));
    }
    let mut candidates: Vec<f64> = scores.to_vec();
    candidates.push(0.0);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let mut best = (f64::NEG_INFINITY, candidates[0]);
    for &t in &candidates {
        let (mut tp, mut fp) = (0usize, 0usize);
        for (&s, &g) in scores.iter().zip(gold) {
            if s > t {
                if g == 1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        let j = tp as f64 / pos as f64 - fp as f64 / neg as f64;
        if j > best.0 {
            best = (j, t);
        }
    }
    Ok(best.1)
}

impl LabelModel {
    /// Build the pseudo-labeler around already fitted parameters.
    pub fn from_params(
        params: FaParams,
        train: &LabelMatrix,
        kind: ThresholdKind,
        dev: Option<(&LabelMatrix, &GoldLabels)>,
    ) -> Result<Self> {
        let z = first_factor(&params, train)?;
        let orientation = orient_factor(&z, train)?;
        let (train_mean, std) = mean_std(&z);
        let train_std = if std > 0.0 && std.is_finite() {
            std
        } else {
            1.0
        };
        let mut model = LabelModel {
            params,
            threshold_kind: kind,
            threshold_value: 0.0,
            train_mean,
            train_std,
            orientation,
        };
        model.threshold_value = match kind {
            ThresholdKind::Median => median(&z).expect("non-empty training matrix"),
            ThresholdKind::Mean => train_mean,
            ThresholdKind::CdfYouden => {
                let (dev_lm, dev_gold) = dev.ok_or_else(|| {
                    Error::invalid("cdf-youden threshold requires a labelled development set")
                })?;
                if dev_gold.len() != dev_lm.n() {
                    return Err(Error::DimensionMismatch {
                        expected: dev_lm.n(),
                        found: dev_gold.len(),
                    });
                }
                let scores = model.scores(dev_lm)?;
                let (cdf, gold): (Vec<f64>, Vec<u8>) = dev_gold
                    .labelled()
                    .map(|(i, g)| (model.cdf_of(scores[i]), g))
                    .unzip();
                youden_threshold(&cdf, &gold)?
            }
        };
        if !model.threshold_value.is_finite() {
            return Err(Error::Numerical {
                iteration: 0,
                message: "threshold is not finite".into(),
            });
        }
        Ok(model)
    }

    pub fn m(&self) -> usize {
        self.params.m()
    }

    /// Oriented first-factor scores.
    pub fn scores(&self, lm: &LabelMatrix) -> Result<Vec<f64>> {
        let o = f64::from(self.orientation);
        Ok(first_factor(&self.params, lm)?
            .into_iter()
            .map(|z| o * z)
            .collect())
    }

    fn cdf_of(&self, score: f64) -> f64 {
        let centre = f64::from(self.orientation) * self.train_mean;
        std_normal_cdf((score - centre) / self.train_std)
    }

    /// Threshold in the units `predict` compares against.
    pub fn effective_threshold(&self) -> f64 {
        match self.threshold_kind {
            ThresholdKind::Median | ThresholdKind::Mean => {
                f64::from(self.orientation) * self.threshold_value
            }
            ThresholdKind::CdfYouden => self.threshold_value,
        }
    }

    /// Label for one oriented score.
    pub fn label_of(&self, score: f64) -> u8 {
        let t = self.effective_threshold();
        let fires = match self.threshold_kind {
            ThresholdKind::Median | ThresholdKind::Mean => score > t,
            ThresholdKind::CdfYouden => self.cdf_of(score) > t,
        };
        u8::from(fires)
    }

    pub fn predict(&self, lm: &LabelMatrix) -> Result<Predictions> {
        if lm.m() != self.m() {
            return Err(Error::DimensionMismatch {
                expected: self.m(),
                found: lm.m(),
            });
        }
        let scores = self.scores(lm)?;
        Ok(Predictions {
            labels: scores.iter().map(|&s| self.label_of(s)).collect(),
            scores,
            threshold: self.effective_threshold(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&LabelModelJson::from(self)).expect("model serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: LabelModelJson = serde_json::from_str(text)?;
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

/// Fit factor analysis by EM on `train` and wrap it as a pseudo-labeler.
pub fn train_label_model(
    train: &LabelMatrix,
    cfg: &FitConfig,
    kind: ThresholdKind,
    dev: Option<(&LabelMatrix, &GoldLabels)>,
) -> Result<LabelModel> {
    if kind == ThresholdKind::CdfYouden && dev.is_none() {
        return Err(Error::invalid(
            "cdf-youden threshold requires a labelled development set",
        ));
    }
    let (params, _) = fit_fa_em(train, cfg)?;
    LabelModel::from_params(params, train, kind, dev)
}

pub fn predict(model: &LabelModel, lm: &LabelMatrix) -> Result<Predictions> {
    model.predict(lm)
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelModelJson {
    #[serde(flatten)]
    params: FaParamsJson,
    threshold_kind: ThresholdKind,
    threshold_value: f64,
    orientation: i8,
    train_mean: f64,
    train_std: f64,
}

impl From<&LabelModel> for LabelModelJson {
    fn from(m: &LabelModel) -> Self {
        LabelModelJson {
            params: FaParamsJson::from(&m.params),
            threshold_kind: m.threshold_kind,
            threshold_value: m.threshold_value,
            orientation: m.orientation,
            train_mean: m.train_mean,
            train_std: m.train_std,
        }
    }
}

impl TryFrom<LabelModelJson> for LabelModel {
    type Error = Error;

    fn try_from(raw: LabelModelJson) -> Result<Self> {
        if raw.orientation != 1 && raw.orientation != -1 {
            return Err(Error::invalid(format!(
                "orientation {} is not +1 or -1",
                raw.orientation
            )));
        }
        if !raw.threshold_value.is_finite() || !raw.train_mean.is_finite() {
            return Err(Error::invalid("threshold and training mean must be finite"));
        }
        if !(raw.train_std > 0.0 && raw.train_std.is_finite()) {
            return Err(Error::invalid(
                "training standard deviation must be positive",
            ));
        }
        Ok(LabelModel {
            params: raw.params.try_into()?,
            threshold_kind: raw.threshold_kind,
            threshold_value: raw.threshold_value,
            orientation: raw.orientation,
            train_mean: raw.train_mean,
            train_std: raw.train_std,
        })
    }
}

/// Factor table for external plotting:
/// `factor1[,factor2],score,label_pred[,label_gold]`.
pub fn export_factors_string(
    model: &LabelModel,
    lm: &LabelMatrix,
    gold: Option<&GoldLabels>,
) -> Result<String> {
    if let Some(g) = gold {
        if g.len() != lm.n() {
            return Err(Error::DimensionMismatch {
                expected: lm.n(),
                found: g.len(),
            });
        }
    }
    let post = posterior_moments(&model.params, lm)?;
    let pred = model.predict(lm)?;
    let two = model.params.k() >= 2;
    let mut out = String::from("factor1");
    if two {
        out.push_str(",factor2");
    }
    out.push_str(",score,label_pred");
    if gold.is_some() {
        out.push_str(",label_gold");
    }
    out.push('\n');
    for i in 0..lm.n() {
        write!(out, "{:?}", post.mean[(i, 0)]).unwrap();
        if two {
            write!(out, ",{:?}", post.mean[(i, 1)]).unwrap();
        }
        write!(out, ",{:?},{}", pred.scores[i], pred.labels[i]).unwrap();
        if let Some(g) = gold {
            if g.is_labelled(i) {
                write!(out, ",{}", g.values()[i]).unwrap();
            } else {
                out.push_str(",-1");
            }
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn export_factors(
    model: &LabelModel,
    lm: &LabelMatrix,
    gold: Option<&GoldLabels>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let text = export_factors_string(model, lm, gold)?;
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
