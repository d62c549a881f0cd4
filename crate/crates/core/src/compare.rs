//! Side-by-side evaluation of the label models and the training-size sweep.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ci_baseline::{ci_predict, fit_ci_em, majority_vote, TiePolicy};
use crate::error::{Error, Result};
use crate::fa::{fit_fa_em, fit_fa_vi, FitConfig};
use crate::label_model::{LabelModel, ThresholdKind};
use crate::labelling::{GoldLabels, LabelMatrix};
use crate::metrics::{evaluate, MetricsReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "fa-em")]
    FaEm,
    #[serde(rename = "fa-vi")]
    FaVi,
    #[serde(rename = "ci-em")]
    CiEm,
    #[serde(rename = "majority")]
    Majority,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::FaEm, Method::FaVi, Method::CiEm, Method::Majority];

    pub fn name(self) -> &'static str {
        match self {
            Method::FaEm => "fa-em",
            Method::FaVi => "fa-vi",
            Method::CiEm => "ci-em",
            Method::Majority => "majority",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown route '{s}'")))
    }
}

/// Settings shared by every method in a comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareConfig {
    pub fit: FitConfig,
    pub threshold: ThresholdKind,
    pub tie_policy: TiePolicy,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            fit: FitConfig::default(),
            threshold: ThresholdKind::Median,
            tie_policy: TiePolicy::Negative,
        }
    }
}

/// Train `method` on `train` (labels are never read) and label `test`.
/// `dev` is only consulted by the `cdf_youden` threshold.
pub fn fit_predict(
    method: Method,
    train: &LabelMatrix,
    test: &LabelMatrix,
    cfg: &CompareConfig,
    dev: Option<(&LabelMatrix, &GoldLabels)>,
) -> Result<Vec<u8>> {
    if train.m() != test.m() {
        return Err(Error::DimensionMismatch {
            expected: train.m(),
            found: test.m(),
        });
    }
    match method {
        Method::FaEm | Method::FaVi => {
            if cfg.threshold == ThresholdKind::CdfYouden && dev.is_none() {
                return Err(Error::invalid(
                    "cdf-youden threshold requires a labelled development set",
                ));
            }
            let (params, _) = if method == Method::FaEm {
                fit_fa_em(train, &cfg.fit)?
            } else {
                fit_fa_vi(train, &cfg.fit)?
            };
            let model = LabelModel::from_params(params, train, cfg.threshold, dev)?;
            Ok(model.predict(test)?.labels)
        }
        Method::CiEm => {
            let (params, _) = fit_ci_em(train, cfg.fit.max_iter, cfg.fit.tol, cfg.fit.seed)?;
            ci_predict(&params, test)
        }
        Method::Majority => Ok(majority_vote(test, cfg.tie_policy)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub metrics: MetricsReport,
}

/// Every method on the same split and seed.
pub fn compare_methods(
    train: &LabelMatrix,
    test: &LabelMatrix,
    gold_test: &GoldLabels,
    methods: &[Method],
    cfg: &CompareConfig,
    dev: Option<(&LabelMatrix, &GoldLabels)>,
) -> Result<Vec<MethodReport>> {
    methods
        .iter()
        .map(|&method| {
            let pred = fit_predict(method, train, test, cfg, dev)?;
            Ok(MethodReport {
                method,
                metrics: evaluate(&pred, gold_test)?,
            })
        })
        .collect()
}

const METRIC_HEADER: &str = "accuracy,precision,recall,f1,tp,fp,tn,fn,n";

fn metric_fields(m: &MetricsReport) -> String {
    format!(
        "{:?},{:?},{:?},{:?},{},{},{},{},{}",
        m.accuracy, m.precision, m.recall, m.f1, m.tp, m.fp, m.tn, m.fn_, m.n
    )
}

pub fn comparison_csv(reports: &[MethodReport]) -> String {
    let mut out = format!("method,{METRIC_HEADER}\n");
    for r in reports {
        writeln!(out, "{},{}", r.method, metric_fields(&r.metrics)).unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub sizes: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub compare: CompareConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            sizes: vec![10, 20, 30, 40, 50, 60],
            repeats: 5,
            seed: 123,
            methods: Method::ALL.to_vec(),
            compare: CompareConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: Method,
    pub size: usize,
    pub repeat: usize,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub method: Method,
    pub size: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummary>,
}

impl SweepResult {
    /// `method,size,repeat,accuracy,precision,recall,f1`
    pub fn rows_csv(&self) -> String {
        let mut out = String::from("method,size,repeat,accuracy,precision,recall,f1\n");
        for r in &self.rows {
            let m = &r.metrics;
            writeln!(
                out,
                "{},{},{},{:?},{:?},{:?},{:?}",
                r.method, r.size, r.repeat, m.accuracy, m.precision, m.recall, m.f1
            )
            .unwrap();
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("method,size,mean_accuracy,std_accuracy\n");
        for s in &self.summary {
            writeln!(
                out,
                "{},{},{:?},{:?}",
                s.method, s.size, s.mean_accuracy, s.std_accuracy
            )
            .unwrap();
        }
        out
    }

    pub fn mean_accuracy(&self, method: Method, size: usize) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.method == method && s.size == size)
            .map(|s| s.mean_accuracy)
    }
}

/// For every training size and repeat, draw that many training rows without
/// replacement, fit each method on them and score it on the fixed test set.
///
/// Subsamples come from a generator seeded with `cfg.seed`; each
/// `(size, repeat)` cell gets its own derived stream, drawn in a fixed order.
/// Model fits use `cfg.compare.fit.seed`, so a sweep over the full training
/// set reproduces a plain comparison.
pub fn robustness_sweep(
    train: &LabelMatrix,
    test: &LabelMatrix,
    gold_test: &GoldLabels,
    cfg: &SweepConfig,
) -> Result<SweepResult> {
    if cfg.repeats == 0 {
        return Err(Error::invalid("repeats must be at least 1"));
    }
    if cfg.sizes.is_empty() {
        return Err(Error::invalid("no training sizes given"));
    }
    if let Some(&size) = cfg.sizes.iter().find(|&&s| s > train.n() || s == 0) {
        return Err(Error::invalid(format!(
            "training size {size} is not in 1..={} available rows",
            train.n()
        )));
    }
    if cfg.compare.threshold == ThresholdKind::CdfYouden {
        return Err(Error::invalid(
            "the sweep does not support the cdf-youden threshold",
        ));
    }
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    for &size in &cfg.sizes {
        for repeat in 0..cfg.repeats {
            let mut rng = ChaCha8Rng::seed_from_u64(master.gen());
            let mut idx = sample(&mut rng, train.n(), size).into_vec();
            idx.sort_unstable();
            let sub = train.select_rows(&idx)?;
            for &method in &cfg.methods {
                let pred = fit_predict(method, &sub, test, &cfg.compare, None)?;
                rows.push(SweepRow {
                    method,
                    size,
                    repeat,
                    metrics: evaluate(&pred, gold_test)?,
                });
            }
        }
    }
    rows.sort_by_key(|r| (r.method, r.size, r.repeat));

    let mut summary = Vec::new();
    for &method in &cfg.methods {
        for &size in &cfg.sizes {
            let acc: Vec<f64> = rows
                .iter()
                .filter(|r| r.method == method && r.size == size)
                .map(|r| r.metrics.accuracy)
                .collect();
            let n = acc.len() as f64;
            let mean = acc.iter().sum::<f64>() / n;
            let var = if acc.len() > 1 {
                acc.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            summary.push(SweepSummary {
                method,
                size,
                mean_accuracy: mean,
                std_accuracy: var.sqrt(),
            });
        }
    }
    Ok(SweepResult { rows, summary })
}
