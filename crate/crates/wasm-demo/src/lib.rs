//! Browser bindings for exploring the factor-analysis label model on
//! synthetic labelling matrices. Every call takes and returns JSON strings.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use wsl_fa::ci_baseline::TiePolicy;
use wsl_fa::compare::{compare_methods, CompareConfig, Method};
use wsl_fa::fa::{posterior_moments, FitConfig};
use wsl_fa::label_model::{train_label_model, LabelModel, ThresholdKind};
use wsl_fa::labelling::{matrix_stats, GoldLabels, LabelMatrix};
use wsl_fa::metrics::{evaluate, MetricsReport};
use wsl_fa::synthetic::{bayes_oracle, generate, SyntheticSpec};

const HISTOGRAM_BINS: usize = 40;

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct DemoConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub m: usize,
    pub class_prior: f64,
    pub accuracy_lo: f64,
    pub accuracy_hi: f64,
    pub propensity: f64,
    /// `median` or `mean`.
    pub threshold: String,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            n_train: 2000,
            n_test: 1000,
            m: 6,
            class_prior: 0.3,
            accuracy_lo: 0.65,
            accuracy_hi: 0.9,
            propensity: 0.6,
            threshold: "median".into(),
            seed: 123,
        }
    }
}

#[derive(Debug, Serialize)]
struct MethodRow {
    method: String,
    accuracy: f64,
    f1: f64,
}

#[derive(Debug, Serialize)]
struct Histogram {
    lo: f64,
    hi: f64,
    negative: Vec<usize>,
    positive: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    loadings: Vec<f64>,
    psi: Vec<f64>,
    orientation: i8,
    threshold: f64,
    all_abstain_fraction: f64,
    oracle_accuracy: f64,
    methods: Vec<MethodRow>,
    histogram: Histogram,
    lf_names: &'a [String],
}

#[derive(Debug, Serialize)]
struct PosteriorCurve {
    mean: f64,
    variance: f64,
    z: Vec<f64>,
    density: Vec<f64>,
}

/// A fitted model together with its synthetic test split.
#[wasm_bindgen]
pub struct Demo {
    model: LabelModel,
    gold: GoldLabels,
    scores: Vec<f64>,
    summary: String,
}

impl Demo {
    /// Generate train/test splits, fit the factor model and compare it
    /// with the baselines.
    pub fn build(config: &DemoConfig) -> Result<Demo, String> {
        let kind = match config.threshold.as_str() {
            "median" => ThresholdKind::Median,
            "mean" => ThresholdKind::Mean,
            other => return Err(format!("unsupported threshold '{other}'")),
        };
        let spec = |n, seed| {
            SyntheticSpec::spread(
                n,
                config.m,
                config.class_prior,
                config.accuracy_lo,
                config.accuracy_hi,
                config.propensity,
                seed,
            )
        };
        let err = |e: wsl_fa::Error| e.to_string();
        let (train, _) = generate(&spec(config.n_train, config.seed)).map_err(err)?;
        let test_spec = spec(config.n_test, config.seed.wrapping_add(1));
        let (test, gold) = generate(&test_spec).map_err(err)?;

        let fit = FitConfig {
            seed: config.seed,
            ..FitConfig::default()
        };
        let model = train_label_model(&train, &fit, kind, None).map_err(err)?;
        let pred = model.predict(&test).map_err(err)?;

        let cmp = CompareConfig {
            fit,
            threshold: kind,
            tie_policy: TiePolicy::Negative,
        };
        let methods = compare_methods(&train, &test, &gold, &Method::ALL, &cmp, None)
            .map_err(err)?
            .into_iter()
            .map(|r| MethodRow {
                method: r.method.to_string(),
                accuracy: r.metrics.accuracy,
                f1: r.metrics.f1,
            })
            .collect();
        let oracle = bayes_oracle(&test_spec, &test).map_err(err)?;

        let summary = Summary {
            loadings: model.params.w.column(0).iter().copied().collect(),
            psi: model.params.psi.iter().copied().collect(),
            orientation: model.orientation,
            threshold: pred.threshold,
            all_abstain_fraction: matrix_stats(&test).all_abstain_fraction,
            oracle_accuracy: evaluate(&oracle, &gold).map_err(err)?.accuracy,
            methods,
            histogram: histogram(&pred.scores, gold.values()),
            lf_names: test.lf_names(),
        };
        let summary = serde_json::to_string(&summary).map_err(|e| e.to_string())?;
        Ok(Demo {
            model,
            scores: pred.scores,
            gold,
            summary,
        })
    }

    /// Test-set metrics when the oriented scores are cut at `threshold`.
    pub fn metrics_report(&self, threshold: f64) -> Result<MetricsReport, String> {
        let labels: Vec<u8> = self
            .scores
            .iter()
            .map(|&s| u8::from(s > threshold))
            .collect();
        evaluate(&labels, &self.gold).map_err(|e| e.to_string())
    }

    /// Oriented posterior of the first factor for one vote pattern.
    pub fn posterior_curve(&self, row: &[i8]) -> Result<String, String> {
        let lm = LabelMatrix::from_rows_unnamed(&[row.to_vec()]).map_err(|e| e.to_string())?;
        let post = posterior_moments(&self.model.params, &lm).map_err(|e| e.to_string())?;
        let mean = f64::from(self.model.orientation) * post.mean[(0, 0)];
        let variance = post.cov[(0, 0)];
        let sd = variance.sqrt();
        // cover the prior and the posterior
        let lo = (mean - 4.0 * sd).min(-3.0);
        let hi = (mean + 4.0 * sd).max(3.0);
        let z: Vec<f64> = (0..=400)
            .map(|i| lo + (hi - lo) * i as f64 / 400.0)
            .collect();
        let norm = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
        let density = z
            .iter()
            .map(|&x| norm * (-0.5 * ((x - mean) / sd).powi(2)).exp())
            .collect();
        serde_json::to_string(&PosteriorCurve {
            mean,
            variance,
            z,
            density,
        })
        .map_err(|e| e.to_string())
    }
}

fn histogram(scores: &[f64], gold: &[u8]) -> Histogram {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo {
        (hi - lo) / HISTOGRAM_BINS as f64
    } else {
        1.0
    };
    let mut negative = vec![0; HISTOGRAM_BINS];
    let mut positive = vec![0; HISTOGRAM_BINS];
    for (&s, &g) in scores.iter().zip(gold) {
        let bin = (((s - lo) / width) as usize).min(HISTOGRAM_BINS - 1);
        if g == 1 {
            positive[bin] += 1;
        } else {
            negative[bin] += 1;
        }
    }
    Histogram {
        lo,
        hi: if hi > lo { hi } else { lo + 1.0 },
        negative,
        positive,
    }
}

#[wasm_bindgen]
impl Demo {
    /// `config` is a JSON object with any of the `DemoConfig` fields.
    #[wasm_bindgen(constructor)]
    pub fn new(config: &str) -> Result<Demo, JsValue> {
        let config: DemoConfig =
            serde_json::from_str(config).map_err(|e| JsValue::from_str(&e.to_string()))?;
        Demo::build(&config).map_err(|e| JsValue::from_str(&e))
    }

    pub fn summary(&self) -> String {
        self.summary.clone()
    }

    #[wasm_bindgen(js_name = metricsAt)]
    pub fn metrics_at(&self, threshold: f64) -> Result<String, JsValue> {
        let report = self
            .metrics_report(threshold)
            .map_err(|e| JsValue::from_str(&e))?;
        Ok(serde_json::to_string(&report).expect("metrics serialize"))
    }

    /// `row` is a JSON array of votes in `{-1, 0, 1}`, one per LF.
    pub fn posterior(&self, row: &str) -> Result<String, JsValue> {
        let row: Vec<i8> =
            serde_json::from_str(row).map_err(|e| JsValue::from_str(&e.to_string()))?;
        self.posterior_curve(&row)
            .map_err(|e| JsValue::from_str(&e))
    }
}
