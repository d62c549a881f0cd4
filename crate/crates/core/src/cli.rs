//! Command-line front end. Exit codes: 0 success, 2 input or validation
//! failure, 3 numerical failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::ci_baseline::{ci_posterior, fit_ci_em, CiParams, TiePolicy};
use crate::compare::{
    compare_methods, comparison_csv, robustness_sweep, CompareConfig, Method, SweepConfig,
};
use crate::error::{Error, Result};
use crate::fa::{fit_fa_em, fit_fa_vi, FitConfig, FitReport, Init};
use crate::label_model::{export_factors, LabelModel, ThresholdKind};
use crate::labelling::{
    apply_lfs, covariance_matrix, load_gold_labels, load_label_matrix, load_lf_specs, matrix_stats,
    GoldLabels, LabelMatrix,
};
use crate::metrics::evaluate;
use crate::synthetic::{generate, SyntheticSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "wsl-fa",
    version,
    about = "Factor Analysis label model for weak supervision"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RouteArg {
    FaEm,
    FaVi,
    CiEm,
    Majority,
}

impl From<RouteArg> for Method {
    fn from(r: RouteArg) -> Self {
        match r {
            RouteArg::FaEm => Method::FaEm,
            RouteArg::FaVi => Method::FaVi,
            RouteArg::CiEm => Method::CiEm,
            RouteArg::Majority => Method::Majority,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ThresholdArg {
    Median,
    Mean,
    CdfYouden,
}

impl From<ThresholdArg> for ThresholdKind {
    fn from(t: ThresholdArg) -> Self {
        match t {
            ThresholdArg::Median => ThresholdKind::Median,
            ThresholdArg::Mean => ThresholdKind::Mean,
            ThresholdArg::CdfYouden => ThresholdKind::CdfYouden,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Svd,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TieArg {
    Negative,
    Positive,
    AbstainAsNegative,
}

impl From<TieArg> for TiePolicy {
    fn from(t: TieArg) -> Self {
        match t {
            TieArg::Negative => TiePolicy::Negative,
            TieArg::Positive => TiePolicy::Positive,
            TieArg::AbstainAsNegative => TiePolicy::AbstainAsNegative,
        }
    }
}

/// Model and optimiser flags shared by the fitting subcommands.
#[derive(Debug, Clone, Args)]
pub struct ModelFlags {
    #[arg(long, default_value_t = 123)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = ThresholdArg::Median)]
    pub threshold: ThresholdArg,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long = "max-iter", default_value_t = 1000)]
    pub max_iter: usize,
    #[arg(long, value_enum, default_value_t = InitArg::Svd)]
    pub init: InitArg,
    #[arg(long = "psi-floor", default_value_t = crate::fa::DEFAULT_PSI_FLOOR)]
    pub psi_floor: f64,
    #[arg(long = "tie-policy", value_enum, default_value_t = TieArg::Negative)]
    pub tie_policy: TieArg,
    /// Labelled development matrix, read only for the cdf-youden threshold.
    #[arg(long = "dev-matrix", requires = "dev_gold")]
    pub dev_matrix: Option<PathBuf>,
    #[arg(long = "dev-gold", requires = "dev_matrix")]
    pub dev_gold: Option<PathBuf>,
}

impl ModelFlags {
    fn fit_config(&self) -> FitConfig {
        FitConfig {
            k: self.k,
            max_iter: self.max_iter,
            tol: self.tol,
            psi_floor: self.psi_floor,
            seed: self.seed,
            init: match self.init {
                InitArg::Svd => Init::Svd,
                InitArg::Random => Init::Random,
            },
        }
    }

    fn compare_config(&self) -> CompareConfig {
        CompareConfig {
            fit: self.fit_config(),
            threshold: self.threshold.into(),
            tie_policy: self.tie_policy.into(),
        }
    }

    fn dev_paths(&self) -> Vec<&Path> {
        self.dev_matrix
            .iter()
            .chain(&self.dev_gold)
            .map(PathBuf::as_path)
            .collect()
    }

    /// The development split, loaded only when the threshold needs it.
    fn load_dev(&self) -> Result<Option<(LabelMatrix, GoldLabels)>> {
        if ThresholdKind::from(self.threshold) != ThresholdKind::CdfYouden {
            return Ok(None);
        }
        match (&self.dev_matrix, &self.dev_gold) {
            (Some(m), Some(g)) => Ok(Some((load_label_matrix(m)?, load_gold_labels(g)?))),
            _ => Err(Error::invalid(
                "cdf-youden threshold requires --dev-matrix and --dev-gold",
            )),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a label model and write it as JSON together with a fit report.
    Fit {
        matrix: PathBuf,
        #[arg(long, default_value = "fa-em", value_enum)]
        route: RouteArg,
        #[arg(long)]
        out: PathBuf,
        /// Fit report path; defaults to `<out stem>.report.json`.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        flags: ModelFlags,
    },
    /// Label a matrix with a fitted model (`index,score,label`).
    Predict {
        model: PathBuf,
        matrix: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against gold labels.
    Evaluate {
        predictions: PathBuf,
        gold: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every label model on the same split and tabulate the metrics.
    Compare {
        train: PathBuf,
        test: PathBuf,
        gold: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: ModelFlags,
    },
    /// Accuracy against training-set size over repeated subsamples.
    Sweep {
        train: PathBuf,
        test: PathBuf,
        gold: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Mean and standard deviation per method and size.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![10usize, 20, 30, 40, 50, 60])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[command(flatten)]
        flags: ModelFlags,
    },
    /// Per-LF vote counts and the all-abstain row count.
    Stats {
        matrix: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Column covariance of a labelling matrix as an `m x m` CSV.
    Cov {
        matrix: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a labelling matrix and gold labels with known ground truth.
    Synth {
        /// JSON spec; overrides the individual flags below.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        m: usize,
        #[arg(long = "class-prior", default_value_t = 0.5)]
        class_prior: f64,
        #[arg(long, default_value_t = 0.8)]
        accuracy: f64,
        #[arg(long, default_value_t = 0.5)]
        propensity: f64,
        #[arg(long, default_value_t = 123)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "gold-out")]
        gold_out: PathBuf,
    },
    /// Apply keyword/regex labelling functions to text records (one per line).
    ApplyLfs {
        records: PathBuf,
        specs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write first-factor (and second, when k >= 2) values with predictions.
    ExportFactors {
        model: PathBuf,
        matrix: PathBuf,
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INPUT
    }
}

fn require_inputs(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            return Err(Error::io(
                *p,
                std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
            ));
        }
    }
    Ok(())
}

fn require_outputs(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            if !dir.is_dir() {
                return Err(Error::io(
                    *p,
                    std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        "output directory does not exist",
                    ),
                ));
            }
        }
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn default_report_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    out.with_file_name(format!("{stem}.report.json"))
}

#[derive(Serialize)]
struct FitSummary<'a> {
    n: usize,
    m: usize,
    #[serde(flatten)]
    report: &'a FitReport,
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Fit {
            matrix,
            route,
            out,
            report,
            flags,
        } => {
            let report_path = report.unwrap_or_else(|| default_report_path(&out));
            let mut inputs = vec![matrix.as_path()];
            inputs.extend(flags.dev_paths());
            require_inputs(&inputs)?;
            require_outputs(&[&out, &report_path])?;
            let cfg = flags.fit_config();
            cfg.validate()?;
            let lm = load_label_matrix(&matrix)?;
            let dev = flags.load_dev()?;
            let dev_ref = dev.as_ref().map(|(m, g)| (m, g));
            let (model_json, fit_report) = match route {
                RouteArg::FaEm | RouteArg::FaVi => {
                    let (params, rep) = if route == RouteArg::FaEm {
                        fit_fa_em(&lm, &cfg)?
                    } else {
                        fit_fa_vi(&lm, &cfg)?
                    };
                    let model =
                        LabelModel::from_params(params, &lm, flags.threshold.into(), dev_ref)?;
                    (model.to_json(), rep)
                }
                RouteArg::CiEm => {
                    let (params, rep) = fit_ci_em(&lm, cfg.max_iter, cfg.tol, cfg.seed)?;
                    (params.to_json(), rep)
                }
                RouteArg::Majority => {
                    return Err(Error::invalid("majority vote has no parameters to fit"));
                }
            };
            write(&out, &(model_json + "\n"))?;
            write(
                &report_path,
                &to_json(&FitSummary {
                    n: lm.n(),
                    m: lm.m(),
                    report: &fit_report,
                }),
            )
        }
        Command::Predict { model, matrix, out } => {
            require_inputs(&[&model, &matrix])?;
            require_outputs(&[&out])?;
            let text = std::fs::read_to_string(&model).map_err(|e| Error::io(&model, e))?;
            let lm = load_label_matrix(&matrix)?;
            let csv = match load_any_model(&text)? {
                AnyModel::Fa(model) => model.predict(&lm)?.to_csv_string(),
                AnyModel::Ci(params) => {
                    let post = ci_posterior(&params, &lm)?;
                    let mut s = String::from("index,score,label\n");
                    for (i, p) in post.iter().enumerate() {
                        writeln!(s, "{i},{p:?},{}", u8::from(*p > 0.5)).unwrap();
                    }
                    s
                }
            };
            write(&out, &csv)
        }
        Command::Evaluate {
            predictions,
            gold,
            out,
        } => {
            require_inputs(&[&predictions, &gold])?;
            if let Some(o) = &out {
                require_outputs(&[o])?;
            }
            let pred = load_prediction_labels(&predictions)?;
            let gold = load_gold_labels(&gold)?;
            let report = to_json(&evaluate(&pred, &gold)?);
            match out {
                Some(o) => write(&o, &report),
                None => {
                    print!("{report}");
                    Ok(())
                }
            }
        }
        Command::Compare {
            train,
            test,
            gold,
            out,
            flags,
        } => {
            let mut inputs = vec![train.as_path(), test.as_path(), gold.as_path()];
            inputs.extend(flags.dev_paths());
            require_inputs(&inputs)?;
            require_outputs(&[&out])?;
            let cfg = flags.compare_config();
            cfg.fit.validate()?;
            let train = load_label_matrix(&train)?;
            let test = load_label_matrix(&test)?;
            let gold = load_gold_labels(&gold)?;
            let dev = flags.load_dev()?;
            let reports = compare_methods(
                &train,
                &test,
                &gold,
                &Method::ALL,
                &cfg,
                dev.as_ref().map(|(m, g)| (m, g)),
            )?;
            write(&out, &comparison_csv(&reports))
        }
        Command::Sweep {
            train,
            test,
            gold,
            out,
            summary,
            sizes,
            repeats,
            flags,
        } => {
            require_inputs(&[&train, &test, &gold])?;
            let mut outs = vec![out.as_path()];
            outs.extend(summary.as_deref());
            require_outputs(&outs)?;
            let cfg = SweepConfig {
                sizes,
                repeats,
                seed: flags.seed,
                methods: Method::ALL.to_vec(),
                compare: flags.compare_config(),
            };
            cfg.compare.fit.validate()?;
            let train = load_label_matrix(&train)?;
            let test = load_label_matrix(&test)?;
            let gold = load_gold_labels(&gold)?;
            let res = robustness_sweep(&train, &test, &gold, &cfg)?;
            write(&out, &res.rows_csv())?;
            if let Some(s) = summary {
                write(&s, &res.summary_csv())?;
            }
            Ok(())
        }
        Command::Stats { matrix, out } => {
            require_inputs(&[&matrix])?;
            if let Some(o) = &out {
                require_outputs(&[o])?;
            }
            let stats = matrix_stats(&load_label_matrix(&matrix)?);
            let mut csv = String::from("lf,abstain,negative,positive\n");
            for c in &stats.per_lf {
                writeln!(
                    csv,
                    "{},{},{},{}",
                    c.name, c.abstain, c.negative, c.positive
                )
                .unwrap();
            }
            eprintln!(
                "rows={} lfs={} all_abstain_rows={} all_abstain_fraction={:.4}",
                stats.n_rows, stats.n_lfs, stats.n_all_abstain_rows, stats.all_abstain_fraction
            );
            match out {
                Some(o) => write(&o, &csv),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
        Command::Cov { matrix, out } => {
            require_inputs(&[&matrix])?;
            require_outputs(&[&out])?;
            let lm = load_label_matrix(&matrix)?;
            let cov = covariance_matrix(&lm)?;
            let mut csv = lm.lf_names().join(",");
            csv.push('\n');
            for row in cov.row_iter() {
                let fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                csv.push_str(&fields.join(","));
                csv.push('\n');
            }
            write(&out, &csv)
        }
        Command::Synth {
            spec,
            n,
            m,
            class_prior,
            accuracy,
            propensity,
            seed,
            out,
            gold_out,
        } => {
            if let Some(s) = &spec {
                require_inputs(&[s])?;
            }
            require_outputs(&[&out, &gold_out])?;
            let spec = match spec {
                Some(path) => SyntheticSpec::load(path)?,
                None => SyntheticSpec::uniform(n, m, class_prior, accuracy, propensity, seed),
            };
            let (lm, gold) = generate(&spec)?;
            lm.write_csv(&out)?;
            gold.write_csv(&gold_out)
        }
        Command::ApplyLfs {
            records,
            specs,
            out,
        } => {
            require_inputs(&[&records, &specs])?;
            require_outputs(&[&out])?;
            let text = std::fs::read_to_string(&records).map_err(|e| Error::io(&records, e))?;
            let lines: Vec<&str> = text.lines().collect();
            let lm = apply_lfs(&lines, &load_lf_specs(&specs)?)?;
            lm.write_csv(&out)
        }
        Command::ExportFactors {
            model,
            matrix,
            gold,
            out,
        } => {
            let mut inputs = vec![model.as_path(), matrix.as_path()];
            inputs.extend(gold.as_deref());
            require_inputs(&inputs)?;
            require_outputs(&[&out])?;
            let model = LabelModel::load(&model)?;
            let lm = load_label_matrix(&matrix)?;
            let gold = gold.map(load_gold_labels).transpose()?;
            export_factors(&model, &lm, gold.as_ref(), &out)
        }
    }
}

enum AnyModel {
    Fa(LabelModel),
    Ci(CiParams),
}

fn load_any_model(text: &str) -> Result<AnyModel> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    if value.get("W").is_some() {
        Ok(AnyModel::Fa(LabelModel::from_json(text)?))
    } else if value.get("lfs").is_some() {
        Ok(AnyModel::Ci(CiParams::from_json(text)?))
    } else {
        Err(Error::Malformed(
            "model file is neither a factor-analysis nor a CI-EM model".into(),
        ))
    }
}

/// The `label` column of a predictions CSV.
fn load_prediction_labels(path: &Path) -> Result<Vec<u8>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Malformed(format!("cannot read header: {e}")))?
        .clone();
    let col = headers
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| Error::Malformed("predictions CSV has no 'label' column".into()))?;
    let mut labels = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Malformed(format!("row {i}: {e}")))?;
        match record.get(col) {
            Some("0") => labels.push(0),
            Some("1") => labels.push(1),
            other => {
                return Err(Error::Cell {
                    row: i,
                    column: col,
                    message: format!("label {other:?} is not 0 or 1"),
                })
            }
        }
    }
    Ok(labels)
}
