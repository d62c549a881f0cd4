//! Labelling matrices: construction, CSV ingestion, summary statistics, and a
//! small keyword/regex labelling-function engine.
//!
//! Entries are `-1` (abstain), `0` (negative vote) or `1` (positive vote).
//! Downstream models read them as the real numbers `-1.0`, `0.0`, `1.0`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ABSTAIN: i8 = -1;
pub const NEGATIVE: i8 = 0;
pub const POSITIVE: i8 = 1;

/// Dense `n x m` matrix of labelling-function outputs, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    values: Vec<i8>,
    n: usize,
    m: usize,
    lf_names: Vec<String>,
}

impl LabelMatrix {
    pub fn new(values: Vec<i8>, n: usize, lf_names: Vec<String>) -> Result<Self> {
        let m = lf_names.len();
        if n == 0 {
            return Err(Error::invalid("label matrix needs at least one row"));
        }
        if m == 0 {
            return Err(Error::invalid(
                "label matrix needs at least one labelling function",
            ));
        }
        if values.len() != n * m {
            return Err(Error::DimensionMismatch {
                expected: n * m,
                found: values.len(),
            });
        }
        check_names(&lf_names)?;
        if let Some(pos) = values.iter().position(|v| !(-1..=1).contains(v)) {
            return Err(Error::Cell {
                row: pos / m,
                column: pos % m,
                message: format!("entry {} is not one of -1, 0, 1", values[pos]),
            });
        }
        Ok(LabelMatrix {
            values,
            n,
            m,
            lf_names,
        })
    }

    pub fn from_rows(rows: &[Vec<i8>], lf_names: Vec<String>) -> Result<Self> {
        let m = lf_names.len();
        let mut values = Vec::with_capacity(rows.len() * m);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Malformed(format!(
                    "row {i} has {} fields, expected {m}",
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        Self::new(values, rows.len(), lf_names)
    }

    /// Convenience constructor naming the columns `lf0..lf{m-1}`.
    pub fn from_rows_unnamed(rows: &[Vec<i8>]) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        Self::from_rows(rows, default_names(m))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn lf_names(&self) -> &[String] {
        &self.lf_names
    }

    pub fn get(&self, row: usize, col: usize) -> i8 {
        self.values[row * self.m + col]
    }

    pub fn row(&self, i: usize) -> &[i8] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[i8]> + '_ {
        self.values.chunks_exact(self.m)
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = i8> + '_ {
        self.values.iter().skip(j).step_by(self.m).copied()
    }

    /// Entries as reals, abstain mapped to `-1.0`.
    pub fn to_real(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(self.n, self.m, self.values.iter().map(|&v| f64::from(v)))
    }

    /// New matrix made of the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.m);
        for &i in indices {
            if i >= self.n {
                return Err(Error::invalid(format!(
                    "row index {i} out of range for {} rows",
                    self.n
                )));
            }
            values.extend_from_slice(self.row(i));
        }
        Self::new(values, indices.len(), self.lf_names.clone())
    }

    /// Stack `other` beneath `self`.
    pub fn vstack(&self, other: &LabelMatrix) -> Result<Self> {
        if other.m != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                found: other.m,
            });
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Self::new(values, self.n + other.n, self.lf_names.clone())
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| Error::Malformed(format!("cannot read header: {e}")))?;
        let lf_names: Vec<String> = header.iter().map(str::to_owned).collect();
        if lf_names.is_empty() || (lf_names.len() == 1 && lf_names[0].is_empty()) {
            return Err(Error::Malformed("empty header".into()));
        }
        check_names(&lf_names)?;
        let m = lf_names.len();

        let mut values = Vec::new();
        let mut n = 0;
        for (i, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::Malformed(format!("row {i}: {e}")))?;
            if record.len() != m {
                return Err(Error::Malformed(format!(
                    "row {i} has {} fields, expected {m}",
                    record.len()
                )));
            }
            for (j, field) in record.iter().enumerate() {
                let v: i8 = field.parse().map_err(|_| Error::Cell {
                    row: i,
                    column: j,
                    message: format!("'{field}' is not an integer in {{-1, 0, 1}}"),
                })?;
                if !(-1..=1).contains(&v) {
                    return Err(Error::Cell {
                        row: i,
                        column: j,
                        message: format!("entry {v} is not one of -1, 0, 1"),
                    });
                }
                values.push(v);
            }
            n += 1;
        }
        Self::new(values, n, lf_names)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = self.lf_names.join(",");
        out.push('\n');
        for row in self.rows() {
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                write!(out, "{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

pub fn load_label_matrix(path: impl AsRef<Path>) -> Result<LabelMatrix> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    LabelMatrix::from_csv_reader(std::io::BufReader::new(file))
}

fn default_names(m: usize) -> Vec<String> {
    (0..m).map(|j| format!("lf{j}")).collect()
}

fn check_names(names: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for name in names {
        if name.is_empty() {
            return Err(Error::invalid("empty labelling-function name"));
        }
        if !seen.insert(name.as_str()) {
            return Err(Error::invalid(format!(
                "duplicate labelling-function name '{name}'"
            )));
        }
    }
    Ok(())
}

/// Ground-truth binary labels. Rows with `mask[i] == false` are unlabelled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldLabels {
    values: Vec<u8>,
    mask: Option<Vec<bool>>,
}

impl GoldLabels {
    pub fn new(values: Vec<u8>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|&v| v > 1) {
            return Err(Error::Cell {
                row: pos,
                column: 0,
                message: format!("gold label {} is not 0 or 1", values[pos]),
            });
        }
        Ok(GoldLabels { values, mask: None })
    }

    pub fn with_mask(values: Vec<u8>, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: values.len(),
                found: mask.len(),
            });
        }
        let mut gold = Self::new(values)?;
        gold.mask = Some(mask);
        Ok(gold)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn is_labelled(&self, i: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[i])
    }

    /// `(index, label)` for every labelled row.
    pub fn labelled(&self) -> impl Iterator<Item = (usize, u8)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| self.is_labelled(*i))
            .map(|(i, &v)| (i, v))
    }

    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!(
                "row index {bad} out of range for {} labels",
                self.len()
            )));
        }
        let values = indices.iter().map(|&i| self.values[i]).collect();
        match &self.mask {
            None => Self::new(values),
            Some(mask) => Self::with_mask(values, indices.iter().map(|&i| mask[i]).collect()),
        }
    }

    /// Single column headed `y`; `-1` marks an unlabelled row.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| Error::Malformed(format!("cannot read header: {e}")))?;
        if header.len() != 1 || &header[0] != "y" {
            return Err(Error::Malformed(
                "gold-label CSV must have the single header 'y'".into(),
            ));
        }
        let mut values = Vec::new();
        let mut mask = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::Malformed(format!("row {i}: {e}")))?;
            let field = record.get(0).unwrap_or("");
            if field == "-1" {
                values.push(0);
                mask.push(false);
                continue;
            }
            match field {
                "0" => values.push(0),
                "1" => values.push(1),
                other => {
                    return Err(Error::Cell {
                        row: i,
                        column: 0,
                        message: format!("gold label '{other}' is not 0 or 1"),
                    })
                }
            }
            mask.push(true);
        }
        if mask.iter().all(|&b| b) {
            Self::new(values)
        } else {
            Self::with_mask(values, mask)
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("y\n");
        for (i, v) in self.values.iter().enumerate() {
            if self.is_labelled(i) {
                writeln!(out, "{v}").unwrap();
            } else {
                out.push_str("-1\n");
            }
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

pub fn load_gold_labels(path: impl AsRef<Path>) -> Result<GoldLabels> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    GoldLabels::from_csv_reader(std::io::BufReader::new(file))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LfKind {
    Keyword,
    Regex,
}

/// A programmatic labelling function. It votes `vote_on_match` when its
/// pattern matches a record and abstains otherwise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LfSpec {
    pub name: String,
    pub kind: LfKind,
    pub pattern: String,
    pub vote_on_match: u8,
}

impl LfSpec {
    pub fn keyword(name: &str, pattern: &str, vote_on_match: u8) -> Self {
        LfSpec {
            name: name.into(),
            kind: LfKind::Keyword,
            pattern: pattern.into(),
            vote_on_match,
        }
    }

    pub fn regex(name: &str, pattern: &str, vote_on_match: u8) -> Self {
        LfSpec {
            name: name.into(),
            kind: LfKind::Regex,
            pattern: pattern.into(),
            vote_on_match,
        }
    }
}

enum Matcher {
    Keyword(String),
    Regex(Regex),
}

impl Matcher {
    fn compile(spec: &LfSpec) -> Result<Self> {
        if spec.name.is_empty() {
            return Err(Error::invalid("labelling function with empty name"));
        }
        if spec.pattern.is_empty() {
            return Err(Error::invalid(format!(
                "labelling function '{}' has an empty pattern",
                spec.name
            )));
        }
        if spec.vote_on_match > 1 {
            return Err(Error::invalid(format!(
                "labelling function '{}' votes {}, expected 0 or 1",
                spec.name, spec.vote_on_match
            )));
        }
        Ok(match spec.kind {
            LfKind::Keyword => Matcher::Keyword(spec.pattern.to_lowercase()),
            LfKind::Regex => {
                Matcher::Regex(Regex::new(&spec.pattern).map_err(|e| {
                    Error::invalid(format!("labelling function '{}': {e}", spec.name))
                })?)
            }
        })
    }

    fn is_match(&self, record: &str) -> bool {
        match self {
            Matcher::Keyword(kw) => record.to_lowercase().contains(kw.as_str()),
            Matcher::Regex(re) => re.is_match(record),
        }
    }
}

/// Run every labelling function over every record. Column order follows `specs`.
pub fn apply_lfs<S: AsRef<str>>(records: &[S], specs: &[LfSpec]) -> Result<LabelMatrix> {
    if specs.is_empty() {
        return Err(Error::invalid("no labelling functions given"));
    }
    if records.is_empty() {
        return Err(Error::invalid("no records to label"));
    }
    let matchers = specs
        .iter()
        .map(Matcher::compile)
        .collect::<Result<Vec<_>>>()?;
    let mut values = Vec::with_capacity(records.len() * specs.len());
    for record in records {
        let record = record.as_ref();
        for (spec, matcher) in specs.iter().zip(&matchers) {
            values.push(if matcher.is_match(record) {
                spec.vote_on_match as i8
            } else {
                ABSTAIN
            });
        }
    }
    LabelMatrix::new(
        values,
        records.len(),
        specs.iter().map(|s| s.name.clone()).collect(),
    )
}

pub fn load_lf_specs(path: impl AsRef<Path>) -> Result<Vec<LfSpec>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LfCounts {
    pub name: String,
    pub abstain: usize,
    pub negative: usize,
    pub positive: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixStats {
    pub n_rows: usize,
    pub n_lfs: usize,
    pub per_lf: Vec<LfCounts>,
    pub n_all_abstain_rows: usize,
    pub all_abstain_fraction: f64,
}

pub fn matrix_stats(lm: &LabelMatrix) -> MatrixStats {
    let per_lf = (0..lm.m())
        .map(|j| {
            let mut counts = LfCounts {
                name: lm.lf_names[j].clone(),
                abstain: 0,
                negative: 0,
                positive: 0,
            };
            for v in lm.column(j) {
                match v {
                    ABSTAIN => counts.abstain += 1,
                    NEGATIVE => counts.negative += 1,
                    _ => counts.positive += 1,
                }
            }
            counts
        })
        .collect();
    let n_all_abstain_rows = lm
        .rows()
        .filter(|r| r.iter().all(|&v| v == ABSTAIN))
        .count();
    MatrixStats {
        n_rows: lm.n(),
        n_lfs: lm.m(),
        per_lf,
        n_all_abstain_rows,
        all_abstain_fraction: n_all_abstain_rows as f64 / lm.n() as f64,
    }
}

/// Sample covariance of the columns (divisor `n - 1`). Only the upper
/// triangle is computed; the lower one is a copy, so the result is exactly
/// symmetric.
pub fn covariance_matrix(lm: &LabelMatrix) -> Result<DMatrix<f64>> {
    let n = lm.n();
    if n < 2 {
        return Err(Error::invalid("covariance needs at least two rows"));
    }
    let m = lm.m();
    let means: Vec<f64> = (0..m)
        .map(|j| lm.column(j).map(f64::from).sum::<f64>() / n as f64)
        .collect();
    let mut cov = DMatrix::zeros(m, m);
    for row in lm.rows() {
        for a in 0..m {
            let da = f64::from(row[a]) - means[a];
            for b in a..m {
                cov[(a, b)] += da * (f64::from(row[b]) - means[b]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..m {
        for b in a..m {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    Ok(cov)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(m: usize) -> Vec<String> {
        default_names(m)
    }

    #[test]
    fn parses_small_csv() {
        let lm = LabelMatrix::from_csv_reader("lf1,lf2\n1,-1\n0,0".as_bytes()).unwrap();
        assert_eq!((lm.n(), lm.m()), (2, 2));
        assert_eq!(lm.row(0), &[1, -1]);
        assert_eq!(lm.row(1), &[0, 0]);
        assert_eq!(lm.lf_names(), &["lf1", "lf2"]);
    }

    #[test]
    fn rejects_out_of_range_entry_with_location() {
        let err = LabelMatrix::from_csv_reader("a,b\n1,0\n0,2\n".as_bytes()).unwrap_err();
        match err {
            Error::Cell { row, column, .. } => assert_eq!((row, column), (1, 1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_non_integer_duplicate_names_and_ragged_rows() {
        assert!(matches!(
            LabelMatrix::from_csv_reader("a,b\n1,x\n".as_bytes()),
            Err(Error::Cell {
                row: 0,
                column: 1,
                ..
            })
        ));
        assert!(LabelMatrix::from_csv_reader("a,a\n1,0\n".as_bytes()).is_err());
        assert!(matches!(
            LabelMatrix::from_csv_reader("a,b\n1,0\n1\n".as_bytes()),
            Err(Error::Malformed(_))
        ));
        assert!(LabelMatrix::from_csv_reader("a,b\n".as_bytes()).is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_label_matrix("/nonexistent/matrix.csv"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let text = "x,y,z\n1,-1,0\n0,0,1\n-1,-1,-1\n";
        let lm = LabelMatrix::from_csv_reader(text.as_bytes()).unwrap();
        assert_eq!(lm.to_csv_string(), text);
    }

    #[test]
    fn gold_labels_csv() {
        let g = GoldLabels::from_csv_reader("y\n1\n0\n-1\n1\n".as_bytes()).unwrap();
        assert_eq!(g.len(), 4);
        assert!(!g.is_labelled(2));
        assert_eq!(g.labelled().count(), 3);
        assert_eq!(g.to_csv_string(), "y\n1\n0\n-1\n1\n");
        assert!(GoldLabels::from_csv_reader("y\n2\n".as_bytes()).is_err());
        assert!(GoldLabels::from_csv_reader("label\n1\n".as_bytes()).is_err());
    }

    #[test]
    fn keyword_lf_votes_or_abstains() {
        let lm = apply_lfs(&["buy now", "hello"], &[LfSpec::keyword("buy", "buy", 1)]).unwrap();
        assert_eq!(lm.column(0).collect::<Vec<_>>(), vec![1, -1]);
    }

    #[test]
    fn keyword_is_case_insensitive() {
        let lm = apply_lfs(&["BUY NOW"], &[LfSpec::keyword("buy", "Buy", 0)]).unwrap();
        assert_eq!(lm.row(0), &[0]);
    }

    #[test]
    fn lfs_are_independent_per_column() {
        let specs = [
            LfSpec::keyword("spam", "spam", 1),
            LfSpec::regex("starts_x", "^x", 0),
        ];
        let lm = apply_lfs(&["spam spam"], &specs).unwrap();
        assert_eq!(lm.row(0), &[1, -1]);
    }

    #[test]
    fn apply_lfs_errors() {
        let spec = [LfSpec::keyword("a", "a", 1)];
        let empty: [&str; 0] = [];
        assert!(apply_lfs(&empty, &spec).is_err());
        assert!(apply_lfs(&["a"], &[]).is_err());
        assert!(apply_lfs(&["a"], &[LfSpec::regex("bad", "(", 1)]).is_err());
        assert!(apply_lfs(&["a"], &[LfSpec::keyword("e", "", 1)]).is_err());
    }

    #[test]
    fn lf_spec_json() {
        let specs: Vec<LfSpec> = serde_json::from_str(
            r#"[{"name":"check","kind":"keyword","pattern":"check out","vote_on_match":1},
                {"name":"short","kind":"regex","pattern":"^.{0,5}$","vote_on_match":0}]"#,
        )
        .unwrap();
        assert_eq!(specs[1].kind, LfKind::Regex);
        let lm = apply_lfs(&["Check out my channel", "hi"], &specs).unwrap();
        assert_eq!(lm.row(0), &[1, -1]);
        assert_eq!(lm.row(1), &[-1, 0]);
    }

    #[test]
    fn stats_count_all_abstain_rows() {
        let lm = LabelMatrix::from_rows(&[vec![-1, -1], vec![1, -1]], names(2)).unwrap();
        let s = matrix_stats(&lm);
        assert_eq!(s.n_all_abstain_rows, 1);
        assert_eq!(s.all_abstain_fraction, 0.5);
        assert_eq!(
            s.per_lf[0].abstain + s.per_lf[0].negative + s.per_lf[0].positive,
            2
        );

        let zeros = LabelMatrix::from_rows(&vec![vec![0, 0]; 3], names(2)).unwrap();
        assert_eq!(matrix_stats(&zeros).n_all_abstain_rows, 0);
    }

    #[test]
    fn covariance_hand_values() {
        let lm = LabelMatrix::from_rows(&[vec![1, 1], vec![0, 0], vec![-1, -1]], names(2)).unwrap();
        let c = covariance_matrix(&lm).unwrap();
        assert_eq!(c[(0, 1)], c[(0, 0)]);
        assert!((c[(0, 0)] - 1.0).abs() < 1e-15);

        let lm = LabelMatrix::from_rows(&[vec![1, 0], vec![0, 1], vec![1, 0]], names(2)).unwrap();
        let c = covariance_matrix(&lm).unwrap();
        assert!((c[(0, 1)] + 1.0 / 3.0).abs() < 1e-15);

        let lm = LabelMatrix::from_rows(&[vec![1, 0], vec![1, 1], vec![1, -1]], names(2)).unwrap();
        let c = covariance_matrix(&lm).unwrap();
        assert_eq!(c[(0, 0)], 0.0);
        assert_eq!(c[(0, 1)], 0.0);
        assert_eq!(c[(1, 0)], 0.0);
    }

    #[test]
    fn covariance_needs_two_rows() {
        let lm = LabelMatrix::from_rows(&[vec![1, 0]], names(2)).unwrap();
        assert!(covariance_matrix(&lm).is_err());
    }
}
