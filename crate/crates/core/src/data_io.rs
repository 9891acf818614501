//! LIBSVM ingestion, imbalanced splits, classification metrics, and the trace
//! CSV schema.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{argument, Result, WccError};
use crate::linalg::{dot, Matrix};

/// Column header of every trace file.
pub const TRACE_HEADER: [&str; 7] = [
    "t",
    "data_passes",
    "psi",
    "moreau_grad_sq",
    "test_error",
    "f_score",
    "wall_ms",
];

/// Binary classification data with labels in {−1, +1}.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix<f64>,
    pub labels: Vec<f64>,
    pub name: String,
}

impl Dataset {
    pub fn new(features: Matrix<f64>, labels: Vec<f64>, name: impl Into<String>) -> Result<Self> {
        if features.rows() == 0 {
            return Err(argument("dataset needs at least one example"));
        }
        if labels.len() != features.rows() {
            return Err(argument("label count differs from feature rows"));
        }
        if labels.iter().any(|&b| b != 1.0 && b != -1.0) {
            return Err(argument("labels must be ±1"));
        }
        Ok(Self { features, labels, name: name.into() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn count_positive(&self) -> usize {
        self.labels.iter().filter(|&&b| b > 0.0).count()
    }

    pub fn count_negative(&self) -> usize {
        self.len() - self.count_positive()
    }

    /// Rows `idx` in the given order.
    pub fn subset(&self, idx: &[usize], name: impl Into<String>) -> Dataset {
        let d = self.dim();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(self.features.row(i));
        }
        Dataset {
            features: Matrix::from_row_major(idx.len(), d, data).expect("consistent shape"),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            name: name.into(),
        }
    }

    /// Linear scores `aᵢᵀx`.
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|i| dot(self.features.row(i), x)).collect()
    }
}

pub fn parse_libsvm(path: impl AsRef<Path>, dim: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_libsvm_str(&text, &name, dim)
}

/// Parses LIBSVM text. `dim` forces the feature dimension; otherwise it is the
/// largest index seen.
pub fn parse_libsvm_str(text: &str, name: &str, dim: Option<usize>) -> Result<Dataset> {
    let mut raw_labels = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut max_idx = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let parse_err = |message: String| WccError::Parse { line: line_no, message };
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().expect("nonempty line has a token");
        let label: f64 = label_tok
            .parse()
            .map_err(|_| parse_err(format!("bad label {label_tok:?}")))?;
        if !label.is_finite() {
            return Err(parse_err(format!("non-finite label {label_tok:?}")));
        }
        let mut row = Vec::new();
        let mut last = 0usize;
        for tok in tokens {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(format!("expected idx:value, got {tok:?}")))?;
            let idx: usize = i
                .parse()
                .map_err(|_| parse_err(format!("bad feature index {i:?}")))?;
            if idx == 0 {
                return Err(parse_err("feature indices are 1-based".into()));
            }
            if idx <= last {
                return Err(parse_err(format!("feature index {idx} not ascending")));
            }
            if let Some(d) = dim {
                if idx > d {
                    return Err(parse_err(format!("feature index {idx} exceeds dimension {d}")));
                }
            }
            let val: f64 = v
                .parse()
                .map_err(|_| parse_err(format!("bad feature value {v:?}")))?;
            if !val.is_finite() {
                return Err(parse_err(format!("non-finite feature value {v:?}")));
            }
            last = idx;
            row.push((idx, val));
        }
        max_idx = max_idx.max(last);
        raw_labels.push(label);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(argument("LIBSVM input contains no examples"));
    }
    let labels = map_labels(&raw_labels)?;
    let d = dim.unwrap_or(max_idx);
    let mut features = Matrix::zeros(rows.len(), d);
    for (r, row) in rows.iter().enumerate() {
        for &(idx, val) in row {
            features.set(r, idx - 1, val);
        }
    }
    Dataset::new(features, labels, name)
}

/// Two distinct labels: the smaller maps to −1. One label: ≤ 0 maps to −1.
fn map_labels(raw: &[f64]) -> Result<Vec<f64>> {
    let distinct: BTreeSet<u64> = raw.iter().map(|v| (v + 0.0).to_bits()).collect();
    let mut values: Vec<f64> = distinct.into_iter().map(f64::from_bits).collect();
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite labels"));
    match values.len() {
        1 => {
            let b = if values[0] <= 0.0 { -1.0 } else { 1.0 };
            Ok(vec![b; raw.len()])
        }
        2 => Ok(raw
            .iter()
            .map(|&v| if v == values[0] { -1.0 } else { 1.0 })
            .collect()),
        k => Err(argument(format!("expected at most two distinct labels, found {k}"))),
    }
}

pub fn to_libsvm_string(ds: &Dataset) -> String {
    let mut out = String::new();
    for i in 0..ds.len() {
        out.push_str(if ds.labels[i] > 0.0 { "+1" } else { "-1" });
        for (j, &v) in ds.features.row(i).iter().enumerate() {
            if v != 0.0 {
                out.push_str(&format!(" {}:{}", j + 1, v));
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_libsvm(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_libsvm_string(ds))?;
    Ok(())
}

/// Draws a class-balanced test set, then thins the remaining negatives to
/// `neg_keep_fraction` for the training set.
pub fn imbalance_split<R: Rng + ?Sized>(
    ds: &Dataset,
    neg_keep_fraction: f64,
    test_fraction: f64,
    rng: &mut R,
) -> Result<(Dataset, Dataset)> {
    if !(neg_keep_fraction > 0.0 && neg_keep_fraction <= 1.0) {
        return Err(argument(format!(
            "neg_keep_fraction must lie in (0, 1], got {neg_keep_fraction}"
        )));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(argument(format!("test_fraction must lie in (0, 1), got {test_fraction}")));
    }
    let mut pos: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] > 0.0).collect();
    let mut neg: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] < 0.0).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(argument("both classes must be present to split"));
    }
    pos.shuffle(rng);
    neg.shuffle(rng);
    let n_test = (test_fraction * ds.len() as f64).round() as usize;
    let test_pos = n_test.div_ceil(2);
    let test_neg = n_test / 2;
    if test_pos == 0 || test_neg == 0 || test_pos >= pos.len() || test_neg >= neg.len() {
        return Err(argument(format!(
            "test split of {n_test} (+{test_pos}/−{test_neg}) leaves a class empty \
             ({} positives, {} negatives)",
            pos.len(),
            neg.len()
        )));
    }
    let mut test_idx: Vec<usize> = pos[..test_pos].iter().chain(&neg[..test_neg]).copied().collect();
    let remaining_neg = &neg[test_neg..];
    let keep = (neg_keep_fraction * remaining_neg.len() as f64).round() as usize;
    if keep == 0 {
        return Err(argument("neg_keep_fraction removes every training negative"));
    }
    let mut train_idx: Vec<usize> = pos[test_pos..]
        .iter()
        .chain(&remaining_neg[..keep])
        .copied()
        .collect();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((
        ds.subset(&train_idx, format!("{}-train", ds.name)),
        ds.subset(&test_idx, format!("{}-test", ds.name)),
    ))
}

/// Flips the labels of `round(fraction · n)` uniformly chosen examples.
pub fn flip_labels<R: Rng + ?Sized>(ds: &Dataset, fraction: f64, rng: &mut R) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(argument(format!("flip fraction must lie in [0, 1], got {fraction}")));
    }
    let k = (fraction * ds.len() as f64).round() as usize;
    let mut out = ds.clone();
    for i in rand::seq::index::sample(rng, ds.len(), k) {
        out.labels[i] = -out.labels[i];
    }
    Ok(out)
}

/// Two Gaussian classes with unit covariance and means `±(separation/√d)·𝟙`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_pos: usize,
    pub n_neg: usize,
    pub dim: usize,
    pub separation: f64,
}

pub fn synthetic_gaussian<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Result<Dataset> {
    if spec.dim == 0 || spec.n_pos + spec.n_neg == 0 {
        return Err(argument("synthetic data needs positive dimension and size"));
    }
    let n = spec.n_pos + spec.n_neg;
    let shift = spec.separation / (spec.dim as f64).sqrt();
    let mut features = Matrix::zeros(n, spec.dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let b = if i < spec.n_pos { 1.0 } else { -1.0 };
        for v in features.row_mut(i) {
            let z: f64 = rng.sample(StandardNormal);
            *v = b * shift + z;
        }
        labels.push(b);
    }
    Dataset::new(features, labels, "synthetic")
}

/// Test error and positive-class F-score of `sign(score)` predictions
/// (a zero score predicts +1).
pub fn metrics(scores: &[f64], labels: &[f64]) -> (f64, f64) {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    if scores.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let (mut tp, mut fp, mut fneg, mut wrong) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &b) in scores.iter().zip(labels) {
        let pred = if s >= 0.0 { 1.0 } else { -1.0 };
        if pred != b {
            wrong += 1;
        }
        match (pred > 0.0, b > 0.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (wrong as f64 / scores.len() as f64, f)
}

/// One row of a run trace. Unevaluated fields hold NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub data_passes: f64,
    pub psi: f64,
    pub moreau_grad_sq: f64,
    pub test_error: f64,
    pub f_score: f64,
    pub wall_ms: f64,
}

impl TraceRow {
    pub fn empty(t: usize, data_passes: f64) -> Self {
        Self {
            t,
            data_passes,
            psi: f64::NAN,
            moreau_grad_sq: f64::NAN,
            test_error: f64::NAN,
            f_score: f64::NAN,
            wall_ms: f64::NAN,
        }
    }
}

/// 17 significant digits; NaN becomes an empty field.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.16e}")
    }
}

pub fn parse_float(field: &str) -> Result<f64> {
    if field.is_empty() {
        return Ok(f64::NAN);
    }
    field
        .parse()
        .map_err(|_| argument(format!("bad numeric field {field:?}")))
}

pub fn write_trace<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            format_float(r.data_passes),
            format_float(r.psi),
            format_float(r.moreau_grad_sq),
            format_float(r.test_error),
            format_float(r.f_score),
            format_float(r.wall_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_csv(rows: &[TraceRow], path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    write_trace(rows, std::io::BufWriter::new(file))
}

pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header != TRACE_HEADER {
        return Err(argument(format!("unexpected trace header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |k: usize| parse_float(rec.get(k).unwrap_or(""));
        rows.push(TraceRow {
            t: rec
                .get(0)
                .unwrap_or("")
                .parse()
                .map_err(|_| argument("bad iteration index in trace"))?,
            data_passes: f(1)?,
            psi: f(2)?,
            moreau_grad_sq: f(3)?,
            test_error: f(4)?,
            f_score: f(5)?,
            wall_ms: f(6)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parses_crafted_file() {
        let ds = parse_libsvm_str("+1 1:0.5 3:2.0\n-1 2:1.0", "t", None).unwrap();
        assert_eq!(ds.features.rows(), 2);
        assert_eq!(ds.features.row(0), &[0.5, 0.0, 2.0]);
        assert_eq!(ds.features.row(1), &[0.0, 1.0, 0.0]);
        assert_eq!(ds.labels, vec![1.0, -1.0]);
    }

    #[test]
    fn featureless_line_is_zero_row() {
        let ds = parse_libsvm_str("1", "t", Some(3)).unwrap();
        assert_eq!(ds.features.row(0), &[0.0, 0.0, 0.0]);
        assert_eq!(ds.labels, vec![1.0]);
    }

    #[test]
    fn label_conventions() {
        let ds = parse_libsvm_str("0 1:1\n1 1:2", "t", None).unwrap();
        assert_eq!(ds.labels, vec![-1.0, 1.0]);
        let ds = parse_libsvm_str("2 1:1\n1 1:2\n2 1:3", "t", None).unwrap();
        assert_eq!(ds.labels, vec![1.0, -1.0, 1.0]);
        let ds = parse_libsvm_str("-1 1:1", "t", None).unwrap();
        assert_eq!(ds.labels, vec![-1.0]);
        assert!(parse_libsvm_str("1 1:1\n2 1:1\n3 1:1", "t", None).is_err());
    }

    #[test]
    fn malformed_lines_report_line_number() {
        for (text, line) in [
            ("+1 1:0.5\n-1 2-1.0", 2),
            ("+1 0:1", 1),
            ("+1 1:1\n\n+1 3:1 2:1", 3),
            ("abc 1:1", 1),
        ] {
            match parse_libsvm_str(text, "t", None) {
                Err(WccError::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("expected parse error for {text:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn split_with_full_keep_preserves_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = SyntheticSpec { n_pos: 300, n_neg: 300, dim: 2, separation: 1.0 };
        let ds = synthetic_gaussian(&spec, &mut rng).unwrap();
        let (train, test) = imbalance_split(&ds, 1.0, 0.2, &mut rng).unwrap();
        assert_eq!(train.count_positive(), train.count_negative());
        assert_eq!(test.count_positive(), 60);
        assert_eq!(test.count_negative(), 60);
    }

    #[test]
    fn split_reaches_requested_imbalance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = SyntheticSpec { n_pos: 1000, n_neg: 1000, dim: 3, separation: 1.0 };
        let ds = synthetic_gaussian(&spec, &mut rng).unwrap();
        let (train, test) = imbalance_split(&ds, 0.2, 0.2, &mut rng).unwrap();
        // expected 800 positives and 0.2 · 800 = 160 negatives
        let ratio = train.count_positive() as f64 / train.count_negative() as f64;
        assert!((ratio - 5.0).abs() <= 0.5, "ratio {ratio}");
        assert!(test.count_positive().abs_diff(test.count_negative()) <= 1);
    }

    #[test]
    fn split_is_seed_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = SyntheticSpec { n_pos: 50, n_neg: 70, dim: 2, separation: 1.0 };
        let ds = synthetic_gaussian(&spec, &mut rng).unwrap();
        let a = imbalance_split(&ds, 0.5, 0.25, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = imbalance_split(&ds, 0.5, 0.25, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_rejects_missing_class() {
        let ds = parse_libsvm_str("1 1:1\n1 1:2\n1 1:3", "t", None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(imbalance_split(&ds, 0.5, 0.3, &mut rng).is_err());
    }

    #[test]
    fn metrics_examples() {
        let labels = [1.0, -1.0, 1.0, -1.0];
        assert_eq!(metrics(&[2.0, -1.0, 0.5, -3.0], &labels), (0.0, 1.0));
        let (e, f) = metrics(&[1.0; 4], &labels);
        assert_eq!(e, 0.5);
        assert_abs_diff_eq!(f, 2.0 * 0.5 * 1.0 / (0.5 + 1.0), epsilon = 1e-15);
        assert_eq!(metrics(&[-2.0, 1.0, -0.5, 3.0], &labels), (1.0, 0.0));
        // zero score predicts the positive class
        assert_eq!(metrics(&[0.0], &[1.0]), (0.0, 1.0));
    }

    #[test]
    fn empty_trace_is_header_only() {
        let mut buf = Vec::new();
        write_trace(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t,data_passes,psi,moreau_grad_sq,test_error,f_score,wall_ms\n"
        );
    }

    #[test]
    fn trace_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<TraceRow> = (0..1000)
            .map(|t| TraceRow {
                t,
                data_passes: t as f64 * rng.random::<f64>(),
                psi: rng.random::<f64>() * 1e3,
                moreau_grad_sq: if t % 10 == 0 { rng.random::<f64>() * 1e-7 } else { f64::NAN },
                test_error: rng.random(),
                f_score: rng.random(),
                wall_ms: f64::NAN,
            })
            .collect();
        write_trace_csv(&rows, &path).unwrap();
        let back = read_trace_csv(&path).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.t, b.t);
            for (x, y) in [
                (a.data_passes, b.data_passes),
                (a.psi, b.psi),
                (a.moreau_grad_sq, b.moreau_grad_sq),
                (a.test_error, b.test_error),
                (a.f_score, b.f_score),
                (a.wall_ms, b.wall_ms),
            ] {
                assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()));
            }
        }
    }

    #[test]
    fn flip_changes_exact_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = SyntheticSpec { n_pos: 40, n_neg: 60, dim: 2, separation: 1.0 };
        let ds = synthetic_gaussian(&spec, &mut rng).unwrap();
        let flipped = flip_labels(&ds, 0.1, &mut rng).unwrap();
        let changed = ds.labels.iter().zip(&flipped.labels).filter(|(a, b)| a != b).count();
        assert_eq!(changed, 10);
    }

    fn sparse_dataset() -> impl Strategy<Value = Dataset> {
        (1usize..20, 1usize..8).prop_flat_map(|(n, d)| {
            (
                proptest::collection::vec(
                    proptest::collection::vec(
                        prop_oneof![Just(0.0), -1e6f64..1e6, Just(1e-300), Just(-3.5e-7)],
                        d,
                    ),
                    n,
                ),
                proptest::collection::vec(any::<bool>(), n),
            )
                .prop_map(move |(rows, signs)| {
                    let labels: Vec<f64> = signs.iter().map(|&s| if s { 1.0 } else { -1.0 }).collect();
                    Dataset::new(Matrix::from_rows(&rows).unwrap(), labels, "p").unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn libsvm_round_trip(ds in sparse_dataset()) {
            let text = to_libsvm_string(&ds);
            let back = parse_libsvm_str(&text, "p", Some(ds.dim())).unwrap();
            prop_assert_eq!(back.features, ds.features.clone());
            // a single-class file keeps its ±1 labels under the one-label rule
            prop_assert_eq!(back.labels, ds.labels.clone());
        }
    }
}
