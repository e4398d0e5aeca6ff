//! Imputation metrics, the mean/mode reference imputer, downstream utility
//! and timing.
//!
//! Continuous errors are reported in standardized units: the RMSE of a
//! column is divided by the population standard deviation of its ground
//! truth, so it can be averaged with categorical error rates.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;

use crate::encode::{Encoder, Routing};
use crate::error::{Error, Result};
use crate::imputer::mode;
use crate::nn::{AdamW, AdamWConfig, FlatParams};
use crate::rng;
use crate::table::{ColumnKind, Mask, MaskedTable};

/// Root mean squared deviation between paired values.
pub fn rmse(truth: &[f64], imputed: &[f64]) -> f64 {
    let n = truth.len() as f64;
    (truth.iter().zip(imputed).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt()
}

/// Fraction of mismatching categories.
pub fn mismatch_rate(truth: &[f64], imputed: &[f64]) -> f64 {
    truth.iter().zip(imputed).filter(|(a, b)| a != b).count() as f64 / truth.len() as f64
}

/// Mean ordinal displacement `|x - x_hat| / range`.
pub fn ordinal_displacement(truth: &[f64], imputed: &[f64], range: f64) -> f64 {
    truth.iter().zip(imputed).map(|(a, b)| (a - b).abs() / range).sum::<f64>() / truth.len() as f64
}

fn masked_pairs(truth: &MaskedTable, imputed: &MaskedTable, mask: &Mask, column: usize) -> (Vec<f64>, Vec<f64>) {
    let mut t = Vec::new();
    let mut p = Vec::new();
    for i in 0..truth.n_rows() {
        if mask[[i, column]] && !truth.is_missing(i, column) {
            t.push(truth.values()[[i, column]]);
            p.push(imputed.values()[[i, column]]);
        }
    }
    (t, p)
}

fn truth_scale(truth: &MaskedTable, column: usize) -> f64 {
    let v: Vec<f64> = (0..truth.n_rows())
        .filter(|&i| !truth.is_missing(i, column))
        .map(|i| truth.values()[[i, column]])
        .collect();
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
    if sd > 0.0 {
        sd
    } else {
        1.0
    }
}

/// Standardized RMSE over the masked cells of a continuous column;
/// `None` when the column has no evaluated cell.
pub fn rmse_err(truth: &MaskedTable, imputed: &MaskedTable, mask: &Mask, column: usize) -> Option<f64> {
    let (t, p) = masked_pairs(truth, imputed, mask, column);
    (!t.is_empty()).then(|| rmse(&t, &p) / truth_scale(truth, column))
}

pub fn cat_err(truth: &MaskedTable, imputed: &MaskedTable, mask: &Mask, column: usize) -> Option<f64> {
    let (t, p) = masked_pairs(truth, imputed, mask, column);
    (!t.is_empty()).then(|| mismatch_rate(&t, &p))
}

pub fn ord_err(truth: &MaskedTable, imputed: &MaskedTable, mask: &Mask, column: usize, range: f64) -> Option<f64> {
    let (t, p) = masked_pairs(truth, imputed, mask, column);
    (!t.is_empty()).then(|| ordinal_displacement(&t, &p, range))
}

/// Mean of the defined column errors.
pub fn avg_err(errors: &[Option<f64>]) -> Result<f64> {
    let defined: Vec<f64> = errors.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::InvalidArgument("no column has an evaluated cell".into()));
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ColumnError {
    pub name: String,
    pub kind: String,
    pub cells: usize,
    pub err: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classify,
    Regress,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classify" => Ok(Task::Classify),
            "regress" => Ok(Task::Regress),
            other => Err(Error::InvalidArgument(format!("unknown task '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DownstreamScore {
    pub task: Task,
    /// Macro F1 for classification, MAE for regression.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub columns: Vec<ColumnError>,
    pub avg_err: f64,
    pub rmse_mean: Option<f64>,
    pub cat_err_mean: Option<f64>,
    pub ord_err_mean: Option<f64>,
    pub downstream: Option<DownstreamScore>,
    pub seconds: Option<f64>,
}

fn mean_of(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn csv_header() -> &'static str {
        "label,avg_err,rmse_mean,cat_err_mean,ord_err_mean,downstream_task,downstream_score,seconds"
    }

    pub fn csv_row(&self, label: &str) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{label},{},{},{},{},{},{},{}",
            self.avg_err,
            opt(self.rmse_mean),
            opt(self.cat_err_mean),
            opt(self.ord_err_mean),
            self.downstream
                .map(|d| match d.task {
                    Task::Classify => "classify",
                    Task::Regress => "regress",
                })
                .unwrap_or(""),
            opt(self.downstream.map(|d| d.score)),
            opt(self.seconds),
        )
    }
}

/// Scores `imputed` against `truth` over the cells flagged in `mask`.
pub fn evaluate(truth: &MaskedTable, imputed: &MaskedTable, mask: &Mask) -> Result<MetricReport> {
    if truth.schema() != imputed.schema() {
        return Err(Error::Schema("truth and imputed tables have different schemas".into()));
    }
    if truth.values().dim() != imputed.values().dim() || mask.dim() != truth.values().dim() {
        return Err(Error::Shape("truth, imputed and mask shapes differ".into()));
    }
    let (mut rm, mut ce, mut oe) = (Vec::new(), Vec::new(), Vec::new());
    let mut columns = Vec::with_capacity(truth.n_cols());
    for (j, col) in truth.schema().columns().iter().enumerate() {
        let cells = (0..truth.n_rows()).filter(|&i| mask[[i, j]] && !truth.is_missing(i, j)).count();
        let (kind, err) = match col.kind {
            ColumnKind::Continuous => ("continuous", rmse_err(truth, imputed, mask, j)),
            ColumnKind::Categorical { .. } => ("categorical", cat_err(truth, imputed, mask, j)),
            ColumnKind::Ordinal { levels } => ("ordinal", ord_err(truth, imputed, mask, j, (levels - 1) as f64)),
        };
        if let Some(e) = err {
            match col.kind {
                ColumnKind::Continuous => rm.push(e),
                ColumnKind::Categorical { .. } => ce.push(e),
                ColumnKind::Ordinal { .. } => oe.push(e),
            }
        }
        columns.push(ColumnError {
            name: col.name.clone(),
            kind: kind.into(),
            cells,
            err,
        });
    }
    let errs: Vec<Option<f64>> = columns.iter().map(|c| c.err).collect();
    Ok(MetricReport {
        avg_err: avg_err(&errs)?,
        columns,
        rmse_mean: mean_of(&rm),
        cat_err_mean: mean_of(&ce),
        ord_err_mean: mean_of(&oe),
        downstream: None,
        seconds: None,
    })
}

/// Fills missing continuous cells with the observed column mean and
/// discrete cells with the observed mode (ties to the lowest category).
pub fn mean_mode_baseline(table: &MaskedTable) -> Result<MaskedTable> {
    let mut values = table.values().clone();
    for (j, col) in table.schema().columns().iter().enumerate() {
        let observed: Vec<f64> = (0..table.n_rows())
            .filter(|&i| !table.is_missing(i, j))
            .map(|i| table.values()[[i, j]])
            .collect();
        if observed.len() == table.n_rows() {
            continue;
        }
        if observed.is_empty() {
            return Err(Error::InvalidArgument(format!("column '{}' has no observed entries", col.name)));
        }
        let fill = match col.kind.cardinality() {
            None => observed.iter().sum::<f64>() / observed.len() as f64,
            Some(k) => mode(&observed, k) as f64,
        };
        for i in 0..table.n_rows() {
            if table.is_missing(i, j) {
                values[[i, j]] = fill;
            }
        }
    }
    MaskedTable::complete(table.schema().clone(), values)
}

/// Features of a complete table: standardized continuous values followed by
/// one-hot blocks, plus a trailing intercept column.
fn design_matrix(table: &MaskedTable) -> Result<Array2<f64>> {
    let encoder = Encoder::fit(table, Routing::Hybrid)?;
    let batch = encoder.encode(table)?;
    let n = table.n_rows();
    let (c, k) = (batch.cont.ncols(), batch.cat.ncols());
    let mut x = Array2::ones((n, c + k + 1));
    x.slice_mut(ndarray::s![.., ..c]).assign(&batch.cont);
    x.slice_mut(ndarray::s![.., c..c + k]).assign(&batch.cat);
    Ok(x)
}

const DOWNSTREAM_ITERS: usize = 2000;
const DOWNSTREAM_LR: f64 = 0.05;
const DOWNSTREAM_L2: f64 = 1e-9;

fn train_linear<F>(x: &Array2<f64>, outputs: usize, mut grad: F) -> Result<Array2<f64>>
where
    F: FnMut(&Array2<f64>) -> Array2<f64>,
{
    let mut params = FlatParams(vec![0.0; x.ncols() * outputs]);
    let mut opt = AdamW::new(
        &params,
        AdamWConfig {
            lr: DOWNSTREAM_LR,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        },
    );
    for it in 0..DOWNSTREAM_ITERS {
        let w = Array2::from_shape_vec((x.ncols(), outputs), params.0.clone()).expect("shape");
        let mut g = grad(&w);
        g.zip_mut_with(&w, |gv, &wv| *gv += 2.0 * DOWNSTREAM_L2 * wv);
        let progress = it as f64 / DOWNSTREAM_ITERS as f64;
        let lr = DOWNSTREAM_LR * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        opt.step_with_lr(&mut params, &FlatParams(g.into_raw_vec_and_offset().0), lr)?;
    }
    Ok(Array2::from_shape_vec((x.ncols(), outputs), params.0).expect("shape"))
}

fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
    }
}

/// Macro F1 over the classes in `0..classes`.
pub fn f1_macro(truth: &[usize], predicted: &[usize], classes: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..classes {
        let tp = truth.iter().zip(predicted).filter(|(&t, &p)| t == c && p == c).count() as f64;
        let fp = truth.iter().zip(predicted).filter(|(&t, &p)| t != c && p == c).count() as f64;
        let fneg = truth.iter().zip(predicted).filter(|(&t, &p)| t == c && p != c).count() as f64;
        if tp > 0.0 {
            total += 2.0 * tp / (2.0 * tp + fp + fneg);
        }
    }
    total / classes as f64
}

/// Fits a linear model on a random 80% of the rows of a complete feature
/// table and scores it on the rest: softmax regression with macro F1 for
/// `Classify`, L2-penalized least squares with MAE for `Regress`.
pub fn downstream_eval(features: &MaskedTable, labels: &[f64], task: Task, seed: u64) -> Result<DownstreamScore> {
    if features.missing_count() > 0 {
        return Err(Error::InvalidArgument("downstream features must be complete".into()));
    }
    if labels.len() != features.n_rows() {
        return Err(Error::Shape("one label per row is required".into()));
    }
    if labels.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("labels must be finite".into()));
    }
    let x_all = design_matrix(features)?;
    let mut rows: Vec<usize> = (0..labels.len()).collect();
    rows.shuffle(&mut rng::rng(seed));
    let n_test = ((0.2 * rows.len() as f64).round() as usize).max(1);
    if rows.len() < n_test + 1 {
        return Err(Error::InvalidArgument("too few rows for a train/test split".into()));
    }
    let (test, train) = rows.split_at(n_test);
    let pick = |idx: &[usize]| x_all.select(ndarray::Axis(0), idx);
    let (x_train, x_test) = (pick(train), pick(test));
    match task {
        Task::Classify => {
            let mut classes: Vec<f64> = labels.to_vec();
            classes.sort_by(|a, b| a.total_cmp(b));
            classes.dedup();
            if classes.len() < 2 {
                return Err(Error::InvalidArgument("classification labels have a single class".into()));
            }
            let index = |v: f64| classes.iter().position(|&c| c == v).expect("known class");
            let y_train: Vec<usize> = train.iter().map(|&i| index(labels[i])).collect();
            let y_test: Vec<usize> = test.iter().map(|&i| index(labels[i])).collect();
            let k = classes.len();
            let n = x_train.nrows() as f64;
            let w = train_linear(&x_train, k, |w| {
                let mut p = x_train.dot(w);
                softmax_rows(&mut p);
                for (i, &y) in y_train.iter().enumerate() {
                    p[[i, y]] -= 1.0;
                }
                x_train.t().dot(&p) / n
            })?;
            let scores = x_test.dot(&w);
            let predicted: Vec<usize> = scores
                .rows()
                .into_iter()
                .map(|r| crate::encode::argmax(r))
                .collect();
            Ok(DownstreamScore {
                task,
                score: f1_macro(&y_test, &predicted, k),
            })
        }
        Task::Regress => {
            let y_train = Array1::from_iter(train.iter().map(|&i| labels[i]));
            let n = x_train.nrows() as f64;
            let w = train_linear(&x_train, 1, |w| {
                let r = x_train.dot(&w.column(0)) - &y_train;
                let g = x_train.t().dot(&r) * (2.0 / n);
                g.insert_axis(ndarray::Axis(1))
            })?;
            let pred = x_test.dot(&w.column(0));
            let mae = test
                .iter()
                .zip(pred.iter())
                .map(|(&i, p)| (labels[i] - p).abs())
                .sum::<f64>()
                / test.len() as f64;
            Ok(DownstreamScore { task, score: mae })
        }
    }
}

/// Median wall-clock seconds of `repetitions` calls of `run`.
pub fn timing_bench<T, F: FnMut() -> Result<T>>(mut run: F, repetitions: usize) -> Result<f64> {
    if repetitions == 0 {
        return Err(Error::InvalidArgument("at least one repetition is required".into()));
    }
    let mut times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        std::hint::black_box(run()?);
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(|a, b| a.total_cmp(b));
    let mid = times.len() / 2;
    Ok(if times.len() % 2 == 1 {
        times[mid]
    } else {
        0.5 * (times[mid - 1] + times[mid])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{Column, FeatureSchema};
    use ndarray::array;
    use rand::Rng as _;

    fn one_col(kind: Column, v: Array2<f64>) -> MaskedTable {
        MaskedTable::complete(FeatureSchema::new(vec![kind]).unwrap(), v).unwrap()
    }

    #[test]
    fn raw_metric_examples() {
        assert!((rmse(&[1.0, 2.0], &[1.0, 4.0]) - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((rmse(&[1.0, 2.0, 5.0], &[1.5, 2.5, 5.5]) - 0.5).abs() < 1e-12);
        assert_eq!(mismatch_rate(&[1.0, 2.0, 3.0, 1.0], &[1.0, 3.0, 3.0, 2.0]), 0.5);
        assert_eq!(mismatch_rate(&[1.0, 2.0], &[2.0, 1.0]), 1.0);
        assert!((ordinal_displacement(&[3.0], &[4.0], 5.0) - 0.2).abs() < 1e-12);
        assert_eq!(ordinal_displacement(&[1.0], &[6.0], 5.0), 1.0);
    }

    #[test]
    fn avg_err_examples() {
        assert_eq!(avg_err(&[Some(0.25)]).unwrap(), 0.25);
        assert!((avg_err(&[Some(0.2), Some(0.4)]).unwrap() - 0.3).abs() < 1e-15);
        assert!((avg_err(&[Some(0.2), None, Some(0.4)]).unwrap() - 0.3).abs() < 1e-15);
        assert!(avg_err(&[None]).is_err());
    }

    #[test]
    fn truth_against_itself_is_zero() {
        let schema = FeatureSchema::new(vec![
            Column::continuous("x"),
            Column::categorical("c", 3),
            Column::ordinal("o", 5),
        ])
        .unwrap();
        let t = MaskedTable::complete(schema, array![[0.5, 1.0, 2.0], [1.5, 3.0, 5.0], [2.0, 2.0, 1.0]]).unwrap();
        let mask = Array2::from_elem((3, 3), true);
        let r = evaluate(&t, &t, &mask).unwrap();
        assert_eq!(r.avg_err, 0.0);
        assert!(r.columns.iter().all(|c| c.err == Some(0.0)));
        let partial = Array2::from_shape_fn((3, 3), |(_, j)| j == 0);
        let r = evaluate(&t, &t, &partial).unwrap();
        assert_eq!(r.columns.iter().filter(|c| c.err.is_some()).count(), 1);
    }

    #[test]
    fn constant_offset_gives_offset_in_standard_units() {
        let truth = one_col(Column::continuous("x"), array![[0.0], [2.0], [4.0], [6.0]]);
        let shifted = one_col(Column::continuous("x"), array![[1.0], [3.0], [5.0], [7.0]]);
        let mask = Array2::from_elem((4, 1), true);
        let sd = (5.0f64).sqrt();
        assert!((rmse_err(&truth, &shifted, &mask, 0).unwrap() - 1.0 / sd).abs() < 1e-12);
    }

    #[test]
    fn baseline_examples() {
        let schema = FeatureSchema::new(vec![Column::continuous("x"), Column::categorical("c", 3)]).unwrap();
        let values = array![[1.0, 1.0], [2.0, 1.0], [3.0, 2.0], [f64::NAN, f64::NAN]];
        let mask = array![[false, false], [false, false], [false, false], [true, true]];
        let t = MaskedTable::new(schema.clone(), values, mask).unwrap();
        let filled = mean_mode_baseline(&t).unwrap();
        assert_eq!(filled.values()[[3, 0]], 2.0);
        assert_eq!(filled.values()[[3, 1]], 1.0);
        let full = MaskedTable::complete(schema, array![[1.0, 2.0], [4.0, 3.0]]).unwrap();
        assert_eq!(mean_mode_baseline(&full).unwrap().values(), full.values());
        assert_eq!(mode(&[2.0, 1.0, 2.0, 1.0], 3), 1);
    }

    #[test]
    fn mean_minimizes_squared_error_among_constants() {
        let mut r = rng::rng(3);
        let truth: Vec<f64> = (0..40).map(|_| r.random::<f64>() * 10.0).collect();
        let observed = &truth[..25];
        let mean = observed.iter().sum::<f64>() / observed.len() as f64;
        let sse = |c: f64| observed.iter().map(|v| (v - c).powi(2)).sum::<f64>();
        let best = (0..=1000)
            .map(|i| i as f64 / 100.0)
            .min_by(|a, b| sse(*a).total_cmp(&sse(*b)))
            .unwrap();
        assert!(sse(mean) <= sse(best) + 1e-9);
    }

    #[test]
    fn separable_classes_score_high() {
        let n = 400;
        let schema = FeatureSchema::new(vec![Column::continuous("a"), Column::continuous("b")]).unwrap();
        let mut r = rng::rng(1);
        let values = Array2::from_shape_fn((n, 2), |_| r.random::<f64>() * 2.0 - 1.0);
        let labels: Vec<f64> = (0..n)
            .map(|i| if values[[i, 0]] + 0.5 * values[[i, 1]] > 0.0 { 1.0 } else { 0.0 })
            .collect();
        // keep a margin so the classes are strictly separable
        let keep: Vec<usize> = (0..n).filter(|&i| (values[[i, 0]] + 0.5 * values[[i, 1]]).abs() > 0.1).collect();
        let t = MaskedTable::complete(schema, values.select(ndarray::Axis(0), &keep)).unwrap();
        let y: Vec<f64> = keep.iter().map(|&i| labels[i]).collect();
        let s = downstream_eval(&t, &y, Task::Classify, 4).unwrap();
        assert!(s.score > 0.99, "{}", s.score);
    }

    #[test]
    fn independent_labels_match_majority_baseline() {
        let n = 1000;
        let schema = FeatureSchema::new(vec![Column::continuous("a")]).unwrap();
        let mut r = rng::rng(2);
        let values = Array2::from_shape_fn((n, 1), |_| r.random::<f64>());
        let y: Vec<f64> = (0..n).map(|_| if r.random::<f64>() < 0.8 { 0.0 } else { 1.0 }).collect();
        let t = MaskedTable::complete(schema, values).unwrap();
        let s = downstream_eval(&t, &y, Task::Classify, 5).unwrap();
        // always predicting the majority class: F1 = (2 * 0.8 / 1.8 + 0) / 2
        let baseline = 0.8 / 1.8;
        assert!((s.score - baseline).abs() < 0.05, "{}", s.score);
    }

    #[test]
    fn exact_linear_regression() {
        let n = 200;
        let schema = FeatureSchema::new(vec![Column::continuous("x")]).unwrap();
        let values = Array2::from_shape_fn((n, 1), |(i, _)| i as f64 / 10.0);
        let y: Vec<f64> = values.column(0).to_vec();
        let t = MaskedTable::complete(schema, values).unwrap();
        let s = downstream_eval(&t, &y, Task::Regress, 1).unwrap();
        assert!(s.score < 1e-6, "{}", s.score);
    }

    #[test]
    fn single_class_rejected() {
        let t = one_col(Column::continuous("x"), array![[1.0], [2.0], [3.0]]);
        assert!(downstream_eval(&t, &[1.0, 1.0, 1.0], Task::Classify, 0).is_err());
    }

    #[test]
    fn timing_median() {
        let mut calls = 0;
        let s = timing_bench(
            || {
                calls += 1;
                Ok(())
            },
            3,
        )
        .unwrap();
        assert!(s >= 0.0);
        assert_eq!(calls, 3);
        assert!(timing_bench(|| Ok(()), 0).is_err());
    }
}
