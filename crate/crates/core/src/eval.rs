//! Evaluation: classification report, leaf-fall period extraction, start/end
//! RMSE, learning-curve export and per-species trajectory summaries.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use thiserror::Error;

use crate::calendar::folded_day_of_year;
use crate::ingest::DailyLeafSeries;
use crate::nn::{write_metrics_csv, EpochMetrics};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("y_true has {truth} entries, y_pred has {pred}")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("empty label sequences")]
    Empty,
    #[error("predicted and actual periods share no years")]
    NoOverlappingYears,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Precision/recall/F1/support for one class (or an average row).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Per-class scores plus accuracy and macro/weighted averages, mirroring the
/// usual classification-report layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub leaf_fall: ClassScores,
    pub no_leaf_fall: ClassScores,
    pub accuracy: f64,
    pub macro_avg: ClassScores,
    pub weighted_avg: ClassScores,
}

fn ratio_or_zero(numerator: f64, denominator: f64, what: &str) -> f64 {
    if denominator == 0.0 {
        log::warn!("{what} has a zero denominator; reporting 0");
        0.0
    } else {
        numerator / denominator
    }
}

fn class_scores(tp: usize, fp: usize, fn_: usize, support: usize, class: &str) -> ClassScores {
    let precision = ratio_or_zero(tp as f64, (tp + fp) as f64, &format!("{class} precision"));
    let recall = ratio_or_zero(tp as f64, (tp + fn_) as f64, &format!("{class} recall"));
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassScores { precision, recall, f1, support }
}

/// Computes the two-class report; the positive class is the leaf-fall day.
pub fn classification_report(
    y_true: &[bool],
    y_pred: &[bool],
) -> Result<ClassificationReport, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch { truth: y_true.len(), pred: y_pred.len() });
    }
    if y_true.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut tn = 0usize;
    let mut fn_ = 0usize;
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t, p) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
            (true, false) => fn_ += 1,
        }
    }
    let total = y_true.len();
    let positives = tp + fn_;
    let negatives = tn + fp;
    let leaf_fall = class_scores(tp, fp, fn_, positives, "leaf-fall");
    // For the negative class the roles flip: its "true positives" are
    // correctly predicted non-leaf-fall days.
    let no_leaf_fall = class_scores(tn, fn_, fp, negatives, "no-leaf-fall");

    let macro_avg = ClassScores {
        precision: (leaf_fall.precision + no_leaf_fall.precision) / 2.0,
        recall: (leaf_fall.recall + no_leaf_fall.recall) / 2.0,
        f1: (leaf_fall.f1 + no_leaf_fall.f1) / 2.0,
        support: total,
    };
    let weight = |a: f64, b: f64| (a * positives as f64 + b * negatives as f64) / total as f64;
    let weighted_avg = ClassScores {
        precision: weight(leaf_fall.precision, no_leaf_fall.precision),
        recall: weight(leaf_fall.recall, no_leaf_fall.recall),
        f1: weight(leaf_fall.f1, no_leaf_fall.f1),
        support: total,
    };
    Ok(ClassificationReport {
        leaf_fall,
        no_leaf_fall,
        accuracy: (tp + tn) as f64 / total as f64,
        macro_avg,
        weighted_avg,
    })
}

/// First/last labeled day of one calendar year.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeriodSummary {
    pub year: i32,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

/// Per year: start = first true day, end = last true day. Years without a
/// positive day produce no summary.
pub fn extract_periods(labels: impl IntoIterator<Item = (NaiveDate, bool)>) -> Vec<PeriodSummary> {
    let mut by_year: BTreeMap<i32, (NaiveDate, NaiveDate)> = BTreeMap::new();
    for (date, label) in labels {
        if !label {
            continue;
        }
        by_year
            .entry(date.year())
            .and_modify(|(start, end)| {
                *start = (*start).min(date);
                *end = (*end).max(date);
            })
            .or_insert((date, date));
    }
    by_year
        .into_iter()
        .map(|(year, (start, end))| PeriodSummary { year, start, end })
        .collect()
}

/// One matched year of the RMSE report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct YearDiff {
    pub year: i32,
    pub pred_start: NaiveDate,
    pub actual_start: NaiveDate,
    pub start_diff_days: i64,
    pub pred_end: NaiveDate,
    pub actual_end: NaiveDate,
    pub end_diff_days: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseReport {
    pub rows: Vec<YearDiff>,
    pub rmse_start: f64,
    pub rmse_end: f64,
    pub rmse_overall: f64,
    /// Years present on only one side, excluded from the averages.
    pub excluded_years: Vec<i32>,
}

/// Absolute day differences per overlapping year, RMSE over starts, ends and
/// both pooled.
pub fn rmse_report(
    predicted: &[PeriodSummary],
    actual: &[PeriodSummary],
) -> Result<RmseReport, EvalError> {
    let pred_by_year: BTreeMap<i32, &PeriodSummary> =
        predicted.iter().map(|p| (p.year, p)).collect();
    let actual_by_year: BTreeMap<i32, &PeriodSummary> = actual.iter().map(|p| (p.year, p)).collect();

    let mut rows = Vec::new();
    let mut excluded_years = Vec::new();
    for (&year, pred) in &pred_by_year {
        match actual_by_year.get(&year) {
            Some(act) => rows.push(YearDiff {
                year,
                pred_start: pred.start,
                actual_start: act.start,
                start_diff_days: (pred.start - act.start).num_days().abs(),
                pred_end: pred.end,
                actual_end: act.end,
                end_diff_days: (pred.end - act.end).num_days().abs(),
            }),
            None => excluded_years.push(year),
        }
    }
    for &year in actual_by_year.keys() {
        if !pred_by_year.contains_key(&year) {
            excluded_years.push(year);
        }
    }
    excluded_years.sort_unstable();
    if rows.is_empty() {
        return Err(EvalError::NoOverlappingYears);
    }
    if !excluded_years.is_empty() {
        log::warn!("years excluded from RMSE (present on one side only): {excluded_years:?}");
    }

    let n = rows.len() as f64;
    let sum_sq_start: f64 = rows.iter().map(|r| (r.start_diff_days as f64).powi(2)).sum();
    let sum_sq_end: f64 = rows.iter().map(|r| (r.end_diff_days as f64).powi(2)).sum();
    Ok(RmseReport {
        rmse_start: (sum_sq_start / n).sqrt(),
        rmse_end: (sum_sq_end / n).sqrt(),
        rmse_overall: ((sum_sq_start + sum_sq_end) / (2.0 * n)).sqrt(),
        rows,
        excluded_years,
    })
}

/// Mean leaf-fall percentage per day-of-year for one species (Feb 29 folded
/// into day 59).
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryCurve {
    pub species: String,
    pub mean_by_day: Vec<f64>,
}

/// Averages daily series per species across trees and years.
pub fn trajectory_summary(series: &[DailyLeafSeries]) -> Vec<TrajectoryCurve> {
    let mut acc: BTreeMap<&str, (Vec<f64>, Vec<usize>)> = BTreeMap::new();
    for s in series {
        let entry = acc
            .entry(s.species.as_str())
            .or_insert_with(|| (vec![0.0; 365], vec![0usize; 365]));
        let mut date = s.start_date;
        for &value in &s.values {
            let day = folded_day_of_year(date) as usize - 1;
            entry.0[day] += value;
            entry.1[day] += 1;
            date = date.succ_opt().expect("date increment");
        }
    }
    acc.into_iter()
        .map(|(species, (sums, counts))| TrajectoryCurve {
            species: species.to_string(),
            mean_by_day: sums
                .iter()
                .zip(&counts)
                .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
                .collect(),
        })
        .collect()
}

// --- exports -----------------------------------------------------------

/// Minimal line chart: one polyline per series over an auto-scaled viewport.
fn line_chart_svg(title: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    const WIDTH: f64 = 640.0;
    const HEIGHT: f64 = 400.0;
    const MARGIN: f64 = 48.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

    let points: Vec<(f64, f64)> = series.iter().flat_map(|(_, pts)| pts.iter().copied()).collect();
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in &points {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if !x0.is_finite() {
        x0 = 0.0;
        x1 = 1.0;
        y0 = 0.0;
        y1 = 1.0;
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{title}</text>\n",
        WIDTH / 2.0
    ));
    svg.push_str(&format!(
        "  <line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"#333\"/>\n  <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"#333\"/>\n",
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        t = MARGIN
    ));
    svg.push_str(&format!(
        "  <text x=\"{m}\" y=\"{y}\" font-size=\"11\">{min:.3}</text>\n  <text x=\"{m}\" y=\"{t}\" font-size=\"11\">{max:.3}</text>\n",
        m = 4.0,
        y = HEIGHT - MARGIN,
        t = MARGIN + 4.0,
        min = y0,
        max = y1
    ));
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
        svg.push_str(&format!(
            "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        svg.push_str(&format!(
            "  <text x=\"{x}\" y=\"{y}\" font-size=\"12\" fill=\"{color}\">{name}</text>\n",
            x = WIDTH - MARGIN + 4.0,
            y = MARGIN + 16.0 * i as f64
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `metrics.csv`, `accuracy.svg` and `loss.svg` (train + validation
/// series per chart) into `dir`.
pub fn export_learning_curves(metrics: &[EpochMetrics], dir: &Path) -> Result<(), EvalError> {
    assert!(!metrics.is_empty(), "at least one epoch required");
    std::fs::create_dir_all(dir)?;
    let file = std::fs::File::create(dir.join("metrics.csv"))?;
    write_metrics_csv(metrics, file)?;

    let epochs = |f: &dyn Fn(&EpochMetrics) -> Option<f64>| -> Vec<(f64, f64)> {
        metrics
            .iter()
            .filter_map(|m| f(m).map(|v| (m.epoch as f64, v)))
            .collect()
    };
    let acc_chart = line_chart_svg(
        "Accuracy per epoch",
        &[
            ("train", epochs(&|m| Some(m.train_acc))),
            ("validation", epochs(&|m| m.val_acc)),
        ],
    );
    std::fs::write(dir.join("accuracy.svg"), acc_chart)?;
    let loss_chart = line_chart_svg(
        "Loss per epoch",
        &[
            ("train", epochs(&|m| Some(m.train_loss))),
            ("validation", epochs(&|m| m.val_loss)),
        ],
    );
    std::fs::write(dir.join("loss.svg"), loss_chart)?;
    Ok(())
}

/// `class,precision,recall,f1,support` rows plus accuracy/macro/weighted.
/// Scores are written at full precision; rounding is presentation-only.
pub fn write_classification_report_csv(
    report: &ClassificationReport,
    writer: impl Write,
) -> Result<(), EvalError> {
    fn row<W: Write>(
        csv: &mut csv::Writer<W>,
        name: &str,
        s: &ClassScores,
    ) -> Result<(), csv::Error> {
        csv.write_record([
            name.to_string(),
            s.precision.to_string(),
            s.recall.to_string(),
            s.f1.to_string(),
            s.support.to_string(),
        ])
    }
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["class", "precision", "recall", "f1", "support"])?;
    row(&mut csv, "leaf_fall", &report.leaf_fall)?;
    row(&mut csv, "no_leaf_fall", &report.no_leaf_fall)?;
    csv.write_record([
        "accuracy".to_string(),
        String::new(),
        String::new(),
        report.accuracy.to_string(),
        report.macro_avg.support.to_string(),
    ])?;
    row(&mut csv, "macro_avg", &report.macro_avg)?;
    row(&mut csv, "weighted_avg", &report.weighted_avg)?;
    csv.flush()?;
    Ok(())
}

/// Two-decimal console rendering of the report.
pub fn format_classification_report(report: &ClassificationReport) -> String {
    fn row(out: &mut String, name: &str, s: &ClassScores) {
        out.push_str(&format!(
            "{:<14} {:>9.2} {:>9.2} {:>9.2} {:>9}\n",
            name, s.precision, s.recall, s.f1, s.support
        ));
    }
    let mut out = String::new();
    out.push_str(&format!(
        "{:<14} {:>9} {:>9} {:>9} {:>9}\n",
        "class", "precision", "recall", "f1", "support"
    ));
    row(&mut out, "leaf-fall", &report.leaf_fall);
    row(&mut out, "no leaf-fall", &report.no_leaf_fall);
    out.push_str(&format!(
        "{:<14} {:>9} {:>9} {:>9.2} {:>9}\n",
        "accuracy", "", "", report.accuracy, report.macro_avg.support
    ));
    row(&mut out, "macro avg", &report.macro_avg);
    row(&mut out, "weighted avg", &report.weighted_avg);
    out
}

/// `tree_id,year,pred_start,pred_end,actual_start,actual_end,start_diff_days,end_diff_days`.
pub fn write_periods_csv(
    tree_id: &str,
    report: &RmseReport,
    writer: impl Write,
) -> Result<(), EvalError> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record([
        "tree_id",
        "year",
        "pred_start",
        "pred_end",
        "actual_start",
        "actual_end",
        "start_diff_days",
        "end_diff_days",
    ])?;
    for row in &report.rows {
        csv.write_record([
            tree_id.to_string(),
            row.year.to_string(),
            row.pred_start.format("%Y-%m-%d").to_string(),
            row.pred_end.format("%Y-%m-%d").to_string(),
            row.actual_start.format("%Y-%m-%d").to_string(),
            row.actual_end.format("%Y-%m-%d").to_string(),
            row.start_diff_days.to_string(),
            row.end_diff_days.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// `metric,days` rows for the three RMSE aggregates.
pub fn write_rmse_csv(report: &RmseReport, writer: impl Write) -> Result<(), EvalError> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["metric", "days"])?;
    csv.write_record(["rmse_start", &report.rmse_start.to_string()])?;
    csv.write_record(["rmse_end", &report.rmse_end.to_string()])?;
    csv.write_record(["rmse_overall", &report.rmse_overall.to_string()])?;
    csv.flush()?;
    Ok(())
}

/// Writes `trajectory.csv` (species,day_of_year,mean_lfall) and
/// `trajectory.svg` (one polyline per species).
pub fn export_trajectories(curves: &[TrajectoryCurve], dir: &Path) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir)?;
    let mut csv = csv::Writer::from_writer(std::fs::File::create(dir.join("trajectory.csv"))?);
    csv.write_record(["species", "day_of_year", "mean_lfall"])?;
    for curve in curves {
        for (i, value) in curve.mean_by_day.iter().enumerate() {
            csv.write_record([
                curve.species.clone(),
                (i + 1).to_string(),
                value.to_string(),
            ])?;
        }
    }
    csv.flush()?;

    let series: Vec<(&str, Vec<(f64, f64)>)> = curves
        .iter()
        .map(|c| {
            let pts = c
                .mean_by_day
                .iter()
                .enumerate()
                .map(|(i, v)| ((i + 1) as f64, *v))
                .collect();
            (c.species.as_str(), pts)
        })
        .collect();
    std::fs::write(
        dir.join("trajectory.svg"),
        line_chart_svg("Mean leaf-fall by day of year", &series),
    )?;
    Ok(())
}
