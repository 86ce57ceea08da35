//! Summaries of cumulative solve curves: evaluations needed to reach k
//! solved questions, per method and across seeds.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::training::CurvePoint;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("expected header `evaluations,correct_found`, found `{0}`")]
    Header(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("curve is not cumulative at row {0}")]
    NotCumulative(usize),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Reads a curve file with columns `evaluations,correct_found`. Both columns
/// must be non-decreasing.
pub fn read_curve<R: Read>(input: R) -> Result<Vec<CurvePoint>, ReportError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["evaluations", "correct_found"] {
        let found: String = header.iter().collect::<Vec<_>>().join(",").chars().take(60).collect();
        return Err(ReportError::Header(found));
    }
    let mut points: Vec<CurvePoint> = Vec::new();
    for (i, record) in reader.deserialize().enumerate() {
        let row = i + 2;
        let p: CurvePoint = record.map_err(|e| ReportError::Row { row, message: e.to_string() })?;
        if let Some(prev) = points.last() {
            if p.evaluations < prev.evaluations || p.correct_found < prev.correct_found {
                return Err(ReportError::NotCumulative(row));
            }
        }
        points.push(p);
    }
    Ok(points)
}

/// Evaluations spent when the curve first reaches `k` solves; `None` if it
/// never does. Reaching 0 solves costs nothing.
pub fn evaluations_to_k(curve: &[CurvePoint], k: usize) -> Option<u64> {
    if k == 0 {
        return Some(0);
    }
    curve.iter().find(|p| p.correct_found >= k).map(|p| p.evaluations)
}

/// Highest solve count reached by every curve.
pub fn common_reach<'a, I: IntoIterator<Item = &'a [CurvePoint]>>(curves: I) -> usize {
    curves.into_iter().map(|c| c.last().map_or(0, |p| p.correct_found)).min().unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KStats {
    pub k: usize,
    /// Curves that reached `k`.
    pub reached: usize,
    /// Mean over seeds; only defined when every curve reached `k`.
    pub mean: Option<f64>,
    pub min: Option<u64>,
    pub max: Option<u64>,
}

pub fn k_stats(curves: &[Vec<CurvePoint>], k: usize) -> KStats {
    let hits: Vec<u64> = curves.iter().filter_map(|c| evaluations_to_k(c, k)).collect();
    let mean = (hits.len() == curves.len() && !hits.is_empty())
        .then(|| hits.iter().map(|&e| e as f64).sum::<f64>() / hits.len() as f64);
    KStats { k, reached: hits.len(), mean, min: hits.iter().copied().min(), max: hits.iter().copied().max() }
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { (values[n / 2 - 1] + values[n / 2]) / 2.0 })
}

/// Median over k = 1..=k_max of the seed-mean evaluations to reach k
/// solves. `None` when `k_max` is 0 or some curve falls short of it.
pub fn median_evaluations(curves: &[Vec<CurvePoint>], k_max: usize) -> Option<f64> {
    let mut means = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        means.push(k_stats(curves, k).mean?);
    }
    median(&mut means)
}

/// Largest over smallest evaluations-to-k across seeds. Infinite when some
/// seed never reaches `k`.
pub fn stability_ratio(curves: &[Vec<CurvePoint>], k: usize) -> f64 {
    let s = k_stats(curves, k);
    match (s.min, s.max) {
        (Some(lo), Some(hi)) if s.reached == curves.len() => {
            if lo == 0 {
                if hi == 0 {
                    1.0
                } else {
                    f64::INFINITY
                }
            } else {
                hi as f64 / lo as f64
            }
        }
        _ => f64::INFINITY,
    }
}

#[derive(Debug, Clone)]
pub struct MethodCurves {
    pub method: String,
    pub curves: Vec<Vec<CurvePoint>>,
}

#[derive(Debug, Clone)]
pub struct MethodSummary {
    pub method: String,
    pub seeds: usize,
    pub final_solved_min: usize,
    pub final_solved_max: usize,
    pub median_evaluations: Option<f64>,
    pub stability: f64,
}

#[derive(Debug, Clone)]
pub struct Report {
    /// Solve count up to which every curve of every method is compared.
    pub k_common: usize,
    /// Solve count at which stability is measured.
    pub k_stability: usize,
    pub methods: Vec<MethodSummary>,
    /// Median evaluations of the first method over the last one.
    pub ratio: Option<f64>,
}

/// Builds the cross-method summary. `questions` is the dataset size; the
/// stability point is half of it, rounded up.
pub fn summarize(methods: &[MethodCurves], questions: usize) -> Report {
    let k_common = common_reach(methods.iter().flat_map(|m| m.curves.iter().map(Vec::as_slice)));
    let k_stability = questions.div_ceil(2);
    let summaries: Vec<MethodSummary> = methods
        .iter()
        .map(|m| {
            let finals: Vec<usize> = m.curves.iter().map(|c| c.last().map_or(0, |p| p.correct_found)).collect();
            MethodSummary {
                method: m.method.clone(),
                seeds: m.curves.len(),
                final_solved_min: finals.iter().copied().min().unwrap_or(0),
                final_solved_max: finals.iter().copied().max().unwrap_or(0),
                median_evaluations: median_evaluations(&m.curves, k_common),
                stability: stability_ratio(&m.curves, k_stability),
            }
        })
        .collect();
    let ratio = match (summaries.first(), summaries.last()) {
        (Some(a), Some(b)) if summaries.len() >= 2 => match (a.median_evaluations, b.median_evaluations) {
            (Some(x), Some(y)) if y > 0.0 => Some(x / y),
            _ => None,
        },
        _ => None,
    };
    Report { k_common, k_stability, methods: summaries, ratio }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// One row per method and solve count, from 1 to the highest count any of
/// that method's curves reached.
pub fn write_curves_csv<W: Write>(methods: &[MethodCurves], out: &mut W) -> io::Result<()> {
    writeln!(out, "method,correct_found,reached,mean_evaluations,min_evaluations,max_evaluations")?;
    for m in methods {
        let top = m.curves.iter().map(|c| c.last().map_or(0, |p| p.correct_found)).max().unwrap_or(0);
        for k in 1..=top {
            let s = k_stats(&m.curves, k);
            writeln!(out, "{},{},{},{},{},{}", m.method, k, s.reached, opt(s.mean), opt(s.min), opt(s.max))?;
        }
    }
    Ok(())
}

/// Text table: per method, mean/min/max evaluations at tenths of the dataset.
pub fn write_table<W: Write>(methods: &[MethodCurves], report: &Report, questions: usize, out: &mut W) -> io::Result<()> {
    writeln!(out, "{:<12} {:>6} {:>8} {:>12} {:>10} {:>10}", "method", "k", "reached", "mean", "min", "max")?;
    for m in methods {
        for tenth in 1..=10 {
            let k = (questions * tenth).div_ceil(10);
            if k == 0 {
                continue;
            }
            let s = k_stats(&m.curves, k);
            let mean = s.mean.map_or_else(|| "-".to_string(), |x| format!("{x:.1}"));
            let min = s.min.map_or_else(|| "-".to_string(), |x| x.to_string());
            let max = s.max.map_or_else(|| "-".to_string(), |x| x.to_string());
            writeln!(out, "{:<12} {:>6} {:>5}/{:<2} {:>12} {:>10} {:>10}", m.method, k, s.reached, m.curves.len(), mean, min, max)?;
        }
    }
    writeln!(out)?;
    writeln!(out, "compared up to k = {} (reached by every curve)", report.k_common)?;
    for s in &report.methods {
        let med = s.median_evaluations.map_or_else(|| "-".to_string(), |x| format!("{x:.1}"));
        writeln!(
            out,
            "{:<12} seeds {} solved {}..{} median evaluations {} max/min at k={} {:.3}",
            s.method, s.seeds, s.final_solved_min, s.final_solved_max, med, report.k_stability, s.stability
        )?;
    }
    if let Some(r) = report.ratio {
        writeln!(out, "median evaluation ratio {} / {} = {:.4}", report.methods[0].method, report.methods[report.methods.len() - 1].method, r)?;
    }
    Ok(())
}

/// Overlaid seed-mean curves as a minimal SVG line chart.
pub fn write_svg<W: Write>(methods: &[MethodCurves], out: &mut W) -> io::Result<()> {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 40.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let series: Vec<Vec<(f64, f64)>> = methods
        .iter()
        .map(|m| {
            let top = common_reach(m.curves.iter().map(Vec::as_slice));
            (1..=top).filter_map(|k| k_stats(&m.curves, k).mean.map(|e| (e, k as f64))).collect()
        })
        .collect();
    let x_max = series.iter().flatten().map(|p| p.0).fold(1.0, f64::max);
    let y_max = series.iter().flatten().map(|p| p.1).fold(1.0, f64::max);
    writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}">"#)?;
    writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#)?;
    writeln!(
        out,
        r#"<path d="M{PAD} {PAD} V{} H{}" stroke="black" fill="none"/>"#,
        H - PAD,
        W - PAD
    )?;
    writeln!(out, r#"<text x="{}" y="{}" font-size="12">evaluations (max {x_max:.0})</text>"#, W / 2.0 - 60.0, H - 10.0)?;
    writeln!(out, r#"<text x="4" y="{}" font-size="12">solved</text>"#, PAD - 10.0)?;
    for (i, (m, pts)) in methods.iter().zip(&series).enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = pts
            .iter()
            .map(|(x, y)| {
                format!("{:.1},{:.1}", PAD + x / x_max * (W - 2.0 * PAD), H - PAD - y / y_max * (H - 2.0 * PAD))
            })
            .collect();
        writeln!(out, r#"<polyline points="{}" stroke="{color}" fill="none"/>"#, coords.join(" "))?;
        writeln!(out, r#"<text x="{}" y="{}" font-size="12" fill="{color}">{}</text>"#, W - PAD - 120.0, PAD + 16.0 * i as f64, m.method)?;
    }
    writeln!(out, "</svg>")
}
