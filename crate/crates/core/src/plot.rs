//! Deterministic SVG line charts of sweep results.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::harness::{read_results_csv, EstimatorKind, ResultRecord, SweepKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    /// x axis: mean measured group classification accuracy.
    AccuracySweep,
    /// x axis: feature dimension.
    DimensionSweep,
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(PlotKind::AccuracySweep),
            "dimension" => Ok(PlotKind::DimensionSweep),
            other => Err(Error::Config(format!("unknown plot kind {other:?}"))),
        }
    }
}

/// Mean and sample standard deviation of `sqrt_pehe` at one x position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeriesPoint {
    pub x: f64,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 450.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Aggregates successful rows into one series per estimator, sorted by x.
pub fn summarize(
    records: &[ResultRecord],
    kind: PlotKind,
) -> Result<BTreeMap<EstimatorKind, Vec<SeriesPoint>>> {
    let want = match kind {
        PlotKind::AccuracySweep => SweepKind::Accuracy,
        PlotKind::DimensionSweep => SweepKind::Dimension,
    };
    let rows: Vec<&ResultRecord> = records.iter().filter(|r| r.sweep == want).collect();
    if rows.is_empty() {
        return Err(Error::Schema(format!("no {} rows to plot", want.name())));
    }
    // Sweep points are keyed by the exact bit pattern of x_value.
    let mut accuracy: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let mut pehe: BTreeMap<(EstimatorKind, u64), Vec<f64>> = BTreeMap::new();
    for r in &rows {
        let key = r.x_value.to_bits();
        if let Some(a) = r.measured_accuracy {
            accuracy.entry(key).or_default().push(a);
        }
        if let Some(p) = r.sqrt_pehe {
            pehe.entry((r.estimator, key)).or_default().push(p);
        }
    }
    let mut out: BTreeMap<EstimatorKind, Vec<SeriesPoint>> = BTreeMap::new();
    for ((est, key), values) in pehe {
        let x = match kind {
            PlotKind::DimensionSweep => f64::from_bits(key),
            PlotKind::AccuracySweep => match accuracy.get(&key) {
                Some(a) => mean_std(a).0,
                None => {
                    return Err(Error::Schema(
                        "accuracy rows without measured_accuracy".into(),
                    ))
                }
            },
        };
        let (mean, std) = mean_std(&values);
        out.entry(est).or_default().push(SeriesPoint {
            x,
            mean,
            std,
            n: values.len(),
        });
    }
    if out.is_empty() {
        return Err(Error::Schema("every row failed; nothing to plot".into()));
    }
    for pts in out.values_mut() {
        pts.sort_by(|a, b| a.x.total_cmp(&b.x));
    }
    Ok(out)
}

fn fmt_num(v: f64) -> String {
    format!("{v:.2}")
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn padded_range(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
        (lo - pad, hi + pad)
    }
}

/// Renders the chart. Output depends only on the records.
pub fn plot_svg(records: &[ResultRecord], kind: PlotKind) -> Result<String> {
    let series = summarize(records, kind)?;
    let pts = series.values().flatten();
    let (x_lo, x_hi) = pts
        .clone()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.x), hi.max(p.x))
        });
    let (y_lo, y_hi) = pts.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        (lo.min(p.mean - p.std), hi.max(p.mean + p.std))
    });
    let (x_lo, x_hi) = padded_range(x_lo, x_hi);
    let (y_lo, y_hi) = padded_range(y_lo.max(0.0), y_hi);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| TOP + (y_hi - y) / (y_hi - y_lo) * plot_h;

    let (title, x_label) = match kind {
        PlotKind::AccuracySweep => (
            "sqrt(PEHE) vs treatment group classification accuracy",
            "group classification accuracy",
        ),
        PlotKind::DimensionSweep => ("sqrt(PEHE) vs feature dimension", "dimension d"),
    };
    let mut s = String::new();
    let w = &mut s;
    writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(
        w,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    )
    .unwrap();
    writeln!(
        w,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{title}</text>"#,
        fmt_num(LEFT + plot_w / 2.0)
    )
    .unwrap();
    writeln!(
        w,
        r#"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        fmt_num(plot_w),
        fmt_num(plot_h)
    )
    .unwrap();
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let xv = x_lo + f * (x_hi - x_lo);
        let yv = y_lo + f * (y_hi - y_lo);
        let (px, py) = (fmt_num(sx(xv)), fmt_num(sy(yv)));
        let bottom = TOP + plot_h;
        writeln!(
            w,
            r#"<line x1="{px}" y1="{}" x2="{px}" y2="{}" stroke="black"/>"#,
            fmt_num(bottom),
            fmt_num(bottom + 5.0)
        )
        .unwrap();
        writeln!(
            w,
            r#"<text x="{px}" y="{}" text-anchor="middle">{}</text>"#,
            fmt_num(bottom + 18.0),
            fmt_tick(xv)
        )
        .unwrap();
        writeln!(
            w,
            r#"<line x1="{}" y1="{py}" x2="{LEFT}" y2="{py}" stroke="black"/>"#,
            fmt_num(LEFT - 5.0)
        )
        .unwrap();
        writeln!(
            w,
            r#"<text x="{}" y="{py}" text-anchor="end" dominant-baseline="middle">{}</text>"#,
            fmt_num(LEFT - 8.0),
            fmt_tick(yv)
        )
        .unwrap();
    }
    writeln!(
        w,
        r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#,
        fmt_num(LEFT + plot_w / 2.0),
        fmt_num(HEIGHT - 12.0)
    )
    .unwrap();
    writeln!(w, r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">sqrt(PEHE)</text>"#, fmt_num(TOP + plot_h / 2.0)).unwrap();

    for (i, (est, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        writeln!(w, r#"<g class="series" data-estimator="{est}">"#).unwrap();
        for p in pts {
            let px = fmt_num(sx(p.x));
            let (lo, hi) = (
                fmt_num(sy((p.mean - p.std).max(y_lo))),
                fmt_num(sy(p.mean + p.std)),
            );
            writeln!(
                w,
                r#"<line x1="{px}" y1="{lo}" x2="{px}" y2="{hi}" stroke="{color}"/>"#
            )
            .unwrap();
            writeln!(
                w,
                r#"<circle cx="{px}" cy="{}" r="3" fill="{color}"/>"#,
                fmt_num(sy(p.mean))
            )
            .unwrap();
        }
        let coords: Vec<String> = pts
            .iter()
            .map(|p| format!("{},{}", fmt_num(sx(p.x)), fmt_num(sy(p.mean))))
            .collect();
        writeln!(
            w,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            coords.join(" ")
        )
        .unwrap();
        writeln!(w, "</g>").unwrap();
        let ly = TOP + 12.0 + 20.0 * i as f64;
        let lx = WIDTH - RIGHT + 15.0;
        writeln!(
            w,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="2"/>"#,
            fmt_num(lx),
            fmt_num(ly),
            fmt_num(lx + 25.0),
            fmt_num(ly)
        )
        .unwrap();
        writeln!(
            w,
            r#"<text x="{}" y="{}" dominant-baseline="middle">{est}</text>"#,
            fmt_num(lx + 32.0),
            fmt_num(ly)
        )
        .unwrap();
    }
    writeln!(w, "</svg>").unwrap();
    Ok(s)
}

/// Reads a results CSV and writes the chart to `out`.
pub fn plot_file(csv_path: &Path, kind: PlotKind, out: &Path) -> Result<()> {
    let file = std::fs::File::open(csv_path)?;
    let records = read_results_csv(file)?;
    std::fs::write(out, plot_svg(&records, kind)?)?;
    Ok(())
}
