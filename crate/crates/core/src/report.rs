//! SVG plots of training curves, per-step similarity and ablation tables.

use std::fs;
use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{AblationRow, EvalReport};

const SIZE: (u32, u32) = (800, 500);

fn plot_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::format(path, format!("plotting failed: {e}"))
}

/// Rows of a CSV file with a header; `#` lines are skipped.
fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty CSV"))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    Ok((header, rows))
}

fn column(path: &Path, header: &[String], rows: &[Vec<String>], name: &str) -> Result<Vec<f64>> {
    let k = header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::format(path, format!("no column {name}")))?;
    rows.iter()
        .map(|r| {
            r.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::format(path, format!("bad value in column {name}")))
        })
        .collect()
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-6);
    (lo - pad, hi + pad)
}

/// Line chart of named series over a shared x axis.
fn line_chart(path: &Path, title: &str, x_label: &str, series: &[(&str, Vec<(f64, f64)>)]) -> Result<()> {
    let (x0, x1) = range(series.iter().flat_map(|s| s.1.iter().map(|p| p.0)));
    let (y0, y1) = range(series.iter().flat_map(|s| s.1.iter().map(|p| p.1)));
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| plot_err(path, e))?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .draw()
        .map_err(|e| plot_err(path, e))?;
    for (k, (name, points)) in series.iter().enumerate() {
        let color = Palette99::pick(k).to_rgba();
        chart
            .draw_series(LineSeries::new(points.iter().copied(), color.stroke_width(2)))
            .map_err(|e| plot_err(path, e))?
            .label(*name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
        chart
            .draw_series(points.iter().map(|&p| Circle::new(p, 3, color.filled())))
            .map_err(|e| plot_err(path, e))?;
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(|e| plot_err(path, e))?;
    root.present().map_err(|e| plot_err(path, e))
}

/// Total training loss against iteration, from a metrics CSV.
pub fn plot_loss(metrics_csv: &Path, out: &Path) -> Result<()> {
    let (h, rows) = read_csv(metrics_csv)?;
    let it = column(metrics_csv, &h, &rows, "iteration")?;
    let total = column(metrics_csv, &h, &rows, "total")?;
    let points = it.into_iter().zip(total).collect();
    line_chart(out, "Training loss", "iteration", &[("total", points)])
}

/// Validation NCC and Dice against iteration.
pub fn plot_validation(validation_csv: &Path, out: &Path) -> Result<()> {
    let (h, rows) = read_csv(validation_csv)?;
    let it = column(validation_csv, &h, &rows, "iteration")?;
    let series: Vec<(&str, Vec<(f64, f64)>)> = ["mean_ncc", "mean_dsc"]
        .into_iter()
        .map(|name| {
            column(validation_csv, &h, &rows, name).map(|v| (name, it.iter().copied().zip(v).collect()))
        })
        .collect::<Result<_>>()?;
    line_chart(out, "Validation", "iteration", &series)
}

/// Mean NCC after each registration step.
pub fn plot_step_ncc(report: &EvalReport, out: &Path) -> Result<()> {
    let points = report
        .step_ncc
        .iter()
        .enumerate()
        .map(|(i, &v)| ((i + 1) as f64, v))
        .collect();
    line_chart(out, "NCC after each step (own pyramid grid)", "step", &[("mean NCC", points)])
}

/// Dice per `L`, one series per `λ`.
pub fn plot_ablation(rows: &[AblationRow], out: &Path) -> Result<()> {
    let mut lambdas: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    let names: Vec<String> = lambdas.iter().map(|l| format!("lambda={l}")).collect();
    let series: Vec<(&str, Vec<(f64, f64)>)> = lambdas
        .iter()
        .zip(&names)
        .map(|(&l, name)| {
            let points = rows
                .iter()
                .filter(|r| r.lambda == l && r.dsc.is_finite())
                .map(|r| (r.levels as f64, r.dsc))
                .collect();
            (name.as_str(), points)
        })
        .collect();
    line_chart(out, "Dice by number of steps", "L", &series)
}

/// Parses a table written by [`crate::eval::write_ablation_csv`].
pub fn read_ablation_csv(path: &Path) -> Result<Vec<AblationRow>> {
    let (h, rows) = read_csv(path)?;
    let levels = column(path, &h, &rows, "L")?;
    let lambda = column(path, &h, &rows, "lambda")?;
    let dsc = column(path, &h, &rows, "dsc")?;
    let njd = column(path, &h, &rows, "njd")?;
    let secs = column(path, &h, &rows, "cpu_seconds")?;
    let err_col = h.iter().position(|c| c == "error");
    Ok((0..rows.len())
        .map(|i| AblationRow {
            levels: levels[i] as usize,
            lambda: lambda[i],
            dsc: dsc[i],
            njd: njd[i],
            cpu_seconds: secs[i],
            error: err_col
                .and_then(|k| rows[i].get(k))
                .filter(|s| !s.is_empty())
                .cloned(),
        })
        .collect())
}
