//! SVG line plots of a finished run, read back from its output files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::HarnessError;
use crate::manifest::RunManifest;

type Series = Vec<(String, Vec<(f64, f64)>)>;

fn plot_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(std::io::Error::other(e.to_string()))
}

/// Columns of a CSV file by header name.
fn read_columns(path: &Path) -> Result<BTreeMap<String, Vec<String>>, HarnessError> {
    let mut rdr = csv::Reader::from_path(path).map_err(plot_err)?;
    let headers: Vec<String> = rdr.headers().map_err(plot_err)?.iter().map(String::from).collect();
    let mut cols: BTreeMap<String, Vec<String>> = headers.iter().map(|h| (h.clone(), Vec::new())).collect();
    for rec in rdr.records() {
        let rec = rec.map_err(plot_err)?;
        for (h, v) in headers.iter().zip(rec.iter()) {
            cols.get_mut(h).unwrap().push(v.to_string());
        }
    }
    Ok(cols)
}

fn num(cols: &BTreeMap<String, Vec<String>>, key: &str) -> Vec<f64> {
    cols.get(key).map(|v| v.iter().map(|s| s.parse().unwrap_or(f64::NAN)).collect()).unwrap_or_default()
}

/// Groups `(x, y)` pairs into one series per value of `group`.
fn grouped(cols: &BTreeMap<String, Vec<String>>, group: &str, x: &str, y: &str, label: &str) -> Series {
    let (g, xs, ys) = (&cols[group], num(cols, x), num(cols, y));
    let mut by: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for i in 0..xs.len() {
        by.entry(g[i].as_str()).or_default().push((xs[i], ys[i]));
    }
    by.into_iter().map(|(k, v)| (format!("{label} {group}={k}"), v)).collect()
}

fn line_plot(path: &Path, title: &str, x_label: &str, y_label: &str, series: &Series, log_y: bool) -> Result<(), HarnessError> {
    let pts = series.iter().flat_map(|(_, s)| s.iter()).filter(|(x, y)| x.is_finite() && y.is_finite() && (!log_y || *y > 0.0));
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x0 <= x1 && y0 <= y1) {
        return Err(plot_err(format!("{}: no finite data to plot", path.display())));
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        let pad = if y0 == 0.0 { 1.0 } else { y0.abs() * 0.1 };
        (y0, y1) = (y0 - pad, y1 + pad);
    }
    let root = SVGBackend::new(path, (800, 520)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut builder = ChartBuilder::on(&root);
    builder.caption(title, ("sans-serif", 20)).margin(12).x_label_area_size(40).y_label_area_size(70);
    macro_rules! draw {
        ($chart:expr) => {{
            let mut chart = $chart.map_err(plot_err)?;
            chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw().map_err(plot_err)?;
            for (i, (name, s)) in series.iter().enumerate() {
                let color = Palette99::pick(i).to_rgba();
                let data = s.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite() && (!log_y || *y > 0.0));
                chart
                    .draw_series(LineSeries::new(data, color.stroke_width(2)))
                    .map_err(plot_err)?
                    .label(name.as_str())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
            }
            if series.len() > 1 {
                chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(plot_err)?;
            }
        }};
    }
    if log_y {
        draw!(builder.build_cartesian_2d(x0..x1, (y0 * 0.8..y1 * 1.25).log_scale()));
    } else {
        let pad = 0.05 * (y1 - y0);
        draw!(builder.build_cartesian_2d(x0..x1, y0 - pad..y1 + pad));
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Writes every plot the run's outputs support into `dir` and returns the
/// files written. Fails when an output listed in the manifest is missing.
pub fn emit_plots(manifest: &RunManifest, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    for o in &manifest.outputs {
        if !dir.join(&o.path).is_file() {
            return Err(HarnessError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("missing output {}", dir.join(&o.path).display()),
            )));
        }
    }
    let has = |name: &str| manifest.outputs.iter().any(|o| o.path == name);
    let mut written = Vec::new();
    let mut emit = |name: &str, title: &str, xl: &str, yl: &str, series: Series, log_y: bool| -> Result<(), HarnessError> {
        let path = dir.join(name);
        line_plot(&path, title, xl, yl, &series, log_y)?;
        written.push(path);
        Ok(())
    };
    if has("profile.csv") {
        let c = read_columns(&dir.join("profile.csv"))?;
        let mut s = grouped(&c, "realization", "x", "u_backward", "backward");
        s.extend(grouped(&c, "realization", "x", "u_grid", "grid"));
        emit("u_profile.svg", "u(0, x)", "x", "u", s, false)?;
    }
    if has("probes.csv") {
        let c = read_columns(&dir.join("probes.csv"))?;
        let mut s = grouped(&c, "realization", "x", "y0", "backward");
        if num(&c, "oracle").iter().any(|v| v.is_finite()) {
            s.extend(grouped(&c, "realization", "x", "oracle", "oracle"));
        }
        emit("u_probes.svg", "u(0, x) at the probes", "x", "u", s, false)?;
    }
    if has("surface.csv") {
        let c = read_columns(&dir.join("surface.csv"))?;
        emit("u_profile.svg", "u(0, x)", "x", "u", grouped(&c, "realization", "x", "u0", "backward"), false)?;
    }
    if has("gradients.csv") {
        let c = read_columns(&dir.join("gradients.csv"))?;
        let mut s = Series::new();
        for col in ["regression", "flow", "grid"] {
            s.extend(grouped(&c, "realization", "x", col, col));
        }
        emit("z_profile.svg", "Z(0, x)", "x", "z", s, false)?;
    }
    if has("picard.csv") {
        let c = read_columns(&dir.join("picard.csv"))?;
        emit("picard_distance.svg", "weighted distance", "iteration", "distance", grouped(&c, "realization", "iteration", "distance", "d"), true)?;
        emit("picard_ratio.svg", "successive ratio", "iteration", "ratio", grouped(&c, "realization", "iteration", "ratio", "ratio"), true)?;
    }
    if has("qv.csv") {
        let c = read_columns(&dir.join("qv.csv"))?;
        let (r, a, t) = (num(&c, "realization"), num(&c, "realized"), num(&c, "quadrature"));
        let ratio: Vec<(f64, f64)> = (0..r.len()).map(|i| (r[i], a[i] / t[i])).collect();
        emit("qv_ratio.svg", "realized / quadrature", "realization", "ratio", vec![("ratio".into(), ratio)], false)?;
    }
    if manifest.experiment == "horizon-cauchy" && has("report.json") {
        let reports: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("report.json"))?)?;
        let mut s = Series::new();
        for (r, rep) in reports.as_array().into_iter().flatten().enumerate() {
            let ladder: Vec<f64> = rep["params"]["ladder"].as_array().into_iter().flatten().filter_map(|v| v.as_f64()).collect();
            let diffs: Vec<f64> = rep["cauchy"]["differences"].as_array().into_iter().flatten().filter_map(|v| v.as_f64()).collect();
            s.push((format!("realization {r}"), ladder.iter().skip(1).copied().zip(diffs).collect()));
        }
        emit("horizon_decay.svg", "discounted horizon difference", "horizon", "difference", s, true)?;
    }
    if has("periodicity.csv") {
        let c = read_columns(&dir.join("periodicity.csv"))?;
        emit("periodicity.svg", "periodicity discrepancy", "t", "discrepancy", grouped(&c, "x", "t", "discrepancy", "probe"), false)?;
    }
    if has("stationary.csv") {
        let c = read_columns(&dir.join("stationary.csv"))?;
        emit("stationary.svg", "shift discrepancy", "r", "discrepancy", grouped(&c, "x", "r", "discrepancy", "probe"), false)?;
    }
    Ok(written)
}
