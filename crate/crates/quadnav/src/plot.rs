//! Line-chart export for the two run artifacts: the training metrics log
//! (env steps vs mean episodic return) and a recorded trajectory (control
//! step vs normalized distance to goal). Emits a self-contained SVG plus a
//! downsampled plot-data CSV whose values are copied verbatim from the
//! input, never recomputed or smoothed.

use crate::metrics::read_csv;
use crate::{Error, Result};
use std::path::Path;

pub const DEFAULT_MAX_POINTS: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    Metrics,
    Trajectory,
}

#[derive(Debug)]
pub struct PlotInput {
    pub kind: PlotKind,
    pub x_name: String,
    pub y_name: String,
    /// Raw field strings in input order.
    pub rows: Vec<(String, String)>,
}

/// Loads a CSV and decides which of the two schemas it is. Metrics logs are
/// recognized by their `iteration` lead column, trajectories by `step`.
pub fn load_plot_input(path: &Path) -> Result<PlotInput> {
    let (header, rows) = read_csv(path)?;
    let col = |name: &str| header.iter().position(|h| h == name);

    let (kind, x_name, y_name) = if header.first().map(String::as_str) == Some("iteration") {
        ("metrics", "env_steps", "mean_episodic_return")
    } else if header.first().map(String::as_str) == Some("step") {
        ("trajectory", "step", "distance_ratio")
    } else {
        return Err(Error::PlotInput(format!(
            "{}: not a metrics log (missing column iteration) and not a trajectory \
             (missing column step)",
            path.display()
        )));
    };

    let missing = |name: &str| {
        Error::PlotInput(format!(
            "{}: {kind} file is missing column {name}",
            path.display()
        ))
    };
    let xi = col(x_name).ok_or_else(|| missing(x_name))?;
    let yi = col(y_name).ok_or_else(|| missing(y_name))?;

    let mut pairs = Vec::with_capacity(rows.len());
    for r in &rows {
        if r.len() <= xi.max(yi) {
            return Err(Error::PlotInput(format!(
                "{}: row has {} fields, header has {}",
                path.display(),
                r.len(),
                header.len()
            )));
        }
        pairs.push((r[xi].clone(), r[yi].clone()));
    }
    if pairs.is_empty() {
        return Err(Error::PlotInput(format!("{}: no data rows", path.display())));
    }
    Ok(PlotInput {
        kind: if kind == "metrics" { PlotKind::Metrics } else { PlotKind::Trajectory },
        x_name: x_name.to_string(),
        y_name: y_name.to_string(),
        rows: pairs,
    })
}

/// Strictly increasing row indices, at most `max_points`, always keeping the
/// first and last row so curve endpoints survive downsampling.
pub fn downsample_indices(n: usize, max_points: usize) -> Vec<usize> {
    assert!(max_points >= 2, "need at least the two endpoints");
    if n <= max_points {
        return (0..n).collect();
    }
    let mut idx: Vec<usize> = (0..max_points)
        .map(|k| (k as f64 * (n - 1) as f64 / (max_points - 1) as f64).round() as usize)
        .collect();
    idx.dedup();
    idx
}

pub struct PlotArtifacts {
    pub svg: String,
    pub plot_data_csv: String,
}

pub fn render(input: &PlotInput, max_points: usize) -> Result<PlotArtifacts> {
    let keep = downsample_indices(input.rows.len(), max_points);
    let sampled: Vec<&(String, String)> = keep.iter().map(|&i| &input.rows[i]).collect();

    let mut csv = String::from("# quadnav-plot-data v1\n");
    csv.push_str(&format!("{},{}\n", input.x_name, input.y_name));
    for (x, y) in &sampled {
        csv.push_str(&format!("{x},{y}\n"));
    }

    let mut points = Vec::with_capacity(sampled.len());
    for (x, y) in &sampled {
        let xv: f64 = x
            .parse()
            .map_err(|_| Error::PlotInput(format!("non-numeric {} value: {x}", input.x_name)))?;
        let yv: f64 = y
            .parse()
            .map_err(|_| Error::PlotInput(format!("non-numeric {} value: {y}", input.y_name)))?;
        if xv.is_finite() && yv.is_finite() {
            points.push((xv, yv));
        }
    }
    if points.is_empty() {
        return Err(Error::PlotInput("no finite data points to plot".into()));
    }

    let (title, x_label, y_label) = match input.kind {
        PlotKind::Metrics => (
            "Training reward curve",
            "environment steps",
            "mean episodic return",
        ),
        PlotKind::Trajectory => (
            "Normalized distance to goal",
            "control step",
            "distance / initial distance",
        ),
    };
    Ok(PlotArtifacts { svg: render_svg(&points, title, x_label, y_label), plot_data_csv: csv })
}

/// Loads, downsamples and writes both artifacts. `svg_path` gets the chart;
/// the plot-data CSV lands next to it with a `.csv` extension.
pub fn plot_file(input_path: &Path, svg_path: &Path, max_points: usize) -> Result<()> {
    let input = load_plot_input(input_path)?;
    let art = render(&input, max_points)?;
    let data_path = svg_path.with_extension("csv");
    if paths_collide(input_path, &data_path) {
        return Err(Error::PlotInput(format!(
            "plot-data output {} would overwrite the input; pick a different output name",
            data_path.display()
        )));
    }
    crate::checkpoint::write_atomic(svg_path, art.svg.as_bytes())?;
    crate::checkpoint::write_atomic(&data_path, art.plot_data_csv.as_bytes())?;
    Ok(())
}

fn paths_collide(existing: &Path, candidate: &Path) -> bool {
    let a = existing.canonicalize();
    let parent = if candidate.parent().map_or(true, |p| p.as_os_str().is_empty()) {
        Path::new(".").canonicalize()
    } else {
        candidate.parent().unwrap().canonicalize()
    };
    match (a, parent, candidate.file_name()) {
        (Ok(a), Ok(dir), Some(name)) => a == dir.join(name),
        _ => false,
    }
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 25.0;
const MARGIN_T: f64 = 45.0;
const MARGIN_B: f64 = 60.0;

fn render_svg(points: &[(f64, f64)], title: &str, x_label: &str, y_label: &str) -> String {
    let (mut x_min, mut x_max) = min_max(points.iter().map(|p| p.0));
    let (mut y_min, mut y_max) = min_max(points.iter().map(|p| p.1));
    pad_range(&mut x_min, &mut x_max);
    pad_range(&mut y_min, &mut y_max);

    let sx = |x: f64| MARGIN_L + (x - x_min) / (x_max - x_min) * (WIDTH - MARGIN_L - MARGIN_R);
    let sy = |y: f64| HEIGHT - MARGIN_B - (y - y_min) / (y_max - y_min) * (HEIGHT - MARGIN_T - MARGIN_B);

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         font-family=\"sans-serif\" font-size=\"13\">\n"
    ));
    s.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{title}</text>\n",
        WIDTH / 2.0
    ));

    // Axes.
    let x0 = sx(x_min);
    let x1 = sx(x_max);
    let y0 = sy(y_min);
    let y1 = sy(y_max);
    s.push_str(&format!(
        "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y0:.2}\" stroke=\"black\"/>\n"
    ));
    s.push_str(&format!(
        "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x0:.2}\" y2=\"{y1:.2}\" stroke=\"black\"/>\n"
    ));

    // Ticks with value labels.
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let xv = x_min + t * (x_max - x_min);
        let yv = y_min + t * (y_max - y_min);
        let xp = sx(xv);
        let yp = sy(yv);
        s.push_str(&format!(
            "<line x1=\"{xp:.2}\" y1=\"{y0:.2}\" x2=\"{xp:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
            y0 + 5.0
        ));
        s.push_str(&format!(
            "<text x=\"{xp:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
            y0 + 20.0,
            format_tick(xv)
        ));
        s.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{yp:.2}\" x2=\"{x0:.2}\" y2=\"{yp:.2}\" stroke=\"black\"/>\n",
            x0 - 5.0
        ));
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>\n",
            x0 - 9.0,
            yp + 4.0,
            format_tick(yv)
        ));
    }

    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>\n",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 14.0
    ));
    s.push_str(&format!(
        "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{y_label}</text>\n",
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0
    ));

    let coords: Vec<String> =
        points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
    s.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"1.5\"/>\n",
        coords.join(" ")
    ));
    if points.len() == 1 {
        let (x, y) = points[0];
        s.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#1f6fb2\"/>\n",
            sx(x),
            sy(y)
        ));
    }
    s.push_str("</svg>\n");
    s
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Widens degenerate ranges so the scale transform stays finite.
fn pad_range(lo: &mut f64, hi: &mut f64) {
    if lo == hi {
        let pad = lo.abs().max(1.0) * 0.05;
        *lo -= pad;
        *hi += pad;
    }
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (0.001..10000.0).contains(&a) {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        format!("{v:.2e}")
    }
}
