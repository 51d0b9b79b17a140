//! Deterministic SVG line charts from CSV columns.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{write_atomic, CsvTable};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlotOptions {
    pub log_x: bool,
    pub log_y: bool,
    /// Columns drawn against a right-hand axis (never log scaled).
    pub secondary: Vec<String>,
    pub title: Option<String>,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 70.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

struct Series {
    name: String,
    points: Vec<(f64, f64)>,
    secondary: bool,
}

fn column(table: &CsvTable, name: &str) -> Result<Vec<Option<f64>>> {
    if table.column_index(name).is_none() {
        return Err(Error::invalid(format!(
            "unknown column `{name}`; available: {}",
            table.header.join(", ")
        )));
    }
    table.numeric_column(name).map_err(Error::invalid)
}

fn transform(v: f64, log: bool) -> Option<f64> {
    if !v.is_finite() {
        None
    } else if log {
        (v > 0.0).then(|| v.log10())
    } else {
        Some(v)
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn tick_label(v: f64, log: bool) -> String {
    let v = if log { 10f64.powf(v) } else { v };
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

/// Renders `ys` against `x`. Rows with a missing or (on log axes)
/// nonpositive value are skipped. Each series becomes one `<polyline>`.
pub fn render_svg(table: &CsvTable, x: &str, ys: &[String], opts: &PlotOptions) -> Result<String> {
    if ys.is_empty() {
        return Err(Error::invalid("plot needs at least one y column"));
    }
    for s in &opts.secondary {
        if !ys.contains(s) {
            return Err(Error::invalid(format!("secondary column `{s}` is not among the y columns")));
        }
    }
    let xs = column(table, x)?;
    let mut series = Vec::new();
    for name in ys {
        let secondary = opts.secondary.contains(name);
        let log_y = opts.log_y && !secondary;
        let col = column(table, name)?;
        let points = xs
            .iter()
            .zip(&col)
            .filter_map(|(a, b)| Some((transform((*a)?, opts.log_x)?, transform((*b)?, log_y)?)))
            .collect();
        series.push(Series {
            name: name.clone(),
            points,
            secondary,
        });
    }

    let all = || series.iter().flat_map(|s| s.points.iter());
    let (x0, x1) = range(all().map(|p| p.0));
    let (y0, y1) = range(series.iter().filter(|s| !s.secondary).flat_map(|s| s.points.iter().map(|p| p.1)));
    let (z0, z1) = range(series.iter().filter(|s| s.secondary).flat_map(|s| s.points.iter().map(|p| p.1)));
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |v: f64| MARGIN_L + (v - x0) / (x1 - x0) * pw;
    let sy = |v: f64, lo: f64, hi: f64| MARGIN_T + ph - (v - lo) / (hi - lo) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    if let Some(t) = &opts.title {
        let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(t));
    }
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let px = sx(xv);
        let _ = writeln!(
            s,
            r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            MARGIN_T + ph + 16.0,
            tick_label(xv, opts.log_x)
        );
        let yv = y0 + f * (y1 - y0);
        let py = sy(yv, y0, y1);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{py:.2}" text-anchor="end">{}</text>"#,
            MARGIN_L - 6.0,
            tick_label(yv, opts.log_y)
        );
        if !opts.secondary.is_empty() {
            let zv = z0 + f * (z1 - z0);
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="start">{}</text>"#,
                MARGIN_L + pw + 6.0,
                sy(zv, z0, z1),
                tick_label(zv, false)
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        MARGIN_L + pw / 2.0,
        HEIGHT - 10.0,
        escape(x)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let (lo, hi) = if ser.secondary { (z0, z1) } else { (y0, y1) };
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|&(a, b)| format!("{:.2},{:.2}", sx(a), sy(b, lo, hi)))
            .collect();
        let dash = if ser.secondary { r#" stroke-dasharray="6,3""# } else { "" };
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
            pts.join(" ")
        );
        let label = if ser.secondary { format!("{} (right axis)", ser.name) } else { ser.name.clone() };
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" fill="{color}">{}</text>"#,
            MARGIN_L + 8.0,
            MARGIN_T + 14.0 + 14.0 * i as f64,
            escape(&label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn plot_csv(csv: &Path, x: &str, ys: &[String], out: &Path, opts: &PlotOptions) -> Result<()> {
    let table = CsvTable::read(csv)?;
    let svg = render_svg(&table, x, ys, opts)?;
    write_atomic(out, svg.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> CsvTable {
        CsvTable::parse(text).unwrap()
    }

    #[test]
    fn two_points_one_polyline() {
        let t = table("x,y\n0,1\n1,2\n");
        let svg = render_svg(&t, "x", &["y".into()], &PlotOptions::default()).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
    }

    #[test]
    fn deterministic() {
        let t = table("epoch,a,b\n1,0.5,3\n2,0.25,\n3,0.125,4\n");
        let opts = PlotOptions {
            log_y: true,
            secondary: vec!["b".into()],
            ..PlotOptions::default()
        };
        let ys = vec!["a".to_string(), "b".to_string()];
        let s1 = render_svg(&t, "epoch", &ys, &opts).unwrap();
        let s2 = render_svg(&t, "epoch", &ys, &opts).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.matches("<polyline").count(), 2);
    }

    #[test]
    fn unknown_column() {
        let t = table("x,y\n0,1\n");
        assert!(render_svg(&t, "x", &["z".into()], &PlotOptions::default()).is_err());
        assert!(render_svg(&t, "w", &["y".into()], &PlotOptions::default()).is_err());
    }

    #[test]
    fn log_axis_drops_nonpositive() {
        let t = table("x,y\n0,1\n1,10\n2,100\n");
        let opts = PlotOptions {
            log_x: true,
            ..PlotOptions::default()
        };
        let svg = render_svg(&t, "x", &["y".into()], &opts).unwrap();
        let line = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        assert_eq!(line.matches(',').count(), 2);
    }
}
