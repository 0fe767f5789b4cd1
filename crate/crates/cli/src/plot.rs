//! Static SVG line charts of run metrics.
//!
//! `return` plots evaluation return against environment steps, one mean
//! line per configuration with a shaded band of plus/minus one population
//! standard deviation across seeds. Seeds of a configuration are aligned by
//! evaluation index, truncated to the run with the fewest evaluations, and
//! placed at the mean step count of that index. `selected_d` plots the
//! sight range used by every episode of every run.
//!
//! Each plotted series carries its exact values in a `data-values`
//! attribute so a chart can be checked against the CSVs it came from.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use crate::run;
use crate::sweep::mean_std;
use crate::CliResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Return,
    SelectedD,
}

impl std::str::FromStr for PlotKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "return" => Ok(PlotKind::Return),
            "selected_d" => Ok(PlotKind::SelectedD),
            other => Err(format!("unknown plot kind {other:?} (expected return or selected_d)")),
        }
    }
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];
const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

/// One line of a chart, optionally with a band.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub band: Option<(Vec<f64>, Vec<f64>)>,
}

/// Run directories grouped by configuration, in first-seen order.
fn group_runs(dirs: &[PathBuf]) -> anyhow::Result<Vec<(String, Vec<PathBuf>)>> {
    let mut groups: Vec<(String, String, Vec<PathBuf>)> = Vec::new();
    for dir in dirs {
        let (key, label) = match run::read_manifest(dir) {
            Ok(m) => (m.config_hash, m.label),
            Err(_) => {
                let name = dir.display().to_string();
                (name.clone(), name)
            }
        };
        match groups.iter_mut().find(|g| g.0 == key) {
            Some(g) => g.2.push(dir.clone()),
            None => groups.push((key, label, vec![dir.clone()])),
        }
    }
    Ok(groups.into_iter().map(|(_, l, d)| (l, d)).collect())
}

/// Mean evaluation curve and band of every configuration among `dirs`.
pub fn return_series(dirs: &[PathBuf]) -> anyhow::Result<Vec<Series>> {
    let mut out = Vec::new();
    for (label, runs) in group_runs(dirs)? {
        let mut curves = Vec::new();
        for dir in &runs {
            let pts = run::read_metrics(dir)?.eval_points();
            if pts.is_empty() {
                bail!("{}: no evaluation rows", dir.join(run::METRICS_FILE).display());
            }
            curves.push(pts);
        }
        let len = curves.iter().map(Vec::len).min().expect("non-empty group");
        let (mut x, mut y, mut lo, mut hi) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for i in 0..len {
            let steps: Vec<f64> = curves.iter().map(|c| c[i].0 as f64).collect();
            let vals: Vec<f64> = curves.iter().map(|c| c[i].1).collect();
            let (m, s) = mean_std(&vals).expect("non-empty");
            x.push(mean_std(&steps).expect("non-empty").0);
            y.push(m);
            lo.push(m - s);
            hi.push(m + s);
        }
        out.push(Series {
            label,
            x,
            y,
            band: Some((lo, hi)),
        });
    }
    Ok(out)
}

/// Selected sight range per episode, one series per run.
pub fn selected_d_series(dirs: &[PathBuf]) -> anyhow::Result<Vec<Series>> {
    dirs.iter()
        .map(|dir| {
            let t = run::read_metrics(dir)?;
            Ok(Series {
                label: dir.display().to_string(),
                x: t.rows.iter().map(|r| r.episode as f64).collect(),
                y: t.rows.iter().map(|r| r.selected_d as f64).collect(),
                band: None,
            })
        })
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Tick positions covering `[lo, hi]` at a 1/2/5 step.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

fn tick_label(v: f64) -> String {
    let r = (v * 1e6).round() / 1e6;
    if r.abs() >= 1e4 {
        format!("{:.0}", r)
    } else {
        r.to_string()
    }
}

/// Renders `series` as a standalone SVG document.
pub fn render(series: &[Series], title: &str, x_label: &str, y_label: &str) -> String {
    let all_x = series.iter().flat_map(|s| s.x.iter().copied());
    let all_y = series.iter().flat_map(|s| {
        let band = s.band.iter().flat_map(|(lo, hi)| lo.iter().chain(hi.iter()).copied());
        s.y.iter().copied().chain(band)
    });
    let (mut x0, mut x1) = all_x.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (mut y0, mut y1) = all_y.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    y0 = y0.min(0.0);
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |v: f64| LEFT + (v - x0) / (x1 - x0) * pw;
    let sy = |v: f64| TOP + ph - (v - y0) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(svg, r#"<g class="axes" stroke="black" fill="none">"#);
    let _ = writeln!(svg, r#"<line x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#, TOP + ph, LEFT + pw, TOP + ph);
    let _ = writeln!(svg, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.2}"/>"#, TOP + ph);
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, r#"<g class="ticks" font-size="11">"#);
    for t in ticks(x0, x1) {
        let x = sx(t);
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 18.0,
            tick_label(t)
        );
    }
    for t in ticks(y0, y1) {
        let y = sy(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0,
            tick_label(t)
        );
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(y_label)
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let label = escape(&s.label);
        let _ = writeln!(svg, r#"<g class="series" data-label="{label}">"#);
        if let Some((lo, hi)) = &s.band {
            let mut d = String::new();
            for (k, (x, v)) in s.x.iter().zip(hi).enumerate() {
                let _ = write!(d, "{}{:.2},{:.2} ", if k == 0 { "M" } else { "L" }, sx(*x), sy(*v));
            }
            for (x, v) in s.x.iter().zip(lo).rev() {
                let _ = write!(d, "L{:.2},{:.2} ", sx(*x), sy(*v));
            }
            d.push('Z');
            let _ = writeln!(
                svg,
                r#"<path class="band" d="{d}" fill="{color}" fill-opacity="0.2" stroke="none" data-lower="{}" data-upper="{}"/>"#,
                join(lo),
                join(hi)
            );
        }
        let points: Vec<String> = s.x.iter().zip(&s.y).map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="line" fill="none" stroke="{color}" stroke-width="1.5" data-x="{}" data-values="{}" points="{}"/>"#,
            join(&s.x),
            join(&s.y),
            points.join(" ")
        );
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 15.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="3"/><text x="{:.2}" y="{:.2}">{label}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0
        );
        let _ = writeln!(svg, "</g>");
    }
    svg.push_str("</svg>\n");
    svg
}

/// `dsr plot`: reads every run directory and writes the chart to `out`.
pub fn cmd_plot(dirs: &[PathBuf], kind: PlotKind, out: &Path) -> CliResult<()> {
    if dirs.is_empty() {
        return Err(anyhow::anyhow!("no run directories given").into());
    }
    let svg = match kind {
        PlotKind::Return => render(&return_series(dirs)?, "Evaluation return", "environment steps", "mean eval return"),
        PlotKind::SelectedD => render(&selected_d_series(dirs)?, "Selected sight range", "episode", "sight range d"),
    };
    std::fs::write(out, svg).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}
