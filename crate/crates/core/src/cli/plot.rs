//! Self-contained SVG plots of gap trajectories on a log scale.

use std::fmt::Write;

use super::format::CSV_HEADER;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;

/// Gap traces parsed from a trajectory CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    /// `(n, gap)` points per trial, in file order.
    pub trials: Vec<Vec<(f64, f64)>>,
    /// Envelope column values of the first trial, if present.
    pub envelope: Option<Vec<(f64, f64)>>,
}

pub fn parse_csv(text: &str) -> Result<PlotData, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or("empty CSV")?;
    let columns: Vec<&str> = header.split(',').collect();
    let expected: Vec<&str> = CSV_HEADER.split(',').collect();
    if columns.len() < expected.len() || columns[..expected.len()] != expected[..] {
        return Err(format!("unexpected header {header:?}"));
    }
    let envelope_col = columns.iter().position(|&c| c == "envelope");
    let mut trials: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut envelope = envelope_col.map(|_| Vec::new());
    let mut trial_ids: Vec<u64> = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(format!("row {row}: expected {} fields, got {}", columns.len(), fields.len()));
        }
        let num = |j: usize| -> Result<f64, String> {
            fields[j]
                .trim()
                .parse::<f64>()
                .map_err(|_| format!("row {row}: {} = {:?} is not a number", columns[j], fields[j]))
        };
        let trial: u64 = fields[0].trim().parse().map_err(|_| format!("row {row}: bad trial id"))?;
        let (n, gap) = (num(1)?, num(3)?);
        let slot = match trial_ids.iter().position(|&t| t == trial) {
            Some(s) => s,
            None => {
                trial_ids.push(trial);
                trials.push(Vec::new());
                trials.len() - 1
            }
        };
        trials[slot].push((n, gap));
        if let (Some(col), Some(env)) = (envelope_col, envelope.as_mut()) {
            if slot == 0 {
                env.push((n, num(col)?));
            }
        }
    }
    if trials.is_empty() {
        return Err("CSV has no data rows".into());
    }
    Ok(PlotData { trials, envelope })
}

fn mean_trace(trials: &[Vec<(f64, f64)>]) -> Vec<(f64, f64)> {
    let len = trials.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|i| {
            let mean = trials.iter().map(|t| t[i].1).sum::<f64>() / trials.len() as f64;
            (trials[0][i].0, mean)
        })
        .collect()
}

struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    floor: f64,
}

impl Axes {
    fn point(&self, (n, g): (f64, f64)) -> (f64, f64) {
        let lg = g.max(self.floor).log10();
        let px = LEFT + (n - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT);
        let py = TOP + (self.y1 - lg) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM);
        (px, py)
    }

    fn points(&self, trace: &[(f64, f64)]) -> String {
        let mut s = String::new();
        for &p in trace {
            let (x, y) = self.point(p);
            let _ = write!(s, "{x:.2},{y:.2} ");
        }
        s.trim_end().to_string()
    }
}

/// Renders per-trial traces (thin), their mean (thick), and the envelope
/// (dashed). Gaps at or below zero are drawn at the smallest positive value.
pub fn render_svg(data: &PlotData) -> String {
    let mean = mean_trace(&data.trials);
    let all = data
        .trials
        .iter()
        .flatten()
        .chain(data.envelope.iter().flatten())
        .copied()
        .collect::<Vec<_>>();
    let positive = all.iter().map(|p| p.1).filter(|&g| g > 0.0 && g.is_finite());
    let min = positive.clone().fold(f64::INFINITY, f64::min);
    let max = positive.fold(f64::NEG_INFINITY, f64::max);
    let (min, max) = if min.is_finite() { (min, max) } else { (1e-16, 1.0) };
    let y0 = min.log10().floor();
    let y1 = max.log10().ceil().max(y0 + 1.0);
    let x0 = all.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let x1 = all.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let x1 = if x1 > x0 { x1 } else { x0 + 1.0 };
    let axes = Axes {
        x0,
        x1,
        y0,
        y1,
        floor: min,
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let (bx, by) = (LEFT, HEIGHT - BOTTOM);
    let _ = writeln!(
        svg,
        r#"<g class="axes" stroke="black"><line x1="{bx}" y1="{by}" x2="{}" y2="{by}"/><line x1="{bx}" y1="{TOP}" x2="{bx}" y2="{by}"/></g>"#,
        WIDTH - RIGHT
    );
    for decade in (y0 as i32)..=(y1 as i32) {
        let (_, y) = axes.point((x0, 10f64.powi(decade)));
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{y:.2}" x2="{bx}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">1e{decade}</text>"#,
            bx - 5.0,
            bx - 8.0,
            y + 4.0
        );
    }
    for i in 0..=4 {
        let n = x0 + (x1 - x0) * i as f64 / 4.0;
        let (x, _) = axes.point((n, min));
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{by}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#,
            by + 5.0,
            by + 20.0,
            n.round()
        );
    }
    let _ = writeln!(
        svg,
        r#"<text class="xlabel" x="{}" y="{}" text-anchor="middle">update n</text>"#,
        LEFT + (WIDTH - LEFT - RIGHT) / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text class="ylabel" x="20" y="{}" text-anchor="middle" transform="rotate(-90 20 {})">gap (log scale)</text>"#,
        TOP + (HEIGHT - TOP - BOTTOM) / 2.0,
        TOP + (HEIGHT - TOP - BOTTOM) / 2.0
    );
    for trace in &data.trials {
        let _ = writeln!(
            svg,
            r##"<polyline class="trial" fill="none" stroke="#4878a8" stroke-opacity="0.35" stroke-width="0.7" points="{}"/>"##,
            axes.points(trace)
        );
    }
    let _ = writeln!(
        svg,
        r##"<polyline class="mean" fill="none" stroke="#c03020" stroke-width="2.5" points="{}"/>"##,
        axes.points(&mean)
    );
    if let Some(env) = &data.envelope {
        let mut d = String::new();
        for (i, &p) in env.iter().enumerate() {
            let (x, y) = axes.point(p);
            let _ = write!(d, "{}{x:.2},{y:.2} ", if i == 0 { "M" } else { "L" });
        }
        let _ = writeln!(
            svg,
            r#"<path class="envelope" fill="none" stroke="black" stroke-width="1.5" stroke-dasharray="6 4" d="{}"/>"#,
            d.trim_end()
        );
    }
    svg.push_str("</svg>\n");
    svg
}
