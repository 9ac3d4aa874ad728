//! Self-contained SVG figures: grids of line panels and a score scatter.

use std::fmt::Write;

use crate::compdata::FunctionalComposition;

/// Tableau 10.
pub const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
    "#17becf",
];
pub const MEAN_COLOR: &str = "#000000";
pub const PLUS_COLOR: &str = "#d62728";
pub const MINUS_COLOR: &str = "#1f77b4";
pub const SAMPLE_COLOR: &str = "#9a9a9a";

const PANEL_W: f64 = 260.0;
const PANEL_H: f64 = 190.0;
const MARGIN_L: f64 = 52.0;
const MARGIN_R: f64 = 12.0;
const MARGIN_T: f64 = 26.0;
const MARGIN_B: f64 = 30.0;
const TITLE_H: f64 = 34.0;

#[derive(Debug, Clone)]
pub struct Series {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub color: String,
    pub width: f64,
    pub dashed: bool,
    pub opacity: f64,
}

impl Series {
    pub fn line(x: Vec<f64>, y: Vec<f64>, color: &str) -> Self {
        Self { x, y, color: color.to_string(), width: 1.5, dashed: false, opacity: 1.0 }
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }

    pub fn width(mut self, w: f64) -> Self {
        self.width = w;
        self
    }

    pub fn opacity(mut self, o: f64) -> Self {
        self.opacity = o;
        self
    }
}

#[derive(Debug, Clone)]
pub struct Panel {
    pub title: String,
    pub series: Vec<Series>,
}

/// Round tick positions covering `[lo, hi]`.
pub fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
        return vec![lo];
    }
    let raw = (hi - lo) / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    let v = if v.abs() < 1e-12 { 0.0 } else { v };
    let s = format!("{:.4}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 0.0 { lo.abs() * 0.05 } else { 0.5 };
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Frame {
    x0: f64,
    y0: f64,
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let w = PANEL_W - MARGIN_L - MARGIN_R;
        self.x0 + MARGIN_L + (x - self.xr.0) / (self.xr.1 - self.xr.0) * w
    }

    fn py(&self, y: f64) -> f64 {
        let h = PANEL_H - MARGIN_T - MARGIN_B;
        self.y0 + MARGIN_T + h - (y - self.yr.0) / (self.yr.1 - self.yr.0) * h
    }

    fn axes(&self, svg: &mut String, title: &str, integer_x: bool) {
        let (l, r) = (self.x0 + MARGIN_L, self.x0 + PANEL_W - MARGIN_R);
        let (t, b) = (self.y0 + MARGIN_T, self.y0 + PANEL_H - MARGIN_B);
        let _ = writeln!(
            svg,
            r##"<rect x="{l:.2}" y="{t:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444" stroke-width="0.8"/>"##,
            r - l,
            b - t
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle" font-weight="bold">{}</text>"#,
            (l + r) / 2.0,
            self.y0 + 16.0,
            escape(title)
        );
        for v in nice_ticks(self.xr.0, self.xr.1, 4) {
            let x = self.px(v);
            let label = if integer_x { format!("{}", v.round() as i64) } else { fmt_tick(v) };
            let _ = writeln!(
                svg,
                r##"<line x1="{x:.2}" y1="{b:.2}" x2="{x:.2}" y2="{:.2}" stroke="#444" stroke-width="0.8"/><text x="{x:.2}" y="{:.2}" font-size="9" text-anchor="middle">{label}</text>"##,
                b + 3.0,
                b + 13.0
            );
        }
        for v in nice_ticks(self.yr.0, self.yr.1, 4) {
            let y = self.py(v);
            let _ = writeln!(
                svg,
                r##"<line x1="{:.2}" y1="{y:.2}" x2="{l:.2}" y2="{y:.2}" stroke="#444" stroke-width="0.8"/><text x="{:.2}" y="{:.2}" font-size="9" text-anchor="end">{}</text>"##,
                l - 3.0,
                l - 5.0,
                y + 3.0,
                fmt_tick(v)
            );
        }
    }
}

fn header(width: f64, height: f64, title: &str) -> String {
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="Helvetica, Arial, sans-serif">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="22" font-size="15" text-anchor="middle">{}</text>"#,
        width / 2.0,
        escape(title)
    );
    svg
}

/// Panels laid out row by row, `ncols` per row.
pub fn panel_grid(title: &str, panels: &[Panel], ncols: usize, legend: &[(String, String)]) -> String {
    let ncols = ncols.max(1);
    let nrows = panels.len().div_ceil(ncols).max(1);
    let legend_h = if legend.is_empty() { 0.0 } else { 22.0 };
    let width = PANEL_W * ncols as f64;
    let height = TITLE_H + legend_h + PANEL_H * nrows as f64;
    let mut svg = header(width, height, title);
    let mut lx = 20.0;
    for (label, color) in legend {
        let y = TITLE_H + 10.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2.5"/><text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
            lx + 18.0,
            lx + 22.0,
            y + 4.0,
            escape(label)
        );
        lx += 34.0 + 7.0 * label.len() as f64;
    }
    for (p, panel) in panels.iter().enumerate() {
        let xs = || panel.series.iter().flat_map(|s| s.x.iter().copied());
        let (xmin, xmax) = xs().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let xr = if xmin < xmax { (xmin, xmax) } else { range(xs()) };
        let frame = Frame {
            x0: PANEL_W * (p % ncols) as f64,
            y0: TITLE_H + legend_h + PANEL_H * (p / ncols) as f64,
            xr,
            yr: range(panel.series.iter().flat_map(|s| s.y.iter().copied())),
        };
        let integer_x = panel.series.iter().all(|s| s.x.iter().all(|x| x.fract() == 0.0));
        frame.axes(&mut svg, &panel.title, integer_x);
        for s in &panel.series {
            let pts: Vec<String> =
                s.x.iter()
                    .zip(&s.y)
                    .map(|(&x, &y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
                    .collect();
            let dash = if s.dashed { r#" stroke-dasharray="5,3""# } else { "" };
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="{}" stroke-opacity="{}"{dash}/>"#,
                pts.join(" "),
                s.color,
                s.width,
                s.opacity
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn part_series(f: &FunctionalComposition, d: usize, color: &str) -> Series {
    Series::line(f.grid().points().to_vec(), f.parts().row(d).iter().copied().collect(), color)
}

/// One panel per part: the mean with the `+` and `-` envelopes of a component.
pub fn component_figure(
    title: &str,
    mean: &FunctionalComposition,
    plus: &FunctionalComposition,
    minus: &FunctionalComposition,
) -> String {
    let panels: Vec<Panel> = (0..mean.n_parts())
        .map(|d| Panel {
            title: mean.part_names()[d].clone(),
            series: vec![
                part_series(mean, d, MEAN_COLOR).width(2.0),
                part_series(plus, d, PLUS_COLOR),
                part_series(minus, d, MINUS_COLOR).dashed(),
            ],
        })
        .collect();
    let legend = vec![
        ("mean".to_string(), MEAN_COLOR.to_string()),
        ("+".to_string(), PLUS_COLOR.to_string()),
        ("-".to_string(), MINUS_COLOR.to_string()),
    ];
    panel_grid(title, &panels, 4, &legend)
}

/// One panel per part: every curve in grey and the mean in black.
pub fn spaghetti_figure(
    title: &str,
    sample: &[FunctionalComposition],
    mean: &FunctionalComposition,
) -> String {
    let panels: Vec<Panel> = (0..mean.n_parts())
        .map(|d| {
            let mut series: Vec<Series> =
                sample.iter().map(|f| part_series(f, d, SAMPLE_COLOR).width(1.0).opacity(0.6)).collect();
            series.push(part_series(mean, d, MEAN_COLOR).width(2.2));
            Panel { title: mean.part_names()[d].clone(), series }
        })
        .collect();
    panel_grid(title, &panels, 4, &[("mean".to_string(), MEAN_COLOR.to_string())])
}

/// One panel per part with one line per cluster centroid.
pub fn centroid_figure(title: &str, centroids: &[FunctionalComposition]) -> String {
    let Some(first) = centroids.first() else {
        return panel_grid(title, &[], 1, &[]);
    };
    let panels: Vec<Panel> = (0..first.n_parts())
        .map(|d| Panel {
            title: first.part_names()[d].clone(),
            series: centroids
                .iter()
                .enumerate()
                .map(|(g, f)| part_series(f, d, PALETTE[g % PALETTE.len()]).width(1.8))
                .collect(),
        })
        .collect();
    let legend: Vec<(String, String)> = centroids
        .iter()
        .enumerate()
        .map(|(g, _)| (format!("cluster {}", g + 1), PALETTE[g % PALETTE.len()].to_string()))
        .collect();
    panel_grid(title, &panels, 4, &legend)
}

/// Labelled points coloured by cluster (0-based labels).
pub fn score_scatter(
    title: &str,
    x_label: &str,
    y_label: &str,
    ids: &[String],
    x: &[f64],
    y: &[f64],
    labels: &[usize],
) -> String {
    let (w, h) = (560.0, 480.0);
    let (l, r, t, b) = (60.0, w - 20.0, 40.0, h - 50.0);
    let mut svg = header(w, h, title);
    let xr = range(x.iter().copied());
    let yr = range(y.iter().copied());
    let px = |v: f64| l + (v - xr.0) / (xr.1 - xr.0) * (r - l);
    let py = |v: f64| b - (v - yr.0) / (yr.1 - yr.0) * (b - t);
    let _ = writeln!(
        svg,
        r##"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        r - l,
        b - t
    );
    for v in nice_ticks(xr.0, xr.1, 6) {
        let _ = writeln!(
            svg,
            r##"<line x1="{0:.2}" y1="{b}" x2="{0:.2}" y2="{1}" stroke="#444"/><text x="{0:.2}" y="{2}" font-size="10" text-anchor="middle">{3}</text>"##,
            px(v),
            b + 4.0,
            b + 16.0,
            fmt_tick(v)
        );
    }
    for v in nice_ticks(yr.0, yr.1, 6) {
        let _ = writeln!(
            svg,
            r##"<line x1="{0}" y1="{1:.2}" x2="{l}" y2="{1:.2}" stroke="#444"/><text x="{2}" y="{3:.2}" font-size="10" text-anchor="end">{4}</text>"##,
            l - 4.0,
            py(v),
            l - 6.0,
            py(v) + 3.0,
            fmt_tick(v)
        );
    }
    if xr.0 < 0.0 && xr.1 > 0.0 {
        let _ = writeln!(
            svg,
            r##"<line x1="{0:.2}" y1="{t}" x2="{0:.2}" y2="{b}" stroke="#bbb" stroke-dasharray="3,3"/>"##,
            px(0.0)
        );
    }
    if yr.0 < 0.0 && yr.1 > 0.0 {
        let _ = writeln!(
            svg,
            r##"<line x1="{l}" y1="{0:.2}" x2="{r}" y2="{0:.2}" stroke="#bbb" stroke-dasharray="3,3"/>"##,
            py(0.0)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
        (l + r) / 2.0,
        h - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{0:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {0:.2})">{1}</text>"#,
        (t + b) / 2.0,
        escape(y_label)
    );
    for i in 0..x.len().min(y.len()) {
        let color = PALETTE[labels.get(i).copied().unwrap_or(0) % PALETTE.len()];
        let (cx, cy) = (px(x[i]), py(y[i]));
        let _ = writeln!(
            svg,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="4.5" fill="{color}"/><text x="{:.2}" y="{:.2}" font-size="10">{}</text>"#,
            cx + 6.0,
            cy - 4.0,
            escape(ids.get(i).map_or("", String::as_str))
        );
    }
    svg.push_str("</svg>\n");
    svg
}
