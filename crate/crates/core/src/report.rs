//! Static SVG plots with CSV twins, and the alignment table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::alignment::{format_delta, AlignmentScore, AmceVector};
use crate::analysis::TrajectoryRow;
use crate::error::{Error, Result};
use crate::scenario::Dimension;

const PALETTE: [&str; 8] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
];

/// An SVG document and the data behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Plot {
    pub svg: String,
    pub csv: String,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn svg_open(w: f64, h: f64, title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"11\">\n<title>{}</title>\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        esc(title)
    )
}

/// Radar chart: one spoke per dimension, one closed polyline per vector.
pub fn radar(vectors: &[(String, AmceVector)], title: &str) -> Result<Plot> {
    if vectors.is_empty() {
        return Err(Error::Empty("AMCE vectors"));
    }
    for (_, v) in vectors {
        v.check()?;
    }
    let all = vectors.iter().flat_map(|(_, v)| v.delta.iter().copied());
    let (lo, hi) = all.fold((0.0f64, 0.0f64), |(lo, hi), x| (lo.min(x), hi.max(x)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (cx, cy, r) = (260.0, 250.0, 170.0);
    let radius = |v: f64| 20.0 + (r - 20.0) * (v - lo) / span;
    let angle = |i: usize| -std::f64::consts::FRAC_PI_2 + i as f64 * std::f64::consts::TAU / 9.0;
    let point = |i: usize, v: f64| {
        let (a, rr) = (angle(i), radius(v));
        (cx + rr * a.cos(), cy + rr * a.sin())
    };

    let mut svg = svg_open(620.0, 520.0, title);
    writeln!(svg, "<text x=\"{cx}\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">{}</text>", esc(title)).unwrap();
    // zero ring
    let zero: Vec<String> = (0..9)
        .map(|i| {
            let (x, y) = point(i, 0.0);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    writeln!(
        svg,
        "<polygon class=\"zero\" points=\"{}\" fill=\"none\" stroke=\"#bbbbbb\" stroke-dasharray=\"3 3\"/>",
        zero.join(" ")
    )
    .unwrap();
    for (i, d) in Dimension::ALL.iter().enumerate() {
        let (x, y) = point(i, hi.max(lo + span));
        writeln!(
            svg,
            "<line class=\"spoke\" x1=\"{cx}\" y1=\"{cy}\" x2=\"{x:.2}\" y2=\"{y:.2}\" stroke=\"#999999\"/>"
        )
        .unwrap();
        let (lx, ly) = (cx + (r + 22.0) * angle(i).cos(), cy + (r + 22.0) * angle(i).sin());
        writeln!(
            svg,
            "<text class=\"spoke-label\" x=\"{lx:.2}\" y=\"{ly:.2}\" text-anchor=\"middle\">{}</text>",
            d.name()
        )
        .unwrap();
    }
    let mut csv = String::from("series,dimension,amce,se\n");
    for (k, (name, v)) in vectors.iter().enumerate() {
        let pts: Vec<String> = (0..=9)
            .map(|i| {
                let (x, y) = point(i % 9, v.delta[i % 9]);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let color = PALETTE[k % PALETTE.len()];
        writeln!(
            svg,
            "<polyline class=\"series\" data-series=\"{}\" points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            esc(name),
            pts.join(" ")
        )
        .unwrap();
        writeln!(
            svg,
            "<text x=\"480\" y=\"{}\" fill=\"{color}\">{}</text>",
            60 + 16 * k,
            esc(name)
        )
        .unwrap();
        for (i, d) in Dimension::ALL.iter().enumerate() {
            writeln!(csv, "{},{},{},{}", csv_field(name), d.name(), v.delta[i], v.se[i]).unwrap();
        }
    }
    svg.push_str("</svg>\n");
    Ok(Plot { svg, csv })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPoint {
    pub label: String,
    pub group: String,
    pub x: f64,
    pub y: f64,
}

fn axis_range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (lo, hi) = (lo.min(0.0), hi.max(0.0));
    if hi - lo < 1e-12 {
        (lo - 1.0, hi + 1.0)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    const W: f64 = 560.0;
    const H: f64 = 420.0;
    const L: f64 = 70.0;
    const T: f64 = 40.0;
    const PW: f64 = 440.0;
    const PH: f64 = 320.0;

    fn px(&self, x: f64) -> f64 {
        Self::L + Self::PW * (x - self.x0) / (self.x1 - self.x0)
    }

    fn py(&self, y: f64) -> f64 {
        Self::T + Self::PH * (1.0 - (y - self.y0) / (self.y1 - self.y0))
    }

    fn axes(&self, svg: &mut String, title: &str, xl: &str, yl: &str) {
        let (l, t, pw, ph) = (Self::L, Self::T, Self::PW, Self::PH);
        writeln!(svg, "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>", l + pw / 2.0, esc(title)).unwrap();
        writeln!(svg, "<rect x=\"{l}\" y=\"{t}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#333333\"/>").unwrap();
        let (zx, zy) = (self.px(0.0), self.py(0.0));
        writeln!(svg, "<line x1=\"{zx:.2}\" y1=\"{t}\" x2=\"{zx:.2}\" y2=\"{}\" stroke=\"#cccccc\"/>", t + ph).unwrap();
        writeln!(svg, "<line x1=\"{l}\" y1=\"{zy:.2}\" x2=\"{}\" y2=\"{zy:.2}\" stroke=\"#cccccc\"/>", l + pw).unwrap();
        for k in 0..=4 {
            let fx = self.x0 + (self.x1 - self.x0) * k as f64 / 4.0;
            let fy = self.y0 + (self.y1 - self.y0) * k as f64 / 4.0;
            writeln!(svg, "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\">{fx:.3}</text>", self.px(fx), t + ph + 16.0).unwrap();
            writeln!(svg, "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{fy:.3}</text>", l - 6.0, self.py(fy) + 4.0).unwrap();
        }
        writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", l + pw / 2.0, t + ph + 36.0, esc(xl)).unwrap();
        writeln!(
            svg,
            "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>",
            t + ph / 2.0,
            t + ph / 2.0,
            esc(yl)
        )
        .unwrap();
    }
}

fn group_colors<'a>(groups: impl Iterator<Item = &'a str>) -> BTreeMap<String, &'static str> {
    let mut m = BTreeMap::new();
    for g in groups {
        let n = m.len();
        m.entry(g.to_string()).or_insert(PALETTE[n % PALETTE.len()]);
    }
    m
}

pub fn scatter(points: &[ScatterPoint], title: &str, x_label: &str, y_label: &str) -> Result<Plot> {
    if points.is_empty() {
        return Err(Error::Empty("scatter points"));
    }
    if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::NonFinite("scatter points".into()));
    }
    let (x0, x1) = axis_range(points.iter().map(|p| p.x));
    let (y0, y1) = axis_range(points.iter().map(|p| p.y));
    let f = Frame { x0, x1, y0, y1 };
    let mut svg = svg_open(Frame::W, Frame::H, title);
    f.axes(&mut svg, title, x_label, y_label);
    let colors = group_colors(points.iter().map(|p| p.group.as_str()));
    let mut csv = format!("label,group,{},{}\n", csv_field(x_label), csv_field(y_label));
    for p in points {
        writeln!(
            svg,
            "<circle class=\"point\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{}\"><title>{}</title></circle>",
            f.px(p.x),
            f.py(p.y),
            colors[&p.group],
            esc(&p.label)
        )
        .unwrap();
        writeln!(csv, "{},{},{},{}", csv_field(&p.label), csv_field(&p.group), p.x, p.y).unwrap();
    }
    for (k, (g, c)) in colors.iter().enumerate() {
        writeln!(svg, "<text x=\"{}\" y=\"{}\" fill=\"{c}\">{}</text>", Frame::L + 8.0, Frame::T + 16.0 + 14.0 * k as f64, esc(g)).unwrap();
    }
    svg.push_str("</svg>\n");
    Ok(Plot { svg, csv })
}

/// Per-model paths through (ΔMI, ΔL2) from the dropout-0 origin.
pub fn trajectories(rows: &[TrajectoryRow], title: &str) -> Result<Plot> {
    let usable: Vec<&TrajectoryRow> = rows.iter().filter(|r| r.d_l2.is_some()).collect();
    if usable.is_empty() {
        return Err(Error::Empty("trajectory rows with alignment scores"));
    }
    let (x0, x1) = axis_range(usable.iter().map(|r| r.d_mi));
    let (y0, y1) = axis_range(usable.iter().filter_map(|r| r.d_l2));
    let f = Frame { x0, x1, y0, y1 };
    let mut svg = svg_open(Frame::W, Frame::H, title);
    f.axes(&mut svg, title, "delta mutual information (bits)", "delta L2");
    let colors = group_colors(usable.iter().map(|r| r.model.as_str()));
    let mut by_model: BTreeMap<&str, Vec<&TrajectoryRow>> = BTreeMap::new();
    for r in &usable {
        by_model.entry(r.model.as_str()).or_default().push(r);
    }
    let mut csv = String::from("model,to_dropout,d_mi,d_l2\n");
    for (model, mut rs) in by_model {
        rs.sort_by(|a, b| a.to_dropout.total_cmp(&b.to_dropout));
        let mut pts = vec![format!("{:.2},{:.2}", f.px(0.0), f.py(0.0))];
        for r in &rs {
            let d_l2 = r.d_l2.unwrap_or_default();
            pts.push(format!("{:.2},{:.2}", f.px(r.d_mi), f.py(d_l2)));
            writeln!(csv, "{},{},{},{}", csv_field(model), r.to_dropout, r.d_mi, d_l2).unwrap();
        }
        writeln!(
            svg,
            "<polyline class=\"trajectory\" data-series=\"{}\" points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>",
            esc(model),
            pts.join(" "),
            colors[model]
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    Ok(Plot { svg, csv })
}

/// One formatted cell of the alignment table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableCell {
    pub l2: f64,
    pub delta: Option<f64>,
    pub bold: bool,
    pub top2: bool,
    pub underline: bool,
}

impl TableCell {
    /// "0.550 (-0.15)" style text; baseline cells show only the score.
    pub fn text(&self) -> String {
        match self.delta {
            Some(d) => format!("{:.3} ({})", self.l2, format_delta(d)),
            None => format!("{:.3}", self.l2),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentTable {
    pub rates: Vec<f64>,
    /// (model, one cell per rate; `None` when the run is missing).
    pub rows: Vec<(String, Vec<Option<TableCell>>)>,
}

/// Layout: one row per model, one column per dropout rate. ΔL2 is taken
/// against the model's dropout-0 score; bold marks a decrease; top-2
/// marks the two smallest L2 values in the table; underline marks the two
/// largest decreases.
pub fn alignment_table(scores: &[AlignmentScore]) -> Result<AlignmentTable> {
    if scores.is_empty() {
        return Err(Error::Empty("alignment scores"));
    }
    let key = |r: f64| (r * 1e6).round() as i64;
    let mut rates: Vec<i64> = scores.iter().map(|s| key(s.dropout_rate.unwrap_or(0.0))).collect();
    rates.sort_unstable();
    rates.dedup();
    let mut models: Vec<String> = Vec::new();
    let mut grid: BTreeMap<(String, i64), f64> = BTreeMap::new();
    for s in scores {
        if !models.contains(&s.model_id) {
            models.push(s.model_id.clone());
        }
        grid.insert((s.model_id.clone(), key(s.dropout_rate.unwrap_or(0.0))), s.l2);
    }
    let mut rows: Vec<(String, Vec<Option<TableCell>>)> = models
        .iter()
        .map(|m| {
            let base = grid.get(&(m.clone(), 0)).copied();
            let cells = rates
                .iter()
                .map(|r| {
                    grid.get(&(m.clone(), *r)).map(|l2| {
                        let delta = if *r == 0 { None } else { base.map(|b| l2 - b) };
                        TableCell {
                            l2: *l2,
                            delta,
                            bold: delta.is_some_and(|d| d < 0.0),
                            top2: false,
                            underline: false,
                        }
                    })
                })
                .collect();
            (m.clone(), cells)
        })
        .collect();
    let mut cells: Vec<&mut TableCell> = rows.iter_mut().flat_map(|(_, c)| c.iter_mut().flatten()).collect();
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.sort_by(|a, b| cells[*a].l2.total_cmp(&cells[*b].l2));
    for i in order.iter().take(2) {
        cells[*i].top2 = true;
    }
    let mut changes: Vec<usize> = (0..cells.len()).filter(|i| cells[*i].delta.is_some()).collect();
    changes.sort_by(|a, b| cells[*a].delta.unwrap().total_cmp(&cells[*b].delta.unwrap()));
    for i in changes.iter().take(2) {
        if cells[*i].delta.unwrap() < 0.0 {
            cells[*i].underline = true;
        }
    }
    Ok(AlignmentTable {
        rates: rates.iter().map(|r| *r as f64 / 1e6).collect(),
        rows,
    })
}

impl AlignmentTable {
    /// Per rate: l2, ΔL2, rendered cell, and bold/top2/underline flags.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model");
        for r in &self.rates {
            let r = format!("{r:.2}");
            write!(out, ",l2_{r},delta_l2_{r},cell_{r},bold_{r},top2_{r},underline_{r}").unwrap();
        }
        out.push('\n');
        for (model, cells) in &self.rows {
            out.push_str(&csv_field(model));
            for c in cells {
                match c {
                    Some(c) => write!(
                        out,
                        ",{:.3},{},{},{},{},{}",
                        c.l2,
                        c.delta.map(format_delta).unwrap_or_default(),
                        csv_field(&c.text()),
                        c.bold,
                        c.top2,
                        c.underline
                    )
                    .unwrap(),
                    None => out.push_str(",,,,,,"),
                }
            }
            out.push('\n');
        }
        out
    }
}
