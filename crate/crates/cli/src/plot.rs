//! Minimal SVG rendering of the CSV artifacts.
//!
//! Scatter plots emit exactly one `<circle>` per data row; curves add a
//! polyline through their points; the planning-cost chart is bars only.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use plan2vec_core::io;

use crate::error::{CliError, CliResult};

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 56.0;

pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> CliResult<Table> {
        let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| CliError::Plot("CSV has no header".into()))?;
        let columns: Vec<String> = header.split(',').map(str::to_string).collect();
        let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
        if let Some(bad) = rows.iter().position(|r| r.len() != columns.len()) {
            return Err(CliError::Plot(format!("row {} has {} fields, expected {}", bad + 1, rows[bad].len(), columns.len())));
        }
        Ok(Table { columns, rows })
    }

    fn col(&self, name: &str) -> CliResult<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| CliError::Plot(format!("missing column {name:?}")))
    }

    fn floats(&self, name: &str) -> CliResult<Vec<f64>> {
        let i = self.col(name)?;
        self.rows
            .iter()
            .map(|r| r[i].parse::<f64>().map_err(|_| CliError::Plot(format!("column {name:?}: {:?} is not a number", r[i]))))
            .collect()
    }

    fn strings(&self, name: &str) -> CliResult<Vec<String>> {
        let i = self.col(name)?;
        Ok(self.rows.iter().map(|r| r[i].clone()).collect())
    }

    fn has(&self, name: &str) -> bool {
        self.columns.iter().any(|c| c == name)
    }
}

struct Axes {
    x: (f64, f64),
    y: (f64, f64),
}

impl Axes {
    fn fit(xs: &[f64], ys: &[f64]) -> Axes {
        let range = |v: &[f64]| {
            let finite = v.iter().copied().filter(|x| x.is_finite());
            let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                let pad = 0.05 * (hi - lo);
                (lo - pad, hi + pad)
            }
        };
        Axes { x: range(xs), y: range(ys) }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * MARGIN)
    }
}

fn open(title: &str, xlabel: &str, ylabel: &str) -> String {
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title)).unwrap();
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(xlabel)).unwrap();
    writeln!(s, r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#, H / 2.0, H / 2.0, escape(ylabel)).unwrap();
    s
}

fn frame(s: &mut String, axes: &Axes) {
    let (x0, x1, y0, y1) = (MARGIN, W - MARGIN, H - MARGIN, MARGIN);
    writeln!(s, r##"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" fill="none" stroke="#333"/>"##).unwrap();
    for (v, anchor, x, y) in [
        (axes.x.0, "start", x0, y0 + 16.0),
        (axes.x.1, "end", x1, y0 + 16.0),
    ] {
        writeln!(s, r#"<text x="{x}" y="{y}" text-anchor="{anchor}">{}</text>"#, tick(v)).unwrap();
    }
    for (v, y) in [(axes.y.0, y0), (axes.y.1, y1 + 10.0)] {
        writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#, x0 - 4.0, tick(v)).unwrap();
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn circles(s: &mut String, axes: &Axes, xs: &[f64], ys: &[f64], colors: &[String]) {
    for ((x, y), c) in xs.iter().zip(ys).zip(colors) {
        // non-finite values are pinned to the frame so the point count stays exact
        let cx = if x.is_finite() { axes.px(*x) } else { MARGIN };
        let cy = if y.is_finite() { axes.py(*y) } else { H - MARGIN };
        writeln!(s, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="2.2" fill="{c}"/>"#).unwrap();
    }
}

/// Color from a ground-truth position in `[-1, 1]²`.
fn position_color(x: f64, y: f64) -> String {
    let c = |v: f64| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8;
    format!("rgb({},{},{})", c(x), 90, c(y))
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn embedding(t: &Table) -> CliResult<String> {
    let xs = t.floats("z0")?;
    let ys = if t.has("z1") { t.floats("z1")? } else { vec![0.0; xs.len()] };
    let (gx, gy) = (t.floats("gt_x")?, t.floats("gt_y")?);
    let colors: Vec<String> = gx.iter().zip(&gy).map(|(&x, &y)| position_color(x, y)).collect();
    let axes = Axes::fit(&xs, &ys);
    let mut s = open("Latent embedding, colored by true position", "z0", "z1");
    frame(&mut s, &axes);
    circles(&mut s, &axes, &xs, &ys, &colors);
    Ok(s)
}

fn scatter(t: &Table, x: &str, y: &str, title: &str, threshold: Option<f64>) -> CliResult<String> {
    let (xs, ys) = (t.floats(x)?, t.floats(y)?);
    let axes = Axes::fit(&xs, &ys);
    let mut s = open(title, x, y);
    frame(&mut s, &axes);
    if let Some(th) = threshold.filter(|th| *th > axes.y.0 && *th < axes.y.1) {
        let py = axes.py(th);
        writeln!(s, r##"<line x1="{MARGIN}" y1="{py:.2}" x2="{}" y2="{py:.2}" stroke="#d62728" stroke-dasharray="4 3"/>"##, W - MARGIN).unwrap();
    }
    circles(&mut s, &axes, &xs, &ys, &vec![PALETTE[0].to_string(); xs.len()]);
    Ok(s)
}

fn lookahead(t: &Table) -> CliResult<String> {
    let methods = t.strings("method")?;
    let (ks, rates) = (t.floats("k")?, t.floats("success_rate")?);
    let mut axes = Axes::fit(&ks, &rates);
    axes.y = (0.0, 1.05);
    let mut s = open("Success rate against lookahead k", "k", "success rate");
    frame(&mut s, &axes);
    let mut order: Vec<&str> = Vec::new();
    for m in &methods {
        if !order.contains(&m.as_str()) {
            order.push(m);
        }
    }
    for (mi, m) in order.iter().enumerate() {
        let color = PALETTE[mi % PALETTE.len()];
        let pts: Vec<String> = (0..ks.len())
            .filter(|&i| methods[i] == *m)
            .map(|i| format!("{:.2},{:.2}", axes.px(ks[i]), axes.py(rates[i])))
            .collect();
        writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}"/>"#, pts.join(" ")).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" fill="{color}">{}</text>"#, W - MARGIN - 150.0, MARGIN + 16.0 * mi as f64, escape(m)).unwrap();
    }
    let colors: Vec<String> = methods
        .iter()
        .map(|m| PALETTE[order.iter().position(|o| o == m).expect("listed") % PALETTE.len()].to_string())
        .collect();
    circles(&mut s, &axes, &ks, &rates, &colors);
    Ok(s)
}

fn planning_cost(t: &Table) -> CliResult<String> {
    let planners = t.strings("planner")?;
    let (lengths, expansions) = (t.floats("plan_length")?, t.floats("expansions")?);
    let mut per_step: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    for i in 0..planners.len() {
        let p = planners[i].as_str();
        if !order.contains(&p) {
            order.push(p);
        }
        let e = per_step.entry(p).or_insert((0.0, 0));
        e.0 += expansions[i] / lengths[i].max(1.0);
        e.1 += 1;
    }
    let means: Vec<f64> = order.iter().map(|p| per_step[p].0 / per_step[p].1.max(1) as f64).collect();
    // log scale: the planners differ by orders of magnitude
    let logs: Vec<f64> = means.iter().map(|m| m.max(1e-3).log10()).collect();
    let lo = logs.iter().copied().fold(0.0f64, f64::min).floor();
    let hi = logs.iter().copied().fold(1.0f64, f64::max).ceil();
    let mut s = open("Average expansions per plan step", "planner", "log10 expansions per step");
    let axes = Axes {
        x: (0.0, order.len() as f64),
        y: (lo, hi),
    };
    frame(&mut s, &axes);
    for (i, (p, l)) in order.iter().zip(&logs).enumerate() {
        let (x0, x1) = (axes.px(i as f64 + 0.15), axes.px(i as f64 + 0.85));
        let (top, base) = (axes.py(*l), axes.py(lo));
        writeln!(
            s,
            r#"<rect x="{x0:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            x1 - x0,
            (base - top).max(0.0),
            PALETTE[i % PALETTE.len()]
        )
        .unwrap();
        writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{} ({:.1})</text>"#, (x0 + x1) / 2.0, top - 4.0, escape(p), means[i]).unwrap();
    }
    Ok(s)
}

/// Renders a CSV artifact to SVG, choosing the chart from its columns.
pub fn render(text: &str) -> CliResult<String> {
    let t = Table::parse(text)?;
    let mut svg = if t.has("gt_x") && t.has("z0") {
        embedding(&t)?
    } else if t.has("planner") && t.has("expansions") {
        planning_cost(&t)?
    } else if t.has("method") && t.has("k") {
        lookahead(&t)?
    } else if t.has("local_score") {
        scatter(&t, "gt_distance", "local_score", "Local score against true distance", Some(1.5))?
    } else if t.has("latent_distance") {
        scatter(&t, "graph_distance", "latent_distance", "Latent distance against graph distance", None)?
    } else {
        return Err(CliError::Plot(format!("unrecognized CSV columns: {}", t.columns.join(","))));
    };
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn render_file(src: &Path, out: &Path) -> CliResult<()> {
    let text = std::fs::read_to_string(src).map_err(|e| CliError::io(src, e))?;
    let svg = render(&text).map_err(|e| match e {
        CliError::Plot(m) => CliError::Plot(format!("{}: {m}", src.display())),
        e => e,
    })?;
    Ok(io::write_atomic(out, svg.as_bytes())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_has_one_circle_per_row() {
        let csv = "# schema_version=1\nid,z0,z1,gt_x,gt_y\n0,0.1,0.2,-1,1\n1,0.3,NaN,0,0\n2,1,1,1,-1\n";
        let svg = render(csv).unwrap();
        assert_eq!(svg.matches("<circle").count(), 3);
    }

    #[test]
    fn cost_chart_has_one_bar_per_planner() {
        let csv = "query,planner,plan_length,cost,expansions,peak_frontier,suboptimality_ratio,success\n\
                   0,dijkstra,2,2,400,10,1,true\n0,reactive,2,2,2,1,1,true\n1,dijkstra,4,4,900,10,1,true\n";
        let svg = render(csv).unwrap();
        assert_eq!(svg.matches("<rect").count(), 1 + 2);
    }

    #[test]
    fn unknown_columns_are_rejected() {
        assert!(render("a,b\n1,2\n").is_err());
        assert!(render("id,z0,gt_x,gt_y\n1,2\n").is_err());
    }
}
