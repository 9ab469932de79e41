use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{PowerCurve, ScenarioResult, SimulationOutput};
use crate::error::Result;

/// File name of the main table for a result.
pub fn table_name(result: &ScenarioResult) -> &'static str {
    match result {
        ScenarioResult::Curve(_) => "curve.csv",
        ScenarioResult::Histogram { .. } => "histogram.csv",
        ScenarioResult::Iv(_) => "iv.csv",
    }
}

/// Writes the main table: `x,method,power,se` for curves,
/// `case,bin_lo,bin_hi,count` for histograms, one row per design for IV.
pub fn write_table_csv<W: Write>(out: &SimulationOutput, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    match &out.result {
        ScenarioResult::Curve(c) => {
            w.write_record(["x", "method", "power", "se"])?;
            for p in &c.points {
                w.write_record([
                    p.x.to_string(),
                    p.method.clone(),
                    p.power.to_string(),
                    p.se.to_string(),
                ])?;
            }
        }
        ScenarioResult::Histogram { cases } => {
            w.write_record(["case", "bin_lo", "bin_hi", "count"])?;
            for c in cases {
                for (b, count) in c.counts.iter().enumerate() {
                    w.write_record([
                        c.label.clone(),
                        c.edges[b].to_string(),
                        c.edges[b + 1].to_string(),
                        count.to_string(),
                    ])?;
                }
            }
        }
        ScenarioResult::Iv(t) => {
            w.write_record(["design", "mean_estimate", "bias", "bias_se", "rmse", "rmse_se", "reps"])?;
            for r in &t.rows {
                w.write_record([
                    r.design.clone(),
                    r.mean_estimate.to_string(),
                    r.bias.to_string(),
                    r.bias_se.to_string(),
                    r.rmse.to_string(),
                    r.rmse_se.to_string(),
                    t.used_reps.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Meta<'a> {
    tool: &'static str,
    version: &'static str,
    scenario: &'static str,
    #[serde(flatten)]
    output: &'a SimulationOutput,
}

/// Writes the table, `meta.json` and optionally `plot.svg` into `dir`,
/// returning the paths written.
pub fn write_outputs(dir: &Path, out: &SimulationOutput, svg: bool) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let table = dir.join(table_name(&out.result));
    write_table_csv(out, BufWriter::new(File::create(&table)?))?;
    written.push(table);

    let meta = dir.join("meta.json");
    let body = Meta {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        scenario: out.spec.scenario.name(),
        output: out,
    };
    let mut f = BufWriter::new(File::create(&meta)?);
    serde_json::to_writer_pretty(&mut f, &body).map_err(std::io::Error::from)?;
    f.write_all(b"\n")?;
    f.flush()?;
    written.push(meta);

    if svg {
        let path = dir.join("plot.svg");
        std::fs::write(&path, render_svg(out))?;
        written.push(path);
    }
    Ok(written)
}

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Minimal SVG rendering: power curves as polylines, histograms as bars,
/// IV results as a short text table.
pub fn render_svg(out: &SimulationOutput) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    match &out.result {
        ScenarioResult::Curve(c) => curve_svg(&mut s, c),
        ScenarioResult::Histogram { cases } => {
            let panel_w = (W - LEFT) / cases.len().max(1) as f64;
            for (k, c) in cases.iter().enumerate() {
                let x0 = LEFT + k as f64 * panel_w;
                let max = c.counts.iter().copied().max().unwrap_or(1).max(1) as f64;
                let bw = (panel_w - 20.0) / c.counts.len() as f64;
                for (b, &count) in c.counts.iter().enumerate() {
                    let h = (H - TOP - BOTTOM) * count as f64 / max;
                    let _ = writeln!(
                        s,
                        r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#7570b3" stroke="white"/>"##,
                        x0 + b as f64 * bw,
                        H - BOTTOM - h,
                        bw,
                        h
                    );
                }
                let _ = writeln!(
                    s,
                    r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
                    x0,
                    H - BOTTOM + 30.0,
                    escape(&format!("{} (p-value, 0 to 1)", c.label))
                );
            }
        }
        ScenarioResult::Iv(t) => {
            let mut y = 40.0;
            for r in &t.rows {
                let _ = writeln!(
                    s,
                    r#"<text x="{LEFT}" y="{y}">{}: bias {:.4} (se {:.4}), rmse {:.4} (se {:.4})</text>"#,
                    escape(&r.design),
                    r.bias,
                    r.bias_se,
                    r.rmse,
                    r.rmse_se
                );
                y += 20.0;
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

fn curve_svg(s: &mut String, c: &PowerCurve) {
    let xs = c.points.iter().map(|p| p.x).chain(c.markers.iter().map(|m| m.x));
    let (mut lo, mut hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !(hi > lo) {
        lo -= 0.5;
        hi += 0.5;
    }
    let px = |x: f64| LEFT + (W - LEFT - RIGHT) * (x - lo) / (hi - lo);
    let py = |y: f64| H - BOTTOM - (H - TOP - BOTTOM) * y;
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        py(0.0),
        W - RIGHT,
        py(0.0)
    );
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{}" x2="{LEFT}" y2="{}" stroke="black"/>"#, py(0.0), py(1.0));
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{t}</text>"#, LEFT - 5.0, py(t) + 4.0);
    }
    for t in 0..=4 {
        let x = lo + (hi - lo) * t as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{:.3}</text>"#, px(x), py(0.0) + 15.0, x);
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
        px((lo + hi) / 2.0),
        H - 10.0,
        escape(&c.x_label)
    );
    for (k, method) in c.methods().into_iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = c
            .series(method)
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.x), py(p.power)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
        let ly = TOP + 15.0 * k as f64 + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            W - RIGHT + 10.0,
            W - RIGHT + 30.0,
            W - RIGHT + 35.0,
            ly + 4.0,
            escape(method)
        );
    }
    for m in &c.markers {
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="gray" stroke-dasharray="4 3"><title>{}</title></line>"#,
            py(0.0),
            py(1.0),
            escape(&m.label),
            x = px(m.x)
        );
    }
}

#[cfg(test)]
mod tests {
    use super::super::{run, Scenario, ScenarioSpec};
    use super::*;

    #[test]
    fn writes_all_files() {
        let params = super::super::PowerVsGammaParams {
            sample_sizes: vec![50],
            effects: vec![0.5],
            gammas: vec![1.0, 2.0],
            alpha: 0.05,
        };
        let out = run(&ScenarioSpec::new(Scenario::PowerVsGamma(params), 20, 1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_outputs(dir.path(), &out, true).unwrap();
        assert_eq!(files.len(), 3);
        let csv = std::fs::read_to_string(dir.path().join("curve.csv")).unwrap();
        assert!(csv.starts_with("x,method,power,se\n"));
        assert_eq!(csv.lines().count(), 3);
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("meta.json")).unwrap()).unwrap();
        assert_eq!(meta["spec"]["seed"], 1);
        assert_eq!(meta["scenario"], "power-vs-gamma");
        let svg = std::fs::read_to_string(dir.path().join("plot.svg")).unwrap();
        assert!(svg.contains("<polyline"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
