//! CSV tables and standalone SVG charts for an evaluation report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::{CurveTable, EvalReport};
use crate::geometry::Family;

/// Rows of `report.csv` per (mode, task), in this order.
pub const METRICS: [&str; 7] = ["trials", "lifted", "lift_rate", "rmse_translation", "rmse_rotation", "insertion_mean", "insertion_std"];

const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

pub fn report_csv(report: &EvalReport) -> String {
    let mut s = String::from("mode,task,metric,value\n");
    for m in &report.metrics {
        for name in METRICS {
            let v = m.metric(name).expect("listed metric");
            writeln!(s, "{},{},{},{:.6}", m.mode, m.task, name, v).unwrap();
        }
    }
    s
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.6}"))
}

pub fn trials_csv(report: &EvalReport) -> String {
    let mut s = String::from(
        "task,trial,part_id,mode,candidate_index,fallback,q_g,q_i,lifted,sim_error,est_dx,est_dy,est_dz,est_dtheta,true_dx,true_dy,true_dz,true_dtheta,eps\n",
    );
    for r in &report.rows {
        write!(s, "{},{},{},{},{},{},{:.6},{},{},{}", r.task, r.trial, r.part_id, r.mode, r.candidate_index, r.fallback as u8, r.q_g, opt(r.q_i), r.lifted as u8, r.sim_error as u8).unwrap();
        for v in r.estimate.iter().chain(&r.truth) {
            write!(s, ",{v:.6}").unwrap();
        }
        writeln!(s, ",{}", opt(r.eps)).unwrap();
    }
    s
}

fn curves_csv(tables: &[CurveTable]) -> String {
    let mut s = String::from("task,variant,seed,epoch,stage,accuracy\n");
    for t in tables {
        for p in &t.points {
            let v = if p.curriculum { "curriculum" } else { "direct" };
            writeln!(s, "{},{},{},{},{},{:.6}", t.task, v, p.seed, p.epoch, p.stage, p.accuracy).unwrap();
        }
    }
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

fn frame(s: &mut String, title: &str, y_label: &str, y_max: f64) {
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title)).unwrap();
    let (x0, y0, y1) = (LEFT, H - BOTTOM, TOP);
    writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{}" y2="{y0}" stroke="black"/>"#, W - RIGHT).unwrap();
    writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#).unwrap();
    for k in 0..=4 {
        let v = y_max * k as f64 / 4.0;
        let y = y0 - (y0 - y1) * k as f64 / 4.0;
        writeln!(s, r#"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/>"#, x0 - 4.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 6.0, y + 4.0, tick(v)).unwrap();
    }
    writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    )
    .unwrap();
}

fn tick(v: f64) -> String {
    if v == 0.0 || v.abs() >= 10.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.2}")
    }
}

fn nice_max(m: f64) -> f64 {
    if !(m > 0.0) || !m.is_finite() {
        return 1.0;
    }
    let p = 10f64.powf(m.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0].iter().map(|k| k * p).find(|&c| c >= m).unwrap_or(10.0 * p)
}

fn legend(s: &mut String, names: &[String]) {
    for (i, n) in names.iter().enumerate() {
        let x = W - RIGHT - 130.0;
        let y = TOP + 14.0 + 16.0 * i as f64;
        writeln!(s, r#"<rect x="{x}" y="{}" width="12" height="12" fill="{}"/>"#, y - 10.0, PALETTE[i % PALETTE.len()]).unwrap();
        writeln!(s, r#"<text x="{}" y="{y}">{}</text>"#, x + 16.0, escape(n)).unwrap();
    }
}

/// Grouped bar chart; `values[series][group]`.
pub fn svg_bars(title: &str, y_label: &str, groups: &[String], series: &[String], values: &[Vec<f64>]) -> String {
    let y_max = nice_max(values.iter().flatten().fold(0.0, |a: f64, &b| a.max(b)));
    let mut s = String::new();
    frame(&mut s, title, y_label, y_max);
    let (y0, y1) = (H - BOTTOM, TOP);
    let gw = (W - LEFT - RIGHT) / groups.len().max(1) as f64;
    let bw = gw * 0.8 / series.len().max(1) as f64;
    for (g, name) in groups.iter().enumerate() {
        let gx = LEFT + g as f64 * gw;
        for (k, vals) in values.iter().enumerate() {
            let v = vals.get(g).copied().unwrap_or(0.0).max(0.0);
            let h = (y0 - y1) * v / y_max;
            let x = gx + gw * 0.1 + k as f64 * bw;
            writeln!(s, r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="{}"><title>{} {}: {v:.4}</title></rect>"#, y0 - h, bw * 0.95, PALETTE[k % PALETTE.len()], escape(&series[k]), escape(name)).unwrap();
        }
        writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, gx + gw / 2.0, y0 + 16.0, escape(name)).unwrap();
    }
    legend(&mut s, series);
    s.push_str("</svg>\n");
    s
}

/// Line chart, one polyline per named curve over the epoch axis.
pub fn svg_curves(title: &str, y_label: &str, curves: &[(String, Vec<f64>)]) -> String {
    let n = curves.iter().map(|c| c.1.len()).max().unwrap_or(0).max(2);
    let y_max = nice_max(curves.iter().flat_map(|c| c.1.iter()).fold(0.0, |a: f64, &b| a.max(b)));
    let mut s = String::new();
    frame(&mut s, title, y_label, y_max);
    let (y0, y1) = (H - BOTTOM, TOP);
    let x_of = |i: usize| LEFT + (W - LEFT - RIGHT) * i as f64 / (n - 1) as f64;
    for i in (0..n).step_by(n.div_ceil(12)) {
        writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, x_of(i), y0 + 16.0, i + 1).unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#, (LEFT + W - RIGHT) / 2.0, y0 + 32.0).unwrap();
    let mut names = Vec::new();
    for (k, (name, ys)) in curves.iter().enumerate() {
        let pts: Vec<String> = ys.iter().enumerate().map(|(i, &v)| format!("{:.2},{:.2}", x_of(i), y0 - (y0 - y1) * v.max(0.0) / y_max)).collect();
        writeln!(s, r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#, PALETTE[k % PALETTE.len()], pts.join(" ")).unwrap();
        names.push(name.clone());
    }
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FigureFiles {
    pub written: Vec<PathBuf>,
}

/// Writes `report.csv`, `trials.csv`, `report.json`, `curves.csv` (when
/// curves are given) and the charts under `figs/`. Output depends only on
/// the inputs.
pub fn emit_figures(report: &EvalReport, curves: &[CurveTable], dir: &Path) -> std::io::Result<FigureFiles> {
    let figs = dir.join("figs");
    std::fs::create_dir_all(&figs)?;
    let mut files = FigureFiles::default();
    let mut put = |path: PathBuf, body: String| -> std::io::Result<()> {
        std::fs::write(&path, body)?;
        files.written.push(path);
        Ok(())
    };
    put(dir.join("report.csv"), report_csv(report))?;
    put(dir.join("trials.csv"), trials_csv(report))?;
    let summary = json!({
        "seed": report.seed,
        "config_sha256": report.config_sha256,
        "metrics": report.metrics,
    });
    put(dir.join("report.json"), serde_json::to_string_pretty(&summary).expect("report serialises") + "\n")?;

    let mut tasks: Vec<Family> = Vec::new();
    let mut modes = Vec::new();
    for m in &report.metrics {
        if !tasks.contains(&m.task) {
            tasks.push(m.task);
        }
        if !modes.contains(&m.mode) {
            modes.push(m.mode);
        }
    }
    let groups: Vec<String> = tasks.iter().map(|t| t.to_string()).collect();
    let series: Vec<String> = modes.iter().map(|m| m.to_string()).collect();
    let table = |metric: &str, only: Option<Family>| -> Vec<Vec<f64>> {
        modes
            .iter()
            .map(|&m| {
                tasks
                    .iter()
                    .filter(|&&t| only.is_none_or(|o| o == t))
                    .map(|&t| report.get(m, t).and_then(|x| x.metric(metric)).unwrap_or(0.0))
                    .collect()
            })
            .collect()
    };
    put(figs.join("lift_rate.svg"), svg_bars("Lift success rate", "rate", &groups, &series, &table("lift_rate", None)))?;
    put(figs.join("rmse_translation.svg"), svg_bars("Displacement RMSE, translation", "mm", &groups, &series, &table("rmse_translation", None)))?;
    put(figs.join("rmse_rotation.svg"), svg_bars("Displacement RMSE, rotation", "rad", &groups, &series, &table("rmse_rotation", None)))?;
    for &t in &tasks {
        let (title, unit) = match t {
            Family::Bracket => ("Bracket insertion error", "mm"),
            Family::Gear => ("Gear: mean best peg id", "id"),
            Family::Shape => ("Shape: mean best slot id", "id"),
        };
        put(figs.join(format!("insertion-{t}.svg")), svg_bars(title, unit, &[t.to_string()], &series, &table("insertion_mean", Some(t))))?;
    }
    if !curves.is_empty() {
        files.written.extend(emit_curves(curves, dir)?);
    }
    Ok(files)
}

/// `curves.csv` and one `figs/curriculum-{task}.svg` per table.
pub fn emit_curves(curves: &[CurveTable], dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let figs = dir.join("figs");
    std::fs::create_dir_all(&figs)?;
    let mut written = vec![dir.join("curves.csv")];
    std::fs::write(&written[0], curves_csv(curves))?;
    for c in curves {
        let mut lines = Vec::new();
        for s in c.seeds() {
            lines.push((format!("curriculum s{s}"), c.curve(true, s)));
            lines.push((format!("direct s{s}"), c.curve(false, s)));
        }
        let path = figs.join(format!("curriculum-{}.svg", c.task));
        std::fs::write(&path, svg_curves(&format!("{} IQN validation accuracy", c.task), "accuracy", &lines))?;
        written.push(path);
    }
    Ok(written)
}
