//! Trajectory CSV, report JSON and SVG plots.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::convex::Region;
use crate::metrics::AggregationReport;
use crate::scenario::Scenario;
use crate::sim::Trajectory;

pub const CSV_HEADER: [&str; 14] = [
    "t",
    "agent",
    "qx",
    "qy",
    "qdotx",
    "qdoty",
    "taux",
    "tauy",
    "dist_own",
    "dist_X0",
    "speed",
    "lyapunov",
    "consensus_err",
    "min_pairwise",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub csv: PathBuf,
    pub report: PathBuf,
    pub plots: Vec<PathBuf>,
}

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// One row per agent per sample; agents are numbered from 1.
pub fn trajectory_csv(trajectory: &Trajectory) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("writing to memory");
    for (sample, m) in trajectory.samples.iter().zip(&trajectory.metrics) {
        for (i, (s, tau)) in sample.states.iter().zip(&sample.torques).enumerate() {
            let dist_x0 = m.dist_x0.as_ref().map(|d| d[i].to_string()).unwrap_or_default();
            w.write_record([
                sample.t.to_string(),
                (i + 1).to_string(),
                s.q.x.to_string(),
                s.q.y.to_string(),
                s.qdot.x.to_string(),
                s.qdot.y.to_string(),
                tau.x.to_string(),
                tau.y.to_string(),
                m.dist_own[i].to_string(),
                dist_x0,
                m.speed[i].to_string(),
                m.lyapunov.to_string(),
                m.consensus_error.to_string(),
                m.min_pairwise.to_string(),
            ])
            .expect("writing to memory");
        }
    }
    w.into_inner().expect("writing to memory")
}

pub fn report_json(report: &AggregationReport) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(report).expect("report serializes");
    bytes.push(b'\n');
    bytes
}

/// Writes `trajectory.csv`, `report.json` and four SVG plots into `dir`.
pub fn write_run(
    dir: &Path,
    scenario: &Scenario,
    trajectory: &Trajectory,
    report: &AggregationReport,
) -> io::Result<RunArtifacts> {
    std::fs::create_dir_all(dir)?;
    let csv = dir.join("trajectory.csv");
    write_atomic(&csv, &trajectory_csv(trajectory))?;
    let report_path = dir.join("report.json");
    write_atomic(&report_path, &report_json(report))?;
    let mut plots = Vec::new();
    for (name, svg) in plots_for(scenario, trajectory) {
        let path = dir.join(name);
        write_atomic(&path, svg.as_bytes())?;
        plots.push(path);
    }
    Ok(RunArtifacts { csv, report: report_path, plots })
}

pub fn plots_for(scenario: &Scenario, trajectory: &Trajectory) -> Vec<(&'static str, String)> {
    let n = scenario.agent_count();
    let times: Vec<f64> = trajectory.metrics.iter().map(|m| m.t).collect();
    let per_agent = |f: &dyn Fn(usize, usize) -> f64| -> Vec<Series> {
        (0..n)
            .map(|i| Series {
                label: format!("agent {}", i + 1),
                points: (0..times.len()).map(|k| (times[k], f(k, i))).collect(),
                dashed: false,
            })
            .collect()
    };
    let speed = per_agent(&|k, i| trajectory.metrics[k].speed[i]);
    let mut pairwise = vec![Series {
        label: "min pairwise".into(),
        points: trajectory.metrics.iter().map(|m| (m.t, m.min_pairwise)).filter(|p| p.1.is_finite()).collect(),
        dashed: false,
    }];
    if let Some(p) = scenario.law.potential() {
        let t_last = times.last().copied().unwrap_or(0.0);
        pairwise.push(Series {
            label: "r".into(),
            points: vec![(0.0, p.safety_radius), (t_last, p.safety_radius)],
            dashed: true,
        });
    }
    let lyapunov = vec![Series {
        label: "V".into(),
        points: trajectory.metrics.iter().map(|m| (m.t, m.lyapunov)).collect(),
        dashed: false,
    }];
    vec![
        ("trails.svg", trails(scenario, trajectory)),
        ("speed.svg", line_chart("Speed ‖q̇ᵢ‖", "t", &speed, false)),
        ("min_pairwise.svg", line_chart("Minimum pairwise distance", "t", &pairwise, false)),
        ("lyapunov.svg", line_chart("Lyapunov value", "t", &lyapunov, true)),
    ]
}

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 44.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
    dashed: bool,
}

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_owned()
    }
}

/// Linear map from data range to pixel range.
#[derive(Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    p0: f64,
    p1: f64,
}

impl Axis {
    fn new(lo: f64, hi: f64, p0: f64, p1: f64) -> Self {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        Self { lo, hi, p0, p1 }
    }

    fn px(&self, v: f64) -> f64 {
        self.p0 + (v - self.lo) / (self.hi - self.lo) * (self.p1 - self.p0)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="22" text-anchor="middle" font-size="15">{title}</text>
"#,
        W / 2.0
    );
}

fn frame(out: &mut String, x: &Axis, y: &Axis, x_label: &str, y_tick: &dyn Fn(f64) -> String) {
    let _ = writeln!(
        out,
        r##"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    );
    for k in 0..=5 {
        let xv = x.lo + (x.hi - x.lo) * k as f64 / 5.0;
        let px = x.px(xv);
        let _ = writeln!(
            out,
            r##"<line x1="{px:.1}" y1="{}" x2="{px:.1}" y2="{}" stroke="#444"/><text x="{px:.1}" y="{}" text-anchor="middle">{}</text>"##,
            H - BOTTOM,
            H - BOTTOM + 5.0,
            H - BOTTOM + 18.0,
            fmt_tick(xv)
        );
        let yv = y.lo + (y.hi - y.lo) * k as f64 / 5.0;
        let py = y.px(yv);
        let _ = writeln!(
            out,
            r##"<line x1="{}" y1="{py:.1}" x2="{LEFT}" y2="{py:.1}" stroke="#444"/><text x="{}" y="{:.1}" text-anchor="end">{}</text>"##,
            LEFT - 5.0,
            LEFT - 8.0,
            py + 4.0,
            y_tick(yv)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 8.0
    );
}

fn polyline(out: &mut String, pts: impl Iterator<Item = (f64, f64)>, stroke: &str, dashed: bool) {
    let mut d = String::new();
    for (x, y) in pts {
        let _ = write!(d, "{x:.2},{y:.2} ");
    }
    let dash = if dashed { r#" stroke-dasharray="6 4""# } else { "" };
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.3"{dash}/>"#,
        d.trim_end()
    );
}

fn legend(out: &mut String, series: &[Series]) {
    if series.len() > 16 {
        return;
    }
    for (i, s) in series.iter().enumerate() {
        let y = TOP + 14.0 + 14.0 * i as f64;
        let x = W - RIGHT - 90.0;
        let _ = writeln!(
            out,
            r#"<line x1="{x}" y1="{}" x2="{}" y2="{}" stroke="{}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            y - 4.0,
            x + 16.0,
            y - 4.0,
            color(i),
            x + 20.0,
            y,
            s.label
        );
    }
}

fn line_chart(title: &str, x_label: &str, series: &[Series], log_y: bool) -> String {
    let all = || series.iter().flat_map(|s| s.points.iter().copied());
    let x_lo = all().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let x_hi = all().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let y_max = all().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let tf = |v: f64| if log_y { v.max(y_max.abs() * 1e-16).max(f64::MIN_POSITIVE).log10() } else { v };
    let y_lo = all().map(|p| tf(p.1)).fold(f64::INFINITY, f64::min);
    let y_hi = all().map(|p| tf(p.1)).fold(f64::NEG_INFINITY, f64::max);
    let (y_lo, y_hi) = if log_y { (y_lo.floor(), y_hi.ceil()) } else { (y_lo.min(0.0), y_hi * 1.05) };

    let mut out = String::new();
    header(&mut out, title);
    if !x_lo.is_finite() || !y_lo.is_finite() {
        out.push_str("</svg>\n");
        return out;
    }
    let x = Axis::new(x_lo, x_hi, LEFT, W - RIGHT);
    let y = Axis::new(y_lo, y_hi, H - BOTTOM, TOP);
    let tick = |v: f64| if log_y { format!("1e{}", v.round()) } else { fmt_tick(v) };
    frame(&mut out, &x, &y, x_label, &tick);
    for (i, s) in series.iter().enumerate() {
        polyline(&mut out, s.points.iter().map(|p| (x.px(p.0), y.px(tf(p.1)))), color(i), s.dashed);
    }
    legend(&mut out, series);
    out.push_str("</svg>\n");
    out
}

fn region_outline(out: &mut String, r: &Region, x: &Axis, y: &Axis, scale: f64) {
    match r {
        Region::Ball { center, radius } => {
            let _ = writeln!(
                out,
                r##"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="#888" fill-opacity="0.06" stroke="#888"/>"##,
                x.px(center[0]),
                y.px(center[1]),
                radius * scale
            );
        }
        Region::Box { lo, hi } => {
            let _ = writeln!(
                out,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#888" fill-opacity="0.06" stroke="#888"/>"##,
                x.px(lo[0]),
                y.px(hi[1]),
                (hi[0] - lo[0]) * scale,
                (hi[1] - lo[1]) * scale
            );
        }
        Region::Union { members } => members.iter().for_each(|m| region_outline(out, m, x, y, scale)),
        Region::Polytope { .. } => {}
    }
}

/// Coordinate trails with target-set outlines, on equal axes.
fn trails(scenario: &Scenario, trajectory: &Trajectory) -> String {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for s in trajectory.samples.iter().flat_map(|s| &s.states) {
        for c in 0..2 {
            lo[c] = lo[c].min(s.q[c]);
            hi[c] = hi[c].max(s.q[c]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1.0) * 1.1;
    let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let scale = plot_w.min(plot_h) / span;
    let x = Axis::new(mid[0] - plot_w / scale / 2.0, mid[0] + plot_w / scale / 2.0, LEFT, W - RIGHT);
    let y = Axis::new(mid[1] - plot_h / scale / 2.0, mid[1] + plot_h / scale / 2.0, H - BOTTOM, TOP);

    let mut out = String::new();
    header(&mut out, "Coordinate trails");
    frame(&mut out, &x, &y, "qx", &fmt_tick);
    let _ = writeln!(
        out,
        r#"<clipPath id="plot"><rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}"/></clipPath>"#
    );
    out.push_str("<g clip-path=\"url(#plot)\">\n");
    for r in &scenario.regions {
        region_outline(&mut out, r, &x, &y, scale);
    }
    for i in 0..scenario.agent_count() {
        let path = trajectory.samples.iter().map(|s| (x.px(s.states[i].q.x), y.px(s.states[i].q.y)));
        polyline(&mut out, path, color(i), false);
        let (first, last) = (&trajectory.samples[0].states[i], &trajectory.final_states()[i]);
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="none" stroke="{c}"/><circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{c}"/>"#,
            x.px(first.q.x),
            y.px(first.q.y),
            x.px(last.q.x),
            y.px(last.q.y),
            c = color(i)
        );
    }
    out.push_str("</g>\n</svg>\n");
    out
}
