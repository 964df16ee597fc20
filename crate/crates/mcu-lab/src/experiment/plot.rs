//! Metric-vs-t SVG panels: one polyline per curve kind, endpoint markers,
//! the endpoint interpolant as a dashed reference line, and the tolerance
//! band shaded around it.

use super::runner::CurveEvaluation;
use crate::error::{Error, Result};
use crate::eval::MetricRecord;
use std::fmt::Write as _;
use std::path::Path;

pub const METRIC_NAMES: [&str; 7] = [
    "loss_retain",
    "loss_forget",
    "acc_test",
    "acc_forget",
    "acc_retain",
    "zrf",
    "forget_quality",
];

fn metric_value(r: &MetricRecord, metric: &str) -> Result<f64> {
    Ok(match metric {
        "loss_retain" => r.loss_retain,
        "loss_forget" => r.loss_forget,
        "acc_test" => r.acc_test,
        "acc_forget" => r.acc_forget,
        "acc_retain" => r.acc_retain,
        "zrf" => r.zrf,
        "forget_quality" => r.forget_quality,
        other => {
            return Err(Error::Config(format!(
                "unknown metric {other:?}; valid: {}",
                METRIC_NAMES.join(", ")
            )))
        }
    })
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const ML: f64 = 60.0; // left margin
const MR: f64 = 20.0;
const MT: f64 = 24.0;
const MB: f64 = 40.0;

struct Scale {
    vmin: f64,
    vmax: f64,
}

impl Scale {
    fn x(&self, t: f64) -> f64 {
        ML + t * (W - ML - MR)
    }

    fn y(&self, v: f64) -> f64 {
        let span = self.vmax - self.vmin;
        H - MB - (v - self.vmin) / span * (H - MT - MB)
    }
}

fn color(kind: &str) -> &'static str {
    match kind {
        "linear" => "#1f77b4",
        "bezier" => "#d62728",
        _ => "#555555",
    }
}

/// Render one metric across all evaluated curves (primary replicate) into a
/// single SVG.
pub fn emit_plot(
    evaluations: &[CurveEvaluation],
    metric: &str,
    tau: f64,
    path: &Path,
) -> Result<()> {
    let primary: Vec<&CurveEvaluation> =
        evaluations.iter().filter(|e| e.replicate == 0).collect();
    if primary.is_empty() {
        return Err(Error::Config("nothing to plot: no evaluations".into()));
    }
    // the interpolant endpoints come from the first curve (identical across
    // kinds: all curves share the two minimizers)
    let first = &primary[0].records;
    let e0 = metric_value(&first[0], metric)?;
    let e1 = metric_value(&first[first.len() - 1], metric)?;

    let mut vmin = f64::INFINITY;
    let mut vmax = f64::NEG_INFINITY;
    for ev in &primary {
        for r in &ev.records {
            let v = metric_value(r, metric)?;
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
    }
    let is_loss = metric.starts_with("loss");
    if is_loss {
        vmin = vmin.min(e0.min(e1) - tau);
        vmax = vmax.max(e0.max(e1) + tau);
    }
    if !(vmax - vmin).is_finite() || vmax - vmin < 1e-9 {
        vmin -= 0.5;
        vmax += 0.5;
    } else {
        let pad = 0.06 * (vmax - vmin);
        vmin -= pad;
        vmax += pad;
    }
    let scale = Scale { vmin, vmax };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#
    );

    // tolerance band around the interpolant
    if is_loss {
        let _ = writeln!(
            s,
            r##"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="#cccccc" fill-opacity="0.35"/>"##,
            scale.x(0.0),
            scale.y(e0 - tau),
            scale.x(1.0),
            scale.y(e1 - tau),
            scale.x(1.0),
            scale.y(e1 + tau),
            scale.x(0.0),
            scale.y(e0 + tau),
        );
    }

    // axes
    let _ = writeln!(
        s,
        r#"<line x1="{ML}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="1"/>"#,
        H - MB,
        W - MR,
        H - MB
    );
    let _ = writeln!(
        s,
        r#"<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{:.2}" stroke="black" stroke-width="1"/>"#,
        H - MB
    );
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{t}</text>"#,
            scale.x(t),
            H - MB + 16.0
        );
        let v = vmin + t * (vmax - vmin);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{v:.3}</text>"#,
            ML - 6.0,
            scale.y(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">t</text>"#,
        (ML + W - MR) / 2.0,
        H - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {mid:.2})">{metric}</text>"#,
        14.0,
        (MT + H - MB) / 2.0,
        mid = (MT + H - MB) / 2.0,
    );

    // dashed interpolant
    let _ = writeln!(
        s,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#444444" stroke-width="1" stroke-dasharray="6,4"/>"##,
        scale.x(0.0),
        scale.y(e0),
        scale.x(1.0),
        scale.y(e1)
    );

    // one polyline per curve kind
    for (i, ev) in primary.iter().enumerate() {
        let pts: Vec<String> = ev
            .records
            .iter()
            .map(|r| {
                let v = metric_value(r, metric).expect("validated metric");
                format!("{:.3},{:.3}", scale.x(r.t), scale.y(v))
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            pts.join(" "),
            color(ev.kind.name())
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" fill="{}">{}</text>"#,
            W - MR - 80.0,
            MT + 16.0 * (i + 1) as f64,
            color(ev.kind.name()),
            ev.kind.name()
        );
    }

    // endpoint markers
    for (t, v) in [(0.0, e0), (1.0, e1)] {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="black"/>"#,
            scale.x(t),
            scale.y(v)
        );
    }

    let _ = writeln!(s, "</svg>");
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    std::fs::write(path, s).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::CurveKind;
    use crate::eval::{barrier_profile, BarrierReport};

    fn flat_eval(n: usize) -> CurveEvaluation {
        let records: Vec<MetricRecord> = (0..n)
            .map(|i| MetricRecord {
                t: i as f64 / (n - 1) as f64,
                loss_retain: 0.3,
                loss_forget: 2.0,
                acc_test: 0.9,
                acc_forget: 0.4,
                acc_retain: 0.95,
                zrf: 0.8,
                forget_quality: 0.5,
            })
            .collect();
        let barrier: BarrierReport =
            barrier_profile(&records, (&records[0], &records[n - 1]), 0.05).unwrap();
        CurveEvaluation {
            kind: CurveKind::Linear,
            replicate: 0,
            records,
            barrier,
            mc_standard_barrier: 0.0,
        }
    }

    // minimal structural XML check: every opened tag closes in order
    fn assert_well_formed(xml: &str) {
        let mut stack: Vec<String> = Vec::new();
        let mut rest = xml;
        while let Some(start) = rest.find('<') {
            let end = rest[start..].find('>').expect("unclosed angle bracket") + start;
            let tag = &rest[start + 1..end];
            rest = &rest[end + 1..];
            if let Some(name) = tag.strip_prefix('/') {
                assert_eq!(stack.pop().as_deref(), Some(name.trim()), "mismatched close");
            } else if !tag.ends_with('/') && !tag.starts_with('?') && !tag.starts_with('!') {
                let name = tag.split_whitespace().next().unwrap().to_string();
                stack.push(name);
            }
        }
        assert!(stack.is_empty(), "unclosed tags: {stack:?}");
    }

    #[test]
    fn svg_is_well_formed_and_has_one_vertex_per_sample() {
        let dir = std::env::temp_dir().join(format!("mcu-plot-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("flat.svg");
        emit_plot(&[flat_eval(16)], "loss_retain", 0.05, &path).unwrap();
        let xml = std::fs::read_to_string(&path).unwrap();
        assert_well_formed(&xml);

        let poly = xml
            .lines()
            .find(|l| l.starts_with("<polyline"))
            .expect("polyline present");
        let pts = poly.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(pts.split_whitespace().count(), 16);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn flat_profile_coincides_with_the_dashed_interpolant() {
        let dir = std::env::temp_dir().join(format!("mcu-plot2-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("flat2.svg");
        emit_plot(&[flat_eval(8)], "loss_retain", 0.05, &path).unwrap();
        let xml = std::fs::read_to_string(&path).unwrap();

        let dashed = xml
            .lines()
            .find(|l| l.contains("stroke-dasharray"))
            .expect("interpolant line");
        let y1: f64 = dashed.split("y1=\"").nth(1).unwrap().split('"').next().unwrap().parse().unwrap();
        let y2: f64 = dashed.split("y2=\"").nth(1).unwrap().split('"').next().unwrap().parse().unwrap();
        assert!((y1 - y2).abs() < 1e-9);

        let poly = xml.lines().find(|l| l.starts_with("<polyline")).unwrap();
        let pts = poly.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        for p in pts.split_whitespace() {
            let y: f64 = p.split(',').nth(1).unwrap().parse().unwrap();
            assert!((y - y1).abs() < 0.01, "vertex y {y} vs interpolant {y1}");
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn unknown_metric_lists_the_valid_names() {
        let err = emit_plot(&[flat_eval(4)], "bogus", 0.05, Path::new("/tmp/x.svg"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("loss_retain") && err.contains("zrf"), "{err}");
    }
}
