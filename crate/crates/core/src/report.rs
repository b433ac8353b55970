//! Reading metric files and summarizing runs across seeds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::trainer::{EpochMetrics, METRICS_HEADER};

pub const THRESHOLDS: [f64; 3] = [0.5, 0.75, 0.95];
pub const UNREACHED: &str = "not reached";

pub fn parse_metrics(text: &str) -> Result<Vec<EpochMetrics>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        _ => return Err(Error::Metrics(format!("expected header {METRICS_HEADER:?}"))),
    }
    let mut rows = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Metrics(format!("line {}: {what}: {line:?}", n + 1));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        let float = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite());
        let row = EpochMetrics {
            seed: f[0].parse().map_err(|_| bad("bad seed"))?,
            epoch: f[1].parse().map_err(|_| bad("bad epoch"))?,
            interactions: f[2].parse().map_err(|_| bad("bad interactions"))?,
            success_rate: float(f[3]).ok_or_else(|| bad("bad success rate"))?,
            mean_return: float(f[4]).ok_or_else(|| bad("bad return"))?,
            wall_secs: float(f[5]).ok_or_else(|| bad("bad wall time"))?,
        };
        if !(0.0..=1.0).contains(&row.success_rate) {
            return Err(bad("success rate outside [0, 1]"));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Metrics("no metric rows".into()));
    }
    Ok(rows)
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    let text = std::fs::read_to_string(path)?;
    parse_metrics(&text).map_err(|e| Error::Metrics(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub interactions: u64,
    pub mean: f64,
    pub std: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    pub points: Vec<CurvePoint>,
}

/// Seed-mean success per evaluation point. A seed that stopped early keeps
/// contributing its last evaluation to later points.
pub fn seed_curve(label: &str, rows: &[EpochMetrics]) -> Curve {
    let mut by_seed: BTreeMap<u64, BTreeMap<u64, f64>> = BTreeMap::new();
    for r in rows {
        by_seed
            .entry(r.seed)
            .or_default()
            .insert(r.interactions, r.success_rate);
    }
    let xs: BTreeSet<u64> = rows.iter().map(|r| r.interactions).collect();
    let points = xs
        .into_iter()
        .map(|x| {
            let vals: Vec<f64> = by_seed
                .values()
                .filter_map(|evals| evals.range(..=x).next_back().map(|(_, v)| *v))
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            CurvePoint {
                interactions: x,
                mean,
                std: var.sqrt(),
                seeds: vals.len(),
            }
        })
        .collect();
    Curve {
        label: label.to_string(),
        points,
    }
}

/// First evaluation point whose seed-mean success reaches `threshold`.
pub fn interactions_to(curve: &Curve, threshold: f64) -> Option<u64> {
    curve
        .points
        .iter()
        .find(|p| p.mean >= threshold)
        .map(|p| p.interactions)
}

pub fn comparison_table(curves: &[Curve], thresholds: &[f64]) -> String {
    let mut out = String::from("run");
    for t in thresholds {
        let _ = write!(out, "\tto {:.0}%", t * 100.0);
    }
    out.push_str("\tfinal success\n");
    for c in curves {
        out.push_str(&c.label);
        for &t in thresholds {
            match interactions_to(c, t) {
                Some(x) => {
                    let _ = write!(out, "\t{x}");
                }
                None => {
                    let _ = write!(out, "\t{UNREACHED}");
                }
            }
        }
        let last = c.points.last().map_or(0.0, |p| p.mean);
        let _ = writeln!(out, "\t{last:.3}");
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Success curves with a mean plus/minus one std band per run.
pub fn render_svg(curves: &[Curve]) -> String {
    let (w, h, margin) = (640.0, 400.0, 50.0);
    let max_x = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.interactions))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let sx = |x: u64| margin + (w - 2.0 * margin) * x as f64 / max_x;
    let sy = |y: f64| h - margin - (h - 2.0 * margin) * y.clamp(0.0, 1.0);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<path d="M{m} {t} L{m} {b} L{r} {b}" stroke="black" fill="none"/>"#,
        m = margin,
        t = margin,
        b = h - margin,
        r = w - margin
    );
    for tick in [0.0, 0.5, 1.0] {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{tick}</text>"#,
            margin - 6.0,
            sy(tick) + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">interactions ({} max)</text>"#,
        w / 2.0,
        h - 12.0,
        max_x
    );
    for (k, c) in curves.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if c.points.is_empty() {
            continue;
        }
        let mut band = String::new();
        for p in &c.points {
            let _ = write!(band, "{:.2},{:.2} ", sx(p.interactions), sy(p.mean + p.std));
        }
        for p in c.points.iter().rev() {
            let _ = write!(band, "{:.2},{:.2} ", sx(p.interactions), sy(p.mean - p.std));
        }
        let _ = writeln!(
            out,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            band.trim_end()
        );
        let line: Vec<String> = c
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.interactions), sy(p.mean)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{}</text>"#,
            margin + 10.0,
            margin + 16.0 * (k as f64 + 1.0),
            escape(&c.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, epoch: usize, x: u64, s: f64) -> EpochMetrics {
        EpochMetrics {
            seed,
            epoch,
            interactions: x,
            success_rate: s,
            mean_return: -1.0,
            wall_secs: 0.0,
        }
    }

    #[test]
    fn threshold_uses_seed_mean() {
        let rows = vec![
            row(1, 1, 100, 0.4),
            row(2, 1, 100, 0.8),
            row(1, 2, 200, 0.9),
            row(2, 2, 200, 1.0),
        ];
        let c = seed_curve("a", &rows);
        assert_eq!(interactions_to(&c, 0.5), Some(100));
        assert_eq!(interactions_to(&c, 0.95), Some(200));
        assert_eq!(interactions_to(&c, 0.96), None);
        assert!((c.points[0].std - 0.2).abs() < 1e-12);
        let t = comparison_table(&[c], &THRESHOLDS);
        assert!(t.contains("a\t100\t200\t200"));
    }

    #[test]
    fn stopped_seed_carries_forward() {
        let rows = vec![row(1, 1, 100, 1.0), row(2, 1, 100, 0.0), row(2, 2, 200, 0.5)];
        let c = seed_curve("a", &rows);
        assert_eq!(c.points[1].mean, 0.75);
        assert_eq!(c.points[1].seeds, 2);
    }

    #[test]
    fn malformed_rows_are_reported() {
        let err = parse_metrics(&format!("{METRICS_HEADER}\n1,1,100,abc,0,0\n")).unwrap_err();
        assert!(err.to_string().contains("line 2"));
        assert!(parse_metrics("a,b\n").is_err());
        assert!(parse_metrics(&format!("{METRICS_HEADER}\n")).is_err());
    }

    #[test]
    fn svg_is_well_formed() {
        let c = seed_curve("x<y", &[row(1, 1, 10, 0.5)]);
        let svg = render_svg(&[c]);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("x&lt;y"));
    }
}
