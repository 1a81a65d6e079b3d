//! Hand-written SVG line plots for sweep results: one panel per metric, one
//! series per length, mean line over a +/-1 std band.

use std::fmt::Write as _;

use dpgenlab_core::empirical::{Metric, SweepResult};

const PANEL_W: f64 = 340.0;
const PANEL_H: f64 = 240.0;
const COLUMNS: usize = 3;
const MARGIN_L: f64 = 58.0;
const MARGIN_R: f64 = 14.0;
const MARGIN_T: f64 = 28.0;
const MARGIN_B: f64 = 38.0;
const LEGEND_H: f64 = 30.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    // NaN bounds fall through to the padded branch
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    fn new(lo: f64, hi: f64) -> Self {
        if !(hi > lo) {
            let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
            return Self {
                lo: lo - pad,
                hi: hi + pad,
            };
        }
        let pad = (hi - lo) * 0.05;
        Self {
            lo: lo - pad,
            hi: hi + pad,
        }
    }

    fn map(&self, v: f64, from: f64, to: f64) -> f64 {
        from + (v - self.lo) / (self.hi - self.lo) * (to - from)
    }
}

fn label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

pub fn render(result: &SweepResult) -> String {
    let lengths = result.lengths();
    let rows = Metric::ALL.len().div_ceil(COLUMNS);
    let width = PANEL_W * COLUMNS as f64;
    let height = PANEL_H * rows as f64 + LEGEND_H;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);

    for (i, &l) in lengths.iter().enumerate() {
        let x = 12.0 + 90.0 * i as f64;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<line x1="{x}" y1="16" x2="{}" y2="16" stroke="{color}" stroke-width="2"/><text x="{}" y="20">L = {l}</text>"#,
            x + 22.0,
            x + 27.0
        );
    }

    for (k, metric) in Metric::ALL.iter().enumerate() {
        let ox = PANEL_W * (k % COLUMNS) as f64;
        let oy = LEGEND_H + PANEL_H * (k / COLUMNS) as f64;
        let series: Vec<Vec<(f64, f64, f64)>> = lengths.iter().map(|&l| result.series(*metric, l)).collect();
        let points = series.iter().flatten();
        let (mut tlo, mut thi, mut ylo, mut yhi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(t, m, sd) in points {
            tlo = tlo.min(t);
            thi = thi.max(t);
            ylo = ylo.min(m - sd);
            yhi = yhi.max(m + sd);
        }
        if !tlo.is_finite() {
            continue;
        }
        let xa = Axis {
            lo: tlo,
            hi: if thi > tlo { thi } else { tlo + 1.0 },
        };
        let ya = Axis::new(ylo, yhi);
        let (x0, x1) = (ox + MARGIN_L, ox + PANEL_W - MARGIN_R);
        let (y0, y1) = (oy + PANEL_H - MARGIN_B, oy + MARGIN_T);

        let _ = writeln!(
            s,
            r##"<g><text x="{:.1}" y="{:.1}" text-anchor="middle" font-weight="bold">{}</text>"##,
            (x0 + x1) / 2.0,
            oy + 16.0,
            metric.name()
        );
        let _ = writeln!(
            s,
            r##"<rect x="{x0:.1}" y="{y1:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#444"/>"##,
            x1 - x0,
            y0 - y1
        );
        for j in 0..=4 {
            let yv = ya.lo + (ya.hi - ya.lo) * j as f64 / 4.0;
            let y = ya.map(yv, y0, y1);
            let _ = writeln!(
                s,
                r##"<line x1="{:.1}" y1="{y:.1}" x2="{x0:.1}" y2="{y:.1}" stroke="#444"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
                x0 - 4.0,
                x0 - 6.0,
                y + 4.0,
                label(yv)
            );
            let tv = xa.lo + (xa.hi - xa.lo) * j as f64 / 4.0;
            let x = xa.map(tv, x0, x1);
            let _ = writeln!(
                s,
                r##"<line x1="{x:.1}" y1="{y0:.1}" x2="{x:.1}" y2="{:.1}" stroke="#444"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"##,
                y0 + 4.0,
                y0 + 16.0,
                label(tv)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">T</text>"#,
            (x0 + x1) / 2.0,
            y0 + 32.0
        );

        for (i, pts) in series.iter().enumerate() {
            if pts.is_empty() {
                continue;
            }
            let color = PALETTE[i % PALETTE.len()];
            // upper edge forward, lower edge backward
            let mut band = String::new();
            for &(t, m, sd) in pts {
                let _ = write!(band, "{:.2},{:.2} ", xa.map(t, x0, x1), ya.map(m + sd, y0, y1));
            }
            for &(t, m, sd) in pts.iter().rev() {
                let _ = write!(band, "{:.2},{:.2} ", xa.map(t, x0, x1), ya.map(m - sd, y0, y1));
            }
            let _ = writeln!(
                s,
                r#"<polygon points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#,
                band.trim_end()
            );
            let line: Vec<String> = pts
                .iter()
                .map(|&(t, m, _)| format!("{:.2},{:.2}", xa.map(t, x0, x1), ya.map(m, y0, y1)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.6"/>"#,
                line.join(" ")
            );
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}
