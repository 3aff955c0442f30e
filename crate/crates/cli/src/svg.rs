//! Minimal SVG plots: polylines for traces, points with whiskers for error bars.
//! Output depends only on the data, so files diff cleanly.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// half-height of each whisker; `Some` draws markers with error bars instead of a line
    pub err: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * lo.abs().max(1.0) {
        let pad = 0.5 * lo.abs().max(1.0);
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

/// Tick step from {1, 2, 5}·10ᵏ giving about five intervals.
fn tick_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag)
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = tick_step(hi - lo);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn label(v: f64) -> String {
    let s = format!("{:.4}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render(plot: &Plot) -> String {
    let (x0, x1) = extent(plot.series.iter().flat_map(|s| s.x.iter().copied()));
    let (y0, y1) = extent(plot.series.iter().flat_map(|s| {
        let e = s.err.clone().unwrap_or_else(|| vec![0.0; s.y.len()]);
        s.y.iter().zip(e).flat_map(|(y, e)| [y - e, y + e]).collect::<Vec<_>>()
    }));
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_T + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut o = String::new();
    let _ = writeln!(o, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(o, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(o, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#, MARGIN_L + pw / 2.0, escape(&plot.title));
    let _ = writeln!(o, r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for t in ticks(x0, x1) {
        let x = sx(t);
        let _ = writeln!(o, r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, MARGIN_T + ph, MARGIN_T + ph + 5.0);
        let _ = writeln!(o, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, MARGIN_T + ph + 18.0, label(t));
    }
    for t in ticks(y0, y1) {
        let y = sy(t);
        let _ = writeln!(o, r#"<line x1="{:.2}" y1="{y:.2}" x2="{MARGIN_L}" y2="{y:.2}" stroke="black"/>"#, MARGIN_L - 5.0);
        let _ = writeln!(o, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, MARGIN_L - 8.0, y + 4.0, label(t));
    }
    let _ = writeln!(o, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, MARGIN_L + pw / 2.0, HEIGHT - 10.0, escape(&plot.x_label));
    let _ = writeln!(
        o,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        MARGIN_T + ph / 2.0,
        MARGIN_T + ph / 2.0,
        escape(&plot.y_label)
    );

    for (i, s) in plot.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts = s.x.iter().zip(&s.y).filter(|(x, y)| x.is_finite() && y.is_finite());
        match &s.err {
            None => {
                let path: Vec<String> = pts.map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
                let _ = writeln!(o, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
            }
            Some(err) => {
                for ((x, y), e) in s.x.iter().zip(&s.y).zip(err) {
                    if !(x.is_finite() && y.is_finite() && e.is_finite()) {
                        continue;
                    }
                    let (cx, top, bottom) = (sx(*x), sy(y + e), sy(y - e));
                    let _ = writeln!(o, r#"<line x1="{cx:.2}" y1="{top:.2}" x2="{cx:.2}" y2="{bottom:.2}" stroke="{color}"/>"#);
                    for w in [top, bottom] {
                        let _ = writeln!(o, r#"<line x1="{:.2}" y1="{w:.2}" x2="{:.2}" y2="{w:.2}" stroke="{color}"/>"#, cx - 4.0, cx + 4.0);
                    }
                    let _ = writeln!(o, r#"<circle cx="{cx:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sy(*y));
                }
            }
        }
        let ly = MARGIN_T + 14.0 + 18.0 * i as f64;
        let lx = WIDTH - MARGIN_R + 12.0;
        let _ = writeln!(o, r#"<line x1="{lx}" y1="{:.1}" x2="{}" y2="{:.1}" stroke="{color}" stroke-width="2"/>"#, ly - 4.0, lx + 18.0, ly - 4.0);
        let _ = writeln!(o, r#"<text x="{}" y="{ly:.1}">{}</text>"#, lx + 24.0, escape(&s.label));
    }
    o.push_str("</svg>\n");
    o
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(err: Option<Vec<f64>>) -> Series {
        Series { label: "a<b".into(), x: vec![0.0, 1.0, 2.0], y: vec![1.0, 3.0, 2.0], err }
    }

    #[test]
    fn tick_steps() {
        assert_eq!(tick_step(10.0), 2.0);
        assert_eq!(tick_step(1.0), 0.2);
        assert_eq!(tick_step(300.0), 100.0);
        assert_eq!(ticks(0.0, 10.0), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
    }

    #[test]
    fn line_plot_is_well_formed() {
        let svg = render(&Plot { title: "t".into(), series: vec![series(None)], ..Default::default() });
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("a&lt;b"));
    }

    #[test]
    fn error_bars_draw_whiskers() {
        let svg = render(&Plot { series: vec![series(Some(vec![0.5; 3]))], ..Default::default() });
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(!svg.contains("<polyline"));
    }

    #[test]
    fn constant_and_empty_data_render() {
        let flat = Series { label: "c".into(), x: vec![1.0, 1.0], y: vec![2.0, 2.0], err: None };
        assert!(render(&Plot { series: vec![flat], ..Default::default() }).contains("<polyline"));
        assert!(render(&Plot::default()).ends_with("</svg>\n"));
    }
}
