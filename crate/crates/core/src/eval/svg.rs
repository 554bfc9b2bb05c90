//! Minimal SVG 1.1 line plots: axes, tick labels, one polyline per series.

use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders `series` on shared axes. The y range always includes `y_range`.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series], y_range: (f64, f64)) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (mut x0, mut x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let ys = series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
    let (mut y0, mut y1) = ys.fold(y_range, |(a, b), y| (a.min(y), b.max(y)));
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, WIDTH / 2.0, escape(title));
    let (l, r, b, t) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<polyline points="{l},{t} {l},{b} {r},{b}" fill="none" stroke="black"/>"#);
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xv:.2}</text>"#, px(xv), b + 14.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.2}</text>"#, l - 4.0, py(yv) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 10.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{0}" text-anchor="middle" transform="rotate(-90 14 {0})">{1}</text>"#,
        HEIGHT / 2.0,
        escape(y_label)
    );
    for (k, ser) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}">{}</text>"#,
            r - 100.0,
            t + 14.0 * (k as f64 + 1.0),
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plot_is_well_formed_and_deterministic() {
        let series = vec![
            Series { name: "with <reg>".into(), points: vec![(1.0, 0.5), (2.0, 0.4)] },
            Series { name: "without".into(), points: vec![(1.0, 0.5), (2.0, 0.3)] },
        ];
        let a = line_plot("t", "x", "y", &series, (0.0, 1.0));
        assert_eq!(a, line_plot("t", "x", "y", &series, (0.0, 1.0)));
        assert!(a.starts_with("<?xml") && a.trim_end().ends_with("</svg>"));
        assert_eq!(a.matches("stroke-width=\"2\"").count(), 2);
        assert!(a.contains("with &lt;reg&gt;"));
        let empty = line_plot("t", "x", "y", &[], (0.0, 1.0));
        assert!(empty.contains("</svg>"));
    }
}
