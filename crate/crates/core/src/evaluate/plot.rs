//! Minimal SVG line charts over categorical x positions.

use std::fmt::Write;

pub struct Series {
    pub name: String,
    /// One value per category; gaps are skipped.
    pub values: Vec<Option<f64>>,
    pub emphasis: bool,
}

const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#b07aa1", "#76b7b2", "#9c755f"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn line_chart_svg(title: &str, y_label: &str, categories: &[&str], series: &[Series]) -> String {
    let (width, height) = (760.0, 420.0);
    let (left, right, top, bottom) = (70.0, 170.0, 40.0, 80.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;

    let vals: Vec<f64> = series.iter().flat_map(|s| s.values.iter().flatten().copied()).collect();
    let (mut lo, mut hi) = vals
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.08 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);

    let n = categories.len().max(1);
    let x_at = |i: usize| left + plot_w * (i as f64 + 0.5) / n as f64;
    let y_at = |v: f64| top + plot_h * (1.0 - (v - lo) / (hi - lo));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        left + plot_w / 2.0,
        escape(title)
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let y = y_at(v);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
            left + plot_w,
            left - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text transform="translate(18,{:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        top + plot_h / 2.0,
        escape(y_label)
    );
    for (i, c) in categories.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" transform="rotate(-25 {:.1} {:.1})">{}</text>"#,
            x_at(i),
            top + plot_h + 18.0,
            x_at(i),
            top + plot_h + 18.0,
            escape(c)
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for (si, ser) in series.iter().enumerate() {
        let color = if ser.emphasis { "black" } else { PALETTE[si % PALETTE.len()] };
        let stroke = if ser.emphasis { 3.0 } else { 1.5 };
        let mut path = String::new();
        let mut pen_down = false;
        for (i, v) in ser.values.iter().enumerate() {
            match v {
                Some(v) => {
                    let _ = write!(path, "{}{:.1},{:.1} ", if pen_down { "L" } else { "M" }, x_at(i), y_at(*v));
                    pen_down = true;
                    let _ = writeln!(
                        s,
                        r#"<circle cx="{:.1}" cy="{:.1}" r="{}" fill="{color}"/>"#,
                        x_at(i),
                        y_at(*v),
                        stroke + 1.0
                    );
                }
                None => {
                    pen_down = false;
                    let _ = writeln!(
                        s,
                        r#"<text x="{:.1}" y="{:.1}" fill="red" text-anchor="middle">x</text>"#,
                        x_at(i),
                        top + plot_h - 6.0
                    );
                }
            }
        }
        let _ = writeln!(
            s,
            r#"<path d="{}" fill="none" stroke="{color}" stroke-width="{stroke}"/>"#,
            path.trim_end()
        );
        let ly = top + 14.0 + 18.0 * si as f64;
        let lx = left + plot_w + 14.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="{stroke}"/><text x="{}" y="{}">{}</text>"#,
            lx + 22.0,
            lx + 28.0,
            ly + 4.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}
