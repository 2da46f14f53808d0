//! Minimal SVG line charts of one column against `τ`.

const W: f64 = 640.0;
const H: f64 = 320.0;
const PAD: f64 = 48.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Polyline chart of `points`; non-finite points are skipped. `None` if fewer than two remain.
pub fn line_chart(title: &str, points: &[(f64, f64)]) -> Option<String> {
    let pts: Vec<(f64, f64)> = points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    if pts.len() < 2 {
        return None;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        let pad = if y0 == 0.0 { 1.0 } else { 0.5 * y0.abs() };
        y0 -= pad;
        y1 += pad;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"monospace\" font-size=\"11\">\n"
    );
    s += &format!("<rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>\n", W - 2.0 * PAD, H - 2.0 * PAD);
    s += &format!("<text x=\"{PAD}\" y=\"{}\">{}</text>\n", PAD - 16.0, esc(title));
    s += &format!("<text x=\"4\" y=\"{}\">{:.4e}</text>\n", PAD + 4.0, y1);
    s += &format!("<text x=\"4\" y=\"{}\">{:.4e}</text>\n", H - PAD, y0);
    s += &format!("<text x=\"{PAD}\" y=\"{}\">{:.4}</text>\n", H - PAD + 16.0, x0);
    s += &format!("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.4}</text>\n", W - PAD, H - PAD + 16.0, x1);
    s += &format!("<polyline fill=\"none\" stroke=\"#1f5fbf\" stroke-width=\"1.5\" points=\"{}\"/>\n", path.join(" "));
    s += "</svg>\n";
    Some(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_polyline_and_skips_degenerate_input() {
        let s = line_chart("a<b", &[(0.0, 1.0), (1.0, 2.0), (2.0, f64::NAN)]).unwrap();
        assert!(s.contains("<polyline") && s.contains("a&lt;b"));
        assert_eq!(s.matches(',').count(), 2);
        assert!(line_chart("x", &[(0.0, 1.0)]).is_none());
        assert!(line_chart("flat", &[(0.0, 1.0), (1.0, 1.0)]).is_some());
    }
}
