//! Static SVG bar charts.

use std::fmt::Write;

const WIDTH: f64 = 560.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 48.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// One bar per `(label, value)`; `None` values are drawn as a hatched
/// placeholder and labelled "undefined".
pub fn bar_chart(title: &str, unit: &str, bars: &[(String, Option<f64>)]) -> String {
    let max = bars
        .iter()
        .filter_map(|(_, v)| *v)
        .fold(0.0_f64, f64::max)
        .max(1e-9);
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let slot = plot_w / bars.len().max(1) as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let base = HEIGHT - MARGIN;
    let _ = writeln!(
        svg,
        r##"<line x1="{MARGIN}" y1="{base}" x2="{}" y2="{base}" stroke="#333"/>"##,
        WIDTH - MARGIN
    );
    for (i, (label, value)) in bars.iter().enumerate() {
        let x = MARGIN + slot * i as f64 + slot * 0.15;
        let w = slot * 0.7;
        let cx = x + w / 2.0;
        match value {
            Some(v) => {
                let h = plot_h * v / max;
                let _ = writeln!(
                    svg,
                    r##"<rect x="{x:.1}" y="{:.1}" width="{w:.1}" height="{h:.1}" fill="#4a7ab5"/>"##,
                    base - h
                );
                let _ = writeln!(
                    svg,
                    r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{v:.2}{}</text>"#,
                    base - h - 4.0,
                    escape(unit)
                );
            }
            None => {
                let _ = writeln!(
                    svg,
                    r##"<rect x="{x:.1}" y="{:.1}" width="{w:.1}" height="12" fill="none" stroke="#999" stroke-dasharray="3 2"/>"##,
                    base - 12.0
                );
                let _ = writeln!(
                    svg,
                    r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">undefined</text>"#,
                    base - 16.0
                );
            }
        }
        let _ = writeln!(
            svg,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            base + 16.0,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bars_and_placeholders() {
        let svg = bar_chart("DoB", "%", &[("bmt".into(), Some(12.5)), ("a<b".into(), None)]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("12.50%"));
        assert!(svg.contains("undefined"));
        assert!(svg.contains("a&lt;b"));
        assert_eq!(svg.matches("<rect").count(), 3);
    }
}
