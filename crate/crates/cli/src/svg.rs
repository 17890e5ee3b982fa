//! Minimal static SVG emission for metric distributions and loss curves.

/// Bar chart over labeled values.
pub fn bar_chart(title: &str, labels: &[String], values: &[f64]) -> String {
    assert_eq!(labels.len(), values.len());
    let w = 640.0;
    let h = 360.0;
    let margin = 48.0;
    let max = values.iter().cloned().fold(f64::MIN, f64::max).max(1e-9);
    let min = values.iter().cloned().fold(f64::MAX, f64::min).min(0.0);
    let span = (max - min).max(1e-9);
    let n = values.len().max(1);
    let bw = (w - 2.0 * margin) / n as f64;
    let mut s = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    s.push_str(&format!(
        r#"<text x="{}" y="24" font-family="monospace" font-size="16" text-anchor="middle">{title}</text>"#,
        w / 2.0
    ));
    s.push_str(&format!(
        r##"<line x1="{margin}" y1="{}" x2="{}" y2="{}" stroke="#333"/>"##,
        h - margin,
        w - margin,
        h - margin
    ));
    for (i, &v) in values.iter().enumerate() {
        let bh = ((v - min) / span) * (h - 2.0 * margin);
        let x = margin + i as f64 * bw;
        let y = h - margin - bh;
        s.push_str(&format!(
            r##"<rect x="{:.1}" y="{y:.1}" width="{:.1}" height="{bh:.1}" fill="#4878a8"/>"##,
            x + bw * 0.1,
            bw * 0.8
        ));
        if n <= 24 {
            s.push_str(&format!(
                r#"<text x="{:.1}" y="{}" font-family="monospace" font-size="9" text-anchor="middle">{}</text>"#,
                x + bw / 2.0,
                h - margin + 14.0,
                labels[i]
            ));
        }
    }
    s.push_str(&format!(
        r#"<text x="12" y="{}" font-family="monospace" font-size="11">{max:.3}</text>"#,
        margin
    ));
    s.push_str("</svg>\n");
    s
}

/// Line chart over (x, y) points.
pub fn line_chart(title: &str, points: &[(f64, f64)]) -> String {
    let w = 640.0;
    let h = 360.0;
    let margin = 48.0;
    let (mut xmin, mut xmax) = (f64::MAX, f64::MIN);
    let (mut ymin, mut ymax) = (f64::MAX, f64::MIN);
    for &(x, y) in points {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    let xs = (xmax - xmin).max(1e-9);
    let ys = (ymax - ymin).max(1e-9);
    let mut path = String::new();
    for (i, &(x, y)) in points.iter().enumerate() {
        let px = margin + (x - xmin) / xs * (w - 2.0 * margin);
        let py = h - margin - (y - ymin) / ys * (h - 2.0 * margin);
        path.push_str(if i == 0 { "M" } else { "L" });
        path.push_str(&format!("{px:.1},{py:.1} "));
    }
    format!(
        concat!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
            r#"<text x="{tx}" y="24" font-family="monospace" font-size="16" text-anchor="middle">{title}</text>"#,
            r##"<path d="{path}" fill="none" stroke="#a84848" stroke-width="1.5"/>"##,
            r#"<text x="12" y="{m}" font-family="monospace" font-size="11">{ymax:.4}</text>"#,
            r#"<text x="12" y="{hb}" font-family="monospace" font-size="11">{ymin:.4}</text>"#,
            "</svg>\n"
        ),
        w = w,
        h = h,
        tx = w / 2.0,
        title = title,
        path = path,
        m = margin,
        hb = h - margin,
        ymax = ymax,
        ymin = ymin,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_emit_svg() {
        let svg = bar_chart("Tobj", &["a".into(), "b".into()], &[1.0, 2.0]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("rect"));
        let svg = line_chart("loss", &[(0.0, 1.0), (1.0, 0.5)]);
        assert!(svg.contains("path"));
    }
}
