//! Minimal SVG bar charts and heatmaps.

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Vertical bars over `[lo, hi]`; `NaN` bars are drawn as empty slots.
pub fn bar_chart(title: &str, labels: &[String], values: &[f64], lo: f64, hi: f64) -> String {
    let (w, h, pad) = (80.0 * labels.len().max(1) as f64 + 80.0, 320.0, 50.0);
    let plot_h = h - 2.0 * pad;
    let y_of = |v: f64| pad + plot_h * (1.0 - (v.clamp(lo, hi) - lo) / (hi - lo));
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        w / 2.0,
        esc(title)
    );
    let zero = y_of(0.0_f64.clamp(lo, hi));
    s.push_str(&format!(
        "<line x1=\"{pad}\" y1=\"{zero:.1}\" x2=\"{}\" y2=\"{zero:.1}\" stroke=\"#444\"/>\n",
        w - 30.0
    ));
    for (i, (l, &v)) in labels.iter().zip(values).enumerate() {
        let x = pad + 80.0 * i as f64 + 10.0;
        if v.is_finite() {
            let y = y_of(v);
            let (top, height) = if y < zero { (y, zero - y) } else { (zero, y - zero) };
            s.push_str(&format!(
                "<rect x=\"{x:.1}\" y=\"{top:.1}\" width=\"56\" height=\"{height:.1}\" fill=\"#4a7ab5\"/>\n\
                 <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{v:.3}</text>\n",
                x + 28.0,
                top - 4.0
            ));
        }
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            x + 28.0,
            h - pad + 16.0,
            esc(l)
        ));
    }
    s.push_str("</svg>\n");
    s
}

/// Square heatmap of `cells[row][col]` with values mapped over `[-1, 1]`.
pub fn heatmap(title: &str, rows: &[String], cols: &[String], cells: &[Vec<f64>]) -> String {
    let cell = 70.0;
    let (left, top) = (90.0, 60.0);
    let w = left + cell * cols.len() as f64 + 20.0;
    let h = top + cell * rows.len() as f64 + 20.0;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        w / 2.0,
        esc(title)
    );
    for (j, c) in cols.iter().enumerate() {
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            left + cell * (j as f64 + 0.5),
            top - 8.0,
            esc(c)
        ));
    }
    for (i, r) in rows.iter().enumerate() {
        let y = top + cell * i as f64;
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
            left - 6.0,
            y + cell / 2.0 + 4.0,
            esc(r)
        ));
        for (j, &v) in cells[i].iter().enumerate() {
            let x = left + cell * j as f64;
            let fill = if v.is_finite() {
                let t = ((v + 1.0) / 2.0).clamp(0.0, 1.0);
                let red = (255.0 * (1.0 - t)) as u8;
                let blue = (255.0 * t) as u8;
                format!("rgb({red},{},{blue})", 120 + (60.0 * (1.0 - (2.0 * t - 1.0).abs())) as u8)
            } else {
                "#ddd".to_string()
            };
            s.push_str(&format!(
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell}\" height=\"{cell}\" fill=\"{fill}\" stroke=\"#fff\"/>\n\
                 <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" fill=\"#fff\">{}</text>\n",
                x + cell / 2.0,
                y + cell / 2.0 + 4.0,
                if v.is_finite() { format!("{v:.3}") } else { "n/a".into() }
            ));
        }
    }
    s.push_str("</svg>\n");
    s
}
