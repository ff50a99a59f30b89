//! Minimal SVG plot emitter (no plotting dependency). Every plotted point
//! carries `data-x`/`data-y` attributes with the exact table values.

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 130.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.06 * (hi - lo);
    (lo - pad, hi + pad)
}

fn ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if a >= 1e4 || a < 1e-2 {
        format!("{:.1e}", v)
    } else {
        format!("{:.3}", v)
    }
}

/// Polyline + point plot; one colored series per entry.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * (WIDTH - MARGIN_L - MARGIN_R);
    let sy = |y: f64| HEIGHT - MARGIN_B - (y - y0) / (y1 - y0) * (HEIGHT - MARGIN_T - MARGIN_B);

    let mut out = String::new();
    out.push_str(&format!(
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">
<rect width="{w}" height="{h}" fill="white"/>
<text x="{tx}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{title}</text>
"#,
        w = WIDTH,
        h = HEIGHT,
        tx = WIDTH / 2.0,
        title = esc(title)
    ));

    // axes and grid
    out.push_str(&format!(
        "<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\"/>\n",
        l = MARGIN_L,
        r = WIDTH - MARGIN_R,
        t = MARGIN_T,
        b = HEIGHT - MARGIN_B
    ));
    for tv in ticks(x0, x1, 5) {
        let x = sx(tv);
        out.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{b}\" x2=\"{x}\" y2=\"{b2}\" stroke=\"black\"/><text x=\"{x}\" y=\"{ty}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{v}</text>\n",
            x = x,
            b = HEIGHT - MARGIN_B,
            b2 = HEIGHT - MARGIN_B + 5.0,
            ty = HEIGHT - MARGIN_B + 18.0,
            v = fmt_tick(tv)
        ));
    }
    for tv in ticks(y0, y1, 5) {
        let y = sy(tv);
        out.push_str(&format!(
            "<line x1=\"{l}\" y1=\"{y}\" x2=\"{l2}\" y2=\"{y}\" stroke=\"black\"/><text x=\"{tx}\" y=\"{y2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{v}</text>\n",
            l = MARGIN_L,
            l2 = MARGIN_L - 5.0,
            y = y,
            tx = MARGIN_L - 8.0,
            y2 = y + 4.0,
            v = fmt_tick(tv)
        ));
    }
    out.push_str(&format!(
        "<text x=\"{x}\" y=\"{y}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{l}</text>\n",
        x = (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        y = HEIGHT - 12.0,
        l = esc(x_label)
    ));
    out.push_str(&format!(
        "<text x=\"16\" y=\"{y}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 {y})\">{l}</text>\n",
        y = (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        l = esc(y_label)
    ));

    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        if s.points.len() > 1 {
            let path: Vec<String> =
                s.points.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
            out.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.6\" points=\"{}\"/>\n",
                color,
                path.join(" ")
            ));
        }
        for (x, y) in &s.points {
            out.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.4\" fill=\"{}\" data-series=\"{}\" data-x=\"{}\" data-y=\"{}\"/>\n",
                sx(*x),
                sy(*y),
                color,
                esc(&s.name),
                x,
                y
            ));
        }
        // legend
        let ly = MARGIN_T + 18.0 * si as f64;
        out.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y}\" width=\"12\" height=\"12\" fill=\"{c}\"/><text x=\"{tx}\" y=\"{ty}\" font-family=\"sans-serif\" font-size=\"12\">{n}</text>\n",
            x = WIDTH - MARGIN_R + 10.0,
            y = ly,
            c = color,
            tx = WIDTH - MARGIN_R + 27.0,
            ty = ly + 10.0,
            n = esc(&s.name)
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Stacked bars: one bar per label, one colored segment per part.
pub fn stacked_bars(title: &str, labels: &[String], parts: &[(String, Vec<f64>)]) -> String {
    let n = labels.len().max(1);
    let totals: Vec<f64> =
        (0..n).map(|i| parts.iter().map(|(_, v)| v.get(i).copied().unwrap_or(0.0)).sum()).collect();
    let max_total = totals.iter().cloned().fold(1e-300, f64::max);
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let bar_w = plot_w / n as f64 * 0.6;
    let sy = |v: f64| (v / max_total) * (HEIGHT - MARGIN_T - MARGIN_B);

    let mut out = String::new();
    out.push_str(&format!(
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">
<rect width="{w}" height="{h}" fill="white"/>
<text x="{tx}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{title}</text>
"#,
        w = WIDTH,
        h = HEIGHT,
        tx = WIDTH / 2.0,
        title = esc(title)
    ));
    out.push_str(&format!(
        "<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n",
        l = MARGIN_L,
        r = WIDTH - MARGIN_R,
        b = HEIGHT - MARGIN_B
    ));
    for (i, label) in labels.iter().enumerate() {
        let cx = MARGIN_L + plot_w * (i as f64 + 0.5) / n as f64;
        let mut y = HEIGHT - MARGIN_B;
        for (pi, (pname, values)) in parts.iter().enumerate() {
            let v = values.get(i).copied().unwrap_or(0.0);
            let hgt = sy(v);
            y -= hgt;
            out.push_str(&format!(
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"{c}\" data-bar=\"{b}\" data-part=\"{p}\" data-value=\"{v}\"/>\n",
                x = cx - bar_w / 2.0,
                y = y,
                w = bar_w,
                h = hgt,
                c = PALETTE[pi % PALETTE.len()],
                b = esc(label),
                p = esc(pname),
                v = v
            ));
        }
        out.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{y}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{l}</text>\n",
            x = cx,
            y = HEIGHT - MARGIN_B + 18.0,
            l = esc(label)
        ));
    }
    for (pi, (pname, _)) in parts.iter().enumerate() {
        let ly = MARGIN_T + 18.0 * pi as f64;
        out.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y}\" width=\"12\" height=\"12\" fill=\"{c}\"/><text x=\"{tx}\" y=\"{ty}\" font-family=\"sans-serif\" font-size=\"12\">{n}</text>\n",
            x = WIDTH - MARGIN_R + 10.0,
            y = ly,
            c = PALETTE[pi % PALETTE.len()],
            tx = WIDTH - MARGIN_R + 27.0,
            ty = ly + 10.0,
            n = esc(pname)
        ));
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Tiny well-formedness check: tags balance and attributes are quoted.
    pub fn assert_well_formed(xml: &str) {
        let mut stack: Vec<String> = Vec::new();
        let mut rest = xml;
        while let Some(start) = rest.find('<') {
            rest = &rest[start + 1..];
            let end = rest.find('>').expect("unclosed tag");
            let tag = &rest[..end];
            rest = &rest[end + 1..];
            if tag.starts_with('?') || tag.starts_with('!') {
                continue;
            }
            if let Some(name) = tag.strip_prefix('/') {
                let open = stack.pop().expect("close without open");
                assert_eq!(open, name.trim(), "mismatched tag");
            } else if !tag.ends_with('/') {
                let name = tag.split_whitespace().next().unwrap().to_string();
                stack.push(name);
            }
            // attribute quoting sanity
            let attrs = tag.trim_end_matches('/');
            let quotes = attrs.matches('"').count();
            assert_eq!(quotes % 2, 0, "odd quote count in tag {}", tag);
        }
        assert!(stack.is_empty(), "unclosed tags: {:?}", stack);
    }

    #[test]
    fn line_plot_is_well_formed_and_echoes_data() {
        let s = vec![
            Series { name: "fm".into(), points: vec![(0.31, -14.25), (0.42, -16.5)] },
            Series { name: "no_ft".into(), points: vec![(0.3, -4.0)] },
        ];
        let svg = line_plot("rd", "rate", "nmse", &s);
        assert_well_formed(&svg);
        assert!(svg.contains("data-x=\"0.31\""));
        assert!(svg.contains("data-y=\"-14.25\""));
        assert!(svg.contains("data-series=\"no_ft\""));
    }

    #[test]
    fn bars_well_formed() {
        let svg = stacked_bars(
            "rates",
            &["fm".into(), "eo".into()],
            &[("latent".into(), vec![0.3, 0.31]), ("update".into(), vec![0.02, 0.0])],
        );
        assert_well_formed(&svg);
        assert!(svg.contains("data-value=\"0.02\""));
    }
}
