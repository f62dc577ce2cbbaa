//! Dependency-free SVG emitters: line charts for scalar-vs-scalar CSV series
//! and square heatmaps for per-node field CSVs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 54.0;

fn axis_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-300 {
        let pad = 0.5 * (1.0 + lo.abs());
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// A single-series line chart; `rows` are (x, y) pairs in plot order.
pub fn line_chart(
    path: &Path,
    title: &str,
    x_name: &str,
    y_name: &str,
    rows: &[(f64, f64)],
) -> std::io::Result<()> {
    let (x_lo, x_hi) = axis_range(rows.iter().map(|r| r.0));
    let (y_lo, y_hi) = axis_range(rows.iter().map(|r| r.1));
    let px = |x: f64| MARGIN + (x - x_lo) / (x_hi - x_lo) * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - (y - y_lo) / (y_hi - y_lo) * (H - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{}</text>",
        W / 2.0,
        xml_escape(title)
    );
    // Axes.
    let _ = writeln!(
        svg,
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>",
        m = MARGIN,
        r = W - MARGIN,
        t = MARGIN,
        b = H - MARGIN
    );
    for frac in [0.0, 0.5, 1.0] {
        let xv = x_lo + frac * (x_hi - x_lo);
        let yv = y_lo + frac * (y_hi - y_lo);
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{:.3}</text>",
            px(xv),
            H - MARGIN + 18.0,
            xv
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{:.3}</text>",
            MARGIN - 6.0,
            py(yv) + 4.0,
            yv
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
        W / 2.0,
        H - 12.0,
        xml_escape(x_name)
    );
    let _ = writeln!(
        svg,
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 {})\">{}</text>",
        H / 2.0,
        H / 2.0,
        xml_escape(y_name)
    );
    let mut points = String::new();
    for &(x, y) in rows {
        if x.is_finite() && y.is_finite() {
            let _ = write!(points, "{:.2},{:.2} ", px(x), py(y));
        }
    }
    let _ = writeln!(
        svg,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.6\"/>",
        points.trim_end()
    );
    let _ = writeln!(svg, "</svg>");
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, svg)
}

/// An `n x n` heatmap; `values[i * n + j]` maps row `i`, column `j`, with
/// non-finite cells drawn gray. A blue-white-red ramp is centered on zero
/// when the data straddles it, otherwise spans the data range.
pub fn heatmap(path: &Path, title: &str, n: usize, values: &[f64]) -> std::io::Result<()> {
    let (lo, hi) = axis_range(values.iter().copied());
    let (lo, hi) = if lo < 0.0 && hi > 0.0 {
        let m = lo.abs().max(hi);
        (-m, m)
    } else {
        (lo, hi)
    };
    let side = (W.min(H) - 2.0 * MARGIN) / n as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{}</text>",
        W / 2.0,
        xml_escape(title)
    );
    for i in 0..n {
        for j in 0..n {
            let v = values[i * n + j];
            let color = if v.is_finite() {
                let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
                // Blue (0) -> white (0.5) -> red (1).
                let (r, g, b) = if t < 0.5 {
                    let s = t / 0.5;
                    (
                        (255.0 * s) as u8 + ((31.0) * (1.0 - s)) as u8,
                        (255.0 * s) as u8 + ((119.0) * (1.0 - s)) as u8,
                        255,
                    )
                } else {
                    let s = (t - 0.5) / 0.5;
                    (255, (255.0 * (1.0 - s)) as u8, (255.0 * (1.0 - s)) as u8)
                };
                format!("#{r:02x}{g:02x}{b:02x}")
            } else {
                "#bbbbbb".to_string()
            };
            let _ = writeln!(
                svg,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
                MARGIN + j as f64 * side,
                MARGIN + i as f64 * side,
                side + 0.05,
                side + 0.05,
                color
            );
        }
    }
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">range [{:.3e}, {:.3e}]</text>",
        W / 2.0,
        H - 12.0,
        lo,
        hi
    );
    let _ = writeln!(svg, "</svg>");
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, svg)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders every CSV artifact in `dir` to an SVG next to it: two-column
/// scalar CSVs become line charts, per-node field CSVs become heatmaps.
/// Returns the number of plots written.
pub fn render_directory(dir: &Path) -> std::io::Result<usize> {
    let mut count = 0;
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("plot").to_string();
        let text = fs::read_to_string(&path)?;
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
        let out = path.with_extension("svg");
        if header.len() == 2 {
            let rows: Vec<(f64, f64)> = lines
                .filter_map(|l| {
                    let mut it = l.split(',');
                    Some((it.next()?.parse().ok()?, it.next()?.parse().ok()?))
                })
                .collect();
            line_chart(&out, &stem, header[0], header[1], &rows)?;
            count += 1;
        } else if header.first() == Some(&"index") && header.contains(&"value") {
            let vcol = header.iter().position(|&h| h == "value").unwrap();
            let cells: Vec<(usize, f64)> = lines
                .filter_map(|l| {
                    let cols: Vec<&str> = l.split(',').collect();
                    Some((cols.first()?.parse().ok()?, cols.get(vcol)?.parse().ok()?))
                })
                .collect();
            let max_index = cells.iter().map(|&(i, _)| i).max().unwrap_or(0);
            let n = (max_index as f64).sqrt().round() as usize + 1;
            let n = (1..=n).rev().find(|&s| s * s > max_index).unwrap_or(1);
            let mut values = vec![f64::NAN; n * n];
            for (i, v) in cells {
                if i < values.len() {
                    values[i] = v;
                }
            }
            heatmap(&out, &stem, n, &values)?;
            count += 1;
        }
    }
    Ok(count)
}
