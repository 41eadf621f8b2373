use crate::tensor::Tensor;
use std::fmt::Write;

const CELL: usize = 28;
const MARGIN: usize = 40;

/// Standalone SVG heatmap on a linear white-to-blue scale between the
/// matrix minimum and maximum. Cell values are annotated when `d ≤ 20`.
pub fn heatmap_svg(m: &Tensor, title: &str) -> String {
    let (r, c) = m.shape();
    let (lo, hi) = m
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let width = 2 * MARGIN + c * CELL;
    let height = 2 * MARGIN + r * CELL;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="monospace">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="{}" font-size="12">{} (min {lo:.3}, max {hi:.3})</text>"#,
        MARGIN / 2,
        escape(title)
    );
    let annotate = r.max(c) <= 20;
    for i in 0..r {
        for j in 0..c {
            let v = m.get(i, j);
            let t = ((v - lo) / span).clamp(0.0, 1.0);
            let shade = |full: f64| (255.0 - t * (255.0 - full)).round() as u8;
            let (x, y) = (MARGIN + j * CELL, MARGIN + i * CELL);
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({},{},{})"/>"#,
                shade(8.0),
                shade(48.0),
                shade(107.0)
            );
            if annotate {
                let ink = if t > 0.5 { "white" } else { "black" };
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" font-size="8" text-anchor="middle" fill="{ink}">{v:.2}</text>"#,
                    x + CELL / 2,
                    y + CELL / 2 + 3
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Scatter of the first two columns, coloured by label.
pub fn scatter_svg(points: &Tensor, labels: &[Option<usize>], title: &str) -> String {
    const SIZE: f64 = 360.0;
    const PALETTE: [&str; 10] = [
        "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
        "#bcbd22", "#17becf",
    ];
    let col = |j: usize| -> Vec<f64> {
        if j < points.cols() {
            points.column(j)
        } else {
            vec![0.0; points.rows()]
        }
    };
    let (xs, ys) = (col(0), col(1));
    let bounds = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, if hi > lo { hi - lo } else { 1.0 })
    };
    let ((x0, xs_span), (y0, ys_span)) = (bounds(&xs), bounds(&ys));
    let m = MARGIN as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="monospace">"#,
        SIZE + 2.0 * m,
        SIZE + 2.0 * m
    );
    let _ = writeln!(
        s,
        r#"<text x="{m}" y="{}" font-size="12">{}</text>"#,
        m / 2.0,
        escape(title)
    );
    for i in 0..points.rows() {
        let px = m + (xs[i] - x0) / xs_span * SIZE;
        let py = m + SIZE - (ys[i] - y0) / ys_span * SIZE;
        let fill = labels
            .get(i)
            .copied()
            .flatten()
            .map_or("black", |l| PALETTE[l % PALETTE.len()]);
        let _ = writeln!(
            s,
            r#"<circle cx="{px:.2}" cy="{py:.2}" r="4" fill="{fill}"><title>{i}</title></circle>"#
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
