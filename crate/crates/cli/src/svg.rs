//! Minimal grouped bar charts of K histograms.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// One bar group per K, one bar per series.
pub fn histogram_chart(title: &str, series: &[(String, BTreeMap<usize, f64>)]) -> String {
    let ks: BTreeSet<usize> = series.iter().flat_map(|(_, h)| h.keys().copied()).collect();
    let ks: Vec<usize> = ks.into_iter().collect();
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let group_w = plot_w / ks.len().max(1) as f64;
    let bar_w = 0.8 * group_w / series.len().max(1) as f64;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        MARGIN / 2.0,
        escape(title)
    );
    let base = HEIGHT - MARGIN;
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
        WIDTH - MARGIN
    );
    let _ = writeln!(s, r#"<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{base}" stroke="black"/>"#);
    for tick in [0.0, 0.5, 1.0] {
        let y = base - tick * plot_h;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y:.1}" text-anchor="end" font-size="10">{tick:.1}</text>"#,
            MARGIN - 4.0
        );
    }
    for (gi, k) in ks.iter().enumerate() {
        let x0 = MARGIN + gi as f64 * group_w + 0.1 * group_w;
        for (si, (_, hist)) in series.iter().enumerate() {
            let f = hist.get(k).copied().unwrap_or(0.0);
            let h = f * plot_h;
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                x0 + si as f64 * bar_w,
                base - h,
                bar_w,
                h,
                COLORS[si % COLORS.len()]
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle" font-size="10">{k}</text>"#,
            MARGIN + (gi as f64 + 0.5) * group_w,
            base + 14.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="11">K</text>"#,
        WIDTH / 2.0,
        HEIGHT - 8.0
    );
    for (si, (label, _)) in series.iter().enumerate() {
        let y = MARGIN + 14.0 * si as f64;
        let x = WIDTH - MARGIN - 120.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}" font-size="10">{}</text>"#,
            y - 9.0,
            COLORS[si % COLORS.len()],
            x + 14.0,
            y,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}
