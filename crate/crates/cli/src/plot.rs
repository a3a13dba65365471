//! Static SVG event-study plots, one per cohort: estimates with
//! simultaneous band limits, pre-treatment cells in red and post-treatment
//! cells in blue.

use std::fmt::Write;

use crate::report::BandReport;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 48.0;
const PRE: &str = "#c0392b";
const POST: &str = "#2166ac";

/// Tick spacing from {1, 2, 5} x 10^k giving about five ticks.
fn tick_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag)
}

fn fmt_tick(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10().floor()) as usize };
    format!("{v:.decimals$}")
}

/// SVG for cohort `g`, or `None` when the report has no cells for it.
pub fn event_study_svg(report: &BandReport, g: i64) -> Option<String> {
    let rows: Vec<_> = report.cells.iter().filter(|c| c.g == g).collect();
    if rows.is_empty() {
        return None;
    }
    let mut lo = rows.iter().map(|r| r.lower).fold(0.0, f64::min);
    let mut hi = rows.iter().map(|r| r.upper).fold(0.0, f64::max);
    if !(hi > lo) {
        lo -= 1.0;
        hi += 1.0;
    }
    let pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
    let step = tick_step(hi - lo);

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let slot = plot_w / rows.len() as f64;
    let x = |j: usize| LEFT + slot * (j as f64 + 0.5);
    let y = |v: f64| TOP + plot_h * (hi - v) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">Group first treated in {g} (band level {:.0}%)</text>"#,
        WIDTH / 2.0,
        100.0 * (1.0 - report.alpha)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    let mut tick = (lo / step).ceil() * step;
    while tick <= hi {
        let ty = y(tick);
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ty:.2}" x2="{LEFT}" y2="{ty:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            ty + 4.0,
            fmt_tick(tick, step)
        );
        tick += step;
    }
    let zero = y(0.0);
    let _ = writeln!(
        s,
        r##"<line x1="{LEFT}" y1="{zero:.2}" x2="{}" y2="{zero:.2}" stroke="#888" stroke-dasharray="4 3"/>"##,
        WIDTH - RIGHT
    );
    for (j, r) in rows.iter().enumerate() {
        let colour = if r.kind == "post" { POST } else { PRE };
        let cx = x(j);
        let _ = writeln!(
            s,
            r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="{colour}" stroke-width="2"/>"#,
            y(r.lower),
            y(r.upper)
        );
        let _ = writeln!(s, r#"<circle cx="{cx:.2}" cy="{:.2}" r="4" fill="{colour}"/>"#, y(r.estimate));
        let _ = writeln!(
            s,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            HEIGHT - BOTTOM + 18.0,
            r.t
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">period</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">ATT(g, t)</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );
    s.push_str("</svg>\n");
    Some(s)
}
