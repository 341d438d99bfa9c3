//! Minimal static SVG charts: stacked flux panels and scatter plots.

use std::fmt::Write;

use tap_core::FluxSeries;

const WIDTH: f64 = 640.0;
const PANEL_HEIGHT: f64 = 150.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 40.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Axis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-300 {
            let pad = if lo == 0.0 { 1.0 } else { 0.05 * lo.abs() };
            (lo, hi) = (lo - pad, hi + pad);
        }
        Axis { lo, hi, log }
    }

    /// Fraction of the axis span, or `None` for values a log axis cannot show.
    fn frac(&self, v: f64) -> Option<f64> {
        let v = if self.log {
            if v <= 0.0 {
                return None;
            }
            v.log10()
        } else {
            v
        };
        v.is_finite().then(|| (v - self.lo) / (self.hi - self.lo))
    }

    fn label(&self, f: f64) -> String {
        let v = self.lo + f * (self.hi - self.lo);
        if self.log {
            format!("1e{v:.1}")
        } else {
            format!("{v:.3e}")
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn frame(svg: &mut String, top: f64, height: f64, x: &Axis, y: &Axis, title: &str) {
    let (left, right) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let _ = writeln!(
        svg,
        r##"<rect x="{left}" y="{top}" width="{}" height="{height}" fill="none" stroke="#444"/>"##,
        right - left
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="12">{}</text>"#, left + 6.0, top + 14.0, escape(title));
    for i in 0..=2 {
        let f = i as f64 / 2.0;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{}</text>"#,
            left - 4.0,
            top + height * (1.0 - f) + 3.0,
            y.label(f)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="10" text-anchor="middle">{}</text>"#,
            left + f * (right - left),
            top + height + 12.0,
            x.label(f)
        );
    }
}

fn polyline(svg: &mut String, xs: &[f64], ys: &[f64], x: &Axis, y: &Axis, top: f64, height: f64, color: &str) {
    let width = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    // Thin long traces to about one point per pixel.
    let stride = (xs.len() / width as usize).max(1);
    let points: Vec<String> = xs
        .iter()
        .zip(ys)
        .step_by(stride)
        .filter_map(|(&a, &b)| {
            let (fx, fy) = (x.frac(a)?, y.frac(b)?);
            Some(format!("{:.1},{:.1}", MARGIN_LEFT + fx * width, top + (1.0 - fy) * height))
        })
        .collect();
    let _ = writeln!(
        svg,
        r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
        points.join(" ")
    );
}

/// One panel per gas; `overlay` (e.g. a fitted trace) is drawn in a second colour.
pub fn flux_panels(series: &FluxSeries, overlay: Option<&FluxSeries>, title: &str) -> String {
    let n = series.gases.len();
    let height = MARGIN_TOP + n as f64 * (PANEL_HEIGHT + MARGIN_BOTTOM);
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" font-family="sans-serif">"#
    );
    svg.push('\n');
    let _ = writeln!(svg, r#"<text x="{MARGIN_LEFT}" y="18" font-size="14">{}</text>"#, escape(title));
    let x = Axis::fit(series.time.iter().copied(), false);
    for (g, gas) in series.gases.iter().enumerate() {
        let top = MARGIN_TOP + g as f64 * (PANEL_HEIGHT + MARGIN_BOTTOM);
        let other = overlay.and_then(|o| o.gas(gas));
        let y = Axis::fit(series.flux[g].iter().chain(other.unwrap_or(&[])).copied(), false);
        frame(&mut svg, top, PANEL_HEIGHT, &x, &y, &format!("{gas} flux (nmol/s) vs time (s)"));
        polyline(&mut svg, &series.time, &series.flux[g], &x, &y, top, PANEL_HEIGHT, COLORS[0]);
        if let (Some(o), Some(f)) = (overlay, other) {
            polyline(&mut svg, &o.time, f, &x, &y, top, PANEL_HEIGHT, COLORS[1]);
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Scatter plot of `(x, y)` pairs; non-finite points (and non-positive
/// ones on log axes) are dropped.
pub fn scatter(points: &[(f64, f64)], log_x: bool, log_y: bool, title: &str, x_label: &str, y_label: &str) -> String {
    let height = MARGIN_TOP + 2.0 * PANEL_HEIGHT + MARGIN_BOTTOM + 10.0;
    let plot_h = 2.0 * PANEL_HEIGHT;
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" font-family="sans-serif">"#
    );
    svg.push('\n');
    let _ = writeln!(svg, r#"<text x="{MARGIN_LEFT}" y="18" font-size="14">{}</text>"#, escape(title));
    let x = Axis::fit(points.iter().map(|p| p.0), log_x);
    let y = Axis::fit(points.iter().map(|p| p.1), log_y);
    frame(&mut svg, MARGIN_TOP, plot_h, &x, &y, "");
    let width = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    for &(a, b) in points {
        if let (Some(fx), Some(fy)) = (x.frac(a), y.frac(b)) {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{}" fill-opacity="0.7"/>"#,
                MARGIN_LEFT + fx * width,
                MARGIN_TOP + (1.0 - fy) * plot_h,
                COLORS[0]
            );
        }
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + width / 2.0,
        height - 6.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" font-size="11" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        escape(y_label)
    );
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panels_per_gas_and_well_formed() {
        let mut f = FluxSeries::zeros(vec![0.1, 0.2, 0.3], vec!["A".into(), "B<".into()]);
        f.flux[0] = vec![0.0, 1.0, 0.5];
        let svg = flux_panels(&f, None, "t");
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("B&lt;"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn log_scatter_drops_non_positive() {
        let svg = scatter(&[(1.0, 1.0), (10.0, 0.0), (100.0, 5.0)], true, true, "s", "x", "y");
        assert_eq!(svg.matches("<circle").count(), 2);
    }
}
