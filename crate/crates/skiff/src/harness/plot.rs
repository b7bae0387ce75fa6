//! Hand-rolled SVG charts for run artifacts. Pure vector output from
//! logged data; no display, no external renderer.

use crate::harness::metrics::error_series;
use crate::sim::RunLog;
use std::fmt::Write;

const W: f64 = 800.0;
const H: f64 = 500.0;
const MARGIN: f64 = 55.0;

/// Distinguishable stroke colors, reused in order across series.
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    /// Data bounds padded by 5% (degenerate spans widened to a unit box).
    fn from_bounds(mut x0: f64, mut x1: f64, mut y0: f64, mut y1: f64) -> Self {
        if !(x1 > x0) {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if !(y1 > y0) {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let (dx, dy) = (x1 - x0, y1 - y0);
        Self { x0: x0 - 0.05 * dx, x1: x1 + 0.05 * dx, y0: y0 - 0.05 * dy, y1: y1 + 0.05 * dy }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * MARGIN)
    }
}

fn header(title: &str) -> String {
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w} {h}\" ",
            "font-family=\"sans-serif\" font-size=\"13\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{tx}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{title}</text>\n"
        ),
        w = W,
        h = H,
        tx = W / 2.0,
        title = title,
    )
}

fn axes(out: &mut String, frame: &Frame, x_label: &str, y_label: &str) {
    let (l, r, t, b) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
    let _ = write!(
        out,
        concat!(
            "<rect x=\"{l}\" y=\"{t}\" width=\"{w}\" height=\"{h}\" fill=\"none\" ",
            "stroke=\"#444\"/>\n",
            "<text x=\"{xc}\" y=\"{xl}\" text-anchor=\"middle\">{x_label}</text>\n",
            "<text x=\"16\" y=\"{yc}\" text-anchor=\"middle\" ",
            "transform=\"rotate(-90 16 {yc})\">{y_label}</text>\n"
        ),
        l = l,
        t = t,
        w = r - l,
        h = b - t,
        xc = (l + r) / 2.0,
        xl = H - 14.0,
        yc = (t + b) / 2.0,
        x_label = x_label,
        y_label = y_label,
    );
    // Min/max tick labels on both axes.
    let _ = write!(
        out,
        concat!(
            "<text x=\"{l}\" y=\"{by}\" text-anchor=\"middle\">{x0:.3}</text>\n",
            "<text x=\"{r}\" y=\"{by}\" text-anchor=\"middle\">{x1:.3}</text>\n",
            "<text x=\"{lx}\" y=\"{b}\" text-anchor=\"end\">{y0:.3}</text>\n",
            "<text x=\"{lx}\" y=\"{t2}\" text-anchor=\"end\">{y1:.3}</text>\n"
        ),
        l = l,
        r = r,
        by = b + 18.0,
        lx = l - 6.0,
        b = b + 4.0,
        t2 = t + 4.0,
        x0 = frame.x0,
        x1 = frame.x1,
        y0 = frame.y0,
        y1 = frame.y1,
    );
}

fn polyline(out: &mut String, frame: &Frame, xs: &[f64], ys: &[f64], color: &str, class: &str, dash: bool) {
    let mut points = String::new();
    for (x, y) in xs.iter().zip(ys) {
        if x.is_finite() && y.is_finite() {
            let _ = write!(points, "{:.2},{:.2} ", frame.px(*x), frame.py(*y));
        }
    }
    let dash_attr = if dash { " stroke-dasharray=\"6 4\"" } else { "" };
    let _ = write!(
        out,
        "<polyline class=\"{class}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash_attr} points=\"{points}\"/>\n"
    );
}

fn legend(out: &mut String, entries: &[(&str, &str)]) {
    for (i, (label, color)) in entries.iter().enumerate() {
        let y = MARGIN + 16.0 + 18.0 * i as f64;
        let _ = write!(
            out,
            concat!(
                "<line x1=\"{x0}\" y1=\"{y}\" x2=\"{x1}\" y2=\"{y}\" stroke=\"{color}\" ",
                "stroke-width=\"2\"/>\n",
                "<text x=\"{tx}\" y=\"{ty}\">{label}</text>\n"
            ),
            x0 = W - MARGIN - 150.0,
            x1 = W - MARGIN - 120.0,
            y = y,
            tx = W - MARGIN - 112.0,
            ty = y + 4.0,
            color = color,
            label = label,
        );
    }
}

/// Reference path plus the actual path of each run: one dashed reference
/// polyline and one solid polyline per log.
pub fn path_overlay_svg(runs: &[(&str, &RunLog)]) -> String {
    let mut out = header("Path tracking");
    let first = runs.first().expect("at least one run");
    let ref_x: Vec<f64> = first.1.references.iter().map(|r| r.x).collect();
    let ref_y: Vec<f64> = first.1.references.iter().map(|r| r.y).collect();

    let mut bounds = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    let mut grow = |xs: &[f64], ys: &[f64]| {
        for &v in xs {
            bounds.0 = bounds.0.min(v);
            bounds.1 = bounds.1.max(v);
        }
        for &v in ys {
            bounds.2 = bounds.2.min(v);
            bounds.3 = bounds.3.max(v);
        }
    };
    grow(&ref_x, &ref_y);
    let actual: Vec<(Vec<f64>, Vec<f64>)> = runs
        .iter()
        .map(|(_, log)| {
            let xs: Vec<f64> = log.states.iter().map(|s| s.x).collect();
            let ys: Vec<f64> = log.states.iter().map(|s| s.y).collect();
            (xs, ys)
        })
        .collect();
    for (xs, ys) in &actual {
        grow(xs, ys);
    }
    let frame = Frame::from_bounds(bounds.0, bounds.1, bounds.2, bounds.3);

    axes(&mut out, &frame, "X [m]", "Y [m]");
    polyline(&mut out, &frame, &ref_x, &ref_y, "#444", "reference", true);
    let mut entries = vec![("reference", "#444")];
    for (i, ((label, _), (xs, ys))) in runs.iter().zip(&actual).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        polyline(&mut out, &frame, xs, ys, color, "run", false);
        entries.push((label, color));
    }
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}

/// Tracking error over time for each run, with a vertical rule at every
/// event timestamp.
pub fn error_svg(runs: &[(&str, &RunLog)], event_times: &[f64]) -> String {
    let mut out = header("Tracking error");
    let mut t_max = 0.0f64;
    let mut e_max = 0.0f64;
    let series: Vec<(Vec<f64>, Vec<f64>)> = runs
        .iter()
        .map(|(_, log)| {
            let e = error_series(log);
            t_max = t_max.max(*log.times.last().unwrap_or(&0.0));
            e_max = e.iter().cloned().fold(e_max, f64::max);
            (log.times.clone(), e)
        })
        .collect();
    let frame = Frame::from_bounds(0.0, t_max, 0.0, e_max);
    axes(&mut out, &frame, "t [s]", "e(t) [m]");
    let mut entries = Vec::new();
    for (i, ((label, _), (ts, es))) in runs.iter().zip(&series).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        polyline(&mut out, &frame, ts, es, color, "error", false);
        entries.push((*label, color));
    }
    for &t in event_times {
        let x = frame.px(t);
        let _ = write!(
            out,
            concat!(
                "<line class=\"event\" x1=\"{x}\" y1=\"{t}\" x2=\"{x}\" y2=\"{b}\" ",
                "stroke=\"#999\" stroke-dasharray=\"3 3\"/>\n"
            ),
            x = x,
            t = MARGIN,
            b = H - MARGIN,
        );
    }
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}

/// The four commanded thrusts over time.
pub fn thrust_svg(log: &RunLog) -> String {
    let mut out = header("Commanded thrusts");
    let mut f_min = 0.0f64;
    let mut f_max = 0.0f64;
    for u in &log.controls {
        f_min = f_min.min(u.min());
        f_max = f_max.max(u.max());
    }
    let t_max = *log.times.last().unwrap_or(&1.0);
    let frame = Frame::from_bounds(0.0, t_max, f_min, f_max);
    axes(&mut out, &frame, "t [s]", "F [N]");
    let mut entries = Vec::new();
    let labels = ["F1", "F2", "F3", "F4"];
    for i in 0..4 {
        let ys: Vec<f64> = log.controls.iter().map(|u| u[i]).collect();
        let color = PALETTE[i % PALETTE.len()];
        polyline(&mut out, &frame, &log.times, &ys, color, "thrust", false);
        entries.push((labels[i], color));
    }
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}

/// Paired bar chart over payload values: one bar per mode per payload.
pub fn sweep_svg(payloads: &[f64], nominal: &[f64], data_driven: &[f64]) -> String {
    assert_eq!(payloads.len(), nominal.len());
    assert_eq!(payloads.len(), data_driven.len());
    let mut out = header("Mean tracking error vs payload");
    let e_max = nominal.iter().chain(data_driven).cloned().fold(0.0f64, f64::max);
    let frame = Frame::from_bounds(-0.5, payloads.len() as f64 - 0.5, 0.0, e_max);
    axes(&mut out, &frame, "payload [kg]", "mean e [m]");

    let slot = (W - 2.0 * MARGIN) / payloads.len() as f64;
    let bar_w = slot * 0.32;
    for (i, &p) in payloads.iter().enumerate() {
        let center = frame.px(i as f64);
        let base = frame.py(0.0);
        for (j, (vals, class, color)) in [
            (nominal, "bar-nominal", PALETTE[0]),
            (data_driven, "bar-data-driven", PALETTE[1]),
        ]
        .iter()
        .enumerate()
        {
            let x = center - bar_w + j as f64 * bar_w;
            let top = frame.py(vals[i]);
            let _ = write!(
                out,
                concat!(
                    "<rect class=\"{class}\" x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" ",
                    "height=\"{h:.2}\" fill=\"{color}\"/>\n"
                ),
                class = class,
                x = x,
                y = top,
                w = bar_w,
                h = (base - top).max(0.0),
                color = color,
            );
        }
        let _ = write!(
            out,
            "<text x=\"{x:.2}\" y=\"{y}\" text-anchor=\"middle\">{p:.1}</text>\n",
            x = center,
            y = H - MARGIN + 18.0,
        );
    }
    legend(&mut out, &[("nominal", PALETTE[0]), ("data-driven", PALETTE[1])]);
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{State, Thrusts};
    use crate::reference::ReferenceState;

    fn sample_log(n: usize) -> RunLog {
        let mut log = RunLog::default();
        for k in 0..n {
            let t = k as f64 * 0.01;
            log.times.push(t);
            log.states.push(State { x: t, y: (t * 2.0).sin(), ..State::default() });
            log.references.push(ReferenceState { x: t, y: 0.0, ..ReferenceState::default() });
            log.controls.push(Thrusts::new(0.2, 0.1, 0.3, 0.15));
            log.errors.push((t * 2.0).sin().abs());
        }
        log
    }

    fn count(haystack: &str, needle: &str) -> usize {
        haystack.matches(needle).count()
    }

    #[test]
    fn two_run_overlay_has_exactly_three_polylines() {
        let a = sample_log(100);
        let b = sample_log(100);
        let svg = path_overlay_svg(&[("nominal", &a), ("data-driven", &b)]);
        assert_eq!(count(&svg, "<polyline"), 3);
        assert_eq!(count(&svg, "class=\"reference\""), 1);
        assert_eq!(count(&svg, "class=\"run\""), 2);
        assert!(svg.contains("viewBox"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn error_plot_marks_each_event_with_a_rule() {
        let a = sample_log(200);
        let svg = error_svg(&[("run", &a)], &[0.5, 1.2]);
        assert_eq!(count(&svg, "class=\"event\""), 2);
        assert_eq!(count(&svg, "<polyline"), 1);
    }

    #[test]
    fn thrust_plot_has_four_series() {
        let svg = thrust_svg(&sample_log(50));
        assert_eq!(count(&svg, "<polyline"), 4);
        assert!(svg.contains("F4"));
    }

    #[test]
    fn sweep_chart_has_eleven_paired_bars() {
        let payloads: Vec<f64> = (0..=10).map(|i| i as f64 * 0.2).collect();
        let nominal: Vec<f64> = payloads.iter().map(|p| 0.01 + p * 0.01).collect();
        let dd: Vec<f64> = payloads.iter().map(|p| 0.005 + p * 0.002).collect();
        let svg = sweep_svg(&payloads, &nominal, &dd);
        assert_eq!(count(&svg, "class=\"bar-nominal\""), 11);
        assert_eq!(count(&svg, "class=\"bar-data-driven\""), 11);
        assert_eq!(count(&svg, "<rect class=\"bar"), 22);
    }

    #[test]
    fn no_nan_coordinates_leak_into_the_output() {
        let mut log = sample_log(50);
        log.states[10].x = f64::NAN;
        let svg = path_overlay_svg(&[("run", &log)]);
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn degenerate_bounds_still_render() {
        // A single-point log must not divide by zero.
        let log = sample_log(1);
        let svg = error_svg(&[("run", &log)], &[]);
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }
}
