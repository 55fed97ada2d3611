//! Hand-written SVG: log-log decay, σ_min against coupling, resonance tails.

use std::fmt::Write;

use crate::fit::DecayFit;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

/// Affine map from data (already in plot coordinates, e.g. logs) to pixels.
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let (x0, x1) = bounds(xs);
        let (y0, y1) = bounds(ys);
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn bounds(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v.filter(|x| x.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
    (lo - pad, hi + pad)
}

fn header(out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>
<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="black"/>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>
"#,
        W / 2.0,
        escape(title),
        W - LEFT - RIGHT,
        H - TOP - BOTTOM,
        (LEFT + W - RIGHT) / 2.0,
        H - 12.0,
        escape(xlabel),
        (TOP + H - BOTTOM) / 2.0,
        (TOP + H - BOTTOM) / 2.0,
        escape(ylabel),
    );
}

fn ticks(out: &mut String, f: &Frame, log_x: bool, log_y: bool) {
    let label = |v: f64, log: bool| if log { format!("1e{}", v.round() as i64) } else { format!("{v:.3}") };
    let xs: Vec<f64> = if log_x { (f.x0.ceil() as i64..=f.x1.floor() as i64).map(|k| k as f64).collect() } else { lin_ticks(f.x0, f.x1) };
    for x in xs {
        let p = f.px(x);
        let _ = writeln!(out, r#"<line x1="{p:.2}" y1="{}" x2="{p:.2}" y2="{}" stroke="black"/>"#, H - BOTTOM, H - BOTTOM + 5.0);
        let _ = writeln!(out, r#"<text x="{p:.2}" y="{}" text-anchor="middle">{}</text>"#, H - BOTTOM + 18.0, label(x, log_x));
    }
    let ys: Vec<f64> = if log_y { (f.y0.ceil() as i64..=f.y1.floor() as i64).map(|k| k as f64).collect() } else { lin_ticks(f.y0, f.y1) };
    for y in ys {
        let p = f.py(y);
        let _ = writeln!(out, r#"<line x1="{}" y1="{p:.2}" x2="{LEFT}" y2="{p:.2}" stroke="black"/>"#, LEFT - 5.0);
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 8.0, p + 4.0, label(y, log_y));
    }
}

fn lin_ticks(a: f64, b: f64) -> Vec<f64> {
    (0..=4).map(|k| a + (b - a) * (k as f64 + 0.5) / 5.0).collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn points(out: &mut String, f: &Frame, xs: &[f64], ys: &[f64]) {
    for (x, y) in xs.iter().zip(ys) {
        if x.is_finite() && y.is_finite() {
            let _ = writeln!(out, r#"<circle class="data" cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#, f.px(*x), f.py(*y));
        }
    }
}

/// `log₁₀|K|` against `log₁₀ t` with the fitted line over its window.
pub fn decay_plot(title: &str, t: &[f64], magnitude: &[f64], fit: &DecayFit) -> String {
    let lx: Vec<f64> = t.iter().map(|v| v.log10()).collect();
    let ly: Vec<f64> = magnitude.iter().map(|v| v.log10()).collect();
    let f = Frame::new(lx.iter().cloned(), ly.iter().cloned());
    let mut out = String::new();
    header(&mut out, title, "t", "|K(t,x,y)|");
    ticks(&mut out, &f, true, true);
    points(&mut out, &f, &lx, &ly);
    // ln-space fit drawn in log10 space
    let line = |t: f64| (fit.intercept + fit.exponent * t.ln()) / std::f64::consts::LN_10;
    let (a, b) = fit.window;
    let _ = writeln!(
        out,
        r#"<line class="fit" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="firebrick" stroke-width="2"/>"#,
        f.px(a.log10()),
        f.py(line(a)),
        f.px(b.log10()),
        f.py(line(b))
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" fill="firebrick">slope {:.4}</text>"#,
        LEFT + 10.0,
        TOP + 16.0,
        fit.exponent
    );
    out.push_str("</svg>\n");
    out
}

/// `log₁₀ σ_min` against the coupling with a vertical rule at each critical value.
pub fn sweep_plot(title: &str, beta: &[f64], sigma_min: &[f64], critical: &[f64]) -> String {
    let floor = 1e-18;
    let ly: Vec<f64> = sigma_min.iter().map(|s| s.max(floor).log10()).collect();
    let f = Frame::new(beta.iter().chain(critical).cloned(), ly.iter().cloned().chain([floor.log10()]));
    let mut out = String::new();
    header(&mut out, title, "coupling", "sigma_min");
    ticks(&mut out, &f, false, true);
    let path: Vec<String> = beta.iter().zip(&ly).map(|(b, y)| format!("{:.2},{:.2}", f.px(*b), f.py(*y))).collect();
    let _ = writeln!(out, r#"<polyline fill="none" stroke="steelblue" points="{}"/>"#, path.join(" "));
    points(&mut out, &f, beta, &ly);
    for b in critical {
        let p = f.px(*b);
        let _ = writeln!(
            out,
            r#"<line class="beta-star" x1="{p:.2}" y1="{TOP}" x2="{p:.2}" y2="{}" stroke="firebrick"/>"#,
            H - BOTTOM
        );
    }
    out.push_str("</svg>\n");
    out
}

/// `log₁₀|ψ − c₀|` against `log₁₀|x|` with dashed reference slopes −1, −2, −3.
pub fn tail_plot(title: &str, radii: &[f64], values: &[f64], c0: f64) -> String {
    let lx: Vec<f64> = radii.iter().map(|r| r.log10()).collect();
    let ly: Vec<f64> = values.iter().map(|v| (v - c0).abs().max(1e-300).log10()).collect();
    let f = Frame::new(lx.iter().cloned(), ly.iter().cloned());
    let mut out = String::new();
    header(&mut out, title, "|x|", "|psi - c0|");
    ticks(&mut out, &f, true, true);
    points(&mut out, &f, &lx, &ly);
    // guides anchored at the first point
    let (ax, ay) = (lx[0], ly[0]);
    for slope in [-1.0, -2.0, -3.0] {
        let y1 = ay + slope * (f.x1 - ax);
        let _ = writeln!(
            out,
            r#"<line class="guide" data-slope="{slope}" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="6 4"/>"#,
            f.px(ax),
            f.py(ay),
            f.px(f.x1),
            f.py(y1.max(f.y0))
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_plot_has_one_fit_line() {
        let t: Vec<f64> = (0..12).map(|k| 10f64.powf(k as f64 / 4.0)).collect();
        let k: Vec<f64> = t.iter().map(|t| 1.0 / t).collect();
        let fit = crate::fit::fit_decay(&k, &t, (1.0, t[11]), None).unwrap();
        let svg = decay_plot("free", &t, &k, &fit);
        assert_eq!(svg.matches(r#"class="fit""#).count(), 1);
        assert_eq!(svg.matches(r#"class="data""#).count(), 12);
    }

    #[test]
    fn tail_plot_has_three_dashed_guides() {
        let r: Vec<f64> = (0..20).map(|k| 10f64.powf(1.0 + k as f64 / 10.0)).collect();
        let v: Vec<f64> = r.iter().map(|r| 1.0 + r.powi(-2)).collect();
        let svg = tail_plot("tail", &r, &v, 1.0);
        assert_eq!(svg.matches(r#"class="guide""#).count(), 3);
        assert_eq!(svg.matches("stroke-dasharray").count(), 3);
        for s in ["-1", "-2", "-3"] {
            assert!(svg.contains(&format!(r#"data-slope="{s}""#)));
        }
    }
}
