//! Plain SVG figures: reconstructed trajectories and residual decay.

use std::fmt::Write;

use crate::domain::{CadlagSamples, Domain1D, SparseDiracMeasure, TimeGrid};
use crate::forward::GroundTruth;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

/// Jumps smaller than this fraction of the domain are drawn as continuous.
const JUMP_FRACTION: f64 = 1e-3;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if !title.is_empty() {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
            (LEFT + WIDTH - RIGHT) / 2.0,
            escape(title)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(out: &mut String, fr: &Frame, xlabel: &str, ylabel: &str, yticks: &[(f64, String)]) {
    let (l, r) = (fr.px(fr.x0), fr.px(fr.x1));
    let (b, t) = (fr.py(fr.y0), fr.py(fr.y1));
    let _ = writeln!(
        out,
        r#"<rect x="{l:.2}" y="{t:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        r - l,
        b - t
    );
    for k in 0..=5 {
        let x = fr.x0 + (fr.x1 - fr.x0) * k as f64 / 5.0;
        let px = fr.px(x);
        let _ = writeln!(
            out,
            r#"<line x1="{px:.2}" y1="{b:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            b + 5.0,
            b + 18.0,
            trim_number(x)
        );
    }
    for (y, label) in yticks {
        let py = fr.py(*y);
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{l:.2}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#,
            l - 5.0,
            l - 8.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{xlabel}</text>"#,
        (l + r) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{ylabel}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0
    );
}

fn trim_number(x: f64) -> String {
    let s = format!("{x:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Draws one trajectory: solid segments between samples, dashed verticals at
/// jumps.
fn trajectory(out: &mut String, fr: &Frame, t: &[f64], curve: &CadlagSamples, style: &str, jump_tol: f64) {
    let mut d = format!("M{:.2},{:.2}", fr.px(t[0]), fr.py(curve.gamma_plus[0]));
    let mut dashes = String::new();
    for j in 1..t.len() {
        let x = fr.px(t[j]);
        let _ = write!(d, " L{x:.2},{:.2}", fr.py(curve.gamma_minus[j]));
        if j + 1 < t.len() && curve.jump_at(j) > jump_tol {
            let _ = write!(
                dashes,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" {style} stroke-dasharray="4 3"/>"#,
                fr.py(curve.gamma_minus[j]),
                fr.py(curve.gamma_plus[j])
            );
            let _ = write!(d, " M{x:.2},{:.2}", fr.py(curve.gamma_plus[j]));
        } else if j + 1 < t.len() {
            let _ = write!(d, " L{x:.2},{:.2}", fr.py(curve.gamma_plus[j]));
        }
    }
    let _ = writeln!(out, r#"<path d="{d}" fill="none" {style}/>{dashes}"#);
}

/// Reconstructed trajectories over time, line width proportional to mass,
/// with the ground truth in grey underneath and a legend of weights.
pub fn reconstruction_svg(
    mu: &SparseDiracMeasure,
    grid: &TimeGrid,
    dom: Domain1D,
    truth: Option<&GroundTruth>,
    title: &str,
) -> String {
    let fr = Frame {
        x0: 0.0,
        x1: 1.0,
        y0: dom.lo,
        y1: dom.hi,
    };
    let t = grid.points();
    let jump_tol = JUMP_FRACTION * dom.diam();
    let mut out = String::new();
    header(&mut out, title);
    let yticks: Vec<(f64, String)> = (0..=5)
        .map(|k| {
            let y = dom.lo + dom.diam() * k as f64 / 5.0;
            (y, trim_number(y))
        })
        .collect();
    axes(&mut out, &fr, "t", "x", &yticks);

    match truth {
        Some(GroundTruth::Atomic { measure }) => {
            for a in &measure.atoms {
                trajectory(&mut out, &fr, t, &a.curve, r##"stroke="#999999" stroke-width="1""##, jump_tol);
            }
        }
        Some(GroundTruth::Interval { spec }) => {
            // Band between the boundaries, one quadrilateral per time step.
            for j in 0..t.len() - 1 {
                let (lo0, hi0) = spec.bounds_at(t[j], false);
                let (lo1, hi1) = spec.bounds_at(t[j + 1], true);
                let _ = writeln!(
                    out,
                    r##"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="#cccccc" fill-opacity="0.6" stroke="none"/>"##,
                    fr.px(t[j]),
                    fr.py(lo0),
                    fr.px(t[j + 1]),
                    fr.py(lo1),
                    fr.px(t[j + 1]),
                    fr.py(hi1),
                    fr.px(t[j]),
                    fr.py(hi0)
                );
            }
        }
        None => {}
    }

    let max_mass = mu.atoms.iter().map(|a| a.mass).fold(0.0, f64::max);
    for (k, a) in mu.atoms.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let width = 1.0 + 4.0 * a.mass / max_mass;
        let style = format!(r#"stroke="{color}" stroke-width="{width:.2}""#);
        trajectory(&mut out, &fr, t, &a.curve, &style, jump_tol);
        let ly = TOP + 20.0 + 20.0 * k as f64;
        let lx = WIDTH - RIGHT + 15.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" {style}/><text x="{:.2}" y="{:.2}">weight {:.4}</text>"#,
            lx + 25.0,
            lx + 32.0,
            ly + 4.0,
            a.mass
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Residuals on a logarithmic axis; nonpositive entries are skipped.
pub fn residual_svg(residuals: &[f64]) -> String {
    let pts: Vec<(f64, f64)> = residuals
        .iter()
        .enumerate()
        .filter(|(_, r)| **r > 0.0 && r.is_finite())
        .map(|(k, r)| (k as f64, r.log10()))
        .collect();
    let (lo, hi) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let (y0, y1) = if pts.is_empty() {
        (-1.0, 0.0)
    } else {
        (lo.floor(), hi.ceil().max(lo.floor() + 1.0))
    };
    let fr = Frame {
        x0: 0.0,
        x1: (residuals.len().max(2) - 1) as f64,
        y0,
        y1,
    };
    let mut out = String::new();
    header(&mut out, "residuals");
    let yticks: Vec<(f64, String)> = (y0 as i32..=y1 as i32)
        .map(|e| (e as f64, format!("1e{e}")))
        .collect();
    axes(&mut out, &fr, "k", "r(k)", &yticks);
    if !pts.is_empty() {
        let d: Vec<String> = pts
            .iter()
            .map(|&(k, r)| format!("{:.2},{:.2}", fr.px(k), fr.py(r)))
            .collect();
        let _ = writeln!(
            out,
            r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
            d.join(" ")
        );
        for p in &d {
            let (x, y) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(out, r##"<circle cx="{x}" cy="{y}" r="3" fill="#1f77b4"/>"##);
        }
    }
    out.push_str("</svg>\n");
    out
}
