//! Predicted-versus-true scatter plots as plain SVG.

use std::fmt::Write;

use fintact_core::trainer::RegressionPair;

const PANEL: f64 = 360.0;
const MARGIN: f64 = 50.0;
const PLOT: f64 = PANEL - 2.0 * MARGIN;

/// One square panel: truth on x, prediction on y, both over `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub title: String,
    pub lo: f64,
    pub hi: f64,
    /// `(truth, predicted)` pairs.
    pub points: Vec<(f64, f64)>,
}

impl Panel {
    /// Canvas coordinates of a data point within panel `index`.
    pub fn to_canvas(&self, index: usize, truth: f64, predicted: f64) -> (f64, f64) {
        let s = |v: f64| (v - self.lo) / (self.hi - self.lo) * PLOT;
        let left = index as f64 * PANEL + MARGIN;
        (left + s(truth), MARGIN + PLOT - s(predicted))
    }
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    (0..=4).map(|i| lo + (hi - lo) * i as f64 / 4.0).collect()
}

pub fn scatter(panels: &[Panel]) -> String {
    let width = PANEL * panels.len() as f64;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL}" viewBox="0 0 {width} {PANEL}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{width}" height="{PANEL}" fill="white"/>"#).unwrap();
    for (i, p) in panels.iter().enumerate() {
        let left = i as f64 * PANEL + MARGIN;
        let (x0, y0) = p.to_canvas(i, p.lo, p.lo);
        let (x1, y1) = p.to_canvas(i, p.hi, p.hi);
        writeln!(s, r#"<g class="panel" data-index="{i}">"#).unwrap();
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="13">{}</text>"#,
            left + PLOT / 2.0,
            MARGIN - 18.0,
            p.title
        )
        .unwrap();
        writeln!(
            s,
            r#"<rect x="{left:.2}" y="{MARGIN:.2}" width="{PLOT:.2}" height="{PLOT:.2}" fill="none" stroke="black"/>"#
        )
        .unwrap();
        for t in ticks(p.lo, p.hi) {
            let (x, y) = p.to_canvas(i, t, t);
            writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{t}</text>"#, MARGIN + PLOT + 15.0).unwrap();
            writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{t}</text>"#, left - 6.0, y + 4.0).unwrap();
        }
        writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">true</text>"#, left + PLOT / 2.0, PANEL - 8.0)
            .unwrap();
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">predicted</text>"#,
            left - 34.0,
            MARGIN + PLOT / 2.0,
            left - 34.0,
            MARGIN + PLOT / 2.0
        )
        .unwrap();
        writeln!(
            s,
            r##"<line class="identity" x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y1:.2}" stroke="#c0392b" stroke-dasharray="4 3"/>"##
        )
        .unwrap();
        for &(t, q) in &p.points {
            let (x, y) = p.to_canvas(i, t, q);
            writeln!(s, r##"<circle cx="{x:.2}" cy="{y:.2}" r="1.8" fill="#2c3e50" fill-opacity="0.5"/>"##).unwrap();
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

/// Position and force panels from truth/prediction pairs.
pub fn regression_scatter(pairs: &[RegressionPair]) -> String {
    use fintact_core::models::{FORCE_RANGE_N, POSITION_RANGE_MM};
    scatter(&[
        Panel {
            title: "Contact position (mm)".into(),
            lo: POSITION_RANGE_MM.0,
            hi: POSITION_RANGE_MM.1,
            points: pairs.iter().map(|(t, p)| (t.0, p.0)).collect(),
        },
        Panel {
            title: "Normal force (N)".into(),
            lo: FORCE_RANGE_N.0,
            hi: FORCE_RANGE_N.1,
            points: pairs.iter().map(|(t, p)| (t.1, p.1)).collect(),
        },
    ])
}
