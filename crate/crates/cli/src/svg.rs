//! Reconstruction overlay as a self-contained SVG. Output depends only on the
//! inputs, so identical runs give identical bytes.

use std::fmt::Write as _;

use rfs_shape::reconstruct::ReconstructedShape;
use rfs_shape::{Point2, MARKER_COUNT};

const PX_PER_MM: f64 = 4.0;
const GRID_MM: f64 = 10.0;
const MARGIN_PX: f64 = 40.0;
/// Radius of the tolerance circles drawn around the true markers.
const BAND_MM: f64 = 1.5;
const CURVE_SAMPLES: usize = 200;

struct Frame {
    x0: f64,
    y1: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        MARGIN_PX + (v - self.x0) * PX_PER_MM
    }

    fn y(&self, v: f64) -> f64 {
        MARGIN_PX + (self.y1 - v) * PX_PER_MM
    }

    fn pt(&self, p: Point2) -> String {
        format!("{:.2},{:.2}", self.x(p.x), self.y(p.y))
    }
}

fn polyline(s: &mut String, f: &Frame, points: &[Point2], style: &str) {
    let pts: Vec<String> = points.iter().map(|&p| f.pt(p)).collect();
    let _ = writeln!(s, r#"<polyline points="{}" {style}/>"#, pts.join(" "));
}

pub fn render(
    shape: &ReconstructedShape,
    predicted: &[Point2; MARKER_COUNT],
    truth: &[Point2; MARKER_COUNT],
) -> String {
    let curve = shape.curve.sample(CURVE_SAMPLES);
    let mut truth_path = vec![Point2::ORIGIN];
    truth_path.extend_from_slice(truth);

    let all = curve.iter().chain(&shape.stations).chain(truth_path.iter()).chain(predicted);
    let (mut lo, mut hi) = (Point2::new(0.0, 0.0), Point2::new(0.0, 0.0));
    for p in all {
        lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let snap_down = |v: f64| (v / GRID_MM).floor() * GRID_MM - GRID_MM;
    let snap_up = |v: f64| (v / GRID_MM).ceil() * GRID_MM + GRID_MM;
    let (x0, x1, y0, y1) = (snap_down(lo.x), snap_up(hi.x), snap_down(lo.y), snap_up(hi.y));
    let f = Frame { x0, y1 };
    let width = 2.0 * MARGIN_PX + (x1 - x0) * PX_PER_MM;
    let height = 2.0 * MARGIN_PX + (y1 - y0) * PX_PER_MM + 60.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);

    let _ = writeln!(s, r##"<g stroke="#e4e4e4" stroke-width="1">"##);
    let steps = |a: f64, b: f64| {
        let n = ((b - a) / GRID_MM).round() as i64;
        (0..=n).map(move |i| a + i as f64 * GRID_MM)
    };
    for v in steps(x0, x1) {
        let _ = writeln!(s, r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}"/>"#, f.x(v), f.y(y1), f.y(y0));
    }
    for v in steps(y0, y1) {
        let _ = writeln!(s, r#"<line x1="{1:.2}" y1="{0:.2}" x2="{2:.2}" y2="{0:.2}"/>"#, f.y(v), f.x(x0), f.x(x1));
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r##"<g stroke="#808080" stroke-width="1.2">"##);
    let _ = writeln!(s, r#"<line x1="{0:.2}" y1="{1:.2}" x2="{2:.2}" y2="{1:.2}"/>"#, f.x(x0), f.y(0.0), f.x(x1));
    let _ = writeln!(s, r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}"/>"#, f.x(0.0), f.y(y1), f.y(y0));
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r##"<g fill="#606060">"##);
    for v in steps(x0, x1).filter(|v| (v / (2.0 * GRID_MM)).fract() == 0.0) {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{v:.0}</text>"#, f.x(v), f.y(y0) + 14.0);
    }
    for v in steps(y0, y1).filter(|v| (v / (2.0 * GRID_MM)).fract() == 0.0) {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.0}</text>"#, f.x(x0) - 4.0, f.y(v) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">x (mm)</text>"#, f.x(0.5 * (x0 + x1)), f.y(y0) + 30.0);
    let _ = writeln!(s, r#"<text x="12" y="{:.2}" transform="rotate(-90 12 {0:.2})" text-anchor="middle">y (mm)</text>"#, f.y(0.5 * (y0 + y1)));
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r##"<g fill="none" stroke="#2a9d8f" stroke-width="0.8" stroke-dasharray="2,2">"##);
    for t in truth {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="{:.2}"/>"#, f.x(t.x), f.y(t.y), BAND_MM * PX_PER_MM);
    }
    let _ = writeln!(s, "</g>");
    polyline(&mut s, &f, &truth_path, r##"fill="none" stroke="#222222" stroke-width="1.5" stroke-dasharray="6,3""##);
    polyline(&mut s, &f, &curve, r##"fill="none" stroke="#1d4ed8" stroke-width="2""##);

    let _ = writeln!(s, r##"<g fill="#1d4ed8">"##);
    for p in &shape.stations {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.6"/>"#, f.x(p.x), f.y(p.y));
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r##"<g fill="#222222">"##);
    for t in truth {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3"/>"#, f.x(t.x), f.y(t.y));
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r##"<g stroke="#dc2626" stroke-width="2">"##);
    for p in predicted {
        let (cx, cy) = (f.x(p.x), f.y(p.y));
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#, cx - 4.0, cy - 4.0, cx + 4.0, cy + 4.0);
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#, cx - 4.0, cy + 4.0, cx + 4.0, cy - 4.0);
    }
    let _ = writeln!(s, "</g>");

    let ly = height - 24.0;
    let legend = [
        ("#222222", "ground truth"),
        ("#1d4ed8", "reconstructed body"),
        ("#dc2626", "predicted markers"),
        ("#2a9d8f", "1.5 mm band"),
    ];
    for (i, (color, label)) in legend.iter().enumerate() {
        let lx = MARGIN_PX + i as f64 * 150.0;
        let _ = writeln!(s, r#"<rect x="{lx:.0}" y="{:.0}" width="14" height="4" fill="{color}"/>"#, ly - 4.0);
        let _ = writeln!(s, r#"<text x="{:.0}" y="{ly:.0}">{label}</text>"#, lx + 20.0);
    }
    let _ = writeln!(s, "</svg>");
    s
}
