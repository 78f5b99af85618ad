//! SVG rendering of a scenario and an executed episode.
//!
//! Known and discovered CRs are blue, CRs unknown to the controller are red.
//! Every shape carries a class so the output can be inspected by tools.

use std::fmt::Write as _;

use crate::engine::EpisodeResult;
use crate::harness::scenario::Scenario;
use crate::regions::{Point, Rect};

const SCALE: f64 = 8.0;

struct Canvas {
    ws: Rect,
    out: String,
}

impl Canvas {
    fn x(&self, x: f64) -> f64 {
        (x - self.ws.x_min) * SCALE
    }

    fn y(&self, y: f64) -> f64 {
        (self.ws.y_max - y) * SCALE
    }

    fn circle(&mut self, class: &str, c: Point, r: f64, style: &str) {
        let _ = writeln!(
            self.out,
            r#"  <circle class="{class}" cx="{:.2}" cy="{:.2}" r="{:.2}" {style}/>"#,
            self.x(c.x),
            self.y(c.y),
            r * SCALE
        );
    }

    fn polyline(&mut self, class: &str, pts: impl Iterator<Item = Point>, style: &str) {
        let coords: Vec<String> = pts.map(|p| format!("{:.2},{:.2}", self.x(p.x), self.y(p.y))).collect();
        if coords.len() < 2 {
            return;
        }
        let _ = writeln!(self.out, r#"  <polyline class="{class}" points="{}" fill="none" {style}/>"#, coords.join(" "));
    }
}

/// Draw the workspace, the TR, every CR with its DR annulus, the CRs
/// discovered during the episode, the initial plan set and the executed
/// trace.
pub fn render_trace(result: Option<&EpisodeResult>, scenario: &Scenario, with_plans: bool) -> String {
    let ws = scenario.workspace;
    let mut c = Canvas { ws, out: String::new() };
    let (w, h) = (ws.width() * SCALE, ws.height() * SCALE);
    let _ = writeln!(
        c.out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    );
    let _ = writeln!(c.out, r##"  <rect class="workspace" x="0" y="0" width="{w:.0}" height="{h:.0}" fill="#fdf6ee" stroke="#444"/>"##);

    let dr = scenario.dr_width;
    for cr in &scenario.crs {
        let center = Point::new(cr.x, cr.y);
        // annulus as a thick ring centered between the CR and DR boundaries
        let _ = writeln!(
            c.out,
            r##"  <circle class="dr" cx="{:.2}" cy="{:.2}" r="{:.2}" fill="none" stroke="#f2c14e" stroke-opacity="0.45" stroke-width="{:.2}"/>"##,
            c.x(center.x),
            c.y(center.y),
            (cr.r + dr / 2.0) * SCALE,
            dr * SCALE
        );
    }
    let tr = scenario.tr;
    c.circle("tr", Point::new(tr.x, tr.y), tr.r, r##"fill="#6cc070" fill-opacity="0.6" stroke="#2e7d32""##);
    for cr in &scenario.crs {
        let (class, color) = if cr.known { ("cr known", "#1f5fbf") } else { ("cr unknown", "#d32f2f") };
        c.circle(class, Point::new(cr.x, cr.y), cr.r, &format!(r#"fill="{color}" fill-opacity="0.8""#));
    }

    if let Some(res) = result {
        for d in &res.discovered {
            c.circle(
                "cr discovered",
                d.center,
                d.radius,
                r##"fill="#1f5fbf" fill-opacity="0.25" stroke="#1f5fbf" stroke-dasharray="4 2""##,
            );
        }
        if with_plans {
            for plan in &res.initial_plans {
                c.polyline("plan", plan.iter().map(|p| p.position()), r##"stroke="#888" stroke-width="1" stroke-opacity="0.6""##);
            }
        }
        c.polyline("trace", res.final_trace.positions(), r##"stroke="#111" stroke-width="2""##);
        c.polyline(
            "samples",
            res.samples.iter().map(|s| s.true_pos),
            r##"stroke="#7b1fa2" stroke-width="1" stroke-dasharray="2 2""##,
        );
    } else if !scenario.reference_path.is_empty() {
        c.polyline(
            "reference",
            scenario.reference_path.iter().map(|p| p.position()),
            r##"stroke="#888" stroke-width="1.5" stroke-dasharray="6 3""##,
        );
    }
    c.out.push_str("</svg>\n");
    c.out
}
