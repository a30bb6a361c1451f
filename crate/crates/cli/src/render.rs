//! SVG scenes: environment, original and augmented trajectories.

use std::fmt::Write as _;

use manipaug::datamodel::Example;
use manipaug::geometry::{EnvironmentSpec, Primitive};
use manipaug::report::AugmentationRecord;

const SIZE: f64 = 600.0;
const MARGIN: f64 = 20.0;

/// Maps world coordinates onto the canvas. Rope scenes are drawn from the
/// side (x, z).
struct View {
    axes: (usize, usize),
    lower: (f64, f64),
    scale: f64,
}

impl View {
    fn new(env: &EnvironmentSpec) -> Self {
        let axes = if env.dim == 3 { (0, 2) } else { (0, 1) };
        let lo = &env.workspace.lower;
        let hi = &env.workspace.upper;
        let span = (hi[axes.0] - lo[axes.0]).max(hi[axes.1] - lo[axes.1]).max(1e-9);
        Self {
            axes,
            lower: (lo[axes.0], lo[axes.1]),
            scale: (SIZE - 2.0 * MARGIN) / span,
        }
    }

    fn map(&self, p: &[f64]) -> (f64, f64) {
        let x = MARGIN + (p[self.axes.0] - self.lower.0) * self.scale;
        let y = SIZE - MARGIN - (p[self.axes.1] - self.lower.1) * self.scale;
        (x, y)
    }
}

fn primitive(out: &mut String, view: &View, p: &Primitive, style: &str) {
    match p {
        Primitive::Disc { center, radius } => {
            let (x, y) = view.map(center);
            let _ = writeln!(
                out,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="{:.2}" {style}/>"#,
                radius * view.scale
            );
        }
        Primitive::Box { min, max } => {
            let (x0, y0) = view.map(min);
            let (x1, y1) = view.map(max);
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" {style}/>"#,
                x0.min(x1),
                y0.min(y1),
                (x1 - x0).abs(),
                (y1 - y0).abs()
            );
        }
    }
}

fn polyline(out: &mut String, view: &View, pts: &[Vec<f64>], color: &str) {
    if pts.is_empty() {
        return;
    }
    let path: Vec<String> = pts
        .iter()
        .map(|p| {
            let (x, y) = view.map(p);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
        path.join(" ")
    );
}

/// Per-point trails for every object and the robot.
fn trajectories(out: &mut String, view: &View, ex: &Example, color: &str) {
    let dim = ex.dim();
    for obj in &ex.objects {
        for k in 0..obj.points_per_state(dim) {
            let trail: Vec<Vec<f64>> = obj.points.iter().map(|s| s[k * dim..(k + 1) * dim].to_vec()).collect();
            polyline(out, view, &trail, color);
        }
        if let Some(last) = obj.points.last() {
            for p in last.chunks(dim) {
                let (x, y) = view.map(p);
                let r = obj.radius.map_or(2.0, |r| r * view.scale);
                let _ = writeln!(
                    out,
                    r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r:.2}" fill="none" stroke="{color}"/>"#
                );
            }
        }
    }
    let per = ex.robot.first().map_or(0, |r| r.len() / dim);
    for k in 0..per {
        let trail: Vec<Vec<f64>> = ex.robot.iter().map(|s| s[k * dim..(k + 1) * dim].to_vec()).collect();
        polyline(out, view, &trail, "#888888");
    }
}

/// One scene: obstacles in black, the source in grey and the augmentation
/// in blue (red when it fell back).
pub fn render_scene(env: &EnvironmentSpec, source: &Example, output: &Example, record: &AugmentationRecord) -> String {
    let view = View::new(env);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let lo = view.map(&env.workspace.lower);
    let hi = view.map(&env.workspace.upper);
    let _ = writeln!(
        out,
        r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#cccccc"/>"##,
        lo.0.min(hi.0),
        lo.1.min(hi.1),
        (hi.0 - lo.0).abs(),
        (hi.1 - lo.1).abs()
    );
    for p in &env.primitives {
        primitive(&mut out, &view, p, r##"fill="#333333""##);
    }
    trajectories(&mut out, &view, source, "#aaaaaa");
    let color = if record.accepted { "#1f5fbf" } else { "#bf1f1f" };
    trajectories(&mut out, &view, output, color);
    let values: Vec<String> = record.transform.values().iter().map(|v| format!("{v:.4}")).collect();
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="14" font-family="monospace" font-size="11">source {} draw {} {} T=[{}]</text>"#,
        record.source,
        record.draw,
        if record.accepted { "accepted" } else { "fallback" },
        values.join(", ")
    );
    out.push_str("</svg>\n");
    out
}
