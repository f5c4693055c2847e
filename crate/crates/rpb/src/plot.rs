//! Static SVG rendering of planar trajectories.

use std::fmt::Write;

use rpb_core::plant::Obstacle;

const SIZE: f64 = 600.0;
const PAD: f64 = 30.0;
const COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

/// What to draw. `paths[k][i]` is the path of robot `i` in rollout `k`.
#[derive(Debug, Clone, Default)]
pub struct Scene {
    pub title: String,
    pub obstacles: Vec<Obstacle>,
    pub starts: Vec<[f64; 2]>,
    pub targets: Vec<[f64; 2]>,
    pub paths: Vec<Vec<Vec<[f64; 2]>>>,
}

struct Frame {
    x0: f64,
    y0: f64,
    scale: f64,
}

impl Frame {
    fn fit(scene: &Scene) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        let mut grow = |p: [f64; 2], r: f64| {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k] - r);
                hi[k] = hi[k].max(p[k] + r);
            }
        };
        for o in &scene.obstacles {
            grow(o.center, o.radius);
        }
        for p in scene.starts.iter().chain(&scene.targets) {
            grow(*p, 0.2);
        }
        for p in scene.paths.iter().flatten().flatten() {
            if p[0].is_finite() && p[1].is_finite() {
                grow(*p, 0.0);
            }
        }
        if !lo[0].is_finite() {
            lo = [-1.0; 2];
            hi = [1.0; 2];
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-6);
        let scale = (SIZE - 2.0 * PAD) / span;
        // center the shorter axis
        let x0 = lo[0] - 0.5 * (span - (hi[0] - lo[0]));
        let y0 = lo[1] - 0.5 * (span - (hi[1] - lo[1]));
        Self { x0, y0, scale }
    }

    fn px(&self, p: [f64; 2]) -> (f64, f64) {
        (PAD + (p[0] - self.x0) * self.scale, SIZE - PAD - (p[1] - self.y0) * self.scale)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn star(cx: f64, cy: f64, r: f64) -> String {
    let mut pts = String::new();
    for k in 0..10 {
        let rad = if k % 2 == 0 { r } else { 0.45 * r };
        let a = std::f64::consts::PI * (k as f64 / 5.0 - 0.5);
        let _ = write!(pts, "{:.2},{:.2} ", cx + rad * a.cos(), cy + rad * a.sin());
    }
    pts.trim_end().to_string()
}

pub fn render(scene: &Scene) -> String {
    let f = Frame::fit(scene);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"##
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="white"/>"##);
    if !scene.title.is_empty() {
        let _ = writeln!(
            s,
            r##"<text x="{}" y="18" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"##,
            SIZE / 2.0,
            escape(&scene.title)
        );
    }
    for o in &scene.obstacles {
        let (cx, cy) = f.px(o.center);
        let _ = writeln!(
            s,
            r##"<circle class="obstacle" cx="{cx:.2}" cy="{cy:.2}" r="{:.2}" fill="#b0b0b0" stroke="#606060"/>"##,
            o.radius * f.scale
        );
    }
    for rollout in &scene.paths {
        for (i, path) in rollout.iter().enumerate() {
            let pts: Vec<String> = path
                .iter()
                .filter(|p| p[0].is_finite() && p[1].is_finite())
                .map(|p| {
                    let (x, y) = f.px(*p);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            let _ = writeln!(
                s,
                r##"<polyline class="path" points="{}" fill="none" stroke="{}" stroke-width="1.5" stroke-opacity="0.8"/>"##,
                pts.join(" "),
                COLORS[i % COLORS.len()]
            );
        }
    }
    for (i, p) in scene.starts.iter().enumerate() {
        let (cx, cy) = f.px(*p);
        let _ = writeln!(
            s,
            r##"<circle class="start" cx="{cx:.2}" cy="{cy:.2}" r="5" fill="{}"/>"##,
            COLORS[i % COLORS.len()]
        );
    }
    for (i, p) in scene.targets.iter().enumerate() {
        let (cx, cy) = f.px(*p);
        let _ = writeln!(
            s,
            r##"<polygon class="target" points="{}" fill="{}" stroke="black" stroke-width="0.5"/>"##,
            star(cx, cy, 9.0),
            COLORS[i % COLORS.len()]
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_every_element() {
        let scene = Scene {
            title: "a < b & c".into(),
            obstacles: vec![Obstacle {
                center: [1.0, 0.0],
                radius: 0.5,
                weight: 1.0,
            }],
            starts: vec![[0.0, -2.0], [1.0, -2.0]],
            targets: vec![[0.0, 2.0], [1.0, 2.0]],
            paths: vec![vec![vec![[0.0, -2.0], [0.0, 2.0]], vec![[1.0, -2.0], [f64::NAN, 0.0], [1.0, 2.0]]]],
        };
        let svg = render(&scene);
        assert_eq!(svg.matches("class=\"obstacle\"").count(), 1);
        assert_eq!(svg.matches("class=\"path\"").count(), 2);
        assert_eq!(svg.matches("class=\"target\"").count(), 2);
        assert!(svg.contains("a &lt; b &amp; c"));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn empty_scene_renders() {
        let svg = render(&Scene::default());
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }
}
