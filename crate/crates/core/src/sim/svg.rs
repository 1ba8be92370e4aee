use std::fmt::Write as _;

use super::{Gripper, World};
use crate::Scalar;

const SCALE: f64 = 600.0;

/// A top-down SVG snapshot: regions as rectangles, objects as labelled
/// dots, robots as squares (filled when the gripper is closed).
pub fn render_svg<S: Scalar>(world: &World<S>) -> String {
    let b = world.params.bounds;
    let w = (b.max.x - b.min.x).as_f64() * SCALE;
    let h = (b.max.y - b.min.y).as_f64() * SCALE;
    // SVG's y axis points down; flip so the table reads like a plot.
    let px = |x: S| (x - b.min.x).as_f64() * SCALE;
    let py = |y: S| h - (y - b.min.y).as_f64() * SCALE;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    );
    let _ = writeln!(s, r##"  <rect x="0" y="0" width="{w:.0}" height="{h:.0}" fill="#f7f3ea"/>"##);
    for (id, r) in &world.regions {
        let _ = writeln!(
            s,
            r##"  <rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#cfe3f7" stroke="#4a7aa8"><title>{id}</title></rect>"##,
            px(r.min.x),
            py(r.max.y),
            (r.max.x - r.min.x).as_f64() * SCALE,
            (r.max.y - r.min.y).as_f64() * SCALE,
        );
    }
    for (id, o) in &world.objects {
        let (x, y) = (px(o.position.x), py(o.position.y));
        let _ = writeln!(s, r##"  <circle cx="{x:.1}" cy="{y:.1}" r="6" fill="#d9822b"><title>{id}</title></circle>"##);
        let _ = writeln!(s, r#"  <text x="{:.1}" y="{:.1}" font-size="10">{id}</text>"#, x + 8.0, y - 8.0);
    }
    for (i, r) in world.robots.iter().enumerate() {
        let (x, y) = (px(r.position.x), py(r.position.y));
        let fill = if r.gripper == Gripper::Closed { "#333333" } else { "none" };
        let _ = writeln!(
            s,
            r##"  <rect x="{:.1}" y="{:.1}" width="14" height="14" fill="{fill}" stroke="#333333" stroke-width="2"><title>robot {i}</title></rect>"##,
            x - 7.0,
            y - 7.0,
        );
    }
    let _ = writeln!(s, r#"  <text x="6" y="14" font-size="12">tick {}</text>"#, world.tick);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::load_scenario;

    #[test]
    fn snapshot_lists_every_entity() {
        let (s, _) = load_scenario::<f64>("BuildBlocks", 0).unwrap();
        let svg = render_svg(&s.world);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert_eq!(svg.matches("<title>robot").count(), 2);
        assert!(svg.contains("<title>base</title>"));
    }
}
