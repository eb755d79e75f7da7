//! Static scatter plot of the first two coordinates.

use std::fmt::Write;

use affdim_core::attractor::PointCloud;

pub const SIZE: f64 = 1024.0;
pub const RADIUS: f64 = 0.5;
const MARGIN: f64 = 16.0;

/// Viewport is the bounding box of `(x1, x2)`, scaled uniformly into the
/// canvas with `y` pointing up.
pub fn scatter(cloud: &PointCloud) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    if let Some((lo, hi)) = cloud.bounding_box() {
        let y_of = |c: &[f64]| if c.len() > 1 { c[1] } else { 0.0 };
        let (x0, y0) = (lo[0], if lo.len() > 1 { lo[1] } else { 0.0 });
        let (wx, wy) = (hi[0] - x0, if hi.len() > 1 { hi[1] - y0 } else { 0.0 });
        let extent = wx.max(wy);
        let scale = if extent > 0.0 { (SIZE - 2.0 * MARGIN) / extent } else { 1.0 };
        let (ox, oy) = (MARGIN + 0.5 * (SIZE - 2.0 * MARGIN - wx * scale), MARGIN + 0.5 * (SIZE - 2.0 * MARGIN - wy * scale));
        let _ = writeln!(out, r#"<g fill="black">"#);
        for p in &cloud.points {
            let px = ox + (p.coords[0] - x0) * scale;
            let py = SIZE - (oy + (y_of(&p.coords) - y0) * scale);
            let _ = writeln!(out, r#"<circle cx="{px:.2}" cy="{py:.2}" r="{RADIUS}"/>"#);
        }
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    out
}
