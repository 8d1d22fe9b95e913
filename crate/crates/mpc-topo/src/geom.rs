//! Small 2D geometry helpers shared by the contour, characteristic-point and
//! scatterer modules. Points live in the delay-angle plane with delay as x
//! and angle as y.

use serde::{Deserialize, Serialize};

/// A delay-angle coordinate: `tau_ns` on the delay axis, `phi_deg` on the
/// azimuth axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayAngle {
    pub tau_ns: f64,
    pub phi_deg: f64,
}

impl DelayAngle {
    pub fn new(tau_ns: f64, phi_deg: f64) -> Self {
        Self { tau_ns, phi_deg }
    }
}

/// Twice the signed area of a closed polygon (positive for counterclockwise
/// vertex order). The polygon is stored without the closing duplicate vertex.
pub fn signed_area_2x(points: &[DelayAngle]) -> f64 {
    let n = points.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = points[i];
        let b = points[(i + 1) % n];
        acc += a.tau_ns * b.phi_deg - b.tau_ns * a.phi_deg;
    }
    acc
}

/// Winding-number point-in-polygon test. Points exactly on the boundary are
/// not meaningful callers here: contours at distinct power levels cannot
/// touch, so queries stay strictly inside or outside.
pub fn point_in_polygon(p: DelayAngle, polygon: &[DelayAngle]) -> bool {
    let n = polygon.len();
    let mut winding = 0i32;
    for i in 0..n {
        let a = polygon[i];
        let b = polygon[(i + 1) % n];
        if a.phi_deg <= p.phi_deg {
            if b.phi_deg > p.phi_deg && cross_side(a, b, p) > 0.0 {
                winding += 1;
            }
        } else if b.phi_deg <= p.phi_deg && cross_side(a, b, p) < 0.0 {
            winding -= 1;
        }
    }
    winding != 0
}

/// >0 if `p` is left of the directed line a->b.
fn cross_side(a: DelayAngle, b: DelayAngle, p: DelayAngle) -> f64 {
    (b.tau_ns - a.tau_ns) * (p.phi_deg - a.phi_deg) - (p.tau_ns - a.tau_ns) * (b.phi_deg - a.phi_deg)
}

/// Vertex-average centroid of a polygon.
pub fn vertex_centroid(points: &[DelayAngle]) -> DelayAngle {
    let n = points.len() as f64;
    let (mut t, mut p) = (0.0, 0.0);
    for q in points {
        t += q.tau_ns;
        p += q.phi_deg;
    }
    DelayAngle::new(t / n, p / n)
}

/// Total chord length around the closed polygon.
pub fn perimeter(points: &[DelayAngle]) -> f64 {
    let n = points.len();
    (0..n)
        .map(|i| {
            let a = points[i];
            let b = points[(i + 1) % n];
            ((b.tau_ns - a.tau_ns).powi(2) + (b.phi_deg - a.phi_deg).powi(2)).sqrt()
        })
        .sum()
}
