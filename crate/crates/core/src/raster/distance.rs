//! Pixel-to-triangle distance in screen space, the closest point, and the
//! derivatives of both with respect to the projected triangle vertices.

use nalgebra::Vector2;

pub type Point = Vector2<f64>;

/// Triangles with smaller screen area (px²) are skipped by both passes.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Which feature of the triangle the closest point lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Region {
    Interior,
    /// Edge `k` runs from vertex `k` to vertex `(k + 1) % 3`.
    Edge(u8),
    Vertex(u8),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriangleHit {
    pub distance: f64,
    pub closest: Point,
    pub bary: [f64; 3],
    pub region: Region,
    /// Position along the edge for [`Region::Edge`], 0 otherwise.
    pub t: f64,
}

#[inline]
pub(crate) fn cross(a: Point, b: Point) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Twice the signed area; zero-area triangles are rejected upstream.
#[inline]
pub fn signed_double_area(tri: &[Point; 3]) -> f64 {
    cross(tri[1] - tri[0], tri[2] - tri[0])
}

#[inline]
pub fn is_degenerate(tri: &[Point; 3]) -> bool {
    !(0.5 * signed_double_area(tri).abs() > MIN_TRIANGLE_AREA)
}

/// Barycentric coordinates of `p`, or `None` when `p` is outside. Points on
/// an edge count as inside. Works for either winding.
#[inline]
pub fn barycentric_inside(p: Point, tri: &[Point; 3]) -> Option<[f64; 3]> {
    let area = signed_double_area(tri);
    let w0 = cross(tri[1] - p, tri[2] - p);
    let w1 = cross(tri[2] - p, tri[0] - p);
    let w2 = cross(tri[0] - p, tri[1] - p);
    let b = [w0 / area, w1 / area, w2 / area];
    (b[0] >= 0.0 && b[1] >= 0.0 && b[2] >= 0.0).then_some(b)
}

/// Closest point of the triangle (interior included) to `p`. Returns `None`
/// for degenerate triangles. Ties between edges go to the lower edge index.
pub fn point_triangle_distance(p: Point, tri: &[Point; 3]) -> Option<TriangleHit> {
    if is_degenerate(tri) {
        return None;
    }
    if let Some(bary) = barycentric_inside(p, tri) {
        return Some(TriangleHit { distance: 0.0, closest: p, bary, region: Region::Interior, t: 0.0 });
    }
    let mut best: Option<TriangleHit> = None;
    for k in 0..3 {
        let (a, b) = (tri[k], tri[(k + 1) % 3]);
        let e = b - a;
        let t = ((p - a).dot(&e) / e.dot(&e)).clamp(0.0, 1.0);
        let closest = a + e * t;
        let distance = (p - closest).norm();
        if best.is_some_and(|h| h.distance <= distance) {
            continue;
        }
        let mut bary = [0.0; 3];
        let region = if t == 0.0 {
            bary[k] = 1.0;
            Region::Vertex(k as u8)
        } else if t == 1.0 {
            bary[(k + 1) % 3] = 1.0;
            Region::Vertex(((k + 1) % 3) as u8)
        } else {
            bary[k] = 1.0 - t;
            bary[(k + 1) % 3] = t;
            Region::Edge(k as u8)
        };
        let t = if matches!(region, Region::Edge(_)) { t } else { 0.0 };
        best = Some(TriangleHit { distance, closest, bary, region, t });
    }
    best
}

/// ∂distance/∂q_j for the three vertices, holding the region fixed.
pub fn distance_gradient(p: Point, hit: &TriangleHit) -> [Point; 3] {
    let mut g = [Point::zeros(); 3];
    if hit.distance <= 0.0 {
        return g;
    }
    let normal = (p - hit.closest) / hit.distance;
    match hit.region {
        Region::Interior => {}
        Region::Vertex(k) => g[k as usize] = -normal,
        Region::Edge(k) => {
            let (a, b) = (k as usize, (k as usize + 1) % 3);
            // envelope: the optimal t makes ∂d/∂t vanish
            g[a] = -normal * (1.0 - hit.t);
            g[b] = -normal * hit.t;
        }
    }
    g
}

/// ∂t/∂q_j for an edge hit (zero elsewhere); the closest point's
/// barycentrics are `(1 - t, t)` on the edge endpoints.
pub fn edge_param_gradient(p: Point, tri: &[Point; 3], hit: &TriangleHit) -> [Point; 3] {
    let mut g = [Point::zeros(); 3];
    if let Region::Edge(k) = hit.region {
        let (a, b) = (k as usize, (k as usize + 1) % 3);
        let e = tri[b] - tri[a];
        let r = p - tri[a];
        let ee = e.dot(&e);
        let w = (r - e * (2.0 * hit.t)) / ee;
        g[a] = -e / ee - w;
        g[b] = w;
    }
    g
}

/// ∂b_i/∂q_j for the interior barycentrics of `p`: `grad[i][j]`.
pub fn barycentric_gradient(p: Point, tri: &[Point; 3]) -> [[Point; 3]; 3] {
    let area = signed_double_area(tri);
    // ∂cross(u, v)/∂u = (v.y, -v.x), ∂cross(u, v)/∂v = (-u.y, u.x)
    let du = |v: Point| Point::new(v.y, -v.x);
    let dv = |u: Point| Point::new(-u.y, u.x);
    let mut w = [0.0; 3];
    let mut dw = [[Point::zeros(); 3]; 3];
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        let (u, v) = (tri[j] - p, tri[k] - p);
        w[i] = cross(u, v);
        dw[i][j] = du(v);
        dw[i][k] = dv(u);
    }
    // area = cross(q1 - q0, q2 - q0)
    let (e1, e2) = (tri[1] - tri[0], tri[2] - tri[0]);
    let da = [-du(e2) - dv(e1), du(e2), dv(e1)];
    let mut g = [[Point::zeros(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            g[i][j] = (dw[i][j] * area - da[j] * w[i]) / (area * area);
        }
    }
    g
}
