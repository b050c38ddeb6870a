//! Small 3-d geometry kit for the image source model: points, oriented
//! planes, and convex polygon containment.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

pub const fn vec3(x: f64, y: f64, z: f64) -> Vec3 {
    Vec3 { x, y, z }
}

impl Vec3 {
    pub const ZERO: Vec3 = vec3(0.0, 0.0, 0.0);

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        vec3(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        vec3(self.x / n, self.y / n, self.z / n)
    }

    pub fn dist(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn as_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        vec3(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        vec3(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl std::ops::Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        vec3(self.x * s, self.y * s, self.z * s)
    }
}

impl std::ops::Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        vec3(-self.x, -self.y, -self.z)
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Vec3 {
        vec3(a[0], a[1], a[2])
    }
}

/// Oriented plane `n·x = d` with unit normal pointing toward the room
/// interior; interior points satisfy `n·x > d`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Vec3,
    pub offset: f64,
}

impl Plane {
    pub fn new(normal: Vec3, offset: f64) -> Plane {
        Plane { normal, offset }
    }

    /// Plane through `point` with the given (unnormalized) inward normal.
    pub fn through(point: Vec3, normal: Vec3) -> Plane {
        let n = normal.normalized();
        Plane {
            normal: n,
            offset: n.dot(point),
        }
    }

    /// Signed distance; positive on the interior side.
    pub fn signed(&self, p: Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }

    /// Mirror image of `p` across the plane.
    pub fn reflect(&self, p: Vec3) -> Vec3 {
        p - self.normal * (2.0 * self.signed(p))
    }

    /// Parameter `t` where `o + t·dir` crosses the plane, if not parallel.
    pub fn ray_param(&self, o: Vec3, dir: Vec3) -> Option<f64> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-14 {
            return None;
        }
        Some((self.offset - self.normal.dot(o)) / denom)
    }
}

/// Intersection point of three planes, if they are in general position.
pub fn intersect_planes(a: &Plane, b: &Plane, c: &Plane) -> Option<Vec3> {
    // Cramer's rule on the 3x3 system [na; nb; nc]·x = [da; db; dc].
    let det = a.normal.dot(b.normal.cross(c.normal));
    if det.abs() < 1e-12 {
        return None;
    }
    let p = (b.normal.cross(c.normal) * a.offset
        + c.normal.cross(a.normal) * b.offset
        + a.normal.cross(b.normal) * c.offset)
        * (1.0 / det);
    p.is_finite().then_some(p)
}

/// Order coplanar points counter-clockwise (seen from the `normal` side)
/// around their centroid.
pub fn order_convex_polygon(points: &[Vec3], normal: Vec3) -> Vec<Vec3> {
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vec3::ZERO, |a, &b| a + b) * (1.0 / n);
    // In-plane orthonormal basis.
    let pick = if normal.x.abs() < 0.9 {
        vec3(1.0, 0.0, 0.0)
    } else {
        vec3(0.0, 1.0, 0.0)
    };
    let u = normal.cross(pick).normalized();
    let v = normal.cross(u);
    let mut pts: Vec<(f64, Vec3)> = points
        .iter()
        .map(|&p| {
            let r = p - centroid;
            (r.dot(v).atan2(r.dot(u)), p)
        })
        .collect();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pts.into_iter().map(|(_, p)| p).collect()
}

/// Point-in-convex-polygon test for a point already on the polygon's plane.
/// `vertices` must be ordered; `tol` is a slack in meters.
pub fn polygon_contains(vertices: &[Vec3], normal: Vec3, p: Vec3, tol: f64) -> bool {
    let n = vertices.len();
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        let edge = b - a;
        // Inward side of each edge for counter-clockwise winding.
        let inward = normal.cross(edge);
        if inward.dot(p - a) < -tol * inward.norm() {
            return false;
        }
    }
    true
}

/// Area of a planar convex polygon with ordered vertices.
pub fn polygon_area(vertices: &[Vec3]) -> f64 {
    let n = vertices.len();
    let mut acc = Vec3::ZERO;
    for i in 1..n - 1 {
        acc = acc + (vertices[i] - vertices[0]).cross(vertices[i + 1] - vertices[0]);
    }
    0.5 * acc.norm()
}
