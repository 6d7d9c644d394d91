//! Planar geometry: vectors, rigid poses, convex polygons, and the
//! separating-axis overlap test the contact solver is built on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum polygon area accepted at construction, in m².
pub const MIN_POLYGON_AREA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            self.scale(1.0 / n)
        } else {
            Vec2::ZERO
        }
    }

    pub fn rotated(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(self.x * c - self.y * s, self.x * s + self.y * c)
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Rigid planar pose: translation plus rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub position: Vec2,
    pub angle: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, angle: f64) -> Self {
        Pose2 {
            position: Vec2::new(x, y),
            angle,
        }
    }

    pub fn identity() -> Self {
        Pose2::new(0.0, 0.0, 0.0)
    }

    /// Map a point from the local frame to the world frame.
    pub fn transform(&self, local: Vec2) -> Vec2 {
        self.position + local.rotated(self.angle)
    }

    /// Map a world point into the local frame.
    pub fn inverse_transform(&self, world: Vec2) -> Vec2 {
        (world - self.position).rotated(-self.angle)
    }

    /// Compose: `self` applied after `local` (self ∘ local).
    pub fn compose(&self, local: Pose2) -> Pose2 {
        Pose2 {
            position: self.transform(local.position),
            angle: self.angle + local.angle,
        }
    }

    /// Pose of `other` expressed in the frame of `self`.
    pub fn relative_to(&self, other: Pose2) -> Pose2 {
        Pose2 {
            position: self.inverse_transform(other.position),
            angle: other.angle - self.angle,
        }
    }
}

/// Wrap an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a % two_pi;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    } else if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Convex polygon in a local frame centered at its centroid.
///
/// Vertices are counter-clockwise. Construction recenters the vertex loop on
/// the area centroid and rejects non-convex or degenerate input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec2>", into = "Vec<Vec2>")]
pub struct Polygon {
    vertices: Vec<Vec2>,
}

impl TryFrom<Vec<Vec2>> for Polygon {
    type Error = Error;
    fn try_from(v: Vec<Vec2>) -> Result<Self> {
        Polygon::new(v)
    }
}

impl From<Polygon> for Vec<Vec2> {
    fn from(p: Polygon) -> Vec<Vec2> {
        p.vertices
    }
}

impl Polygon {
    pub fn new(mut vertices: Vec<Vec2>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidPolygon(format!(
                "need at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if signed_area(&vertices) < 0.0 {
            vertices.reverse();
        }
        let area = signed_area(&vertices);
        if area <= MIN_POLYGON_AREA {
            return Err(Error::InvalidPolygon(format!(
                "degenerate area {area:.3e} m²"
            )));
        }
        if !is_convex(&vertices) {
            return Err(Error::InvalidPolygon("not convex".into()));
        }
        let c = centroid(&vertices);
        for v in &mut vertices {
            *v = *v - c;
        }
        Ok(Polygon { vertices })
    }

    /// Axis-aligned box of the given full width and height, centered.
    pub fn rectangle(width: f64, height: f64) -> Result<Self> {
        let hw = width / 2.0;
        let hh = height / 2.0;
        Polygon::new(vec![
            Vec2::new(-hw, -hh),
            Vec2::new(hw, -hh),
            Vec2::new(hw, hh),
            Vec2::new(-hw, hh),
        ])
    }

    /// Convex hull of arbitrary points (Andrew's monotone chain), used to
    /// convexify ingested contours before construction.
    pub fn convex_hull(points: &[Vec2]) -> Result<Self> {
        Self::convex_hull_with_centroid(points).map(|(p, _)| p)
    }

    /// As [`Polygon::convex_hull`], additionally returning the hull centroid
    /// in the input coordinates (the world position of the shape).
    pub fn convex_hull_with_centroid(points: &[Vec2]) -> Result<(Self, Vec2)> {
        if points.len() < 3 {
            return Err(Error::InvalidPolygon(format!(
                "need at least 3 contour points, got {}",
                points.len()
            )));
        }
        let mut pts = points.to_vec();
        pts.sort_by(|a, b| (a.x, a.y).partial_cmp(&(b.x, b.y)).unwrap());
        pts.dedup_by(|a, b| a.x == b.x && a.y == b.y);
        if pts.len() < 3 {
            return Err(Error::InvalidPolygon("contour points coincide".into()));
        }
        let chain = |iter: &mut dyn Iterator<Item = Vec2>| {
            let mut half: Vec<Vec2> = Vec::new();
            for p in iter {
                while half.len() >= 2 {
                    let a = half[half.len() - 2];
                    let b = half[half.len() - 1];
                    if (b - a).cross(p - a) <= 0.0 {
                        half.pop();
                    } else {
                        break;
                    }
                }
                half.push(p);
            }
            half.pop();
            half
        };
        let mut hull = chain(&mut pts.iter().copied());
        hull.extend(chain(&mut pts.iter().rev().copied()));
        if hull.len() < 3 {
            return Err(Error::InvalidPolygon("hull degenerate".into()));
        }
        let c = centroid(&hull);
        let poly = Polygon::new(hull)?;
        Ok((poly, c))
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    /// Distance from the centroid to the farthest vertex.
    pub fn bounding_radius(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Extent of the polygon projected onto a unit direction, at a pose.
    pub fn extent_along(&self, pose: Pose2, dir: Vec2) -> f64 {
        let (lo, hi) = project(&self.world_vertices(pose), dir);
        hi - lo
    }

    /// Smallest width over all edge-normal directions (what fits between
    /// parallel jaws at the best orientation).
    pub fn min_width(&self) -> f64 {
        let id = Pose2::identity();
        self.edge_normals()
            .map(|n| self.extent_along(id, n))
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest point-to-point distance (the diameter).
    pub fn max_width(&self) -> f64 {
        let mut best = 0.0f64;
        for (i, a) in self.vertices.iter().enumerate() {
            for b in self.vertices.iter().skip(i + 1) {
                best = best.max((*a - *b).norm());
            }
        }
        best
    }

    fn edge_normals(&self) -> impl Iterator<Item = Vec2> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| {
            let e = self.vertices[(i + 1) % n] - self.vertices[i];
            // CCW winding: outward normal is the edge rotated -90°.
            Vec2::new(e.y, -e.x).normalized()
        })
    }

    pub fn world_vertices(&self, pose: Pose2) -> Vec<Vec2> {
        self.vertices.iter().map(|&v| pose.transform(v)).collect()
    }

    /// True when the point is inside or on the boundary.
    pub fn contains(&self, pose: Pose2, point: Vec2) -> bool {
        let local = pose.inverse_transform(point);
        let n = self.vertices.len();
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            if (b - a).cross(local - a) < 0.0 {
                return false;
            }
        }
        true
    }
}

fn signed_area(vertices: &[Vec2]) -> f64 {
    let n = vertices.len();
    let mut acc = 0.0;
    for i in 0..n {
        acc += vertices[i].cross(vertices[(i + 1) % n]);
    }
    acc / 2.0
}

fn centroid(vertices: &[Vec2]) -> Vec2 {
    let n = vertices.len();
    let area = signed_area(vertices);
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        let w = a.cross(b);
        cx += (a.x + b.x) * w;
        cy += (a.y + b.y) * w;
    }
    Vec2::new(cx / (6.0 * area), cy / (6.0 * area))
}

fn is_convex(vertices: &[Vec2]) -> bool {
    let n = vertices.len();
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        let c = vertices[(i + 2) % n];
        if (b - a).cross(c - b) < -1e-12 {
            return false;
        }
    }
    true
}

/// Separating-axis overlap test between two posed convex polygons.
///
/// Returns `None` when separated, otherwise the minimal translation vector
/// that moves `b` out of `a`. Axes are scanned in a fixed order (edges of
/// `a`, then edges of `b`) so ties resolve deterministically.
pub fn polygon_overlap(a: &Polygon, pose_a: Pose2, b: &Polygon, pose_b: Pose2) -> Option<Vec2> {
    let va = a.world_vertices(pose_a);
    let vb = b.world_vertices(pose_b);
    let mut min_depth = f64::INFINITY;
    let mut min_axis = Vec2::ZERO;

    for verts in [&va, &vb] {
        let n = verts.len();
        for i in 0..n {
            let edge = verts[(i + 1) % n] - verts[i];
            let axis = Vec2::new(edge.y, -edge.x).normalized();
            if axis == Vec2::ZERO {
                continue;
            }
            let (a_lo, a_hi) = project(&va, axis);
            let (b_lo, b_hi) = project(&vb, axis);
            if a_hi < b_lo || b_hi < a_lo {
                return None;
            }
            // Two ways b can clear a along this axis; keep the shorter.
            let push_pos = a_hi - b_lo;
            let push_neg = b_hi - a_lo;
            let (depth, dir) = if push_pos <= push_neg {
                (push_pos, axis)
            } else {
                (push_neg, -axis)
            };
            if depth < min_depth {
                min_depth = depth;
                min_axis = dir;
            }
        }
    }

    if min_depth <= 0.0 {
        return None;
    }
    Some(min_axis.scale(min_depth))
}

fn project(verts: &[Vec2], axis: Vec2) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in verts {
        let p = v.dot(axis);
        lo = lo.min(p);
        hi = hi.max(p);
    }
    (lo, hi)
}

/// Penetration depth between two posed polygons (0 when separated).
pub fn penetration_depth(a: &Polygon, pose_a: Pose2, b: &Polygon, pose_b: Pose2) -> f64 {
    polygon_overlap(a, pose_a, b, pose_b).map_or(0.0, |mtv| mtv.norm())
}
