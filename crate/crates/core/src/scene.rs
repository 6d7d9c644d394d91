//! Domain randomization and scene ingestion.
//!
//! Training scenes are sampled from a task-parameter vector (shapes, scales,
//! clutter density, target location, initial distribution) and instantiated
//! by rejection-sampling non-overlapping placements. Externally supplied
//! scene documents describe a world as object contours; they stand in for a
//! perception front end and are convexified on ingestion.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{polygon_overlap, Polygon, Pose2, Vec2};
use crate::physics::{
    gripper_parts, Bounds, GripperState, ObjectRole, ObjectState, PhysicsConfig, TargetRegion,
    WorldState,
};

/// Object size regime relative to the gripper span, for the size-sweep
/// experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeClass {
    /// Max width ≤ 0.8 × finger span: graspable from any angle.
    Small,
    /// Per-object fair coin between small and large.
    Mixed,
    /// Min width ≥ 1.2 × finger span: never graspable.
    Large,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomizationRanges {
    pub clutter_min: usize,
    pub clutter_max: usize,
    /// Vertex count of sampled polygons is uniform in [3, vertex_max].
    pub vertex_max: usize,
    /// Per-vertex radius range before scaling, meters.
    pub radius_min: f64,
    pub radius_max: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub target_radius: f64,
    pub size_class: Option<SizeClass>,
    pub bounds: Bounds,
}

impl Default for RandomizationRanges {
    fn default() -> Self {
        RandomizationRanges {
            clutter_min: 1,
            clutter_max: 7,
            vertex_max: 8,
            radius_min: 0.02,
            radius_max: 0.06,
            scale_min: 0.75,
            scale_max: 1.25,
            target_radius: 0.05,
            size_class: None,
            bounds: Bounds::desk(),
        }
    }
}

impl RandomizationRanges {
    pub fn validate(&self) -> Result<()> {
        let ordered = self.clutter_min >= 1
            && self.clutter_min <= self.clutter_max
            && self.vertex_max >= 3
            && self.radius_min > 0.0
            && self.radius_min <= self.radius_max
            && self.scale_min > 0.0
            && self.scale_min <= self.scale_max
            && self.target_radius > 0.0;
        if !ordered {
            return Err(Error::Config("randomization ranges out of order".into()));
        }
        Ok(())
    }

    pub fn with_clutter(mut self, n: usize) -> Self {
        self.clutter_min = n;
        self.clutter_max = n;
        self
    }

    pub fn with_size_class(mut self, class: SizeClass) -> Self {
        self.size_class = Some(class);
        self
    }
}

/// The sampled task-parameter vector: everything that varies between task
/// instances. Shapes carry their scale already applied; `scales` records the
/// factors for traceability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskParams {
    pub shapes: Vec<Polygon>,
    pub scales: Vec<f64>,
    pub clutter_density: usize,
    pub target: TargetRegion,
    pub bounds: Bounds,
}

/// One convex polygon: near-uniform vertex angles with jitter, per-vertex
/// radii, convexified by hull. Resamples on the (rare) degenerate draw.
fn sample_polygon(rng: &mut ChaCha8Rng, ranges: &RandomizationRanges) -> (Polygon, f64) {
    loop {
        let k = rng.gen_range(3..=ranges.vertex_max);
        let sector = std::f64::consts::TAU / k as f64;
        let mut pts = Vec::with_capacity(k);
        for i in 0..k {
            let jitter = rng.gen_range(-0.35..0.35) * sector;
            let angle = sector * i as f64 + jitter;
            let radius = rng.gen_range(ranges.radius_min..=ranges.radius_max);
            pts.push(Vec2::new(radius * angle.cos(), radius * angle.sin()));
        }
        let scale = rng.gen_range(ranges.scale_min..=ranges.scale_max);
        let scaled: Vec<Vec2> = pts.iter().map(|p| p.scale(scale)).collect();
        if let Ok(poly) = Polygon::convex_hull(&scaled) {
            return (poly, scale);
        }
    }
}

fn rescale_polygon(poly: &Polygon, factor: f64) -> Polygon {
    let verts: Vec<Vec2> = poly.vertices().iter().map(|v| v.scale(factor)).collect();
    Polygon::new(verts).expect("uniform scaling preserves validity")
}

/// Force a sampled polygon into a size class by uniform rescaling.
fn apply_size_class(
    poly: Polygon,
    scale: f64,
    class: SizeClass,
    cfg: &PhysicsConfig,
    rng: &mut ChaCha8Rng,
) -> (Polygon, f64) {
    let small = |poly: Polygon, scale: f64| {
        let limit = 0.8 * cfg.finger_span;
        let w = poly.max_width();
        if w > limit {
            let f = limit / w;
            (rescale_polygon(&poly, f), scale * f)
        } else {
            (poly, scale)
        }
    };
    let large = |poly: Polygon, scale: f64| {
        let floor = 1.2 * cfg.finger_span;
        let w = poly.min_width();
        if w < floor {
            let f = floor / w;
            (rescale_polygon(&poly, f), scale * f)
        } else {
            (poly, scale)
        }
    };
    match class {
        SizeClass::Small => small(poly, scale),
        SizeClass::Large => large(poly, scale),
        SizeClass::Mixed => {
            if rng.gen_bool(0.5) {
                small(poly, scale)
            } else {
                large(poly, scale)
            }
        }
    }
}

/// Draw a task-parameter vector: shapes, scales, clutter density, and target
/// location.
pub fn sample_task_params(rng: &mut ChaCha8Rng, ranges: &RandomizationRanges) -> TaskParams {
    let clutter_density = rng.gen_range(ranges.clutter_min..=ranges.clutter_max);
    let mut shapes = Vec::with_capacity(clutter_density);
    let mut scales = Vec::with_capacity(clutter_density);
    let cfg = PhysicsConfig::default();
    for _ in 0..clutter_density {
        let (mut poly, mut scale) = sample_polygon(rng, ranges);
        if let Some(class) = ranges.size_class {
            (poly, scale) = apply_size_class(poly, scale, class, &cfg, rng);
        }
        shapes.push(poly);
        scales.push(scale);
    }
    let b = ranges.bounds;
    let r = ranges.target_radius;
    let target = TargetRegion {
        center: Vec2::new(
            rng.gen_range(b.x_min + r..=b.x_max - r),
            rng.gen_range(b.y_min + r..=b.y_max - r),
        ),
        radius: r,
    };
    TaskParams {
        shapes,
        scales,
        clutter_density,
        target,
        bounds: b,
    }
}

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

fn gripper_bounding_radius(cfg: &PhysicsConfig) -> f64 {
    gripper_parts(cfg, 1.0)
        .iter()
        .map(|(poly, local)| local.position.norm() + poly.bounding_radius())
        .fold(0.0, f64::max)
}

/// Rejection-sample an initial arrangement for the task parameters: objects
/// fully inside the bounds with no pairwise overlap, gripper open and clear
/// of every object.
pub fn instantiate_scene(p: &TaskParams, rng: &mut ChaCha8Rng) -> Result<WorldState> {
    let cfg = PhysicsConfig::default();
    let b = p.bounds;
    let mut attempts = 0usize;
    let mut placed: Vec<ObjectState> = Vec::with_capacity(p.shapes.len());

    for (i, shape) in p.shapes.iter().enumerate() {
        let r = shape.bounding_radius();
        if b.x_min + r >= b.x_max - r || b.y_min + r >= b.y_max - r {
            return Err(Error::PlacementFailure { attempts });
        }
        loop {
            attempts += 1;
            if attempts > MAX_PLACEMENT_ATTEMPTS {
                return Err(Error::PlacementFailure {
                    attempts: MAX_PLACEMENT_ATTEMPTS,
                });
            }
            let pose = Pose2::new(
                rng.gen_range(b.x_min + r..=b.x_max - r),
                rng.gen_range(b.y_min + r..=b.y_max - r),
                rng.gen_range(0.0..std::f64::consts::TAU),
            );
            let clear = placed
                .iter()
                .all(|o| polygon_overlap(&o.shape, o.pose, shape, pose).is_none());
            if clear {
                placed.push(ObjectState {
                    shape: shape.clone(),
                    pose,
                    role: if i == 0 {
                        ObjectRole::Desired
                    } else {
                        ObjectRole::Clutter
                    },
                });
                break;
            }
        }
    }

    let gr = gripper_bounding_radius(&cfg);
    let gripper = loop {
        attempts += 1;
        if attempts > MAX_PLACEMENT_ATTEMPTS {
            return Err(Error::PlacementFailure {
                attempts: MAX_PLACEMENT_ATTEMPTS,
            });
        }
        let pose = Pose2::new(
            rng.gen_range(b.x_min + gr..=b.x_max - gr),
            rng.gen_range(b.y_min + gr..=b.y_max - gr),
            rng.gen_range(0.0..std::f64::consts::TAU),
        );
        let parts = gripper_parts(&cfg, 1.0);
        let clear = placed.iter().all(|o| {
            parts.iter().all(|(poly, local)| {
                polygon_overlap(poly, pose.compose(*local), &o.shape, o.pose).is_none()
            })
        });
        if clear {
            break GripperState {
                pose,
                aperture: 1.0,
                held_object: None,
            };
        }
    };

    let world = WorldState {
        objects: placed,
        gripper,
        target: p.target,
        bounds: b,
        step_count: 0,
    };
    world.validate()?;
    debug_assert!(crate::physics::is_valid(&world));
    Ok(world)
}

/// External scene description: the ingestion seam that stands in for a
/// perception pipeline. All lengths in meters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDocument {
    pub bounds: Bounds,
    pub target: TargetDoc,
    pub gripper: GripperDoc,
    pub objects: Vec<ObjectDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetDoc {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GripperDoc {
    /// x, y, heading angle (radians).
    pub pose: [f64; 3],
    #[serde(default = "default_aperture")]
    pub aperture: f64,
}

fn default_aperture() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectDoc {
    pub role: ObjectRole,
    /// Closed contour in world coordinates; convexified on ingestion.
    pub contour: Vec<[f64; 2]>,
}

impl SceneDocument {
    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene document serializes")
    }

    /// Capture a world state back into document form (debug/round-trip aid).
    pub fn from_world(w: &WorldState) -> Self {
        SceneDocument {
            bounds: w.bounds,
            target: TargetDoc {
                center: [w.target.center.x, w.target.center.y],
                radius: w.target.radius,
            },
            gripper: GripperDoc {
                pose: [
                    w.gripper.pose.position.x,
                    w.gripper.pose.position.y,
                    w.gripper.pose.angle,
                ],
                aperture: w.gripper.aperture,
            },
            objects: w
                .objects
                .iter()
                .map(|o| ObjectDoc {
                    role: o.role,
                    contour: o
                        .shape
                        .world_vertices(o.pose)
                        .iter()
                        .map(|v| [v.x, v.y])
                        .collect(),
                })
                .collect(),
        }
    }
}

/// Build a world from a scene document. Contours are convexified with their
/// hull; validation errors name the offending field.
pub fn ingest_scene(doc: &SceneDocument, cfg: &PhysicsConfig) -> Result<WorldState> {
    let mut objects = Vec::with_capacity(doc.objects.len());
    for (i, obj) in doc.objects.iter().enumerate() {
        if obj.contour.len() < 3 {
            return Err(Error::SceneValidation {
                field: format!("objects[{i}].contour"),
                reason: format!("needs at least 3 points, got {}", obj.contour.len()),
            });
        }
        let pts: Vec<Vec2> = obj.contour.iter().map(|p| Vec2::new(p[0], p[1])).collect();
        let (shape, centroid) =
            Polygon::convex_hull_with_centroid(&pts).map_err(|e| Error::SceneValidation {
                field: format!("objects[{i}].contour"),
                reason: e.to_string(),
            })?;
        objects.push(ObjectState {
            shape,
            pose: Pose2 {
                position: centroid,
                angle: 0.0,
            },
            role: obj.role,
        });
    }
    if !objects.iter().any(|o| o.role == ObjectRole::Desired) {
        return Err(Error::SceneValidation {
            field: "objects".into(),
            reason: "no desired object in document".into(),
        });
    }

    let world = WorldState {
        objects,
        gripper: GripperState {
            pose: Pose2::new(doc.gripper.pose[0], doc.gripper.pose[1], doc.gripper.pose[2]),
            aperture: doc.gripper.aperture,
            held_object: None,
        },
        target: TargetRegion {
            center: Vec2::new(doc.target.center[0], doc.target.center[1]),
            radius: doc.target.radius,
        },
        bounds: doc.bounds,
        step_count: 0,
    };
    world.validate()?;
    if !crate::physics::is_valid(&world) {
        return Err(Error::SceneValidation {
            field: "objects".into(),
            reason: "an object centroid lies outside the bounds".into(),
        });
    }
    let pen = world.max_penetration(cfg);
    if pen > cfg.penetration_tolerance {
        return Err(Error::SceneValidation {
            field: "objects".into(),
            reason: format!("initial interpenetration {pen:.4} m exceeds tolerance"),
        });
    }
    Ok(world)
}
