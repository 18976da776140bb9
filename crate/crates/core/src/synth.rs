//! Synthetic scenes: rendered depth and labels, exact center fields, and
//! seeded noise injection. These stand in for a trained dense predictor and
//! double as the ground truth for every end-to-end check.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{Vector2, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{CenterField, DepthMap, LabelMap};
use crate::geom::{backproject_center, project, CameraIntrinsics, Pose, Quaternion};
use crate::model::ObjectModel;
use crate::render::{rasterize, RangeImage, Window, NEAR_PLANE, NO_OWNER};

/// Models by class id.
pub type ModelRegistry = BTreeMap<u16, ObjectModel>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Instance {
    pub class_id: u16,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    pub intrinsics: CameraIntrinsics,
    pub instances: Vec<Instance>,
}

impl Scene {
    pub fn validate(&self, models: &ModelRegistry) -> Result<()> {
        self.intrinsics.validate()?;
        for inst in &self.instances {
            if !models.contains_key(&inst.class_id) {
                return Err(Error::UnknownClass(inst.class_id));
            }
            if !(inst.pose.translation.z > 0.0) {
                return Err(Error::InvalidDepth(inst.pose.translation.z));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub depth: DepthMap,
    pub labels: LabelMap,
    /// Full-image range data; `owner` holds instance indices.
    pub range: RangeImage,
}

impl RenderedScene {
    pub fn visible_pixels(&self, instance: usize) -> usize {
        self.range.owner.iter().filter(|&&o| o == instance as u32).count()
    }
}

fn model_for<'a>(models: &'a ModelRegistry, class_id: u16) -> Result<&'a ObjectModel> {
    models.get(&class_id).ok_or(Error::UnknownClass(class_id))
}

/// Z-buffers every instance; each pixel keeps the nearest surface.
pub fn render_scene(scene: &Scene, models: &ModelRegistry) -> Result<RenderedScene> {
    scene.validate(models)?;
    let mut range = RangeImage::new(Window::full(scene.width, scene.height));
    for (i, inst) in scene.instances.iter().enumerate() {
        rasterize(&mut range, model_for(models, inst.class_id)?, &inst.pose, &scene.intrinsics, i as u32);
    }
    let labels = range
        .owner
        .iter()
        .map(|&o| if o == NO_OWNER { 0 } else { scene.instances[o as usize].class_id })
        .collect();
    let depth = range.depth.iter().map(|&d| d as f32).collect();
    Ok(RenderedScene {
        depth: DepthMap::from_vec(scene.width, scene.height, depth)?,
        labels: LabelMap::from_vec(scene.width, scene.height, labels)?,
        range,
    })
}

/// Image region that can contain the projection of `model` at `pose`, or
/// `None` if it is entirely outside the image.
pub fn projected_window(model: &ObjectModel, pose: &Pose, k: &CameraIntrinsics, width: usize, height: usize) -> Option<Window> {
    let rot = pose.rotation_matrix();
    let (mut lo, mut hi) = (Vector2::repeat(f64::INFINITY), Vector2::repeat(f64::NEG_INFINITY));
    let mut zmin = f64::INFINITY;
    for p in model.points() {
        let c = rot * p + pose.translation;
        if c.z <= NEAR_PLANE {
            continue;
        }
        zmin = zmin.min(c.z);
        let uv = Vector2::new(k.fx * c.x / c.z + k.px, k.fy * c.y / c.z + k.py);
        lo = lo.inf(&uv);
        hi = hi.sup(&uv);
    }
    if !zmin.is_finite() {
        return None;
    }
    let pad = if model.faces().is_some() { 1.0 } else { 1.0 + (k.fx.max(k.fy) * model.mean_spacing() / zmin).ceil() };
    let x0 = (lo.x - pad).floor().max(0.0);
    let y0 = (lo.y - pad).floor().max(0.0);
    let x1 = (hi.x + pad).ceil().min(width as f64 - 1.0);
    let y1 = (hi.y + pad).ceil().min(height as f64 - 1.0);
    if x0 > x1 || y0 > y1 {
        return None;
    }
    Some(Window { x0: x0 as usize, y0: y0 as usize, width: (x1 - x0) as usize + 1, height: (y1 - y0) as usize + 1 })
}

/// Pixels each instance would cover with no other object present.
pub fn unoccluded_pixels(scene: &Scene, models: &ModelRegistry) -> Result<Vec<usize>> {
    scene
        .instances
        .iter()
        .map(|inst| {
            let model = model_for(models, inst.class_id)?;
            Ok(match projected_window(model, &inst.pose, &scene.intrinsics, scene.width, scene.height) {
                Some(win) => {
                    let mut img = RangeImage::new(win);
                    rasterize(&mut img, model, &inst.pose, &scene.intrinsics, 0);
                    img.covered()
                }
                None => 0,
            })
        })
        .collect()
}

/// Visible pixels over unoccluded pixels, per instance (0 when never in view).
pub fn visibility(scene: &Scene, models: &ModelRegistry, rendered: &RenderedScene) -> Result<Vec<f64>> {
    let alone = unoccluded_pixels(scene, models)?;
    Ok(alone
        .iter()
        .enumerate()
        .map(|(i, &n)| if n == 0 { 0.0 } else { rendered.visible_pixels(i) as f64 / n as f64 })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceTruth {
    pub class_id: u16,
    /// Projection of the object origin, pixels; may lie outside the image.
    pub center: Vector2<f64>,
    pub depth: f64,
    pub visible_pixels: usize,
    pub fully_occluded: bool,
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub field: CenterField,
    pub instances: Vec<InstanceTruth>,
}

/// Exact regression targets: every visible pixel points at the projected
/// origin of the instance that owns it and carries that instance's depth.
pub fn ground_truth_fields(scene: &Scene, rendered: &RenderedScene) -> Result<GroundTruth> {
    let k = &scene.intrinsics;
    let mut instances: Vec<InstanceTruth> = scene
        .instances
        .iter()
        .map(|inst| {
            Ok(InstanceTruth {
                class_id: inst.class_id,
                center: project(&inst.pose.translation, k)?,
                depth: inst.pose.translation.z,
                visible_pixels: 0,
                fully_occluded: true,
            })
        })
        .collect::<Result<_>>()?;
    let mut field = CenterField::new(scene.width, scene.height);
    for y in 0..scene.height {
        for x in 0..scene.width {
            let owner = rendered.range.owner[y * scene.width + x];
            if owner == NO_OWNER {
                continue;
            }
            let truth = &mut instances[owner as usize];
            truth.visible_pixels += 1;
            truth.fully_occluded = false;
            field.set_target(truth.class_id, x, y, &truth.center, truth.depth);
        }
    }
    Ok(GroundTruth { field, instances })
}

/// Noise injected into predicted fields and labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation of the angular jitter on `(nx, ny)`, radians.
    pub direction_sigma: f64,
    /// Standard deviation of independent per-pixel noise on the depth planes, meters.
    pub depth_sigma: f64,
    /// Standard deviation of one offset shared by every pixel of a class
    /// plane, meters. Models the correlated error of a depth regressor,
    /// which unlike per-pixel noise does not average out over inliers.
    #[serde(default)]
    pub depth_bias_sigma: f64,
    pub label_flip_rate: f64,
    pub rng_seed: u64,
}

impl NoiseSpec {
    pub fn none(rng_seed: u64) -> Self {
        Self { direction_sigma: 0.0, depth_sigma: 0.0, depth_bias_sigma: 0.0, label_flip_rate: 0.0, rng_seed }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        let all = [self.direction_sigma, self.depth_sigma, self.depth_bias_sigma, self.label_flip_rate];
        if !all.into_iter().all(ok) || self.label_flip_rate >= 1.0 {
            return Err(Error::InvalidInput("noise parameters must be non-negative and the flip rate below 1".into()));
        }
        Ok(())
    }
}

/// Smallest depth a noisy depth plane may take, meters.
const MIN_NOISY_DEPTH: f32 = 1e-4;

/// Applies seeded noise to a field and its labels.
///
/// Every pixel with a nonzero direction is rotated by a normal angle; every
/// positive depth gets additive normal noise (clamped to stay positive);
/// every pixel's label is replaced, with probability `label_flip_rate`, by a
/// uniformly chosen different value among background and the field's
/// classes. Each source uses its own stream of one seed.
pub fn perturb(field: &CenterField, labels: &LabelMap, spec: &NoiseSpec) -> Result<(CenterField, LabelMap)> {
    spec.validate()?;
    if (field.width, field.height) != (labels.width, labels.height) {
        return Err(Error::DimensionMismatch("field and labels differ in size".into()));
    }
    let mut out = field.clone();
    let classes: Vec<u16> = field.classes().collect();
    if spec.direction_sigma > 0.0 {
        let mut rng = stream(spec.rng_seed, 1);
        let normal = Normal::new(0.0, spec.direction_sigma).expect("valid sigma");
        for &c in &classes {
            let p = out.planes_mut(c);
            for (nx, ny) in p.nx.iter_mut().zip(p.ny.iter_mut()) {
                if *nx == 0.0 && *ny == 0.0 {
                    continue;
                }
                let (s, co) = normal.sample(&mut rng).sin_cos();
                let (x, y) = (*nx as f64, *ny as f64);
                let (rx, ry) = (co * x - s * y, s * x + co * y);
                let len = rx.hypot(ry);
                *nx = (rx / len) as f32;
                *ny = (ry / len) as f32;
            }
        }
    }
    if spec.depth_sigma > 0.0 || spec.depth_bias_sigma > 0.0 {
        let mut pixel_rng = stream(spec.rng_seed, 2);
        let mut bias_rng = stream(spec.rng_seed, 4);
        let pixel = Normal::new(0.0, spec.depth_sigma).expect("valid sigma");
        let bias = Normal::new(0.0, spec.depth_bias_sigma).expect("valid sigma");
        for &c in &classes {
            let offset = if spec.depth_bias_sigma > 0.0 { bias.sample(&mut bias_rng) } else { 0.0 };
            for tz in out.planes_mut(c).tz.iter_mut().filter(|t| **t > 0.0) {
                let jitter = if spec.depth_sigma > 0.0 { pixel.sample(&mut pixel_rng) } else { 0.0 };
                *tz = ((*tz as f64 + offset + jitter) as f32).max(MIN_NOISY_DEPTH);
            }
        }
    }
    let mut labels_out = labels.clone();
    if spec.label_flip_rate > 0.0 {
        let mut rng = stream(spec.rng_seed, 3);
        let mut choices: Vec<u16> = std::iter::once(0).chain(classes.iter().copied()).collect();
        choices.dedup();
        for label in labels_out.labels.iter_mut() {
            if !rng.random_bool(spec.label_flip_rate) {
                continue;
            }
            let others: Vec<u16> = choices.iter().copied().filter(|&c| c != *label).collect();
            if !others.is_empty() {
                *label = others[rng.random_range(0..others.len())];
            }
        }
    }
    Ok((out, labels_out))
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    /// Axis-aligned cube of side `scale`: the 24 rotations of the cube.
    Cube,
    /// Box of `scale x 0.25 scale x 0.1 scale` whose surface vertices are
    /// jittered within their faces in half-turn-symmetric pairs: exactly
    /// symmetric under 180 degrees about Z only.
    Bar2Fold,
    /// Lumpy closed surface with no rotational symmetry, about `scale` across.
    AsymmetricBlob,
    /// Z-aligned cylinder, radius `0.3 scale`, height `scale`: continuous
    /// rotation about Z (discretized) and flips about the X axis.
    Cylinder,
}

impl std::str::FromStr for PrimitiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cube" => Ok(Self::Cube),
            "bar_2fold" | "bar" => Ok(Self::Bar2Fold),
            "asymmetric_blob" | "blob" => Ok(Self::AsymmetricBlob),
            "cylinder" => Ok(Self::Cylinder),
            _ => Err(Error::InvalidInput(format!("unknown primitive `{s}`"))),
        }
    }
}

/// Deterministic closed triangle mesh with roughly `n_points` vertices.
///
/// Grid coordinates are computed as `scale * k / d` with integer `k`, so
/// mirror-image vertices are exact negations of each other and the stated
/// symmetries hold bit-for-bit.
pub fn make_primitive_model(kind: PrimitiveKind, scale: f64, n_points: usize) -> Result<ObjectModel> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidInput(format!("primitive scale must be positive, got {scale}")));
    }
    let n = n_points.max(8);
    let (points, faces) = match kind {
        PrimitiveKind::Cube => box_mesh([scale, scale, scale], n, false),
        PrimitiveKind::Bar2Fold => box_mesh([scale, 0.25 * scale, 0.1 * scale], n, true),
        PrimitiveKind::Cylinder => cylinder_mesh(0.3 * scale, scale, n),
        PrimitiveKind::AsymmetricBlob => blob_mesh(scale, n),
    };
    let name = match kind {
        PrimitiveKind::Cube => "cube",
        PrimitiveKind::Bar2Fold => "bar_2fold",
        PrimitiveKind::AsymmetricBlob => "asymmetric_blob",
        PrimitiveKind::Cylinder => "cylinder",
    };
    ObjectModel::new(1, name, points, None, Some(faces))
}

/// Surface lattice of a centered box with `dims` extents.
///
/// With `jitter`, each vertex moves by up to 0.35 cells along the axes in
/// which it is interior (so it stays on its faces), and the half turn about
/// Z maps every jittered vertex exactly onto another. A regular lattice
/// makes nearest-neighbor losses snap into many shallow spurious minima.
fn box_mesh(dims: [f64; 3], n: usize, jitter: bool) -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    let area = 2.0 * (dims[0] * dims[1] + dims[1] * dims[2] + dims[2] * dims[0]);
    let h = (area / n as f64).sqrt();
    let cells = dims.map(|d| ((d / h).round() as i64).max(1));
    let coord = |a: usize, k: i64| dims[a] * (2 * k - cells[a]) as f64 / (2 * cells[a]) as f64;
    let half_turn = |p: [i64; 3]| [cells[0] - p[0], cells[1] - p[1], p[2]];
    let offset = |p: [i64; 3]| -> [f64; 3] {
        if !jitter {
            return [0.0; 3];
        }
        let image = half_turn(p);
        let (canon, sign) = if p <= image { (p, 1.0) } else { (image, -1.0) };
        let mut rng = ChaCha8Rng::seed_from_u64(((canon[0] as u64) << 42) ^ ((canon[1] as u64) << 21) ^ canon[2] as u64);
        let mut o = [0.0; 3];
        for a in 0..3 {
            let r: f64 = rng.random_range(-0.35..0.35);
            if canon[a] > 0 && canon[a] < cells[a] && !(a < 2 && p == image) {
                o[a] = r * dims[a] / cells[a] as f64;
            }
        }
        // the half turn negates x and y
        [sign * o[0], sign * o[1], o[2]]
    };
    let mut index: HashMap<[i64; 3], usize> = HashMap::new();
    let mut points = Vec::new();
    let mut vertex = |p: [i64; 3], points: &mut Vec<Vector3<f64>>| {
        *index.entry(p).or_insert_with(|| {
            let o = offset(p);
            points.push(Vector3::new(coord(0, p[0]) + o[0], coord(1, p[1]) + o[1], coord(2, p[2]) + o[2]));
            points.len() - 1
        })
    };
    let mut faces = Vec::new();
    for axis in 0..3 {
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in [0, cells[axis]] {
            for i in 0..cells[a] {
                for j in 0..cells[b] {
                    let mut corner = |di: i64, dj: i64| {
                        let mut p = [0i64; 3];
                        p[axis] = side;
                        p[a] = i + di;
                        p[b] = j + dj;
                        vertex(p, &mut points)
                    };
                    let (v00, v10, v11, v01) = (corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1));
                    faces.push([v00, v10, v11]);
                    faces.push([v00, v11, v01]);
                }
            }
        }
    }
    (points, faces)
}

/// Rings of vertices on the side wall plus concentric rings on both caps.
fn cylinder_mesh(radius: f64, height: f64, n: usize) -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    // side: segments x (rows + 1); caps: 2 x (rings x segments + 1)
    let circumference = std::f64::consts::TAU * radius;
    let area = circumference * height + 2.0 * std::f64::consts::PI * radius * radius;
    let h = (area / n as f64).sqrt();
    let segments = ((circumference / h).round() as usize).max(8);
    let rows = ((height / h).round() as usize).max(1);
    let rings = ((radius / h).round() as usize).max(1);
    let ring_xy = |r: f64, s: usize| {
        let t = std::f64::consts::TAU * s as f64 / segments as f64;
        (r * t.cos(), r * t.sin())
    };
    let mut points = Vec::new();
    let mut faces = Vec::new();
    let z_of = |row: usize| height * (2 * row as i64 - rows as i64) as f64 / (2 * rows) as f64;
    for row in 0..=rows {
        for s in 0..segments {
            let (x, y) = ring_xy(radius, s);
            points.push(Vector3::new(x, y, z_of(row)));
        }
    }
    let side = |row: usize, s: usize| row * segments + s % segments;
    for row in 0..rows {
        for s in 0..segments {
            faces.push([side(row, s), side(row, s + 1), side(row + 1, s + 1)]);
            faces.push([side(row, s), side(row + 1, s + 1), side(row + 1, s)]);
        }
    }
    for (z, outer_row) in [(z_of(0), 0), (z_of(rows), rows)] {
        let center = points.len();
        points.push(Vector3::new(0.0, 0.0, z));
        // ring `rings` is the wall's edge row; inner rings are new vertices
        let first_inner = points.len();
        for ring in 1..rings {
            for s in 0..segments {
                let (x, y) = ring_xy(radius * ring as f64 / rings as f64, s);
                points.push(Vector3::new(x, y, z));
            }
        }
        let at = |ring: usize, s: usize| {
            if ring == rings {
                side(outer_row, s)
            } else {
                first_inner + (ring - 1) * segments + s % segments
            }
        };
        for s in 0..segments {
            faces.push([center, at(1, s), at(1, s + 1)]);
        }
        for ring in 1..rings {
            for s in 0..segments {
                faces.push([at(ring, s), at(ring + 1, s), at(ring + 1, s + 1)]);
                faces.push([at(ring, s), at(ring + 1, s + 1), at(ring, s + 1)]);
            }
        }
    }
    (points, faces)
}

/// Star-shaped deformed sphere; the radial bump pattern has no rotational
/// symmetry.
fn blob_mesh(scale: f64, n: usize) -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    let lat = (((n as f64 - 2.0) / 2.0).sqrt().round() as usize).max(3);
    let lon = 2 * lat;
    let radius = |u: Vector3<f64>| {
        0.5 * scale * (1.0 + 0.22 * u.x + 0.12 * u.y * u.z + 0.15 * u.z * u.z * u.z - 0.1 * u.x * u.y + 0.06 * u.y)
    };
    let mut points = vec![Vector3::new(0.0, 0.0, radius(Vector3::z())), Vector3::new(0.0, 0.0, -radius(-Vector3::z()))];
    for i in 1..=lat {
        let theta = std::f64::consts::PI * i as f64 / (lat + 1) as f64;
        for j in 0..lon {
            let phi = std::f64::consts::TAU * j as f64 / lon as f64;
            let u = Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
            points.push(u * radius(u));
        }
    }
    let at = |i: usize, j: usize| 2 + (i - 1) * lon + j % lon;
    let mut faces = Vec::new();
    for j in 0..lon {
        faces.push([0, at(1, j), at(1, j + 1)]);
        faces.push([1, at(lat, j + 1), at(lat, j)]);
    }
    for i in 1..lat {
        for j in 0..lon {
            faces.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
            faces.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
        }
    }
    (points, faces)
}

/// Points per registry model.
pub const DEFAULT_MODEL_POINTS: usize = 1500;

/// The stock object set used by random scenes and the CLI.
///
/// | class | shape | size |
/// |---|---|---|
/// | 1 | cube | 8 cm side |
/// | 2 | bar | 16 x 4.8 x 3.2 cm |
/// | 3 | blob | ~10 cm |
/// | 4 | cylinder | r 3 cm, h 10 cm |
/// | 5 | blob | ~7 cm |
pub fn default_models() -> ModelRegistry {
    let spec = [
        (1, PrimitiveKind::Cube, 0.08),
        (2, PrimitiveKind::Bar2Fold, 0.16),
        (3, PrimitiveKind::AsymmetricBlob, 0.10),
        (4, PrimitiveKind::Cylinder, 0.10),
        (5, PrimitiveKind::AsymmetricBlob, 0.07),
    ];
    spec.into_iter()
        .map(|(c, kind, scale)| {
            let m = make_primitive_model(kind, scale, DEFAULT_MODEL_POINTS).expect("valid primitive").with_class_id(c);
            (c, m)
        })
        .collect()
}

/// 640 x 480 pinhole camera with a 500 px focal length.
pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics { fx: 500.0, fy: 500.0, px: 320.0, py: 240.0 }
}

/// Uniformly distributed unit quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Quaternion {
    loop {
        let v: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        if let Ok(q) = Quaternion::from_array(v).normalized() {
            return q;
        }
    }
}

/// Uniformly distributed direction.
pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Rotation about a uniformly random axis by `angle_deg`.
pub fn rotation_about_random_axis<R: Rng + ?Sized>(rng: &mut R, angle_deg: f64) -> Quaternion {
    Quaternion::exp(&(random_unit_vector(rng) * angle_deg.to_radians()))
}

/// Placement ranges for random scenes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub intrinsics: CameraIntrinsics,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Object depth range, meters.
    pub depth_range: (f64, f64),
    /// Objects are scattered within this many pixels of a shared cluster point.
    pub cluster_radius_px: f64,
    /// Keep projected centers this far from the image border, pixels.
    pub margin_px: f64,
    /// Every instance must keep at least this fraction of its pixels visible.
    pub min_visibility: f64,
    /// Require an instance whose projected center is covered by another object.
    pub require_occluded_center: bool,
    pub max_attempts: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            intrinsics: default_intrinsics(),
            min_objects: 3,
            max_objects: 5,
            depth_range: (0.6, 1.0),
            cluster_radius_px: 90.0,
            margin_px: 60.0,
            min_visibility: 0.3,
            require_occluded_center: false,
            max_attempts: 500,
        }
    }
}

/// A scene together with its rendering and per-instance visibility.
#[derive(Debug, Clone)]
pub struct GeneratedScene {
    pub scene: Scene,
    pub rendered: RenderedScene,
    pub visibility: Vec<f64>,
}

/// Draws scenes with distinct classes until one satisfies `config`.
pub fn random_scene(models: &ModelRegistry, config: &SceneConfig, seed: u64) -> Result<GeneratedScene> {
    let classes: Vec<u16> = models.keys().copied().collect();
    if config.min_objects == 0 || config.min_objects > config.max_objects || config.max_objects > classes.len() {
        return Err(Error::InvalidInput(format!(
            "cannot place {}..={} objects with {} distinct classes",
            config.min_objects,
            config.max_objects,
            classes.len()
        )));
    }
    let (z0, z1) = config.depth_range;
    if !(z0 > 0.0 && z1 >= z0) {
        return Err(Error::InvalidInput("depth range must be positive and ordered".into()));
    }
    let k = config.intrinsics;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (config.width as f64, config.height as f64);
    for _ in 0..config.max_attempts {
        let count = rng.random_range(config.min_objects..=config.max_objects);
        let picks = sample(&mut rng, classes.len(), count);
        let cx = rng.random_range(config.margin_px..=(w - config.margin_px).max(config.margin_px));
        let cy = rng.random_range(config.margin_px..=(h - config.margin_px).max(config.margin_px));
        let mut instances = Vec::with_capacity(count);
        for idx in picks.iter() {
            let class_id = classes[idx];
            let u = (cx + rng.random_range(-1.0..=1.0) * config.cluster_radius_px).clamp(config.margin_px, w - config.margin_px);
            let v = (cy + rng.random_range(-1.0..=1.0) * config.cluster_radius_px).clamp(config.margin_px, h - config.margin_px);
            let z = rng.random_range(z0..=z1);
            let t = backproject_center(&Vector2::new(u, v), z, &k)?;
            instances.push(Instance { class_id, pose: Pose::new(random_rotation(&mut rng), t)? });
        }
        let scene = Scene { width: config.width, height: config.height, intrinsics: k, instances };
        if scene.instances.iter().any(|i| i.pose.translation.z <= models[&i.class_id].radius() + NEAR_PLANE) {
            continue;
        }
        let rendered = render_scene(&scene, models)?;
        let vis = visibility(&scene, models, &rendered)?;
        if vis.iter().any(|&v| v < config.min_visibility) {
            continue;
        }
        if config.require_occluded_center && !has_occluded_center(&scene, &rendered) {
            continue;
        }
        return Ok(GeneratedScene { scene, rendered, visibility: vis });
    }
    Err(Error::InvalidInput(format!("no scene satisfied the constraints in {} attempts", config.max_attempts)))
}

/// Whether some instance's center pixel shows a different object.
pub fn has_occluded_center(scene: &Scene, rendered: &RenderedScene) -> bool {
    occluded_centers(scene, rendered).iter().any(|&o| o)
}

/// Per instance: the pixel nearest its projected center belongs to another object.
pub fn occluded_centers(scene: &Scene, rendered: &RenderedScene) -> Vec<bool> {
    scene
        .instances
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let Ok(c) = scene.intrinsics.project(&inst.pose.translation) else {
                return false;
            };
            let (x, y) = (c.x.round(), c.y.round());
            if x < 0.0 || y < 0.0 || x >= scene.width as f64 || y >= scene.height as f64 {
                return false;
            }
            let owner = rendered.range.owner[y as usize * scene.width + x as usize];
            owner != NO_OWNER && owner != i as u32
        })
        .collect()
}
