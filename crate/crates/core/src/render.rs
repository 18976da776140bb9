//! Z-buffered depth rendering of object models.
//!
//! Pixel `(x, y)` samples the viewing ray through image coordinates `(x, y)`.
//! Meshes are rasterized with a top-left fill rule and exact ray/plane depth;
//! models without faces are splatted as disks. Vertices must lie in front of
//! the camera; triangles touching `z <= NEAR_PLANE` are skipped, not clipped.

use nalgebra::{Vector2, Vector3};

use crate::geom::{CameraIntrinsics, Pose};
use crate::model::ObjectModel;

pub const NEAR_PLANE: f64 = 1e-3;
pub const NO_OWNER: u32 = u32::MAX;

/// Rectangular region of the image, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Window {
    pub fn full(width: usize, height: usize) -> Self {
        Self { x0: 0, y0: 0, width, height }
    }

    /// Smallest window covering `pixels`, padded by `pad` and clamped to the image.
    pub fn around(pixels: &[(usize, usize)], pad: usize, image_width: usize, image_height: usize) -> Option<Self> {
        let (&(x, y), rest) = pixels.split_first()?;
        let b = rest.iter().fold([x, y, x, y], |b, &(x, y)| [b[0].min(x), b[1].min(y), b[2].max(x), b[3].max(y)]);
        let x0 = b[0].saturating_sub(pad);
        let y0 = b[1].saturating_sub(pad);
        let x1 = (b[2] + pad + 1).min(image_width);
        let y1 = (b[3] + pad + 1).min(image_height);
        Some(Self { x0, y0, width: x1.saturating_sub(x0), height: y1.saturating_sub(y0) })
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> Option<usize> {
        if x >= self.x0 && y >= self.y0 && x < self.x0 + self.width && y < self.y0 + self.height {
            Some((y - self.y0) * self.width + (x - self.x0))
        } else {
            None
        }
    }
}

/// Rendered surface: depth, camera-frame point and unit normal per pixel.
///
/// Depth 0 marks empty pixels. Normals face the camera.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    pub window: Window,
    pub depth: Vec<f64>,
    pub points: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    /// Index of the instance that produced each pixel, or [`NO_OWNER`].
    pub owner: Vec<u32>,
}

impl RangeImage {
    pub fn new(window: Window) -> Self {
        let n = window.width * window.height;
        Self {
            window,
            depth: vec![0.0; n],
            points: vec![Vector3::zeros(); n],
            normals: vec![Vector3::zeros(); n],
            owner: vec![NO_OWNER; n],
        }
    }

    /// `(depth, point, normal)` at image pixel `(x, y)`, if covered.
    pub fn at(&self, x: usize, y: usize) -> Option<(f64, &Vector3<f64>, &Vector3<f64>)> {
        let i = self.window.index(x, y)?;
        (self.depth[i] > 0.0).then(|| (self.depth[i], &self.points[i], &self.normals[i]))
    }

    pub fn covered(&self) -> usize {
        self.depth.iter().filter(|&&d| d > 0.0).count()
    }

    #[inline]
    fn write(&mut self, i: usize, z: f64, point: Vector3<f64>, normal: Vector3<f64>, owner: u32) {
        if self.depth[i] == 0.0 || z < self.depth[i] {
            let normal = if normal.dot(&point) > 0.0 { -normal } else { normal };
            self.depth[i] = z;
            self.points[i] = point;
            self.normals[i] = normal;
            self.owner[i] = owner;
        }
    }
}

#[inline]
fn edge(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Whether pixels exactly on edge `a -> b` belong to the triangle. Exactly one
/// of two triangles sharing an edge accepts it.
#[inline]
fn owns_edge(a: &Vector2<f64>, b: &Vector2<f64>) -> bool {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    dy > 0.0 || (dy == 0.0 && dx < 0.0)
}

#[inline]
fn inside(w: f64, owns: bool) -> bool {
    w > 0.0 || (w == 0.0 && owns)
}

/// Z-buffers `model` at `pose` into `img`, tagging written pixels with `owner`.
pub fn rasterize(img: &mut RangeImage, model: &ObjectModel, pose: &Pose, k: &CameraIntrinsics, owner: u32) {
    let rot = pose.rotation_matrix();
    let cam: Vec<Vector3<f64>> = model.points().iter().map(|p| rot * p + pose.translation).collect();
    match model.faces() {
        Some(faces) => rasterize_mesh(img, model, faces, &cam, &rot, k, owner),
        None => splat_points(img, model, &cam, &rot, k, owner),
    }
}

fn rasterize_mesh(
    img: &mut RangeImage,
    model: &ObjectModel,
    faces: &[[usize; 3]],
    cam: &[Vector3<f64>],
    rot: &nalgebra::Matrix3<f64>,
    k: &CameraIntrinsics,
    owner: u32,
) {
    let proj: Vec<Option<Vector2<f64>>> = cam
        .iter()
        .map(|v| (v.z > NEAR_PLANE).then(|| Vector2::new(k.fx * v.x / v.z + k.px, k.fy * v.y / v.z + k.py)))
        .collect();
    let win = img.window;
    if win.width == 0 || win.height == 0 {
        return;
    }
    let (wx0, wy0) = (win.x0 as f64, win.y0 as f64);
    let (wx1, wy1) = ((win.x0 + win.width - 1) as f64, (win.y0 + win.height - 1) as f64);
    let vertex_normals = model.normals();
    for face in faces {
        let [ia, mut ib, mut ic] = *face;
        let (Some(_), Some(_), Some(_)) = (proj[ia], proj[ib], proj[ic]) else {
            continue;
        };
        let area = edge(&proj[ia].unwrap(), &proj[ib].unwrap(), &proj[ic].unwrap());
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        if area < 0.0 {
            std::mem::swap(&mut ib, &mut ic);
        }
        let (pa, pb, pc) = (proj[ia].unwrap(), proj[ib].unwrap(), proj[ic].unwrap());
        let xmin = pa.x.min(pb.x).min(pc.x).ceil().max(wx0);
        let xmax = pa.x.max(pb.x).max(pc.x).floor().min(wx1);
        let ymin = pa.y.min(pb.y).min(pc.y).ceil().max(wy0);
        let ymax = pa.y.max(pb.y).max(pc.y).floor().min(wy1);
        if xmin > xmax || ymin > ymax {
            continue;
        }
        let (va, vb, vc) = (cam[ia], cam[ib], cam[ic]);
        let n = (vb - va).cross(&(vc - va));
        let len = n.norm();
        if len == 0.0 {
            continue;
        }
        let face_normal = n / len;
        let plane = face_normal.dot(&va);
        let own = [owns_edge(&pb, &pc), owns_edge(&pc, &pa), owns_edge(&pa, &pb)];
        for y in ymin as usize..=ymax as usize {
            for x in xmin as usize..=xmax as usize {
                let p = Vector2::new(x as f64, y as f64);
                let w0 = edge(&pb, &pc, &p);
                let w1 = edge(&pc, &pa, &p);
                let w2 = edge(&pa, &pb, &p);
                if !(inside(w0, own[0]) && inside(w1, own[1]) && inside(w2, own[2])) {
                    continue;
                }
                let ray = k.ray(p.x, p.y);
                let denom = face_normal.dot(&ray);
                if denom.abs() < 1e-12 {
                    continue;
                }
                let z = plane / denom;
                if !(z > NEAR_PLANE) {
                    continue;
                }
                let i = win.index(x, y).expect("pixel inside window");
                if img.depth[i] != 0.0 && z >= img.depth[i] {
                    continue;
                }
                let normal = match vertex_normals {
                    Some(vn) => {
                        // perspective-correct barycentric weights
                        let (b0, b1, b2) = (w0 / va.z, w1 / vb.z, w2 / vc.z);
                        let s = b0 + b1 + b2;
                        let nn = rot * (vn[ia] * (b0 / s) + vn[ib] * (b1 / s) + vn[ic] * (b2 / s));
                        let l = nn.norm();
                        if l > 0.0 {
                            nn / l
                        } else {
                            face_normal
                        }
                    }
                    None => face_normal,
                };
                img.write(i, z, ray * z, normal, owner);
            }
        }
    }
}

fn splat_points(
    img: &mut RangeImage,
    model: &ObjectModel,
    cam: &[Vector3<f64>],
    rot: &nalgebra::Matrix3<f64>,
    k: &CameraIntrinsics,
    owner: u32,
) {
    let spacing = model.mean_spacing();
    let normals = model.point_normals();
    let win = img.window;
    for (v, n_obj) in cam.iter().zip(normals) {
        if v.z <= NEAR_PLANE {
            continue;
        }
        let u = k.fx * v.x / v.z + k.px;
        let w = k.fy * v.y / v.z + k.py;
        let r = (k.fx * spacing / v.z).ceil().max(0.0) as i64;
        let (cx, cy) = (u.round() as i64, w.round() as i64);
        let normal = rot * n_obj;
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy > r * r {
                    continue;
                }
                let (x, y) = (cx + dx, cy + dy);
                if x < 0 || y < 0 {
                    continue;
                }
                let Some(i) = win.index(x as usize, y as usize) else {
                    continue;
                };
                let ray = k.ray(x as f64, y as f64);
                img.write(i, v.z, ray * v.z, normal, owner);
            }
        }
    }
}

/// Renders a single model into a fresh range image over `window`.
pub fn render_model(model: &ObjectModel, pose: &Pose, k: &CameraIntrinsics, window: Window) -> RangeImage {
    let mut img = RangeImage::new(window);
    rasterize(&mut img, model, pose, k, 0);
    img
}
