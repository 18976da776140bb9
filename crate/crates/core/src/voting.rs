//! Hough voting for object centers.
//!
//! Every pixel of a class casts one vote into each grid cell its predicted
//! ray passes through. Peaks of the vote grid become object centers; the
//! pixels whose rays pass close to a center are its inliers, and their mean
//! predicted depth plus the center give the 3D translation.

use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{CenterField, LabelMap};
use crate::geom::{backproject_center, CameraIntrinsics};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VotingParams {
    /// Minimum peak score (exclusive). `None` uses `max(10, 0.1 * class pixels)`.
    pub score_threshold: Option<u32>,
    /// Chebyshev suppression radius around accepted peaks, pixels.
    pub nms_radius: u32,
    /// Maximum ray-to-center distance for an inlier, pixels.
    pub inlier_ray_distance: f64,
    /// Maximum number of cells a single ray may visit. `None` uses `width + height`,
    /// which reaches every cell of the grid from any start.
    pub max_ray_length: Option<u32>,
    /// Refine each peak to the least-squares intersection of its inlier rays,
    /// re-collecting the inliers after each step.
    pub subpixel: bool,
}

impl Default for VotingParams {
    fn default() -> Self {
        Self { score_threshold: None, nms_radius: 20, inlier_ray_distance: 3.0, max_ray_length: None, subpixel: true }
    }
}

impl VotingParams {
    pub fn validate(&self) -> Result<()> {
        if self.nms_radius == 0 || !(self.inlier_ray_distance > 0.0) {
            return Err(Error::InvalidInput("voting parameters must be positive".into()));
        }
        if self.score_threshold == Some(0) || self.max_ray_length == Some(0) {
            return Err(Error::InvalidInput("voting parameters must be positive".into()));
        }
        Ok(())
    }

    pub fn threshold_for(&self, class_pixels: usize) -> u32 {
        self.score_threshold.unwrap_or_else(|| 10.max((0.1 * class_pixels as f64).floor() as u32))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteGrid {
    pub width: usize,
    pub height: usize,
    pub class_id: u16,
    /// Number of class pixels that were considered for voting.
    pub voters: usize,
    pub scores: Vec<u32>,
}

impl VoteGrid {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.scores[y * self.width + x]
    }

    pub fn total(&self) -> u64 {
        self.scores.iter().map(|&s| s as u64).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub class_id: u16,
    pub center: Vector2<f64>,
    pub score: u32,
    pub inliers: Vec<(usize, usize)>,
    /// `(xmin, ymin, xmax, ymax)`, inclusive pixel bounds of the inliers.
    pub bbox: [usize; 4],
    pub depth: f64,
    pub translation: Vector3<f64>,
}

/// Visits the cells crossed by the ray from the center of cell `(x, y)`
/// along `(dx, dy)`, excluding the start cell, until `max_cells` cells have
/// been visited or the ray leaves the `width x height` grid.
///
/// Cell `(i, j)` covers `[i - 0.5, i + 0.5) x [j - 0.5, j + 0.5)`. A ray that
/// passes exactly through a cell corner steps diagonally.
pub fn trace_ray(
    x: usize,
    y: usize,
    dx: f64,
    dy: f64,
    width: usize,
    height: usize,
    max_cells: u32,
    mut visit: impl FnMut(usize, usize),
) {
    if dx == 0.0 && dy == 0.0 {
        return;
    }
    let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
    let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
    let delta_x = if dx != 0.0 { 1.0 / dx.abs() } else { f64::INFINITY };
    let delta_y = if dy != 0.0 { 1.0 / dy.abs() } else { f64::INFINITY };
    let mut t_x = 0.5 * delta_x;
    let mut t_y = 0.5 * delta_y;
    let (mut cx, mut cy) = (x as i64, y as i64);
    for _ in 0..max_cells {
        if t_x < t_y {
            cx += step_x;
            t_x += delta_x;
        } else if t_y < t_x {
            cy += step_y;
            t_y += delta_y;
        } else {
            cx += step_x;
            cy += step_y;
            t_x += delta_x;
            t_y += delta_y;
        }
        if cx < 0 || cy < 0 || cx >= width as i64 || cy >= height as i64 {
            return;
        }
        visit(cx as usize, cy as usize);
    }
}

fn check_dims(labels: &LabelMap, field: &CenterField) -> Result<()> {
    if labels.width != field.width || labels.height != field.height {
        return Err(Error::DimensionMismatch(format!(
            "labels are {}x{}, field is {}x{}",
            labels.width, labels.height, field.width, field.height
        )));
    }
    Ok(())
}

/// Accumulates the votes of every `class_id` pixel with a nonzero direction.
pub fn cast_votes(labels: &LabelMap, field: &CenterField, class_id: u16, params: &VotingParams) -> Result<VoteGrid> {
    check_dims(labels, field)?;
    let planes = field.planes(class_id).ok_or(Error::UnknownClass(class_id))?;
    let (w, h) = (labels.width, labels.height);
    let max_cells = params.max_ray_length.unwrap_or((w + h) as u32);
    let mut scores = vec![0u32; w * h];
    let mut voters = 0;
    for (i, &l) in labels.labels.iter().enumerate() {
        if l != class_id {
            continue;
        }
        voters += 1;
        let (dx, dy) = (planes.nx[i] as f64, planes.ny[i] as f64);
        trace_ray(i % w, i / w, dx, dy, w, h, max_cells, |cx, cy| scores[cy * w + cx] += 1);
    }
    Ok(VoteGrid { width: w, height: h, class_id, voters, scores })
}

/// Greedy non-maximum suppression over the vote grid.
///
/// Candidates above the threshold are taken in descending score order (ties
/// by lowest row-major index); a candidate within `nms_radius` (Chebyshev) of
/// an accepted center is suppressed.
pub fn find_centers(grid: &VoteGrid, params: &VotingParams) -> Vec<((usize, usize), u32)> {
    let threshold = params.threshold_for(grid.voters);
    let mut candidates: Vec<(usize, u32)> =
        grid.scores.iter().enumerate().filter(|(_, &s)| s > threshold).map(|(i, &s)| (i, s)).collect();
    candidates.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let r = params.nms_radius as usize;
    let mut accepted: Vec<((usize, usize), u32)> = Vec::new();
    for (i, s) in candidates {
        let (x, y) = (i % grid.width, i / grid.width);
        if accepted.iter().all(|&((ax, ay), _)| x.abs_diff(ax) > r || y.abs_diff(ay) > r) {
            accepted.push(((x, y), s));
        }
    }
    accepted
}

/// Signed distance along a pixel's ray to `center` and perpendicular offset of
/// `center` from the ray. `None` for pixels without a direction.
fn ray_offsets(x: usize, y: usize, nx: f32, ny: f32, center: &Vector2<f64>) -> Option<(f64, f64)> {
    let (nx, ny) = (nx as f64, ny as f64);
    let len = nx.hypot(ny);
    if len == 0.0 {
        return None;
    }
    let (nx, ny) = (nx / len, ny / len);
    let dx = center.x - x as f64;
    let dy = center.y - y as f64;
    Some((nx * dx + ny * dy, (nx * dy - ny * dx).abs()))
}

/// Class pixels whose ray points toward `center` and passes within `eps` of it.
pub fn collect_inliers(
    center: &Vector2<f64>,
    labels: &LabelMap,
    field: &CenterField,
    class_id: u16,
    eps: f64,
) -> Result<Vec<(usize, usize)>> {
    check_dims(labels, field)?;
    let planes = field.planes(class_id).ok_or(Error::UnknownClass(class_id))?;
    let w = labels.width;
    let mut out = Vec::new();
    for (i, &l) in labels.labels.iter().enumerate() {
        if l != class_id {
            continue;
        }
        let (x, y) = (i % w, i / w);
        if let Some((along, perp)) = ray_offsets(x, y, planes.nx[i], planes.ny[i], center) {
            if along > 0.0 && perp <= eps {
                out.push((x, y));
            }
        }
    }
    Ok(out)
}

/// Mean inlier depth, then back-projection of the center at that depth.
pub fn estimate_translation(
    center: &Vector2<f64>,
    inliers: &[(usize, usize)],
    field: &CenterField,
    class_id: u16,
    k: &CameraIntrinsics,
) -> Result<Vector3<f64>> {
    if inliers.is_empty() {
        return Err(Error::NoSupport);
    }
    let planes = field.planes(class_id).ok_or(Error::UnknownClass(class_id))?;
    let sum: f64 = inliers.iter().map(|&(x, y)| planes.tz[y * field.width + x] as f64).sum();
    let tz = sum / inliers.len() as f64;
    if !(tz > 0.0) {
        return Err(Error::InvalidDepth(tz));
    }
    backproject_center(center, tz, k)
}

/// Tight axis-aligned bounds `(xmin, ymin, xmax, ymax)` of a pixel set.
pub fn bounding_box(pixels: &[(usize, usize)]) -> Option<[usize; 4]> {
    let (&(x0, y0), rest) = pixels.split_first()?;
    Some(rest.iter().fold([x0, y0, x0, y0], |b, &(x, y)| [b[0].min(x), b[1].min(y), b[2].max(x), b[3].max(y)]))
}

/// Least-squares intersection of the inlier rays; `None` when the rays are
/// (nearly) parallel.
pub fn intersect_rays(inliers: &[(usize, usize)], field: &CenterField, class_id: u16) -> Option<Vector2<f64>> {
    let planes = field.planes(class_id)?;
    let mut a = Matrix2::zeros();
    let mut b = Vector2::zeros();
    for &(x, y) in inliers {
        let i = y * field.width + x;
        let n = Vector2::new(planes.nx[i] as f64, planes.ny[i] as f64);
        let len = n.norm();
        if len == 0.0 {
            continue;
        }
        let n = n / len;
        let proj = Matrix2::identity() - n * n.transpose();
        a += proj;
        b += proj * Vector2::new(x as f64, y as f64);
    }
    // both eigenvalues of `a` must be well away from zero
    let det = a.determinant();
    let tr = a.trace();
    if !(tr > 0.0) || det < 1e-6 * tr * tr {
        return None;
    }
    a.try_inverse().map(|inv| inv * b)
}

/// Splits the class pixels among `centers`: a pixel supports the first center
/// its ray reaches within `eps`, so rays crossing several instances of the
/// same class are not double counted.
fn assign_inliers(
    labels: &LabelMap,
    field: &CenterField,
    class_id: u16,
    centers: &[Vector2<f64>],
    eps: f64,
) -> Vec<Vec<(usize, usize)>> {
    let planes = field.planes(class_id).expect("class present in field");
    let mut support: Vec<Vec<(usize, usize)>> = vec![Vec::new(); centers.len()];
    for (x, y) in labels.pixels_of(class_id) {
        let i = y * labels.width + x;
        let mut best: Option<(usize, f64)> = None;
        for (ci, c) in centers.iter().enumerate() {
            if let Some((along, perp)) = ray_offsets(x, y, planes.nx[i], planes.ny[i], c) {
                if along > 0.0 && perp <= eps && best.is_none_or(|(_, a)| along < a) {
                    best = Some((ci, along));
                }
            }
        }
        if let Some((ci, _)) = best {
            support[ci].push((x, y));
        }
    }
    support
}

/// Alternates ray intersection and inlier reassignment. A center never leaves
/// the NMS window of its starting point.
fn refine_centers(
    labels: &LabelMap,
    field: &CenterField,
    class_id: u16,
    centers: &mut [Vector2<f64>],
    mut support: Vec<Vec<(usize, usize)>>,
    params: &VotingParams,
) -> Vec<Vec<(usize, usize)>> {
    let start = centers.to_vec();
    for _ in 0..REFINE_ROUNDS {
        let mut moved = 0.0f64;
        for ((c, inliers), p) in centers.iter_mut().zip(&support).zip(&start) {
            if let Some(refined) = intersect_rays(inliers, field, class_id) {
                let d = (refined - *c).norm();
                let r = refined - p;
                if r.x.abs().max(r.y.abs()) <= params.nms_radius as f64 {
                    *c = refined;
                    moved = moved.max(d);
                }
            }
        }
        support = assign_inliers(labels, field, class_id, centers, params.inlier_ray_distance);
        if moved < 1e-6 {
            break;
        }
    }
    support
}

/// Indices of the centers kept when each one suppresses the later ones within
/// `radius` (Chebyshev).
fn suppress_merged(centers: &[Vector2<f64>], radius: f64) -> Vec<usize> {
    let mut keep: Vec<usize> = Vec::new();
    for (i, c) in centers.iter().enumerate() {
        if keep.iter().all(|&k| (centers[k] - c).abs().max() > radius) {
            keep.push(i);
        }
    }
    keep
}

const REFINE_ROUNDS: usize = 10;

/// Full voting pipeline for every class present in both the labels and the field.
pub fn detect(labels: &LabelMap, field: &CenterField, k: &CameraIntrinsics, params: &VotingParams) -> Result<Vec<Detection>> {
    check_dims(labels, field)?;
    params.validate()?;
    let present = labels.classes();
    let mut detections = Vec::new();
    for class_id in field.classes().filter(|c| present.binary_search(c).is_ok()) {
        let grid = cast_votes(labels, field, class_id, params)?;
        let mut peaks = find_centers(&grid, params);
        if peaks.is_empty() {
            continue;
        }

        let mut centers: Vec<Vector2<f64>> =
            peaks.iter().map(|&((x, y), _)| Vector2::new(x as f64, y as f64)).collect();
        let mut support = assign_inliers(labels, field, class_id, &centers, params.inlier_ray_distance);
        if params.subpixel {
            loop {
                support = refine_centers(labels, field, class_id, &mut centers, support, params);
                // refined centers that end up inside one NMS window are one object
                let keep = suppress_merged(&centers, params.nms_radius as f64);
                if keep.len() == centers.len() {
                    break;
                }
                peaks = keep.iter().map(|&i| peaks[i]).collect();
                centers = keep.iter().map(|&i| centers[i]).collect();
                support = assign_inliers(labels, field, class_id, &centers, params.inlier_ray_distance);
            }
        }
        for (((_, score), center), inliers) in peaks.into_iter().zip(centers).zip(support) {
            if inliers.is_empty() {
                continue;
            }
            let translation = estimate_translation(&center, &inliers, field, class_id, k)?;
            let bbox = bounding_box(&inliers).expect("non-empty inliers");
            detections.push(Detection {
                class_id,
                center,
                score,
                bbox,
                depth: translation.z,
                translation,
                inliers,
            });
        }
    }
    Ok(detections)
}
