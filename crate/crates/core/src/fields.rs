//! Dense per-pixel prediction containers: semantic labels, per-class center
//! direction and depth planes, and depth maps.
//!
//! Pixel `(x, y)` is column `x`, row `y`, used directly as the continuous
//! image coordinate; storage is row-major.

use std::collections::BTreeMap;

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, TensorData};

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, labels: vec![0; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::DimensionMismatch(format!("{} labels for {width}x{height}", labels.len())));
        }
        Ok(Self { width, height, labels })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, label: u16) {
        self.labels[y * self.width + x] = label;
    }

    /// Pixel coordinates `(x, y)` carrying `class_id`, in row-major order.
    pub fn pixels_of(&self, class_id: u16) -> Vec<(usize, usize)> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class_id)
            .map(|(i, _)| (i % self.width, i / self.width))
            .collect()
    }

    /// Sorted distinct non-background labels.
    pub fn classes(&self) -> Vec<u16> {
        let mut seen = std::collections::BTreeSet::new();
        for &l in &self.labels {
            if l != 0 {
                seen.insert(l);
            }
        }
        seen.into_iter().collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::u16(vec![self.height as u32, self.width as u32], self.labels.clone()).expect("consistent dims")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match (&t.dims[..], &t.data) {
            (&[h, w], TensorData::U16(v)) => Self::from_vec(w as usize, h as usize, v.clone()),
            _ => Err(Error::Format("label map must be a 2-D u16 tensor".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    /// Meters; 0 marks missing depth.
    pub depth: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, depth: vec![0.0; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, depth: Vec<f32>) -> Result<Self> {
        if depth.len() != width * height {
            return Err(Error::DimensionMismatch(format!("{} depths for {width}x{height}", depth.len())));
        }
        if let Some(bad) = depth.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
            return Err(Error::InvalidInput(format!("depth {bad} is negative or non-finite")));
        }
        Ok(Self { width, height, depth })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.depth[y * self.width + x]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::f32(vec![self.height as u32, self.width as u32], self.depth.clone()).expect("consistent dims")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match (&t.dims[..], &t.data) {
            (&[h, w], TensorData::F32(v)) => Self::from_vec(w as usize, h as usize, v.clone()),
            _ => Err(Error::Format("depth map must be a 2-D f32 tensor".into())),
        }
    }
}

/// Direction and depth planes for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPlanes {
    pub nx: Vec<f32>,
    pub ny: Vec<f32>,
    pub tz: Vec<f32>,
}

impl ClassPlanes {
    fn zeros(n: usize) -> Self {
        Self { nx: vec![0.0; n], ny: vec![0.0; n], tz: vec![0.0; n] }
    }
}

/// Per-class `(nx, ny, Tz)` regression planes.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterField {
    pub width: usize,
    pub height: usize,
    planes: BTreeMap<u16, ClassPlanes>,
}

impl CenterField {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, planes: BTreeMap::new() }
    }

    pub fn classes(&self) -> impl Iterator<Item = u16> + '_ {
        self.planes.keys().copied()
    }

    pub fn planes(&self, class_id: u16) -> Option<&ClassPlanes> {
        self.planes.get(&class_id)
    }

    pub fn planes_mut(&mut self, class_id: u16) -> &mut ClassPlanes {
        let n = self.width * self.height;
        self.planes.entry(class_id).or_insert_with(|| ClassPlanes::zeros(n))
    }

    /// `(nx, ny, tz)` at pixel `(x, y)` for `class_id`.
    pub fn get(&self, class_id: u16, x: usize, y: usize) -> Option<(f32, f32, f32)> {
        let p = self.planes.get(&class_id)?;
        let i = y * self.width + x;
        Some((p.nx[i], p.ny[i], p.tz[i]))
    }

    /// Writes the regression target for a single pixel.
    pub fn set_target(&mut self, class_id: u16, x: usize, y: usize, center: &Vector2<f64>, depth: f64) {
        let (nx, ny) = center_direction(x, y, center);
        let i = y * self.width + x;
        let p = self.planes_mut(class_id);
        p.nx[i] = nx as f32;
        p.ny[i] = ny as f32;
        p.tz[i] = depth as f32;
    }

    /// Encodes as a `[C, 3, H, W]` f32 tensor; channel block `c` holds class
    /// `c + 1`, with absent classes stored as zero planes.
    pub fn to_tensor(&self) -> Tensor {
        let n = self.width * self.height;
        let max_class = self.planes.keys().next_back().copied().unwrap_or(0) as usize;
        let mut data = vec![0.0f32; max_class * 3 * n];
        for (&c, p) in &self.planes {
            let base = (c as usize - 1) * 3 * n;
            data[base..base + n].copy_from_slice(&p.nx);
            data[base + n..base + 2 * n].copy_from_slice(&p.ny);
            data[base + 2 * n..base + 3 * n].copy_from_slice(&p.tz);
        }
        Tensor::f32(vec![max_class as u32, 3, self.height as u32, self.width as u32], data).expect("consistent dims")
    }

    /// Decodes a `[C, 3, H, W]` tensor; all-zero class blocks are dropped.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (c, h, w, v) = match (&t.dims[..], &t.data) {
            (&[c, 3, h, w], TensorData::F32(v)) => (c as usize, h as usize, w as usize, v),
            _ => return Err(Error::Format("center field must be a [C, 3, H, W] f32 tensor".into())),
        };
        if c > u16::MAX as usize {
            return Err(Error::Format("too many classes".into()));
        }
        let n = w * h;
        let mut field = Self::new(w, h);
        for k in 0..c {
            let block = &v[k * 3 * n..(k + 1) * 3 * n];
            if block.iter().all(|&x| x.to_bits() == 0) {
                continue;
            }
            field.planes.insert(
                (k + 1) as u16,
                ClassPlanes {
                    nx: block[..n].to_vec(),
                    ny: block[n..2 * n].to_vec(),
                    tz: block[2 * n..].to_vec(),
                },
            );
        }
        Ok(field)
    }
}

/// Unit vector from pixel `(x, y)` toward `center`; `(0, 0)` at the center itself.
pub fn center_direction(x: usize, y: usize, center: &Vector2<f64>) -> (f64, f64) {
    let dx = center.x - x as f64;
    let dy = center.y - y as f64;
    let len = dx.hypot(dy);
    if len == 0.0 {
        (0.0, 0.0)
    } else {
        (dx / len, dy / len)
    }
}

/// Builds the dense regression targets for every labeled pixel.
///
/// Each pixel of class `k` stores the unit direction toward `centers[k]` and
/// the depth `depths[k]`; unlabeled pixels stay zero.
pub fn regression_targets(
    labels: &LabelMap,
    centers: &BTreeMap<u16, Vector2<f64>>,
    depths: &BTreeMap<u16, f64>,
) -> Result<CenterField> {
    let mut field = CenterField::new(labels.width, labels.height);
    for class in labels.classes() {
        let center = centers.get(&class).ok_or(Error::MissingCenter(class))?;
        let depth = *depths.get(&class).ok_or(Error::MissingCenter(class))?;
        if !(depth > 0.0 && depth.is_finite()) {
            return Err(Error::InvalidDepth(depth));
        }
        field.planes_mut(class);
        for (x, y) in labels.pixels_of(class) {
            field.set_target(class, x, y, center, depth);
        }
    }
    Ok(field)
}
