use std::sync::OnceLock;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::nn::{dist2, PointIndex};

/// A rigid object: 3D points in the object frame plus optional surface data.
#[derive(Debug, Clone)]
pub struct ObjectModel {
    pub class_id: u16,
    pub name: String,
    points: Vec<Vector3<f64>>,
    normals: Option<Vec<Vector3<f64>>>,
    faces: Option<Vec<[usize; 3]>>,
    diameter: f64,
    index: PointIndex,
    spacing: OnceLock<f64>,
    fitted_normals: OnceLock<Vec<Vector3<f64>>>,
}

impl ObjectModel {
    pub fn new(
        class_id: u16,
        name: impl Into<String>,
        points: Vec<Vector3<f64>>,
        normals: Option<Vec<Vector3<f64>>>,
        faces: Option<Vec<[usize; 3]>>,
    ) -> Result<Self> {
        if class_id == 0 {
            return Err(Error::InvalidModel("class id 0 is reserved for background".into()));
        }
        if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite())) {
            return Err(Error::InvalidModel("non-finite point coordinate".into()));
        }
        let diameter = model_diameter(&points)?;
        if let Some(n) = &normals {
            if n.len() != points.len() {
                return Err(Error::InvalidModel(format!(
                    "{} normals for {} points",
                    n.len(),
                    points.len()
                )));
            }
            if let Some(bad) = n.iter().position(|v| (v.norm() - 1.0).abs() > 1e-6) {
                return Err(Error::InvalidModel(format!("normal {bad} is not unit length")));
            }
        }
        if let Some(f) = &faces {
            if let Some(bad) = f.iter().position(|t| t.iter().any(|&i| i >= points.len())) {
                return Err(Error::InvalidModel(format!("face {bad} references a missing vertex")));
            }
        }
        let index = PointIndex::new(&points);
        Ok(Self {
            class_id,
            name: name.into(),
            points,
            normals,
            faces,
            diameter,
            index,
            spacing: OnceLock::new(),
            fitted_normals: OnceLock::new(),
        })
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn faces(&self) -> Option<&[[usize; 3]]> {
        self.faces.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// Largest distance of a model point from the object origin.
    pub fn radius(&self) -> f64 {
        self.points.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }

    /// Exact nearest model point (object frame) to `query`.
    pub fn nearest(&self, query: &Vector3<f64>) -> (usize, f64) {
        self.index.nearest(query).expect("model has at least two points")
    }

    pub fn index(&self) -> &PointIndex {
        &self.index
    }

    /// Mean distance from each point to its nearest distinct neighbor (cached).
    pub fn mean_spacing(&self) -> f64 {
        *self.spacing.get_or_init(|| {
            let total: f64 = self
                .points
                .iter()
                .map(|p| {
                    self.index
                        .k_nearest(p, 2)
                        .iter()
                        .map(|&(_, d)| d)
                        .find(|&d| d > 0.0)
                        .unwrap_or(0.0)
                        .sqrt()
                })
                .sum();
            total / self.points.len() as f64
        })
    }

    /// Per-point normals: the stored ones, else a plane fit over each point's
    /// 8 nearest neighbors, oriented away from the centroid (cached).
    pub fn point_normals(&self) -> &[Vector3<f64>] {
        if let Some(n) = &self.normals {
            return n;
        }
        self.fitted_normals.get_or_init(|| {
            let centroid = self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64;
            self.points
                .iter()
                .map(|p| {
                    let nbrs = self.index.k_nearest(p, 9);
                    let mean = nbrs.iter().map(|&(i, _)| self.points[i]).sum::<Vector3<f64>>() / nbrs.len() as f64;
                    let mut cov = Matrix3::zeros();
                    for &(i, _) in &nbrs {
                        let d = self.points[i] - mean;
                        cov += d * d.transpose();
                    }
                    let eig = SymmetricEigen::new(cov);
                    let k = eig.eigenvalues.imin();
                    let mut n: Vector3<f64> = eig.eigenvectors.column(k).into_owned();
                    if n.dot(&(p - centroid)) < 0.0 {
                        n = -n;
                    }
                    n
                })
                .collect()
        })
    }

    pub fn with_class_id(mut self, class_id: u16) -> Self {
        self.class_id = class_id;
        self
    }
}

/// Maximum pairwise Euclidean distance, by exhaustive scan.
pub fn model_diameter(points: &[Vector3<f64>]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InvalidModel(format!("diameter needs at least 2 points, got {}", points.len())));
    }
    let mut best = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max(dist2(a, b));
        }
    }
    Ok(best.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_corners() -> Vec<Vector3<f64>> {
        let mut v = Vec::new();
        for i in 0..8 {
            v.push(Vector3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64));
        }
        v
    }

    #[test]
    fn diameter_examples() {
        assert!((model_diameter(&cube_corners()).unwrap() - 3f64.sqrt()).abs() < 1e-15);
        let two = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.0, 0.07, 0.0)];
        assert!((model_diameter(&two).unwrap() - 0.07).abs() < 1e-15);
        assert!(matches!(model_diameter(&two[..1]), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn model_validation() {
        let pts = cube_corners();
        assert!(ObjectModel::new(0, "bg", pts.clone(), None, None).is_err());
        let bad_normals = vec![Vector3::new(0.0, 0.0, 2.0); 8];
        assert!(ObjectModel::new(1, "c", pts.clone(), Some(bad_normals), None).is_err());
        assert!(ObjectModel::new(1, "c", pts.clone(), None, Some(vec![[0, 1, 8]])).is_err());
        let m = ObjectModel::new(1, "c", pts, None, Some(vec![[0, 1, 2]])).unwrap();
        assert!((m.diameter() - 3f64.sqrt()).abs() < 1e-15);
        assert!((m.mean_spacing() - 1.0).abs() < 1e-15);
    }
}
