//! Exact nearest-neighbor search over model point sets.
//!
//! Both backends compute squared distances with the same expression and break
//! ties toward the lowest point index, so they agree on the minimizer exactly.

use nalgebra::Vector3;

/// Point sets up to this size are searched by linear scan.
pub const BRUTE_FORCE_LIMIT: usize = 2000;

const LEAF_SIZE: usize = 8;

#[inline]
pub fn dist2(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

/// Linear scan; returns `(index, squared distance)`.
pub fn nearest_brute_force(points: &[Vector3<f64>], query: &Vector3<f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d = dist2(p, query);
        match best {
            Some((_, b)) if d >= b => {}
            _ => best = Some((i, d)),
        }
    }
    best
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn build(points: &[Vector3<f64>]) -> Self {
        let mut tree = KdTree { points: points.to_vec(), order: (0..points.len()).collect(), nodes: Vec::new() };
        if !points.is_empty() {
            tree.build_node(0, points.len());
        }
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap();
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end]
            .select_nth_unstable_by(mid - start, |&i, &j| points[i][axis].total_cmp(&points[j][axis]));
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn nearest(&self, query: &Vector3<f64>) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, query, &mut best);
        Some(best)
    }

    fn search(&self, node: usize, q: &Vector3<f64>, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist2(&self.points[i], q);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                // points on the far side are at least diff^2 away; equality can
                // still hide a lower-index tie
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

/// Nearest-neighbor index that picks the backend by point count.
#[derive(Debug, Clone)]
pub enum PointIndex {
    BruteForce(Vec<Vector3<f64>>),
    Tree(KdTree),
}

impl PointIndex {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        if points.len() <= BRUTE_FORCE_LIMIT {
            PointIndex::BruteForce(points.to_vec())
        } else {
            PointIndex::Tree(KdTree::build(points))
        }
    }

    pub fn nearest(&self, query: &Vector3<f64>) -> Option<(usize, f64)> {
        match self {
            PointIndex::BruteForce(points) => nearest_brute_force(points, query),
            PointIndex::Tree(tree) => tree.nearest(query),
        }
    }

    /// The `k` nearest points (including any at distance zero), ascending.
    pub fn k_nearest(&self, query: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        let points = match self {
            PointIndex::BruteForce(p) => p.as_slice(),
            PointIndex::Tree(t) => t.points.as_slice(),
        };
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        if k == 0 {
            return best;
        }
        for (i, p) in points.iter().enumerate() {
            let d = dist2(p, query);
            if best.len() == k && d >= best[k - 1].1 {
                continue;
            }
            let at = best.partition_point(|&(_, b)| b <= d);
            best.insert(at, (i, d));
            best.truncate(k);
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tree_agrees_with_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vector3<f64>> = (0..3000)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let tree = KdTree::build(&pts);
        for _ in 0..500 {
            let q = Vector3::new(rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2));
            assert_eq!(tree.nearest(&q), nearest_brute_force(&pts, &q));
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        // lattice with many duplicated points and equidistant queries
        let mut pts = Vec::new();
        for _ in 0..3 {
            for i in 0..10 {
                for j in 0..10 {
                    for k in 0..10 {
                        pts.push(Vector3::new(i as f64, j as f64, k as f64));
                    }
                }
            }
        }
        let tree = KdTree::build(&pts);
        for q in [Vector3::new(0.5, 0.5, 0.5), Vector3::new(3.0, 4.0, 5.0), Vector3::new(9.5, 0.0, 2.5)] {
            let b = nearest_brute_force(&pts, &q).unwrap();
            assert_eq!(tree.nearest(&q).unwrap(), b);
            assert!(b.0 < 1000);
        }
    }

    #[test]
    fn empty_sets() {
        assert!(nearest_brute_force(&[], &Vector3::zeros()).is_none());
        assert!(KdTree::build(&[]).nearest(&Vector3::zeros()).is_none());
    }
}
