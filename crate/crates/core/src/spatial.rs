//! Static kd-tree over 3D points for nearest-neighbor queries.

use crate::geometry::Pt3;

#[derive(Debug, Clone)]
struct Node {
    point: usize,
    axis: u8,
    left: Option<u32>,
    right: Option<u32>,
}

/// Kd-tree over a borrowed point slice. Nearest-neighbor ties resolve to the
/// lowest point index.
#[derive(Debug, Clone)]
pub struct KdTree<'a> {
    points: &'a [Pt3],
    nodes: Vec<Node>,
    root: Option<u32>,
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [Pt3]) -> Self {
        let mut idx: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = Self::build_rec(points, &mut idx, &mut nodes);
        KdTree { points, nodes, root }
    }

    fn build_rec(points: &[Pt3], idx: &mut [usize], nodes: &mut Vec<Node>) -> Option<u32> {
        if idx.is_empty() {
            return None;
        }
        // split on the widest axis
        let mut lo = points[idx[0]].coords;
        let mut hi = lo;
        for &i in idx.iter() {
            lo = lo.inf(&points[i].coords);
            hi = hi.sup(&points[i].coords);
        }
        let ext = hi - lo;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| {
            points[a][axis]
                .partial_cmp(&points[b][axis])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let point = idx[mid];
        let slot = nodes.len();
        nodes.push(Node {
            point,
            axis: axis as u8,
            left: None,
            right: None,
        });
        let (l, r) = idx.split_at_mut(mid);
        let left = Self::build_rec(points, l, nodes);
        let right = Self::build_rec(points, &mut r[1..], nodes);
        nodes[slot].left = left;
        nodes[slot].right = right;
        Some(slot as u32)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of and squared distance to the nearest point.
    pub fn nearest(&self, q: &Pt3) -> Option<(usize, f64)> {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(self.root, q, &mut best);
        (best.0 != usize::MAX).then_some(best)
    }

    fn search(&self, node: Option<u32>, q: &Pt3, best: &mut (usize, f64)) {
        let Some(n) = node else { return };
        let node = &self.nodes[n as usize];
        let p = &self.points[node.point];
        let d2 = (p - q).norm_squared();
        if d2 < best.1 || (d2 == best.1 && node.point < best.0) {
            *best = (node.point, d2);
        }
        let axis = node.axis as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.search(near, q, best);
        // `<=` keeps equal-distance candidates on the far side reachable
        if diff * diff <= best.1 {
            self.search(far, q, best);
        }
    }
}
