use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const LEAF_SIZE: usize = 12;

/// Squared Euclidean distance.
#[inline]
pub fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[derive(Debug, Clone)]
struct Node {
    lo: [f64; 3],
    hi: [f64; 3],
    kind: NodeKind,
}

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf { start: usize, end: usize },
    Split { left: usize, right: usize },
}

/// Candidate ordered by `(distance, index)`.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    d2: f64,
    index: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then(self.index.cmp(&other.index))
    }
}

/// Exact k-nearest-neighbor index over 3D positions.
///
/// Results equal a brute-force scan sorted by `(squared distance, index)`;
/// equal distances resolve to the lower point index.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(points: &[[f64; 3]]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            let p = self.points[i];
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            lo,
            hi,
            kind: NodeKind::Leaf { start, end },
        });
        let extent = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
        if end - start <= LEAF_SIZE || extent.iter().all(|&e| e == 0.0) {
            return id;
        }
        let axis = (0..3)
            .max_by(|&a, &b| extent[a].total_cmp(&extent[b]).then(b.cmp(&a)))
            .unwrap();
        let mid = (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid, |&i, &j| {
            points[i][axis].total_cmp(&points[j][axis]).then(i.cmp(&j))
        });
        let left = self.build(start, start + mid);
        let right = self.build(start + mid, end);
        self.nodes[id].kind = NodeKind::Split { left, right };
        id
    }

    fn box_dist2(node: &Node, q: &[f64; 3]) -> f64 {
        let mut d = 0.0;
        for ((&v, &lo), &hi) in q.iter().zip(&node.lo).zip(&node.hi) {
            let excess = if v < lo {
                lo - v
            } else if v > hi {
                v - hi
            } else {
                0.0
            };
            d += excess * excess;
        }
        d
    }

    fn search(&self, node: usize, q: &[f64; 3], k: usize, heap: &mut BinaryHeap<Candidate>) {
        let n = &self.nodes[node];
        match n.kind {
            NodeKind::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let c = Candidate {
                        d2: dist2(&self.points[i], q),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            NodeKind::Split { left, right } => {
                let dl = Self::box_dist2(&self.nodes[left], q);
                let dr = Self::box_dist2(&self.nodes[right], q);
                let (first, d_first, second, d_second) = if dl <= dr {
                    (left, dl, right, dr)
                } else {
                    (right, dr, left, dl)
                };
                // a box at exactly the current worst distance may still hold a
                // lower-index tie, so only strictly farther boxes are pruned
                for (child, d) in [(first, d_first), (second, d_second)] {
                    if heap.len() < k || d <= heap.peek().unwrap().d2 {
                        self.search(child, q, k, heap);
                    }
                }
            }
        }
    }

    /// `k` nearest points as `(index, squared distance)`, ascending.
    pub fn knn_with_distances(&self, q: &[f64; 3], k: usize) -> Result<Vec<(usize, f64)>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if k > self.len() {
            return Err(Error::InvalidArgument(format!(
                "k = {k} exceeds the number of points ({})",
                self.len()
            )));
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, q, k, &mut heap);
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| (c.index, c.d2))
            .collect())
    }

    pub fn knn(&self, q: &[f64; 3], k: usize) -> Result<Vec<usize>> {
        Ok(self
            .knn_with_distances(q, k)?
            .into_iter()
            .map(|(i, _)| i)
            .collect())
    }

    pub fn nearest(&self, q: &[f64; 3]) -> Result<usize> {
        Ok(self.knn_with_distances(q, 1)?[0].0)
    }
}
