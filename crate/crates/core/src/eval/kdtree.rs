use std::collections::BinaryHeap;

use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum TransferError {
    #[error("estimated cloud is empty")]
    EmptyCloud,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("{points} points but {labels} labels")]
    Length { points: usize, labels: usize },
}

const LEAF: usize = 8;

/// Static 3-d tree over a point slice. Neighbor order is (squared distance,
/// point index), so queries agree exactly with a brute-force scan.
pub struct KdTree<'a> {
    points: &'a [[f64; 3]],
    idx: Vec<u32>,
    nodes: Vec<Node>,
}

enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(PartialEq)]
struct Cand(f64, u32);

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Cand {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&o.0).then(self.1.cmp(&o.1))
    }
}

pub fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let (x, y, z) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    x * x + y * y + z * z
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [[f64; 3]]) -> Self {
        let mut t = Self { points, idx: (0..points.len() as u32).collect(), nodes: Vec::new() };
        if !points.is_empty() {
            t.build_node(0, points.len());
        }
        t
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let pts = self.points;
        let slice = &self.idx[start..end];
        let axis = (0..3)
            .max_by(|&a, &b| {
                let ext = |ax: usize| {
                    let (lo, hi) = slice
                        .iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| (lo.min(pts[i as usize][ax]), hi.max(pts[i as usize][ax])));
                    hi - lo
                };
                ext(a).total_cmp(&ext(b))
            })
            .unwrap_or(0);
        let mid = start + (end - start) / 2;
        self.idx[start..end].select_nth_unstable_by(mid - start, |&a, &b| pts[a as usize][axis].total_cmp(&pts[b as usize][axis]));
        let value = pts[self.idx[mid] as usize][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// Up to `k` nearest points as (squared distance, index), nearest first.
    pub fn nearest(&self, q: &[f64; 3], k: usize) -> Vec<(f64, u32)> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if !self.nodes.is_empty() && k > 0 {
            self.search(0, q, k, &mut heap);
        }
        let mut out: Vec<(f64, u32)> = heap.into_iter().map(|c| (c.0, c.1)).collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out
    }

    fn search(&self, node: usize, q: &[f64; 3], k: usize, heap: &mut BinaryHeap<Cand>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.idx[start..end] {
                    let c = Cand(dist2(q, &self.points[i as usize]), i);
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("full heap") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, heap);
                // equal-distance points on the far side may still win on index
                if heap.len() < k || diff * diff <= heap.peek().expect("full heap").0 {
                    self.search(far, q, k, heap);
                }
            }
        }
    }
}

/// Majority label among `neighbors` (nearest first); ties go to the label
/// whose closest occurrence is nearest.
pub fn vote(neighbors: &[(f64, u32)], labels: &[i32]) -> i32 {
    let mut counts: Vec<(i32, usize, usize)> = Vec::new();
    for (rank, &(_, i)) in neighbors.iter().enumerate() {
        let l = labels[i as usize];
        match counts.iter_mut().find(|c| c.0 == l) {
            Some(c) => c.1 += 1,
            None => counts.push((l, 1, rank)),
        }
    }
    counts.iter().max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2))).map_or(-1, |c| c.0)
}

/// Label of every vertex: mode of the labels of its `k` nearest cloud points.
pub fn transfer_labels(cloud: &[[f64; 3]], labels: &[i32], vertices: &[[f64; 3]], k: usize) -> Result<Vec<i32>, TransferError> {
    if cloud.is_empty() {
        return Err(TransferError::EmptyCloud);
    }
    if k == 0 {
        return Err(TransferError::ZeroK);
    }
    if cloud.len() != labels.len() {
        return Err(TransferError::Length { points: cloud.len(), labels: labels.len() });
    }
    let tree = KdTree::build(cloud);
    Ok(vertices.iter().map(|v| vote(&tree.nearest(v, k), labels)).collect())
}
