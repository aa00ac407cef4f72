//! Static 3D kd-tree for nearest-neighbor queries.

use crate::geometry::Point3;

const LEAF_SIZE: usize = 16;

/// Balanced tree stored implicitly: every subrange `[lo, hi)` larger than a
/// leaf is split at its midpoint along `axes[mid]`.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    index: Vec<usize>,
    /// Storage position of each original index.
    rank: Vec<usize>,
    axes: Vec<u8>,
}

impl KdTree {
    pub fn build(points: &[Point3]) -> Self {
        let mut entries: Vec<([f64; 3], usize)> =
            points.iter().enumerate().map(|(i, p)| ([p.x, p.y, p.z], i)).collect();
        let mut axes = vec![0u8; points.len()];
        split(&mut entries, &mut axes);
        let mut rank = vec![0; points.len()];
        for (k, e) in entries.iter().enumerate() {
            rank[e.1] = k;
        }
        Self {
            points: entries.iter().map(|e| e.0).collect(),
            index: entries.iter().map(|e| e.1).collect(),
            rank,
            axes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest point strictly closer than `max_dist`, as
    /// `(original index, squared distance)`. Equal distances resolve to the
    /// lowest original index.
    pub fn nearest_within(&self, q: &Point3, max_dist: f64) -> Option<(usize, f64)> {
        self.nearest_within_from(q, max_dist, None)
    }

    /// As [`KdTree::nearest_within`], starting the search from a candidate
    /// (original index) that is likely close to `q`. The answer is the same.
    pub fn nearest_within_from(&self, q: &Point3, max_dist: f64, hint: Option<usize>) -> Option<(usize, f64)> {
        let q = [q.x, q.y, q.z];
        let mut best = Best {
            index: usize::MAX,
            dist2: max_dist * max_dist,
        };
        if let Some(h) = hint.filter(|&h| h < self.rank.len()) {
            let d2 = dist2(&q, &self.points[self.rank[h]]);
            if d2 < best.dist2 {
                best = Best { index: h, dist2: d2 };
            }
        }
        self.search(&q, 0, self.points.len(), &mut best);
        (best.index != usize::MAX).then_some((best.index, best.dist2))
    }

    fn search(&self, q: &[f64; 3], lo: usize, hi: usize, best: &mut Best) {
        if hi - lo <= LEAF_SIZE {
            for k in lo..hi {
                self.consider(q, k, best);
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - self.points[mid][axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, best);
        self.consider(q, mid, best);
        if diff * diff <= best.dist2 {
            self.search(q, far.0, far.1, best);
        }
    }

    fn consider(&self, q: &[f64; 3], k: usize, best: &mut Best) {
        let d2 = dist2(q, &self.points[k]);
        let idx = self.index[k];
        if d2 < best.dist2 || (d2 == best.dist2 && idx < best.index && best.index != usize::MAX) {
            best.dist2 = d2;
            best.index = idx;
        }
    }
}

fn dist2(q: &[f64; 3], p: &[f64; 3]) -> f64 {
    (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2)
}

struct Best {
    index: usize,
    dist2: f64,
}

fn split(entries: &mut [([f64; 3], usize)], axes: &mut [u8]) {
    let n = entries.len();
    if n <= LEAF_SIZE {
        return;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for (p, _) in entries.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0);
    let mid = n / 2;
    entries.select_nth_unstable_by(mid, |a, b| a.0[axis].total_cmp(&b.0[axis]).then(a.1.cmp(&b.1)));
    axes[mid] = axis as u8;
    let (left, rest) = entries.split_at_mut(mid);
    let (left_axes, rest_axes) = axes.split_at_mut(mid);
    split(left, left_axes);
    split(&mut rest[1..], &mut rest_axes[1..]);
}
