use rustc_hash::FxHashMap;

use nalgebra::Vector3;

use crate::cloud::PointCloud;
use crate::geometry::Point3;

pub type VoxelKey = [i64; 3];

pub fn voxel_key(p: &Point3, voxel_size: f64) -> VoxelKey {
    [
        floor_i64(p.x / voxel_size),
        floor_i64(p.y / voxel_size),
        floor_i64(p.z / voxel_size),
    ]
}

/// `x.floor() as i64` without the libm call that `floor` compiles to on
/// baseline x86-64.
fn floor_i64(x: f64) -> i64 {
    let t = x as i64;
    if x < t as f64 {
        t.saturating_sub(1)
    } else {
        t
    }
}

/// Running statistics of the points that fell in one voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelCell {
    sum: Vector3<f64>,
    count: u64,
    min: Vector3<f64>,
    max: Vector3<f64>,
}

impl VoxelCell {
    fn single(p: &Point3) -> Self {
        Self {
            sum: *p,
            count: 1,
            min: *p,
            max: *p,
        }
    }

    fn add(&mut self, p: &Point3) {
        self.sum += p;
        self.count += 1;
        for a in 0..3 {
            self.min[a] = self.min[a].min(p[a]);
            self.max[a] = self.max[a].max(p[a]);
        }
    }

    pub(crate) fn merge(&mut self, other: &VoxelCell) {
        self.sum += other.sum;
        self.count += other.count;
        self.min = self.min.inf(&other.min);
        self.max = self.max.sup(&other.max);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Centroid, clamped to the bounding box of the contributing points so
    /// rounding can never push it into a neighboring voxel.
    pub fn centroid(&self) -> Point3 {
        let c = self.sum / self.count as f64;
        c.sup(&self.min).inf(&self.max)
    }
}

pub(crate) type CellMap = FxHashMap<VoxelKey, VoxelCell>;

/// Cells of `points` in order of first occupancy.
pub(crate) type Cells = Vec<(VoxelKey, VoxelCell)>;

pub(crate) fn accumulate<'a>(points: impl IntoIterator<Item = &'a Point3>, voxel_size: f64) -> Cells {
    // Consecutive points (image rows) usually share a voxel, so the last
    // cell is checked before the hash lookup.
    let mut slots: FxHashMap<VoxelKey, usize> = FxHashMap::default();
    let mut cells = Cells::new();
    let mut last: Option<(VoxelKey, usize)> = None;
    for p in points {
        let key = voxel_key(p, voxel_size);
        let slot = match last {
            Some((k, s)) if k == key => Some(s),
            _ => slots.get(&key).copied(),
        };
        let slot = match slot {
            Some(s) => {
                cells[s].1.add(p);
                s
            }
            None => {
                cells.push((key, VoxelCell::single(p)));
                slots.insert(key, cells.len() - 1);
                cells.len() - 1
            }
        };
        last = Some((key, slot));
    }
    cells
}

/// Centroids of `cells` ordered by voxel index.
pub(crate) fn sorted_centroids<'a>(cells: impl IntoIterator<Item = (&'a VoxelKey, &'a VoxelCell)>) -> Vec<Point3> {
    let mut keyed: Vec<(VoxelKey, Point3)> = cells.into_iter().map(|(k, c)| (*k, c.centroid())).collect();
    keyed.sort_unstable_by_key(|e| e.0);
    keyed.into_iter().map(|e| e.1).collect()
}

pub(crate) fn sorted_cell_centroids(cells: &Cells) -> Vec<Point3> {
    sorted_centroids(cells.iter().map(|(k, c)| (k, c)))
}

/// One centroid per occupied voxel, ordered by voxel index. Colors and pixel
/// provenance are dropped.
///
/// # Panics
/// If `voxel_size` is not positive.
pub fn voxel_downsample(cloud: &PointCloud, voxel_size: f64) -> PointCloud {
    assert!(voxel_size > 0.0, "voxel_size must be positive");
    let cells = accumulate(cloud.points(), voxel_size);
    PointCloud::from_points(sorted_cell_centroids(&cells)).expect("centroids of finite points are finite")
}
