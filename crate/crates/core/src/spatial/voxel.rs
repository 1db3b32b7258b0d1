use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// Integer voxel coordinates; ordered lexicographically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VoxelKey {
    pub ix: i64,
    pub iy: i64,
    pub iz: i64,
}

impl VoxelKey {
    pub fn new(ix: i64, iy: i64, iz: i64) -> Self {
        VoxelKey { ix, iy, iz }
    }
}

/// Origin and edge length of a voxel grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub origin: [f64; 3],
    pub voxel_size: f64,
}

impl GridParams {
    pub fn new(origin: [f64; 3], voxel_size: f64) -> Result<Self> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "voxel size must be positive, got {voxel_size}"
            )));
        }
        Ok(GridParams { origin, voxel_size })
    }

    /// Grid anchored at the cloud's minimum corner.
    pub fn for_cloud(cloud: &PointCloud, voxel_size: f64) -> Result<Self> {
        let (lo, _) = cloud
            .bounds()
            .ok_or_else(|| Error::InvalidArgument("cannot grid an empty cloud".into()))?;
        GridParams::new(lo, voxel_size)
    }

    /// `floor((p - origin) / size)` per axis; upper faces belong to the next voxel.
    #[inline]
    pub fn key(&self, p: &[f64; 3]) -> VoxelKey {
        let f = |a: usize| ((p[a] - self.origin[a]) / self.voxel_size).floor() as i64;
        VoxelKey::new(f(0), f(1), f(2))
    }

    /// Half-open bounds `[lo, hi)` of a voxel.
    pub fn bounds(&self, key: VoxelKey) -> ([f64; 3], [f64; 3]) {
        let k = [key.ix, key.iy, key.iz];
        let lo: [f64; 3] = std::array::from_fn(|a| self.origin[a] + k[a] as f64 * self.voxel_size);
        let hi: [f64; 3] = std::array::from_fn(|a| lo[a] + self.voxel_size);
        (lo, hi)
    }
}

/// Partition of a cloud's points into occupied voxels.
///
/// Buckets are ordered by key and each bucket lists its point indices in
/// ascending order, so the layout does not depend on input order or on the
/// thread count.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    params: GridParams,
    keys: Vec<VoxelKey>,
    starts: Vec<usize>,
    indices: Vec<usize>,
    lookup: HashMap<VoxelKey, usize>,
}

pub fn build_voxel_grid(cloud: &PointCloud, voxel_size: f64) -> Result<VoxelGrid> {
    let params = GridParams::for_cloud(cloud, voxel_size)?;
    VoxelGrid::with_params(cloud, params)
}

impl VoxelGrid {
    pub fn with_params(cloud: &PointCloud, params: GridParams) -> Result<Self> {
        if cloud.is_empty() {
            return Err(Error::InvalidArgument("cannot grid an empty cloud".into()));
        }
        let mut keyed: Vec<(VoxelKey, usize)> = cloud
            .positions()
            .par_iter()
            .enumerate()
            .map(|(i, p)| (params.key(p), i))
            .collect();
        keyed.par_sort_unstable();

        let mut keys = Vec::new();
        let mut starts = Vec::new();
        let mut indices = Vec::with_capacity(keyed.len());
        for (i, (key, idx)) in keyed.into_iter().enumerate() {
            if keys.last() != Some(&key) {
                keys.push(key);
                starts.push(i);
            }
            indices.push(idx);
        }
        starts.push(indices.len());
        let lookup = keys.iter().enumerate().map(|(b, &k)| (k, b)).collect();
        Ok(VoxelGrid {
            params,
            keys,
            starts,
            indices,
            lookup,
        })
    }

    pub fn params(&self) -> GridParams {
        self.params
    }

    pub fn voxel_size(&self) -> f64 {
        self.params.voxel_size
    }

    pub fn origin(&self) -> [f64; 3] {
        self.params.origin
    }

    /// Number of occupied voxels.
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[VoxelKey] {
        &self.keys
    }

    pub fn bucket(&self, b: usize) -> &[usize] {
        &self.indices[self.starts[b]..self.starts[b + 1]]
    }

    pub fn get(&self, key: &VoxelKey) -> Option<&[usize]> {
        self.lookup.get(key).map(|&b| self.bucket(b))
    }

    pub fn iter(&self) -> impl Iterator<Item = (VoxelKey, &[usize])> + '_ {
        (0..self.len()).map(move |b| (self.keys[b], self.bucket(b)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn cube_corners() -> PointCloud {
        let mut p = Vec::new();
        for i in 0..8 {
            p.push([(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64]);
        }
        PointCloud::new(p).unwrap()
    }

    #[test]
    fn cube_in_one_voxel() {
        let grid = build_voxel_grid(&cube_corners(), 2.0).unwrap();
        assert_eq!(grid.len(), 1);
        assert_eq!(grid.bucket(0), &[0, 1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(grid.keys()[0], VoxelKey::new(0, 0, 0));
        assert_eq!(grid.origin(), [0.0; 3]);
    }

    #[test]
    fn floor_arithmetic() {
        let params = GridParams::new([0.0; 3], 0.5).unwrap();
        assert_eq!(params.key(&[0.25, 0.51, 0.99]), VoxelKey::new(0, 1, 1));
        // upper face belongs to the next voxel
        assert_eq!(params.key(&[0.5, 1.0, -0.0]), VoxelKey::new(1, 2, 0));
        assert_eq!(params.key(&[-0.01, 0.0, 0.0]), VoxelKey::new(-1, 0, 0));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(build_voxel_grid(&cube_corners(), 0.0).is_err());
        assert!(build_voxel_grid(&cube_corners(), -1.0).is_err());
        assert!(build_voxel_grid(&PointCloud::default(), 1.0).is_err());
    }

    #[test]
    fn random_assignment_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<[f64; 3]> = (0..10_000)
            .map(|_| {
                [
                    rng.gen_range(0.0..10.0),
                    rng.gen_range(0.0..10.0),
                    rng.gen_range(0.0..10.0),
                ]
            })
            .collect();
        let cloud = PointCloud::new(pts.clone()).unwrap();
        let grid = build_voxel_grid(&cloud, 1.0).unwrap();
        let mut min = pts[0];
        for p in &pts {
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
            }
        }
        let mut expected: BTreeMap<(i64, i64, i64), Vec<usize>> = BTreeMap::new();
        for (i, p) in pts.iter().enumerate() {
            let k = (
                ((p[0] - min[0]) / 1.0).floor() as i64,
                ((p[1] - min[1]) / 1.0).floor() as i64,
                ((p[2] - min[2]) / 1.0).floor() as i64,
            );
            expected.entry(k).or_default().push(i);
        }
        assert_eq!(grid.len(), expected.len());
        for (key, bucket) in grid.iter() {
            assert_eq!(expected[&(key.ix, key.iy, key.iz)], bucket);
        }
    }

    #[test]
    fn order_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<[f64; 3]> = (0..500)
            .map(|_| {
                [
                    rng.gen_range(0.0..3.0),
                    rng.gen_range(0.0..3.0),
                    rng.gen_range(0.0..3.0),
                ]
            })
            .collect();
        let rev: Vec<[f64; 3]> = pts.iter().rev().copied().collect();
        let a = build_voxel_grid(&PointCloud::new(pts.clone()).unwrap(), 0.7).unwrap();
        let b = build_voxel_grid(&PointCloud::new(rev).unwrap(), 0.7).unwrap();
        assert_eq!(a.keys(), b.keys());
        for (key, bucket) in a.iter() {
            let mut mapped: Vec<usize> = b
                .get(&key)
                .unwrap()
                .iter()
                .map(|&i| pts.len() - 1 - i)
                .collect();
            mapped.sort_unstable();
            assert_eq!(mapped, bucket);
        }
    }
}
