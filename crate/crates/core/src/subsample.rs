//! One-point-per-voxel subsampling.
//!
//! Each occupied voxel is represented by its original point closest to the
//! voxel centroid. Colors and intensity are averaged over the voxel; the label
//! is the majority over labeled points.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{ClassId, PointCloud};
use crate::error::{Error, Result};
use crate::spatial::{dist2, GridParams, VoxelGrid, VoxelKey};

#[derive(Debug, Clone, PartialEq)]
pub struct SubsampleResult {
    pub low_cloud: PointCloud,
    /// Full-cloud index of each low-cloud point.
    pub rep_index: Vec<usize>,
    pub voxel_of: Vec<VoxelKey>,
    pub grid: GridParams,
}

/// Sidecar describing how a low cloud relates to its source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampleMap {
    pub grid: GridParams,
    pub rep_index: Vec<usize>,
    pub voxel_of: Vec<VoxelKey>,
}

impl SubsampleResult {
    pub fn map(&self) -> SubsampleMap {
        SubsampleMap {
            grid: self.grid,
            rep_index: self.rep_index.clone(),
            voxel_of: self.voxel_of.clone(),
        }
    }

    pub fn from_parts(low_cloud: PointCloud, map: SubsampleMap) -> Result<Self> {
        for (what, len) in [
            ("rep_index", map.rep_index.len()),
            ("voxel_of", map.voxel_of.len()),
        ] {
            if len != low_cloud.len() {
                return Err(Error::LengthMismatch {
                    what,
                    expected: low_cloud.len(),
                    found: len,
                });
            }
        }
        Ok(SubsampleResult {
            low_cloud,
            rep_index: map.rep_index,
            voxel_of: map.voxel_of,
            grid: map.grid,
        })
    }
}

/// Subsamples on a grid anchored at the cloud's minimum corner.
pub fn voxel_subsample(cloud: &PointCloud, voxel_size: f64) -> Result<SubsampleResult> {
    let grid = GridParams::for_cloud(cloud, voxel_size)?;
    voxel_subsample_with(cloud, grid)
}

/// Majority label over labeled entries; ties go to the lowest id.
pub fn majority_label(labels: impl IntoIterator<Item = ClassId>) -> ClassId {
    let mut counts: BTreeMap<ClassId, usize> = BTreeMap::new();
    for l in labels.into_iter().filter(|l| l.is_labeled()) {
        *counts.entry(l).or_default() += 1;
    }
    let mut best = ClassId::UNLABELED;
    let mut best_count = 0;
    for (l, c) in counts {
        if c > best_count {
            best = l;
            best_count = c;
        }
    }
    best
}

struct Representative {
    index: usize,
    color: Option<[u8; 3]>,
    intensity: Option<f32>,
    label: Option<ClassId>,
}

fn represent(cloud: &PointCloud, bucket: &[usize]) -> Representative {
    let pos = cloud.positions();
    let n = bucket.len() as f64;
    let mut c = [0.0; 3];
    for &i in bucket {
        for a in 0..3 {
            c[a] += pos[i][a];
        }
    }
    let c = c.map(|v| v / n);
    let index = bucket
        .iter()
        .copied()
        .min_by(|&i, &j| {
            dist2(&pos[i], &c)
                .total_cmp(&dist2(&pos[j], &c))
                .then(i.cmp(&j))
        })
        .expect("buckets are non-empty");
    let color = cloud.colors().map(|colors| {
        let mut sum = [0u64; 3];
        for &i in bucket {
            for ch in 0..3 {
                sum[ch] += colors[i][ch] as u64;
            }
        }
        sum.map(|s| (s as f64 / n).round() as u8)
    });
    let intensity = cloud
        .intensity()
        .map(|v| (bucket.iter().map(|&i| v[i] as f64).sum::<f64>() / n) as f32);
    let label = cloud
        .labels()
        .map(|labels| majority_label(bucket.iter().map(|&i| labels[i])));
    Representative {
        index,
        color,
        intensity,
        label,
    }
}

/// Subsamples on explicit grid parameters. The low cloud is ordered by voxel key.
pub fn voxel_subsample_with(cloud: &PointCloud, grid: GridParams) -> Result<SubsampleResult> {
    let voxels = VoxelGrid::with_params(cloud, grid)?;
    let reps: Vec<Representative> = (0..voxels.len())
        .into_par_iter()
        .map(|b| represent(cloud, voxels.bucket(b)))
        .collect();

    let rep_index: Vec<usize> = reps.iter().map(|r| r.index).collect();
    let mut low = PointCloud::new(rep_index.iter().map(|&i| cloud.positions()[i]).collect())?;
    if cloud.colors().is_some() {
        low = low.with_colors(reps.iter().map(|r| r.color.unwrap()).collect())?;
    }
    if cloud.intensity().is_some() {
        low = low.with_intensity(reps.iter().map(|r| r.intensity.unwrap()).collect())?;
    }
    if cloud.labels().is_some() {
        low = low.with_labels(reps.iter().map(|r| r.label.unwrap()).collect())?;
    }
    Ok(SubsampleResult {
        low_cloud: low,
        rep_index,
        voxel_of: voxels.keys().to_vec(),
        grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn cube() -> PointCloud {
        let p = (0..8)
            .map(|i| [(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64])
            .collect();
        PointCloud::new(p).unwrap()
    }

    #[test]
    fn cube_keeps_lowest_index_corner() {
        let colors = (0..8).map(|i| [i * 10, 0, 255]).collect();
        let cloud = cube().with_colors(colors).unwrap();
        let sub = voxel_subsample(&cloud, 2.0).unwrap();
        assert_eq!(sub.low_cloud.len(), 1);
        assert_eq!(sub.rep_index, vec![0]);
        assert_eq!(sub.low_cloud.positions(), &[[0.0, 0.0, 0.0]]);
        // mean of 0,10,..,70 = 35
        assert_eq!(sub.low_cloud.colors().unwrap(), &[[35, 0, 255]]);
    }

    #[test]
    fn majority_and_ties() {
        assert_eq!(
            majority_label([ClassId(1), ClassId(1), ClassId(2)]),
            ClassId(1)
        );
        assert_eq!(majority_label([ClassId(2), ClassId(1)]), ClassId(1));
        assert_eq!(
            majority_label([ClassId::UNLABELED, ClassId::UNLABELED, ClassId(4)]),
            ClassId(4)
        );
        assert_eq!(majority_label([ClassId::UNLABELED]), ClassId::UNLABELED);
    }

    #[test]
    fn random_representatives_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 20_000;
        let pts: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                [
                    rng.gen_range(0.0..4.0),
                    rng.gen_range(0.0..4.0),
                    rng.gen_range(0.0..2.0),
                ]
            })
            .collect();
        let labels: Vec<ClassId> = (0..n).map(|_| ClassId(rng.gen_range(0..4))).collect();
        let cloud = PointCloud::new(pts.clone())
            .unwrap()
            .with_labels(labels.clone())
            .unwrap();
        let sub = voxel_subsample(&cloud, 0.5).unwrap();

        let mut min = pts[0];
        for p in &pts {
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
            }
        }
        let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in pts.iter().enumerate() {
            let k = [0, 1, 2].map(|a| ((p[a] - min[a]) / 0.5).floor() as i64);
            buckets.entry(k).or_default().push(i);
        }
        assert_eq!(sub.low_cloud.len(), buckets.len());
        for (j, key) in sub.voxel_of.iter().enumerate() {
            let bucket = &buckets[&[key.ix, key.iy, key.iz]];
            let mut c = [0.0; 3];
            for &i in bucket {
                for a in 0..3 {
                    c[a] += pts[i][a];
                }
            }
            let c = c.map(|v| v / bucket.len() as f64);
            let mut best = bucket[0];
            let mut best_d = f64::INFINITY;
            for &i in bucket {
                let d: f64 = (0..3).map(|a| (pts[i][a] - c[a]).powi(2)).sum();
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            assert_eq!(sub.rep_index[j], best);
            let mut counts = [0usize; 4];
            for &i in bucket {
                counts[labels[i].index()] += 1;
            }
            let max = *counts.iter().max().unwrap();
            let vote = counts.iter().position(|&c| c == max).unwrap();
            assert_eq!(sub.low_cloud.labels().unwrap()[j], ClassId(vote as u16));
        }
    }

    #[test]
    fn idempotent_at_fixed_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<[f64; 3]> = (0..3000)
            .map(|_| [rng.gen(), rng.gen(), rng.gen()])
            .collect();
        let colors = (0..3000)
            .map(|_| [rng.gen(), rng.gen(), rng.gen()])
            .collect();
        let cloud = PointCloud::new(pts).unwrap().with_colors(colors).unwrap();
        let sub = voxel_subsample(&cloud, 0.2).unwrap();
        assert!(sub.low_cloud.len() <= cloud.len());
        let again = voxel_subsample_with(&sub.low_cloud, sub.grid).unwrap();
        assert_eq!(again.low_cloud, sub.low_cloud);
        assert_eq!(again.voxel_of, sub.voxel_of);
        for (j, &key) in sub.voxel_of.iter().enumerate() {
            let (lo, hi) = sub.grid.bounds(key);
            let p = sub.low_cloud.positions()[j];
            for a in 0..3 {
                assert!(lo[a] <= p[a] && p[a] < hi[a]);
            }
        }
    }
}
