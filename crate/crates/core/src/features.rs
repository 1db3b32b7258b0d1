//! Per-point geometric descriptors from neighborhood covariance.
//!
//! For the `k` nearest neighbors of a point (the point included), the position
//! covariance has eigenvalues `l1 >= l2 >= l3 >= 0` with eigenvectors
//! `e1, e2, e3`:
//!
//! | feature     | value                 |
//! |-------------|-----------------------|
//! | linearity   | `(l1 - l2) / l1`      |
//! | planarity   | `(l2 - l3) / l1`      |
//! | scattering  | `l3 / l1`             |
//! | verticality | `1 - abs(e3 . z)`     |
//!
//! followed by the elevation above the lowest point and, when the cloud has
//! colors, red/green/blue scaled to `[0, 1]`. All four shape features are zero
//! when `l1 < 1e-12` (coincident neighbors).

use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::spatial::KdTree;

pub const SHAPE_FEATURES: [&str; 4] = ["linearity", "planarity", "scattering", "verticality"];

/// Below this largest eigenvalue (m^2) the neighborhood counts as a single point.
pub const DEGENERATE_EIGENVALUE: f64 = 1e-12;

/// Row-major per-point feature table.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    names: Vec<String>,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, data: Vec<f64>) -> Result<Self> {
        if names.is_empty() {
            if data.is_empty() {
                return Ok(FeatureMatrix { names, data });
            }
            return Err(Error::FeatureMismatch(
                "feature table has no columns".into(),
            ));
        }
        if !data.len().is_multiple_of(names.len()) {
            return Err(Error::FeatureMismatch(format!(
                "{} values do not fill rows of {} features",
                data.len(),
                names.len()
            )));
        }
        Ok(FeatureMatrix { names, data })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn cols(&self) -> usize {
        self.names.len()
    }

    pub fn rows(&self) -> usize {
        if self.names.is_empty() {
            0
        } else {
            self.data.len() / self.names.len()
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some((0..self.rows()).map(|i| self.row(i)[j]).collect())
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols());
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            names: self.names.clone(),
            data,
        }
    }

    /// Stacks tables with identical columns.
    pub fn vstack(parts: &[FeatureMatrix]) -> Result<FeatureMatrix> {
        let Some(first) = parts.first() else {
            return Ok(FeatureMatrix {
                names: Vec::new(),
                data: Vec::new(),
            });
        };
        let mut data = Vec::new();
        for p in parts {
            if p.names != first.names {
                return Err(Error::FeatureMismatch(format!(
                    "cannot stack {:?} onto {:?}",
                    p.names, first.names
                )));
            }
            data.extend_from_slice(&p.data);
        }
        Ok(FeatureMatrix {
            names: first.names.clone(),
            data,
        })
    }
}

/// Symmetric 3x3 eigen-decomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and matching unit eigenvectors.
/// Vector signs are fixed so the z component is non-negative (x, then y,
/// when z is zero).
pub fn symmetric_eigen3(m: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut a = m;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _sweep in 0..64 {
        if a[0][1] == 0.0 && a[0][2] == 0.0 && a[1][2] == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = a[p][q];
            if apq == 0.0 {
                continue;
            }
            let g = 100.0 * apq.abs();
            if a[p][p].abs() + g == a[p][p].abs() && a[q][q].abs() + g == a[q][q].abs() {
                a[p][q] = 0.0;
                a[q][p] = 0.0;
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            a[p][p] -= t * apq;
            a[q][q] += t * apq;
            a[p][q] = 0.0;
            a[q][p] = 0.0;
            let r = 3 - p - q;
            let (arp, arq) = (a[r][p], a[r][q]);
            a[r][p] = c * arp - s * arq;
            a[p][r] = a[r][p];
            a[r][q] = s * arp + c * arq;
            a[q][r] = a[r][q];
            for row in v.iter_mut() {
                let (vp, vq) = (row[p], row[q]);
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]).then(i.cmp(&j)));
    let values = order.map(|i| a[i][i]);
    let vectors = order.map(|i| {
        let mut e = [v[0][i], v[1][i], v[2][i]];
        let flip = if e[2].abs() > 1e-12 {
            e[2] < 0.0
        } else if e[0].abs() > 1e-12 {
            e[0] < 0.0
        } else {
            e[1] < 0.0
        };
        if flip {
            e = e.map(|c| -c);
        }
        e
    });
    (values, vectors)
}

/// Covariance (normalized by the count) of the given positions.
pub fn covariance(points: impl Iterator<Item = [f64; 3]> + Clone) -> [[f64; 3]; 3] {
    let mut n = 0.0;
    let mut mean = [0.0; 3];
    for p in points.clone() {
        n += 1.0;
        for a in 0..3 {
            mean[a] += p[a];
        }
    }
    let mean = mean.map(|m| m / n);
    let mut cov = [[0.0; 3]; 3];
    for p in points {
        let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
        for r in 0..3 {
            for c in r..3 {
                cov[r][c] += d[r] * d[c];
            }
        }
    }
    std::array::from_fn(|r| std::array::from_fn(|c| cov[r.min(c)][r.max(c)] / n))
}

/// Linearity, planarity, scattering and verticality of one neighborhood.
pub fn shape_features(cov: [[f64; 3]; 3]) -> [f64; 4] {
    let (l, e) = symmetric_eigen3(cov);
    let l = l.map(|v| v.max(0.0));
    if l[0] < DEGENERATE_EIGENVALUE {
        return [0.0; 4];
    }
    [
        (l[0] - l[1]) / l[0],
        (l[1] - l[2]) / l[0],
        l[2] / l[0],
        (1.0 - e[2][2].abs()).clamp(0.0, 1.0),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureParams {
    pub k: usize,
    /// Height subtracted to get elevation; the cloud's own minimum z if unset.
    pub elevation_ref: Option<f64>,
}

impl FeatureParams {
    pub fn new(k: usize) -> Self {
        FeatureParams {
            k,
            elevation_ref: None,
        }
    }
}

pub fn feature_names(with_color: bool) -> Vec<String> {
    let mut names: Vec<String> = SHAPE_FEATURES.iter().map(|s| s.to_string()).collect();
    names.push("elevation".into());
    if with_color {
        names.extend(["red", "green", "blue"].map(String::from));
    }
    names
}

pub fn eigen_features(cloud: &PointCloud, k: usize) -> Result<FeatureMatrix> {
    eigen_features_with(cloud, FeatureParams::new(k))
}

pub fn eigen_features_with(cloud: &PointCloud, params: FeatureParams) -> Result<FeatureMatrix> {
    let k = params.k;
    if k < 3 {
        return Err(Error::InvalidArgument(format!(
            "k must be at least 3, got {k}"
        )));
    }
    if cloud.len() < k {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the number of points ({})",
            cloud.len()
        )));
    }
    let positions = cloud.positions();
    let zmin = params
        .elevation_ref
        .unwrap_or_else(|| positions.iter().map(|p| p[2]).fold(f64::INFINITY, f64::min));
    let tree = KdTree::new(positions);
    let names = feature_names(cloud.colors().is_some());
    let cols = names.len();
    let rows: Vec<Vec<f64>> = (0..cloud.len())
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let nbrs = tree.knn(&positions[i], k)?;
            let cov = covariance(nbrs.iter().map(|&j| positions[j]));
            let mut row = Vec::with_capacity(cols);
            row.extend_from_slice(&shape_features(cov));
            row.push(positions[i][2] - zmin);
            if let Some(colors) = cloud.colors() {
                row.extend(colors[i].iter().map(|&c| c as f64 / 255.0));
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    FeatureMatrix::new(names, rows.concat())
}
