//! Label transfer between resolutions.
//!
//! * [`voxel_project`]: every full-resolution point takes the label of the
//!   low-resolution point that represents its voxel.
//! * [`closest_point_project`]: every target point takes the label of its
//!   nearest labeled point.
//! * [`compose_final`]: merges the initial segmentation with the per-class
//!   second segmentations into one labeling over the original classes.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use crate::cloud::{ClassId, MergedSchema, PointCloud};
use crate::error::{Error, Result};
use crate::spatial::KdTree;
use crate::subsample::SubsampleResult;

pub fn voxel_project(
    low_labels: &[ClassId],
    sub: &SubsampleResult,
    full_cloud: &PointCloud,
) -> Result<Vec<ClassId>> {
    if low_labels.len() != sub.low_cloud.len() {
        return Err(Error::LengthMismatch {
            what: "low-resolution labels",
            expected: sub.low_cloud.len(),
            found: low_labels.len(),
        });
    }
    let positions = full_cloud.positions();
    for (j, (&rep, key)) in sub.rep_index.iter().zip(&sub.voxel_of).enumerate() {
        if rep >= positions.len() || sub.grid.key(&positions[rep]) != *key {
            return Err(Error::GridMismatch(format!(
                "representative {j} does not lie in its recorded voxel of this cloud"
            )));
        }
    }
    let lookup: HashMap<_, _> = sub
        .voxel_of
        .iter()
        .enumerate()
        .map(|(j, &k)| (k, j))
        .collect();
    positions
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            lookup
                .get(&sub.grid.key(p))
                .map(|&j| low_labels[j])
                .ok_or_else(|| {
                    Error::GridMismatch(format!(
                        "point {i} falls in a voxel with no representative"
                    ))
                })
        })
        .collect()
}

pub fn closest_point_project(partial: &PointCloud, targets: &PointCloud) -> Result<Vec<ClassId>> {
    if partial.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot project from an empty cloud".into(),
        ));
    }
    let labels = partial.labels().ok_or(Error::MissingLabels)?;
    let tree = KdTree::new(partial.positions());
    targets
        .positions()
        .par_iter()
        .map(|p| tree.nearest(p).map(|j| labels[j]))
        .collect()
}

/// Indices (ascending) of the points labeled `class`.
pub fn gather_class(labels: &[ClassId], class: ClassId) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter_map(|(i, &l)| (l == class).then_some(i))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Composition {
    pub labels: Vec<ClassId>,
    /// Points of each concatenated class left unlabeled by stage two and
    /// assigned the class's base Low class instead.
    pub fallback: BTreeMap<ClassId, usize>,
}

/// Combines stage-one labels (merged ids, full cloud) with stage-two labels
/// (original ids).
///
/// `stage_two[c]` lists labels for the points whose initial label is the
/// concatenated class `c`, in ascending point order (see [`gather_class`]).
pub fn compose_final(
    initial_full: &[ClassId],
    stage_two: &BTreeMap<ClassId, Vec<ClassId>>,
    merged: &MergedSchema,
) -> Result<Composition> {
    for &c in stage_two.keys() {
        if c.index() >= merged.len() || !merged.is_concatenated(c) {
            return Err(Error::Coverage(format!(
                "stage-two labels given for {c}, which is not a concatenated class"
            )));
        }
    }
    let mut cursors: BTreeMap<ClassId, usize> = stage_two.keys().map(|&c| (c, 0)).collect();
    let mut fallback: BTreeMap<ClassId, usize> = BTreeMap::new();
    let mut out = Vec::with_capacity(initial_full.len());
    for &m in initial_full {
        if !m.is_labeled() {
            out.push(m);
            continue;
        }
        if m.index() >= merged.len() {
            return Err(Error::LabelOutOfDomain(m));
        }
        if !merged.is_concatenated(m) {
            out.push(merged.base(m));
            continue;
        }
        let class = &merged.class(m).name;
        let labels = stage_two.get(&m).ok_or_else(|| {
            Error::Coverage(format!(
                "no stage-two labels for concatenated class {class}"
            ))
        })?;
        let cursor = cursors.get_mut(&m).unwrap();
        let l = *labels.get(*cursor).ok_or_else(|| {
            Error::Coverage(format!(
                "stage-two labels for {class} cover {} points, more are labeled {class}",
                labels.len()
            ))
        })?;
        *cursor += 1;
        if !l.is_labeled() {
            *fallback.entry(m).or_default() += 1;
            out.push(merged.base(m));
        } else if merged.members(m).contains(&l) {
            out.push(l);
        } else {
            return Err(Error::NotAMember {
                label: l,
                class: class.clone(),
            });
        }
    }
    for (c, used) in cursors {
        if used != stage_two[&c].len() {
            return Err(Error::Coverage(format!(
                "{} stage-two labels for {} but only {used} points carry that class",
                stage_two[&c].len(),
                merged.class(c).name
            )));
        }
    }
    Ok(Composition {
        labels: out,
        fallback,
    })
}
