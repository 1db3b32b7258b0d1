//! Two-stage multi-resolution segmentation.
//!
//! 1. Subsample the cloud on a voxel grid and classify it over the merged
//!    class space, where every High class is folded into a Low class.
//! 2. Voxel-project those labels onto the full cloud.
//! 3. For every concatenated class, take the full-resolution points that
//!    carry it and classify them again, at full resolution, over the
//!    class's members only.
//! 4. Compose both results into a labeling over the original classes.
//!
//! Only points assigned to concatenated classes are ever processed at full
//! resolution; [`RunStats`] records how many.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;

use crate::classifier::{train, ClassifierModel, StageClassifier, StageOutput};
use crate::cloud::{map_labels, ClassId, MergedSchema, PointCloud};
use crate::error::{Error, Result};
use crate::features::{eigen_features_with, FeatureMatrix, FeatureParams};
use crate::io::PipelineConfig;
use crate::projection::{closest_point_project, compose_final, gather_class, voxel_project};
use crate::subsample::voxel_subsample;

/// Per-class second-stage classifiers, keyed by merged class id.
pub type StageTwo<'a> = BTreeMap<ClassId, &'a dyn StageClassifier>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTwoStats {
    pub class: String,
    pub points: usize,
    pub feature_rows: usize,
    pub fallback_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStats {
    pub seed: u64,
    pub voxel_size: f64,
    pub k: usize,
    pub full_points: usize,
    pub low_points: usize,
    pub low_res_feature_rows: usize,
    /// Rows of features computed at full resolution, over all stage-two jobs.
    pub full_res_feature_rows: usize,
    pub stage_two_points: usize,
    pub stage_two: Vec<StageTwoStats>,
    pub wall_time_ms: BTreeMap<String, f64>,
    /// Rough size of the buffers live during each stage.
    pub working_set_bytes: BTreeMap<String, u64>,
}

impl RunStats {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Final labels over the original schema.
    pub labels: Vec<ClassId>,
    /// Stage-one labels (merged ids) projected onto the full cloud.
    pub initial: Vec<ClassId>,
    pub stats: RunStats,
}

fn lowest_z(cloud: &PointCloud) -> f64 {
    cloud
        .positions()
        .iter()
        .map(|p| p[2])
        .fold(f64::INFINITY, f64::min)
}

/// Features for `cloud` with elevation measured from `zref`.
fn features(cloud: &PointCloud, k: usize, zref: f64) -> Result<FeatureMatrix> {
    eigen_features_with(
        cloud,
        FeatureParams {
            k: k.min(cloud.len()),
            elevation_ref: Some(zref),
        },
    )
}

fn resolve_output(output: StageOutput, input: &PointCloud) -> Result<Vec<ClassId>> {
    let labels = match output {
        StageOutput::Aligned(p) => p.labels,
        StageOutput::Resampled(partial) => closest_point_project(&partial, input)?,
    };
    if labels.len() != input.len() {
        return Err(Error::LengthMismatch {
            what: "stage labels",
            expected: input.len(),
            found: labels.len(),
        });
    }
    Ok(labels)
}

pub fn run_pipeline(
    full_cloud: &PointCloud,
    config: &PipelineConfig,
    stage1: &dyn StageClassifier,
    stage2: &StageTwo<'_>,
) -> Result<PipelineOutput> {
    let merged = &config.merged;
    let zref = lowest_z(full_cloud);
    let mut times = BTreeMap::new();
    let mut mem = BTreeMap::new();
    let mut lap = {
        let mut t = Instant::now();
        move |name: &str, times: &mut BTreeMap<String, f64>| {
            times.insert(name.to_string(), t.elapsed().as_secs_f64() * 1e3);
            t = Instant::now();
        }
    };
    let n = full_cloud.len() as u64;

    let sub = voxel_subsample(full_cloud, config.voxel_size)?;
    lap("1_subsample", &mut times);
    mem.insert(
        "1_subsample".into(),
        n * (24 + 32) + sub.low_cloud.len() as u64 * 48,
    );

    let low = &sub.low_cloud;
    let low_features = features(low, config.k, zref)?;
    lap("2_low_features", &mut times);
    mem.insert(
        "2_low_features".into(),
        low.len() as u64 * (24 + 8 * low_features.cols() as u64 + 48),
    );

    let low_labels = resolve_output(stage1.classify(low, &low_features)?, low)?;
    for &l in &low_labels {
        if !l.is_labeled() || l.index() >= merged.len() {
            return Err(Error::LabelOutOfDomain(l));
        }
    }
    lap("3_initial_segmentation", &mut times);
    mem.insert(
        "3_initial_segmentation".into(),
        low.len() as u64 * 8 * (merged.len() as u64 + 1),
    );

    let initial = voxel_project(&low_labels, &sub, full_cloud)?;
    lap("4_voxel_projection", &mut times);
    mem.insert(
        "4_voxel_projection".into(),
        n * (24 + 2) + sub.low_cloud.len() as u64 * 40,
    );

    let mut stage_two_labels = BTreeMap::new();
    let mut stage_two_stats = Vec::new();
    let mut full_res_rows = 0;
    let mut peak_stage_two = 0u64;
    for c in merged.concatenated() {
        let idx = gather_class(&initial, c);
        let name = merged.class(c).name.clone();
        let mut rows = 0;
        let labels = if idx.len() < 3 {
            // too few points for a covariance; they fall back to the base class
            vec![ClassId::UNLABELED; idx.len()]
        } else {
            let classifier = stage2.get(&c).ok_or_else(|| {
                Error::InvalidArgument(format!("no stage-two classifier for {name}"))
            })?;
            let subset = full_cloud.select(&idx);
            let f = features(&subset, config.k, zref)?;
            rows = f.rows();
            peak_stage_two = peak_stage_two
                .max(idx.len() as u64 * (24 + 8 * f.cols() as u64 + 8 * config.k as u64 + 48));
            let labels = resolve_output(classifier.classify(&subset, &f)?, &subset)?;
            let members = merged.members(c);
            if let Some(&bad) = labels
                .iter()
                .find(|l| l.is_labeled() && !members.contains(l))
            {
                return Err(Error::NotAMember {
                    label: bad,
                    class: name,
                });
            }
            labels
        };
        full_res_rows += rows;
        stage_two_stats.push(StageTwoStats {
            class: name,
            points: idx.len(),
            feature_rows: rows,
            fallback_points: 0,
        });
        stage_two_labels.insert(c, labels);
    }
    lap("5_second_segmentation", &mut times);
    mem.insert("5_second_segmentation".into(), peak_stage_two);

    let composed = compose_final(&initial, &stage_two_labels, merged)?;
    for (s, c) in stage_two_stats.iter_mut().zip(merged.concatenated()) {
        s.fallback_points = composed.fallback.get(&c).copied().unwrap_or(0);
        if s.fallback_points > 0 {
            log::warn!(
                "{} points of {} fell back to the base class",
                s.fallback_points,
                s.class
            );
        }
    }
    lap("6_compose", &mut times);
    mem.insert("6_compose".into(), n * 6);

    let stats = RunStats {
        seed: config.train.seed,
        voxel_size: config.voxel_size,
        k: config.k,
        full_points: full_cloud.len(),
        low_points: low.len(),
        low_res_feature_rows: low_features.rows(),
        full_res_feature_rows: full_res_rows,
        stage_two_points: stage_two_stats.iter().map(|s| s.points).sum(),
        stage_two: stage_two_stats,
        wall_time_ms: times,
        working_set_bytes: mem,
    };
    Ok(PipelineOutput {
        labels: composed.labels,
        initial,
        stats,
    })
}

/// Stage-one model plus one stage-two model per concatenated class.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPipeline {
    pub stage1: ClassifierModel,
    pub stage2: BTreeMap<ClassId, ClassifierModel>,
}

impl TrainedPipeline {
    pub fn stage_two(&self) -> StageTwo<'_> {
        self.stage2
            .iter()
            .map(|(&c, m)| (c, m as &dyn StageClassifier))
            .collect()
    }

    pub fn run(&self, cloud: &PointCloud, config: &PipelineConfig) -> Result<PipelineOutput> {
        run_pipeline(cloud, config, &self.stage1, &self.stage_two())
    }
}

fn truth(cloud: &PointCloud) -> Result<&[ClassId]> {
    cloud.labels().ok_or(Error::MissingLabels)
}

/// Low-resolution features and labels of one training cloud.
fn low_training_rows(
    cloud: &PointCloud,
    config: &PipelineConfig,
) -> Result<(FeatureMatrix, Vec<ClassId>)> {
    truth(cloud)?;
    let sub = voxel_subsample(cloud, config.voxel_size)?;
    let f = features(&sub.low_cloud, config.k, lowest_z(cloud))?;
    Ok((f, sub.low_cloud.labels().unwrap().to_vec()))
}

/// Full-resolution training points of a concatenated class: those whose true
/// class is one of its members.
pub fn stage_two_training_indices(
    labels: &[ClassId],
    merged: &MergedSchema,
    c: ClassId,
) -> Vec<usize> {
    let members = merged.members(c);
    labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| members.contains(l).then_some(i))
        .collect()
}

/// Trains stage one on merged labels of the subsampled clouds and each
/// stage-two model on the true members of its concatenated class.
pub fn train_pipeline(clouds: &[PointCloud], config: &PipelineConfig) -> Result<TrainedPipeline> {
    let merged = &config.merged;
    let mut parts = Vec::new();
    let mut labels = Vec::new();
    for cloud in clouds {
        let (f, l) = low_training_rows(cloud, config)?;
        parts.push(f);
        labels.extend(map_labels(&l, merged.forward())?);
    }
    let merged_ids: Vec<ClassId> = (0..merged.len()).map(|i| ClassId(i as u16)).collect();
    let stage1 = train(
        &FeatureMatrix::vstack(&parts)?,
        &labels,
        &merged_ids,
        &config.train,
    )?;

    let mut stage2 = BTreeMap::new();
    for c in merged.concatenated() {
        let mut parts = Vec::new();
        let mut labels = Vec::new();
        for cloud in clouds {
            let t = truth(cloud)?;
            let idx = stage_two_training_indices(t, merged, c);
            if idx.len() < 3 {
                continue;
            }
            let subset = cloud.select(&idx);
            parts.push(features(&subset, config.k, lowest_z(cloud))?);
            labels.extend(idx.iter().map(|&i| t[i]));
        }
        if labels.is_empty() {
            return Err(Error::Training(format!(
                "concatenated class {} has no training points",
                merged.class(c).name
            )));
        }
        let model = train(
            &FeatureMatrix::vstack(&parts)?,
            &labels,
            merged.members(c),
            &config.train,
        )?;
        stage2.insert(c, model);
    }
    Ok(TrainedPipeline { stage1, stage2 })
}

/// Single-resolution comparison: one model over all original classes,
/// trained and applied on the subsampled cloud, voxel-projected back.
pub fn train_single_stage(
    clouds: &[PointCloud],
    config: &PipelineConfig,
) -> Result<ClassifierModel> {
    let mut parts = Vec::new();
    let mut labels = Vec::new();
    for cloud in clouds {
        let (f, l) = low_training_rows(cloud, config)?;
        parts.push(f);
        labels.extend(l);
    }
    let ids: Vec<ClassId> = config.schema.ids().collect();
    train(
        &FeatureMatrix::vstack(&parts)?,
        &labels,
        &ids,
        &config.train,
    )
}

pub fn run_single_stage(
    cloud: &PointCloud,
    config: &PipelineConfig,
    classifier: &dyn StageClassifier,
) -> Result<Vec<ClassId>> {
    let sub = voxel_subsample(cloud, config.voxel_size)?;
    let f = features(&sub.low_cloud, config.k, lowest_z(cloud))?;
    let low_labels = resolve_output(classifier.classify(&sub.low_cloud, &f)?, &sub.low_cloud)?;
    voxel_project(&low_labels, &sub, cloud)
}
