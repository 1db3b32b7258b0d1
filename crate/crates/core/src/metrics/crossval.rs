use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{ConfusionMatrix, EvalReport};
use crate::classifier::{OracleClassifier, StageClassifier};
use crate::cloud::{map_labels, ClassId, PointCloud};
use crate::error::{Error, Result};
use crate::io::PipelineConfig;
use crate::pipeline::{
    run_pipeline, run_single_stage, train_pipeline, train_single_stage, StageTwo,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvMode {
    /// Train the linear baseline on the other folds.
    Trained,
    /// Ground truth in both stages; checks the plumbing.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    pub seed: u64,
    pub folds: Vec<FoldReport>,
    /// Confusion matrices summed over folds.
    pub pooled: EvalReport,
    /// Stage-one output scored over the original classes; High classes are n/a.
    pub pooled_initial: EvalReport,
    /// Single-stage low-resolution comparison, when requested.
    pub pooled_single_stage: Option<EvalReport>,
    pub mean_fold_oa: f64,
    pub mean_fold_miou: f64,
    #[serde(skip)]
    pub predictions: BTreeMap<String, Vec<ClassId>>,
}

/// Scores merged-class predictions against original truth, laid out over
/// the original classes. Each Low class takes the IoU of its merged class;
/// High classes are n/a.
pub fn initial_report(initial: &ConfusionMatrix, config: &PipelineConfig) -> EvalReport {
    let merged_report = initial.report();
    let names = config.schema.names();
    let mut iou = Vec::with_capacity(names.len());
    let mut truth_counts = Vec::with_capacity(names.len());
    let mut pred_counts = Vec::with_capacity(names.len());
    for id in config.schema.ids() {
        let m = config.merged.forward()[id.index()];
        if config.merged.base(m) == id {
            iou.push(merged_report.iou[m.index()]);
            truth_counts.push(merged_report.truth_counts[m.index()]);
            pred_counts.push(merged_report.pred_counts[m.index()]);
        } else {
            iou.push(None);
            truth_counts.push(0);
            pred_counts.push(0);
        }
    }
    EvalReport {
        class_names: names,
        oa: merged_report.oa,
        miou: merged_report.miou,
        iou,
        truth_counts,
        pred_counts,
        total: merged_report.total,
    }
}

fn truth(cloud: &PointCloud) -> Result<&[ClassId]> {
    cloud.labels().ok_or(Error::MissingLabels)
}

/// Leave-one-fold-out evaluation. Fold membership comes from
/// `config.folds`, keyed by the cloud names given here.
pub fn cross_validate(
    clouds: &[(String, PointCloud)],
    config: &PipelineConfig,
    mode: CvMode,
    single_stage: bool,
) -> Result<CvResult> {
    let fold_count = config.fold_count();
    if fold_count < 2 {
        return Err(Error::InvalidConfig(format!(
            "folds: cross-validation needs at least 2 folds, got {fold_count}"
        )));
    }
    let mut assignment = Vec::with_capacity(clouds.len());
    for (name, cloud) in clouds {
        let fold = *config.folds.get(name).ok_or_else(|| {
            Error::InvalidConfig(format!("folds: cloud {name} has no fold assignment"))
        })?;
        truth(cloud)?;
        assignment.push(fold);
    }

    let names = config.schema.names();
    let merged_names = config.merged.names();
    let mut pooled = ConfusionMatrix::new(names.clone());
    let mut pooled_initial = ConfusionMatrix::new(merged_names.clone());
    let mut pooled_single = ConfusionMatrix::new(names.clone());
    let mut folds = Vec::with_capacity(fold_count);
    let mut predictions = BTreeMap::new();

    for fold in 0..fold_count {
        let test: Vec<usize> = (0..clouds.len())
            .filter(|&i| assignment[i] == fold)
            .collect();
        if test.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "folds: fold {fold} has no test clouds"
            )));
        }
        let train_idx: Vec<usize> = (0..clouds.len())
            .filter(|&i| assignment[i] != fold)
            .collect();
        let training: Vec<PointCloud> = train_idx.iter().map(|&i| clouds[i].1.clone()).collect();

        let present: BTreeSet<ClassId> = training
            .iter()
            .flat_map(|c| c.labels().unwrap().iter().copied())
            .filter(|l| l.is_labeled())
            .collect();
        let missing: Vec<&str> = config
            .schema
            .ids()
            .filter(|id| !present.contains(id))
            .filter_map(|id| config.schema.name(id))
            .collect();
        if !missing.is_empty() {
            log::warn!("fold {fold}: training set lacks {}", missing.join(", "));
        }

        let (trained, single_model) = match mode {
            CvMode::Trained => (
                Some(train_pipeline(&training, config)?),
                if single_stage {
                    Some(train_single_stage(&training, config)?)
                } else {
                    None
                },
            ),
            CvMode::Oracle => (None, None),
        };
        let oracle1 = OracleClassifier::mapped(config.merged.forward());
        let oracle2 = OracleClassifier::identity();
        let oracle_two: StageTwo = config
            .merged
            .concatenated()
            .into_iter()
            .map(|c| (c, &oracle2 as &dyn StageClassifier))
            .collect();

        let mut fold_matrix = ConfusionMatrix::new(names.clone());
        for &i in &test {
            let (name, cloud) = &clouds[i];
            log::info!("fold {fold}: testing on {name}");
            let out = match &trained {
                Some(t) => t.run(cloud, config)?,
                None => run_pipeline(cloud, config, &oracle1, &oracle_two)?,
            };
            let t = truth(cloud)?;
            fold_matrix.accumulate(t, &out.labels)?;
            pooled_initial.accumulate(&map_labels(t, config.merged.forward())?, &out.initial)?;
            if single_stage {
                let pred = match &single_model {
                    Some(m) => run_single_stage(cloud, config, m)?,
                    None => run_single_stage(cloud, config, &OracleClassifier::identity())?,
                };
                pooled_single.accumulate(t, &pred)?;
            }
            predictions.insert(name.clone(), out.labels);
        }
        pooled.add(&fold_matrix)?;
        folds.push(FoldReport {
            fold,
            train: train_idx.iter().map(|&i| clouds[i].0.clone()).collect(),
            test: test.iter().map(|&i| clouds[i].0.clone()).collect(),
            report: fold_matrix.report(),
        });
    }

    let n = folds.len() as f64;
    Ok(CvResult {
        seed: config.train.seed,
        mean_fold_oa: folds.iter().map(|f| f.report.oa).sum::<f64>() / n,
        mean_fold_miou: folds.iter().map(|f| f.report.miou).sum::<f64>() / n,
        folds,
        pooled: pooled.report(),
        pooled_initial: initial_report(&pooled_initial, config),
        pooled_single_stage: single_stage.then(|| pooled_single.report()),
        predictions,
    })
}

impl CvResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cv result serializes")
    }
}
