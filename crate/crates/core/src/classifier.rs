//! Pointwise classifier contract and a multinomial logistic-regression
//! baseline.
//!
//! Both pipeline stages talk to a [`StageClassifier`]. The shipped
//! implementations are the trainable [`ClassifierModel`], the ground-truth
//! [`OracleClassifier`] used to check plumbing, and two adapters for labels
//! produced by external tools ([`FixedLabels`], [`ResampledLabels`]).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{map_labels, ClassId, PointCloud};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

pub const BATCH_SIZE: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainParams {
    #[serde(default = "TrainParams::default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "TrainParams::default_epochs")]
    pub epochs: usize,
    #[serde(default = "TrainParams::default_seed")]
    pub seed: u64,
}

impl TrainParams {
    fn default_learning_rate() -> f64 {
        0.5
    }

    fn default_epochs() -> usize {
        30
    }

    fn default_seed() -> u64 {
        42
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            learning_rate: Self::default_learning_rate(),
            epochs: Self::default_epochs(),
            seed: Self::default_seed(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub samples: usize,
    pub final_loss: f64,
}

/// Linear softmax model over standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub feature_names: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// One row per output class.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    /// Class id emitted for each output row.
    pub class_ids: Vec<ClassId>,
    pub meta: TrainingMeta,
}

/// Per-point labels with optional class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<ClassId>,
    /// Column order of `probabilities`.
    pub class_ids: Vec<ClassId>,
    /// Row-major, `labels.len() x class_ids.len()`.
    pub probabilities: Option<Vec<f64>>,
}

impl Prediction {
    pub fn from_labels(labels: Vec<ClassId>) -> Self {
        Prediction {
            labels,
            class_ids: Vec::new(),
            probabilities: None,
        }
    }

    pub fn probability_row(&self, i: usize) -> Option<&[f64]> {
        let k = self.class_ids.len();
        self.probabilities.as_ref().map(|p| &p[i * k..(i + 1) * k])
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// In-place numerically stable softmax.
pub fn softmax(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
}

/// Mean cross-entropy over `rows` and its gradient with respect to the
/// weights (row-major, classes x features) and biases.
///
/// `x` is row-major with `features` columns; `y` holds output-row indices.
pub fn softmax_loss_gradient(
    weights: &[f64],
    biases: &[f64],
    x: &[f64],
    features: usize,
    y: &[usize],
    rows: &[usize],
) -> (f64, Vec<f64>, Vec<f64>) {
    let k = biases.len();
    let mut gw = vec![0.0; weights.len()];
    let mut gb = vec![0.0; k];
    let mut loss = 0.0;
    let mut p = vec![0.0; k];
    for &r in rows {
        let xr = &x[r * features..(r + 1) * features];
        for c in 0..k {
            let w = &weights[c * features..(c + 1) * features];
            p[c] = biases[c] + w.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
        }
        let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + p.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - p[y[r]];
        for c in 0..k {
            let d = (p[c] - lse).exp() - if c == y[r] { 1.0 } else { 0.0 };
            gb[c] += d;
            for (g, xv) in gw[c * features..(c + 1) * features].iter_mut().zip(xr) {
                *g += d * xv;
            }
        }
    }
    let n = rows.len().max(1) as f64;
    gw.iter_mut().for_each(|g| *g /= n);
    gb.iter_mut().for_each(|g| *g /= n);
    (loss / n, gw, gb)
}

/// Trains a softmax model by seeded mini-batch gradient descent.
///
/// `labels` use the ids in `class_ids`; unlabeled rows are skipped. Classes
/// without samples are allowed.
pub fn train(
    features: &FeatureMatrix,
    labels: &[ClassId],
    class_ids: &[ClassId],
    params: &TrainParams,
) -> Result<ClassifierModel> {
    params.validate()?;
    if labels.len() != features.rows() {
        return Err(Error::LengthMismatch {
            what: "training labels",
            expected: features.rows(),
            found: labels.len(),
        });
    }
    if class_ids.is_empty() {
        return Err(Error::Training("no output classes".into()));
    }
    let d = features.cols();
    let k = class_ids.len();
    let mut rows = Vec::new();
    let mut y = vec![0usize; labels.len()];
    for (i, &l) in labels.iter().enumerate() {
        if !l.is_labeled() {
            continue;
        }
        y[i] = class_ids
            .iter()
            .position(|&c| c == l)
            .ok_or_else(|| Error::Training(format!("label {l} is not an output class")))?;
        rows.push(i);
    }
    if rows.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    if features.data().iter().any(|v| v.is_nan()) {
        return Err(Error::Training("features contain NaN".into()));
    }
    for (c, &id) in class_ids.iter().enumerate() {
        if !rows.iter().any(|&r| y[r] == c) {
            log::warn!("class {id} has no training samples");
        }
    }

    let n = rows.len() as f64;
    let mut means = vec![0.0; d];
    for &r in &rows {
        for (m, v) in means.iter_mut().zip(features.row(r)) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut stds = vec![0.0; d];
    for &r in &rows {
        for j in 0..d {
            stds[j] += (features.row(r)[j] - means[j]).powi(2);
        }
    }
    let stds: Vec<f64> = stds
        .into_iter()
        .map(|s| {
            let s = (s / n).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let x: Vec<f64> = (0..features.rows())
        .flat_map(|i| {
            let (means, stds) = (&means, &stds);
            features
                .row(i)
                .iter()
                .enumerate()
                .map(move |(j, v)| (v - means[j]) / stds[j])
        })
        .collect();

    let mut w = vec![0.0; k * d];
    let mut b = vec![0.0; k];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order = rows.clone();
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(BATCH_SIZE) {
            let (_, gw, gb) = softmax_loss_gradient(&w, &b, &x, d, &y, batch);
            for (wi, g) in w.iter_mut().zip(&gw) {
                *wi -= params.learning_rate * g;
            }
            for (bi, g) in b.iter_mut().zip(&gb) {
                *bi -= params.learning_rate * g;
            }
        }
    }
    let (final_loss, _, _) = softmax_loss_gradient(&w, &b, &x, d, &y, &rows);
    if !w.iter().chain(&b).all(|v| v.is_finite()) {
        return Err(Error::Training(
            "training diverged; lower the learning rate".into(),
        ));
    }
    Ok(ClassifierModel {
        feature_names: features.names().to_vec(),
        means,
        stds,
        weights: w.chunks(d.max(1)).map(<[f64]>::to_vec).collect(),
        biases: b,
        class_ids: class_ids.to_vec(),
        meta: TrainingMeta {
            epochs: params.epochs,
            learning_rate: params.learning_rate,
            seed: params.seed,
            samples: rows.len(),
            final_loss,
        },
    })
}

impl ClassifierModel {
    /// Raw class scores of one feature row.
    pub fn logits(&self, row: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = row
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| b + w.iter().zip(&z).map(|(a, c)| a * c).sum::<f64>())
            .collect()
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let model: ClassifierModel = serde_json::from_str(json)?;
        let d = model.feature_names.len();
        let k = model.class_ids.len();
        if model.weights.len() != k
            || model.biases.len() != k
            || model.weights.iter().any(|w| w.len() != d)
            || model.means.len() != d
            || model.stds.len() != d
        {
            return Err(Error::InvalidArgument(
                "model dimensions are inconsistent".into(),
            ));
        }
        let finite = model
            .weights
            .iter()
            .flatten()
            .chain(&model.biases)
            .chain(&model.means)
            .chain(&model.stds)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument(
                "model has non-finite parameters".into(),
            ));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }
}

pub fn predict(model: &ClassifierModel, features: &FeatureMatrix) -> Result<Prediction> {
    if features.names() != model.feature_names.as_slice() {
        return Err(Error::FeatureMismatch(format!(
            "model expects {:?}, got {:?}",
            model.feature_names,
            features.names()
        )));
    }
    let k = model.class_ids.len();
    let probs: Vec<Vec<f64>> = (0..features.rows())
        .into_par_iter()
        .map(|i| {
            let mut p = model.logits(features.row(i));
            softmax(&mut p);
            p
        })
        .collect();
    let labels = probs.iter().map(|p| model.class_ids[argmax(p)]).collect();
    let mut flat = Vec::with_capacity(probs.len() * k);
    for p in probs {
        flat.extend(p);
    }
    Ok(Prediction {
        labels,
        class_ids: model.class_ids.clone(),
        probabilities: Some(flat),
    })
}

/// Prediction that returns the given ground truth with probability one.
pub fn predict_oracle(labels: &[ClassId]) -> Prediction {
    let mut class_ids: Vec<ClassId> = labels.iter().copied().filter(|l| l.is_labeled()).collect();
    class_ids.sort_unstable();
    class_ids.dedup();
    let probabilities = labels.iter().all(|l| l.is_labeled()).then(|| {
        let mut p = vec![0.0; labels.len() * class_ids.len()];
        for (i, l) in labels.iter().enumerate() {
            let c = class_ids.binary_search(l).unwrap();
            p[i * class_ids.len() + c] = 1.0;
        }
        p
    });
    Prediction {
        labels: labels.to_vec(),
        class_ids,
        probabilities,
    }
}

/// What a stage produced.
#[derive(Debug, Clone, PartialEq)]
pub enum StageOutput {
    /// One label per input point, in input order. Unlabeled entries mark
    /// points the classifier dropped.
    Aligned(Prediction),
    /// Labels on a different (e.g. resampled) cloud, to be transferred back
    /// to the input points by closest-point projection.
    Resampled(PointCloud),
}

/// Anything that can label the points handed to a pipeline stage.
pub trait StageClassifier: Sync {
    fn classify(&self, cloud: &PointCloud, features: &FeatureMatrix) -> Result<StageOutput>;
}

impl StageClassifier for ClassifierModel {
    fn classify(&self, _cloud: &PointCloud, features: &FeatureMatrix) -> Result<StageOutput> {
        predict(self, features).map(StageOutput::Aligned)
    }
}

/// Returns the cloud's ground-truth labels, optionally mapped (e.g. through
/// a merged schema's forward map).
#[derive(Debug, Clone, Default)]
pub struct OracleClassifier {
    pub mapping: Option<Vec<ClassId>>,
}

impl OracleClassifier {
    pub fn identity() -> Self {
        OracleClassifier { mapping: None }
    }

    pub fn mapped(forward: &[ClassId]) -> Self {
        OracleClassifier {
            mapping: Some(forward.to_vec()),
        }
    }
}

impl StageClassifier for OracleClassifier {
    fn classify(&self, cloud: &PointCloud, _features: &FeatureMatrix) -> Result<StageOutput> {
        let truth = cloud.labels().ok_or(Error::MissingLabels)?;
        let labels = match &self.mapping {
            Some(m) => map_labels(truth, m)?,
            None => truth.to_vec(),
        };
        Ok(StageOutput::Aligned(predict_oracle(&labels)))
    }
}

/// Labels read from an external prediction file, aligned with the stage input.
#[derive(Debug, Clone)]
pub struct FixedLabels(pub Vec<ClassId>);

impl StageClassifier for FixedLabels {
    fn classify(&self, cloud: &PointCloud, _features: &FeatureMatrix) -> Result<StageOutput> {
        if self.0.len() != cloud.len() {
            return Err(Error::LengthMismatch {
                what: "external prediction",
                expected: cloud.len(),
                found: self.0.len(),
            });
        }
        Ok(StageOutput::Aligned(Prediction::from_labels(
            self.0.clone(),
        )))
    }
}

/// Labeled cloud produced by an external tool that resampled its input.
#[derive(Debug, Clone)]
pub struct ResampledLabels(pub PointCloud);

impl StageClassifier for ResampledLabels {
    fn classify(&self, _cloud: &PointCloud, _features: &FeatureMatrix) -> Result<StageOutput> {
        if self.0.labels().is_none() {
            return Err(Error::MissingLabels);
        }
        Ok(StageOutput::Resampled(self.0.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn separable() -> (FeatureMatrix, Vec<ClassId>) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for c in 0..2u16 {
            for _ in 0..200 {
                let center = if c == 0 { -1.0 } else { 1.0 };
                data.push(center + rng.gen_range(-0.3..0.3));
                labels.push(ClassId(c));
            }
        }
        (FeatureMatrix::new(vec!["v".into()], data).unwrap(), labels)
    }

    fn params(epochs: usize) -> TrainParams {
        TrainParams {
            learning_rate: 0.5,
            epochs,
            seed: 42,
        }
    }

    #[test]
    fn separable_training_accuracy() {
        let (f, y) = separable();
        let model = train(&f, &y, &[ClassId(0), ClassId(1)], &params(20)).unwrap();
        let pred = predict(&model, &f).unwrap();
        let correct = pred.labels.iter().zip(&y).filter(|(a, b)| a == b).count();
        assert!(correct as f64 / y.len() as f64 >= 0.99);
    }

    #[test]
    fn zero_epochs_predicts_first_class() {
        let (f, y) = separable();
        let model = train(&f, &y, &[ClassId(0), ClassId(1)], &params(0)).unwrap();
        assert!(model.weights.iter().flatten().all(|&w| w == 0.0));
        let pred = predict(&model, &f).unwrap();
        assert!(pred.labels.iter().all(|&l| l == ClassId(0)));
    }

    #[test]
    fn loss_decreases() {
        let (f, y) = separable();
        let ids = [ClassId(0), ClassId(1)];
        let l0 = train(&f, &y, &ids, &params(0)).unwrap().meta.final_loss;
        let l50 = train(&f, &y, &ids, &params(50)).unwrap().meta.final_loss;
        assert!(l50 < l0, "{l50} !< {l0}");
    }

    #[test]
    fn deterministic_for_seed() {
        let (f, y) = separable();
        let ids = [ClassId(0), ClassId(1)];
        let a = train(&f, &y, &ids, &params(7)).unwrap();
        let b = train(&f, &y, &ids, &params(7)).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn training_errors() {
        let (f, _) = separable();
        let none = vec![ClassId::UNLABELED; f.rows()];
        assert!(train(&f, &none, &[ClassId(0)], &params(1)).is_err());
        let nan = FeatureMatrix::new(vec!["v".into()], vec![f64::NAN]).unwrap();
        assert!(train(&nan, &[ClassId(0)], &[ClassId(0)], &params(1)).is_err());
        let (f, y) = separable();
        assert!(train(&f, &y, &[ClassId(0)], &params(1)).is_err());
    }

    #[test]
    fn hot_class_and_uniform_model() {
        let k = 3;
        let names: Vec<String> = (0..k).map(|i| format!("f{i}")).collect();
        let mut model = ClassifierModel {
            feature_names: names.clone(),
            means: vec![0.0; k],
            stds: vec![1.0; k],
            weights: (0..k)
                .map(|c| (0..k).map(|j| if c == j { 10.0 } else { 0.0 }).collect())
                .collect(),
            biases: vec![0.0; k],
            class_ids: vec![ClassId(4), ClassId(5), ClassId(6)],
            meta: TrainingMeta {
                epochs: 0,
                learning_rate: 1.0,
                seed: 0,
                samples: 0,
                final_loss: 0.0,
            },
        };
        let f = FeatureMatrix::new(names.clone(), vec![0., 1., 0., 0., 0., 1.]).unwrap();
        assert_eq!(
            predict(&model, &f).unwrap().labels,
            vec![ClassId(5), ClassId(6)]
        );

        model.weights = vec![vec![0.0; k]; k];
        let p = predict(&model, &f).unwrap();
        assert_eq!(p.labels, vec![ClassId(4), ClassId(4)]);
        for v in p.probabilities.unwrap() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let wrong = FeatureMatrix::new(vec!["x".into()], vec![0.0]).unwrap();
        assert!(matches!(
            predict(&model, &wrong),
            Err(Error::FeatureMismatch(_))
        ));
    }

    #[test]
    fn argmax_ties_and_shift_invariance() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let v: Vec<f64> = (0..5).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let shifted: Vec<f64> = v.iter().map(|x| x + 123.0).collect();
            assert_eq!(argmax(&v), argmax(&shifted));
        }
    }

    #[test]
    fn oracle_returns_truth() {
        let truth = vec![ClassId(2), ClassId(0), ClassId(2)];
        let p = predict_oracle(&truth);
        assert_eq!(p.labels, truth);
        assert_eq!(p.class_ids, vec![ClassId(0), ClassId(2)]);
        assert_eq!(p.probability_row(0).unwrap(), &[0.0, 1.0]);
    }
}
