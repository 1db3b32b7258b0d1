//! Point clouds, semantic class schemas and the high-to-low class merge.
//!
//! Every class of a [`ClassSchema`] is tagged with a [`Resolution`]. Detail
//! classes (`High`) are folded into a structural class (`Low`) by a
//! [`MergeMap`] for the initial, subsampled segmentation; the resulting
//! [`MergedSchema`] keeps the correspondence needed to go back.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense class index inside a schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u16);

impl ClassId {
    /// Marks a point without ground truth (or without a prediction). Never a
    /// schema class.
    pub const UNLABELED: ClassId = ClassId(u16::MAX);

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub fn is_labeled(self) -> bool {
        self != Self::UNLABELED
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_labeled() {
            write!(f, "{}", self.0)
        } else {
            f.write_str("unlabeled")
        }
    }
}

/// Columnar point storage. Positions are in meters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    positions: Vec<[f64; 3]>,
    colors: Option<Vec<[u8; 3]>>,
    labels: Option<Vec<ClassId>>,
    intensity: Option<Vec<f32>>,
}

impl PointCloud {
    pub fn new(positions: Vec<[f64; 3]>) -> Result<Self> {
        let cloud = PointCloud {
            positions,
            ..Default::default()
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn with_colors(mut self, colors: Vec<[u8; 3]>) -> Result<Self> {
        self.colors = Some(colors);
        self.validate()?;
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<ClassId>) -> Result<Self> {
        self.labels = Some(labels);
        self.validate()?;
        Ok(self)
    }

    pub fn with_intensity(mut self, intensity: Vec<f32>) -> Result<Self> {
        self.intensity = Some(intensity);
        self.validate()?;
        Ok(self)
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }

    /// Checks the attribute-length and finiteness invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        let check = |what: &str, len: Option<usize>| match len {
            Some(len) if len != n => Err(Error::InvalidCloud(format!(
                "{what} has {len} entries but the cloud has {n} points"
            ))),
            _ => Ok(()),
        };
        check("colors", self.colors.as_ref().map(Vec::len))?;
        check("labels", self.labels.as_ref().map(Vec::len))?;
        check("intensity", self.intensity.as_ref().map(Vec::len))?;
        if let Some(i) = self
            .positions
            .iter()
            .position(|p| !p.iter().all(|c| c.is_finite()))
        {
            return Err(Error::InvalidCloud(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn colors(&self) -> Option<&[[u8; 3]]> {
        self.colors.as_deref()
    }

    pub fn labels(&self) -> Option<&[ClassId]> {
        self.labels.as_deref()
    }

    pub fn intensity(&self) -> Option<&[f32]> {
        self.intensity.as_deref()
    }

    /// Component-wise minimum and maximum of the positions.
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        let first = *self.positions.first()?;
        Some(
            self.positions
                .iter()
                .fold((first, first), |(mut lo, mut hi), p| {
                    for a in 0..3 {
                        lo[a] = lo[a].min(p[a]);
                        hi[a] = hi[a].max(p[a]);
                    }
                    (lo, hi)
                }),
        )
    }

    /// New cloud holding the given points, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        fn pick<T: Copy>(v: &Option<Vec<T>>, idx: &[usize]) -> Option<Vec<T>> {
            v.as_ref().map(|v| idx.iter().map(|&i| v[i]).collect())
        }
        PointCloud {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            colors: pick(&self.colors, indices),
            labels: pick(&self.labels, indices),
            intensity: pick(&self.intensity, indices),
        }
    }

    /// Appends `other`. Attributes survive only when both clouds carry them.
    pub fn concat(&self, other: &PointCloud) -> PointCloud {
        fn join<T: Copy>(a: &Option<Vec<T>>, b: &Option<Vec<T>>) -> Option<Vec<T>> {
            match (a, b) {
                (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
                _ => None,
            }
        }
        PointCloud {
            positions: self
                .positions
                .iter()
                .chain(&other.positions)
                .copied()
                .collect(),
            colors: join(&self.colors, &other.colors),
            labels: join(&self.labels, &other.labels),
            intensity: join(&self.intensity, &other.intensity),
        }
    }
}

/// Whether a class is segmented on the subsampled cloud or at full resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    High,
    Low,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDef {
    pub name: String,
    pub resolution: Resolution,
}

/// Ordered class universe; a class's [`ClassId`] is its position in the list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSchema {
    classes: Vec<ClassDef>,
}

impl ClassSchema {
    pub fn new(classes: Vec<ClassDef>) -> Result<Self> {
        if classes.len() >= ClassId::UNLABELED.index() {
            return Err(Error::InvalidSchema(format!(
                "too many classes ({})",
                classes.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for c in &classes {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::InvalidSchema(format!(
                    "duplicate class name {:?}",
                    c.name
                )));
            }
        }
        if !classes.iter().any(|c| c.resolution == Resolution::Low) {
            return Err(Error::InvalidSchema(
                "at least one low-resolution class is required".into(),
            ));
        }
        Ok(ClassSchema { classes })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[ClassDef] {
        &self.classes
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.classes.get(id.index()).map(|c| c.name.as_str())
    }

    pub fn names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn resolution(&self, id: ClassId) -> Option<Resolution> {
        self.classes.get(id.index()).map(|c| c.resolution)
    }

    pub fn id_of(&self, name: &str) -> Option<ClassId> {
        self.classes
            .iter()
            .position(|c| c.name == name)
            .map(|i| ClassId(i as u16))
    }

    pub fn ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        (0..self.classes.len()).map(|i| ClassId(i as u16))
    }

    pub fn high_classes(&self) -> Vec<ClassId> {
        self.ids()
            .filter(|&id| self.resolution(id) == Some(Resolution::High))
            .collect()
    }
}

/// Mapping from each High class to the Low class it is merged into.
///
/// Construction does not validate; [`build_merged_schema`] checks the entries
/// against a schema.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MergeMap {
    entries: Vec<(ClassId, ClassId)>,
}

impl MergeMap {
    pub fn new(entries: Vec<(ClassId, ClassId)>) -> Self {
        MergeMap { entries }
    }

    pub fn entries(&self) -> &[(ClassId, ClassId)] {
        &self.entries
    }

    pub fn target(&self, high: ClassId) -> Option<ClassId> {
        self.entries
            .iter()
            .find(|(h, _)| *h == high)
            .map(|&(_, t)| t)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MergedClass {
    pub name: String,
    /// The Low class of the source schema this merged class stands for.
    pub base: ClassId,
    pub concatenated: bool,
}

/// Class space of the initial segmentation: one class per Low class, where
/// merge targets become concatenated classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedSchema {
    classes: Vec<MergedClass>,
    forward: Vec<ClassId>,
    members: Vec<Vec<ClassId>>,
}

impl MergedSchema {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[MergedClass] {
        &self.classes
    }

    pub fn class(&self, merged: ClassId) -> &MergedClass {
        &self.classes[merged.index()]
    }

    pub fn names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    /// Original id -> merged id, total over the source schema.
    pub fn forward(&self) -> &[ClassId] {
        &self.forward
    }

    /// Original ids folded into `merged`, sorted ascending. The base class is
    /// always included.
    pub fn members(&self, merged: ClassId) -> &[ClassId] {
        &self.members[merged.index()]
    }

    pub fn is_concatenated(&self, merged: ClassId) -> bool {
        self.classes[merged.index()].concatenated
    }

    pub fn concatenated(&self) -> Vec<ClassId> {
        (0..self.classes.len())
            .map(|i| ClassId(i as u16))
            .filter(|&c| self.is_concatenated(c))
            .collect()
    }

    /// Merged id -> the Low class it bijects to.
    pub fn base(&self, merged: ClassId) -> ClassId {
        self.classes[merged.index()].base
    }
}

/// Builds the initial-segmentation class space from a schema and merge map.
pub fn build_merged_schema(schema: &ClassSchema, merge: &MergeMap) -> Result<MergedSchema> {
    let name = |id: ClassId| schema.name(id).unwrap_or("?").to_string();
    let mut target_of: HashMap<ClassId, ClassId> = HashMap::new();
    for &(from, into) in merge.entries() {
        let from_res = schema
            .resolution(from)
            .ok_or_else(|| Error::InvalidMerge(format!("unknown class id {from}")))?;
        let into_res = schema
            .resolution(into)
            .ok_or_else(|| Error::InvalidMerge(format!("unknown class id {into}")))?;
        if from_res == Resolution::Low {
            return Err(Error::InvalidMerge(format!(
                "class {:?} is low resolution and cannot be merged",
                name(from)
            )));
        }
        if into_res == Resolution::High {
            return Err(Error::InvalidMerge(format!(
                "class {:?} is high resolution and cannot be a merge target",
                name(into)
            )));
        }
        if target_of.insert(from, into).is_some() {
            return Err(Error::InvalidMerge(format!(
                "class {:?} is merged more than once",
                name(from)
            )));
        }
    }
    for h in schema.high_classes() {
        if !target_of.contains_key(&h) {
            return Err(Error::InvalidMerge(format!(
                "high-resolution class {:?} has no merge target",
                name(h)
            )));
        }
    }

    let mut forward = vec![ClassId::UNLABELED; schema.len()];
    let mut classes = Vec::new();
    for id in schema.ids() {
        if schema.resolution(id) == Some(Resolution::Low) {
            forward[id.index()] = ClassId(classes.len() as u16);
            let concatenated = target_of.values().any(|&t| t == id);
            let base_name = name(id);
            classes.push(MergedClass {
                name: if concatenated {
                    format!("{base_name}'")
                } else {
                    base_name
                },
                base: id,
                concatenated,
            });
        }
    }
    for (&h, &t) in &target_of {
        forward[h.index()] = forward[t.index()];
    }
    let mut members = vec![Vec::new(); classes.len()];
    for id in schema.ids() {
        members[forward[id.index()].index()].push(id);
    }
    Ok(MergedSchema {
        classes,
        forward,
        members,
    })
}

/// Maps every label through `forward`. Unlabeled points stay unlabeled.
pub fn relabel(cloud: &PointCloud, forward: &[ClassId]) -> Result<PointCloud> {
    let labels = cloud.labels().ok_or(Error::MissingLabels)?;
    let mapped = map_labels(labels, forward)?;
    let mut out = cloud.clone();
    out.labels = Some(mapped);
    Ok(out)
}

/// Label-buffer form of [`relabel`].
pub fn map_labels(labels: &[ClassId], forward: &[ClassId]) -> Result<Vec<ClassId>> {
    labels
        .iter()
        .map(|&l| {
            if !l.is_labeled() {
                Ok(l)
            } else {
                forward
                    .get(l.index())
                    .copied()
                    .ok_or(Error::LabelOutOfDomain(l))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema(spec: &[(&str, Resolution)]) -> ClassSchema {
        ClassSchema::new(
            spec.iter()
                .map(|(n, r)| ClassDef {
                    name: n.to_string(),
                    resolution: *r,
                })
                .collect(),
        )
        .unwrap()
    }

    use Resolution::{High as H, Low as L};

    #[test]
    fn wall_door_board_merge() {
        let s = schema(&[("ground", L), ("wall", L), ("door", H), ("board", H)]);
        let m = MergeMap::new(vec![(ClassId(2), ClassId(1)), (ClassId(3), ClassId(1))]);
        let merged = build_merged_schema(&s, &m).unwrap();
        assert_eq!(merged.names(), vec!["ground", "wall'"]);
        assert_eq!(
            merged.members(ClassId(1)),
            &[ClassId(1), ClassId(2), ClassId(3)]
        );
        assert_eq!(merged.concatenated(), vec![ClassId(1)]);
        assert!(!merged.is_concatenated(ClassId(0)));
    }

    #[test]
    fn identity_without_high_classes() {
        let s = schema(&[("a", L), ("b", L), ("c", L)]);
        let merged = build_merged_schema(&s, &MergeMap::default()).unwrap();
        assert_eq!(merged.names(), s.names());
        assert!(merged.concatenated().is_empty());
        assert_eq!(merged.forward(), &[ClassId(0), ClassId(1), ClassId(2)]);
    }

    #[test]
    fn two_concatenated_classes() {
        let s = schema(&[("a", L), ("b", L), ("c", H), ("d", H)]);
        let m = MergeMap::new(vec![(ClassId(2), ClassId(0)), (ClassId(3), ClassId(1))]);
        let merged = build_merged_schema(&s, &m).unwrap();
        assert_eq!(
            merged.forward(),
            &[ClassId(0), ClassId(1), ClassId(0), ClassId(1)]
        );
        assert_eq!(merged.members(ClassId(0)), &[ClassId(0), ClassId(2)]);
        assert_eq!(merged.members(ClassId(1)), &[ClassId(1), ClassId(3)]);
        assert_eq!(merged.names(), vec!["a'", "b'"]);
    }

    #[test]
    fn rejects_bad_merges() {
        let s = schema(&[("ground", L), ("wall", L), ("door", H)]);
        let low_key = MergeMap::new(vec![(ClassId(0), ClassId(1)), (ClassId(2), ClassId(1))]);
        let high_target = MergeMap::new(vec![(ClassId(2), ClassId(2))]);
        let unknown = MergeMap::new(vec![(ClassId(2), ClassId(9))]);
        let missing = MergeMap::default();
        for m in [low_key, high_target, unknown, missing] {
            assert!(matches!(
                build_merged_schema(&s, &m),
                Err(Error::InvalidMerge(_))
            ));
        }
        let err = build_merged_schema(&s, &MergeMap::new(vec![(ClassId(2), ClassId(2))]))
            .unwrap_err()
            .to_string();
        assert!(err.contains("door"), "{err}");
    }

    #[test]
    fn schema_invariants() {
        assert!(ClassSchema::new(vec![ClassDef {
            name: "door".into(),
            resolution: H
        }])
        .is_err());
        assert!(ClassSchema::new(vec![
            ClassDef {
                name: "a".into(),
                resolution: L
            },
            ClassDef {
                name: "a".into(),
                resolution: H
            }
        ])
        .is_err());
    }

    #[test]
    fn relabel_fig2_example() {
        let s = schema(&[("ground", L), ("wall", L), ("door", H), ("board", H)]);
        let m = MergeMap::new(vec![(ClassId(2), ClassId(1)), (ClassId(3), ClassId(1))]);
        let merged = build_merged_schema(&s, &m).unwrap();
        let cloud = PointCloud::new(vec![[0.0; 3]; 3])
            .unwrap()
            .with_labels(vec![ClassId(2), ClassId(1), ClassId(0)])
            .unwrap();
        let out = relabel(&cloud, merged.forward()).unwrap();
        assert_eq!(out.labels().unwrap(), &[ClassId(1), ClassId(1), ClassId(0)]);
        assert_eq!(out.positions(), cloud.positions());
    }

    #[test]
    fn relabel_errors() {
        let unlabeled = PointCloud::new(vec![[0.0; 3]]).unwrap();
        assert!(matches!(
            relabel(&unlabeled, &[ClassId(0)]),
            Err(Error::MissingLabels)
        ));
        let labeled = unlabeled.with_labels(vec![ClassId(4)]).unwrap();
        assert!(matches!(
            relabel(&labeled, &[ClassId(0)]),
            Err(Error::LabelOutOfDomain(ClassId(4)))
        ));
    }

    #[test]
    fn cloud_invariants() {
        assert!(PointCloud::new(vec![[0.0, f64::NAN, 0.0]]).is_err());
        assert!(PointCloud::new(vec![[0.0; 3]; 2])
            .unwrap()
            .with_colors(vec![[0; 3]])
            .is_err());
        assert!(PointCloud::new(vec![[0.0; 3]; 2])
            .unwrap()
            .with_intensity(vec![1.0; 3])
            .is_err());
    }

    proptest! {
        #[test]
        fn relabel_matches_elementwise_loop(labels in prop::collection::vec(0u16..6, 1000)) {
            let forward = [ClassId(0), ClassId(1), ClassId(0), ClassId(2), ClassId(1), ClassId(2)];
            let labels: Vec<ClassId> = labels.into_iter().map(ClassId).collect();
            let cloud = PointCloud::new(vec![[1.0, 2.0, 3.0]; labels.len()]).unwrap()
                .with_labels(labels.clone()).unwrap();
            let out = relabel(&cloud, &forward).unwrap();
            let mut expected = Vec::new();
            for l in &labels {
                expected.push(forward[l.0 as usize]);
            }
            prop_assert_eq!(out.labels().unwrap(), &expected[..]);
            let identity: Vec<ClassId> = (0..6).map(ClassId).collect();
            let once = relabel(&out, &identity).unwrap();
            prop_assert_eq!(&once, &out);
        }

        #[test]
        fn members_partition_original_classes(
            res in prop::collection::vec(any::<bool>(), 1..12),
            picks in prop::collection::vec(any::<prop::sample::Index>(), 12),
        ) {
            let mut res = res;
            res[0] = false;
            let defs: Vec<ClassDef> = res.iter().enumerate().map(|(i, &high)| ClassDef {
                name: format!("c{i}"),
                resolution: if high { H } else { L },
            }).collect();
            let s = ClassSchema::new(defs).unwrap();
            let lows: Vec<ClassId> = s.ids().filter(|&c| s.resolution(c) == Some(L)).collect();
            let entries = s.high_classes().into_iter().zip(&picks)
                .map(|(h, p)| (h, lows[p.index(lows.len())])).collect();
            let merged = build_merged_schema(&s, &MergeMap::new(entries)).unwrap();
            prop_assert_eq!(merged.len(), lows.len());
            let mut seen = vec![0; s.len()];
            for m in 0..merged.len() {
                for &c in merged.members(ClassId(m as u16)) {
                    seen[c.index()] += 1;
                    prop_assert_eq!(merged.forward()[c.index()], ClassId(m as u16));
                }
            }
            prop_assert!(seen.iter().all(|&n| n == 1));
            // forward restricted to Low classes is injective
            let mut low_images: Vec<_> = lows.iter().map(|l| merged.forward()[l.index()]).collect();
            low_images.dedup();
            prop_assert_eq!(low_images.len(), lows.len());
        }
    }
}
