//! Annotation records, the dataset index, seeded train/val/test splitting
//! and per-species filtering.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::BoundingBox;
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    pub label: String,
    pub bbox: BoundingBox,
}

/// Ground truth for one image, in continuous pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<ObjectAnnotation>,
}

impl AnnotationRecord {
    pub fn validate(&self) -> Result<(), Error> {
        if self.image_id.is_empty() {
            return Err(Error::InvalidAnnotation("empty image id".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidAnnotation(format!(
                "{}: image size must be positive",
                self.image_id
            )));
        }
        for (i, obj) in self.objects.iter().enumerate() {
            if obj.label.is_empty() {
                return Err(Error::InvalidAnnotation(format!(
                    "{}: object {i} has an empty label",
                    self.image_id
                )));
            }
            if !obj.bbox.is_inside(self.width as f64, self.height as f64) {
                return Err(Error::InvalidAnnotation(format!(
                    "{}: object {i} box {:?} outside {}x{}",
                    self.image_id,
                    obj.bbox.to_array(),
                    self.width,
                    self.height
                )));
            }
        }
        Ok(())
    }
}

/// Records with unique image ids plus the sorted set of labels they use.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetIndex {
    records: Vec<AnnotationRecord>,
    catalog: Vec<String>,
}

impl DatasetIndex {
    pub fn new(records: Vec<AnnotationRecord>) -> Result<Self, Error> {
        let mut seen = BTreeSet::new();
        for r in &records {
            r.validate()?;
            if !seen.insert(r.image_id.as_str()) {
                return Err(Error::InvalidAnnotation(format!(
                    "duplicate image id {}",
                    r.image_id
                )));
            }
        }
        let catalog = catalog_of(&records);
        Ok(DatasetIndex { records, catalog })
    }

    pub fn records(&self) -> &[AnnotationRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<AnnotationRecord> {
        self.records
    }

    /// Distinct labels, sorted.
    pub fn catalog(&self) -> &[String] {
        &self.catalog
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&AnnotationRecord> {
        self.records.iter().find(|r| r.image_id == image_id)
    }

    pub fn num_objects(&self) -> usize {
        self.records.iter().map(|r| r.objects.len()).sum()
    }

    /// The records whose ids are listed, in list order.
    pub fn subset(&self, ids: &[String]) -> Result<DatasetIndex, Error> {
        let by_id: BTreeMap<&str, &AnnotationRecord> = self
            .records
            .iter()
            .map(|r| (r.image_id.as_str(), r))
            .collect();
        let mut missing = Vec::new();
        let mut picked = Vec::with_capacity(ids.len());
        for id in ids {
            match by_id.get(id.as_str()) {
                Some(r) => picked.push((*r).clone()),
                None => missing.push(id.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::UnknownImages(missing));
        }
        DatasetIndex::new(picked)
    }
}

fn catalog_of(records: &[AnnotationRecord]) -> Vec<String> {
    let set: BTreeSet<&str> = records
        .iter()
        .flat_map(|r| r.objects.iter().map(|o| o.label.as_str()))
        .collect();
    set.into_iter().map(String::from).collect()
}

/// Train/val/test fractions and the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Result<Self, Error> {
        let ok = |f: f64| (0.0..=1.0).contains(&f);
        if !(ok(train) && ok(val) && ok(test)) {
            return Err(Error::InvalidConfig(
                "split fractions must each lie in [0, 1]".into(),
            ));
        }
        if (train + val + test - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split fractions sum to {}, not 1",
                train + val + test
            )));
        }
        Ok(SplitSpec {
            train,
            val,
            test,
            seed,
        })
    }

    /// `(train, val, test)` sizes for `n` images: floor, floor, remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // the small epsilon keeps 0.7 * 10 at 7 despite binary rounding
        let floor = |f: f64| libm::floor(f * n as f64 + 1e-9) as usize;
        let train = floor(self.train).min(n);
        let val = floor(self.val).min(n - train);
        (train, val, n - train - val)
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.7,
            val: 0.1,
            test: 0.2,
            seed: 0,
        }
    }
}

/// Image-id lists of a split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Seeded per-image shuffle, then train = first floor(train * N), val = the
/// next floor(val * N), test = the rest.
pub fn split_ids(ids: &[String], spec: &SplitSpec) -> Split {
    let mut order: Vec<String> = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let (n_train, n_val, _) = spec.sizes(order.len());
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Split {
        train: order,
        val,
        test,
    }
}

pub fn split_dataset(index: &DatasetIndex, spec: &SplitSpec) -> Result<Split, Error> {
    if index.is_empty() {
        return Err(Error::InvalidConfig("cannot split an empty dataset".into()));
    }
    let ids: Vec<String> = index.records.iter().map(|r| r.image_id.clone()).collect();
    Ok(split_ids(&ids, spec))
}

/// Annotation count per label.
pub fn class_histogram(index: &DatasetIndex) -> BTreeMap<String, usize> {
    let mut h = BTreeMap::new();
    for obj in index.records.iter().flat_map(|r| &r.objects) {
        *h.entry(obj.label.clone()).or_insert(0) += 1;
    }
    h
}

/// Keeps only labels with at least `min_count` annotations; images left
/// without objects are dropped.
pub fn filter_by_min_samples(index: &DatasetIndex, min_count: usize) -> DatasetIndex {
    let hist = class_histogram(index);
    let records: Vec<AnnotationRecord> = index
        .records
        .iter()
        .filter_map(|r| {
            let objects: Vec<ObjectAnnotation> = r
                .objects
                .iter()
                .filter(|o| hist[&o.label] >= min_count)
                .cloned()
                .collect();
            (!objects.is_empty()).then(|| AnnotationRecord {
                objects,
                ..r.clone()
            })
        })
        .collect();
    let catalog = catalog_of(&records);
    DatasetIndex { records, catalog }
}
