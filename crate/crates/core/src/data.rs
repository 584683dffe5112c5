//! Annotation, detection and classifier-output data model plus JSON ingestion.
//!
//! Annotations follow the COCO instances layout (`images`, `categories`,
//! `annotations`). Detections follow the COCO results layout. Classifier
//! outputs use a small schema of their own:
//!
//! ```json
//! [{"annotation_id": 3, "label": 1, "confidence": 0.92,
//!   "neighbors": [{"bbox": [10, 12, 40, 30], "label": 1, "confidence": 0.7}]}]
//! ```

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::BBox;

pub type ImageId = u64;
pub type CategoryId = u64;
pub type AnnotationId = u64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: ImageId,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub file_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: CategoryId,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl SizeClass {
    pub const ALL: [SizeClass; 3] = [SizeClass::Small, SizeClass::Medium, SizeClass::Large];
}

/// Upper area bounds (inclusive) of the small and medium buckets, in px².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaThresholds {
    pub small_max: f64,
    pub medium_max: f64,
}

impl Default for AreaThresholds {
    fn default() -> Self {
        AreaThresholds {
            small_max: 32.0 * 32.0,
            medium_max: 96.0 * 96.0,
        }
    }
}

pub fn size_bucket(area: f64, thresholds: &AreaThresholds) -> SizeClass {
    if area <= thresholds.small_max {
        SizeClass::Small
    } else if area <= thresholds.medium_max {
        SizeClass::Medium
    } else {
        SizeClass::Large
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub id: AnnotationId,
    pub image_id: ImageId,
    pub category_id: CategoryId,
    pub bbox: BBox,
    pub area: f64,
    pub size_class: SizeClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: ImageId,
    pub category_id: CategoryId,
    pub bbox: BBox,
    pub score: f64,
}

/// A top-1 classifier prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: CategoryId,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborPrediction {
    pub bbox: BBox,
    pub label: CategoryId,
    pub confidence: f64,
}

impl NeighborPrediction {
    pub fn prediction(&self) -> Prediction {
        Prediction {
            label: self.label,
            confidence: self.confidence,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierOutput {
    pub annotation_id: AnnotationId,
    pub prediction: Prediction,
    pub neighbors: Vec<NeighborPrediction>,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub area: AreaThresholds,
    /// Silently drop crowd annotations instead of rejecting the file.
    pub drop_crowd: bool,
}

/// A validated annotation set.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    images: Vec<ImageInfo>,
    categories: Vec<Category>,
    annotations: Vec<GroundTruth>,
    image_index: HashMap<ImageId, usize>,
    category_index: HashMap<CategoryId, usize>,
    annotation_index: HashMap<AnnotationId, usize>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.images == other.images
            && self.categories == other.categories
            && self.annotations == other.annotations
    }
}

impl Dataset {
    /// Builds a dataset, checking id uniqueness and references.
    pub fn new(
        images: Vec<ImageInfo>,
        categories: Vec<Category>,
        annotations: Vec<GroundTruth>,
    ) -> Result<Self> {
        let mut image_index = HashMap::with_capacity(images.len());
        for (i, img) in images.iter().enumerate() {
            if image_index.insert(img.id, i).is_some() {
                return Err(Error::validation(
                    format!("image {}", img.id),
                    "duplicate image id",
                ));
            }
        }
        let mut category_index = HashMap::with_capacity(categories.len());
        for (i, cat) in categories.iter().enumerate() {
            if category_index.insert(cat.id, i).is_some() {
                return Err(Error::validation(
                    format!("category {}", cat.id),
                    "duplicate category id",
                ));
            }
        }
        let mut annotation_index = HashMap::with_capacity(annotations.len());
        for (i, ann) in annotations.iter().enumerate() {
            let record = format!("annotation {}", ann.id);
            if annotation_index.insert(ann.id, i).is_some() {
                return Err(Error::validation(record, "duplicate annotation id"));
            }
            if !image_index.contains_key(&ann.image_id) {
                return Err(Error::validation(
                    record,
                    format!("unknown image_id {}", ann.image_id),
                ));
            }
            if !category_index.contains_key(&ann.category_id) {
                return Err(Error::validation(
                    record,
                    format!("unknown category_id {}", ann.category_id),
                ));
            }
            if !(ann.area > 0.0 && ann.area.is_finite()) {
                return Err(Error::validation(
                    record,
                    format!("non-positive area {}", ann.area),
                ));
            }
        }
        Ok(Dataset {
            images,
            categories,
            annotations,
            image_index,
            category_index,
            annotation_index,
        })
    }

    pub fn from_json_str(json: &str, opts: &LoadOptions) -> Result<Self> {
        let raw: RawDataset = serde_json::from_str(json).map_err(|source| Error::Parse {
            what: "annotation file".into(),
            source,
        })?;
        let mut annotations = Vec::with_capacity(raw.annotations.len());
        for ann in raw.annotations {
            let record = format!("annotation {}", ann.id);
            if ann.iscrowd.is_some_and(|c| c.is_set()) {
                if opts.drop_crowd {
                    continue;
                }
                return Err(Error::validation(
                    record,
                    "crowd annotations are not supported (use the drop-crowd option)",
                ));
            }
            let bbox =
                BBox::try_from(ann.bbox).map_err(|e| Error::validation(&record, e.to_string()))?;
            let area = ann.area.unwrap_or_else(|| bbox.area());
            annotations.push(GroundTruth {
                id: ann.id,
                image_id: ann.image_id,
                category_id: ann.category_id,
                bbox,
                area,
                size_class: size_bucket(area, &opts.area),
            });
        }
        Dataset::new(raw.images, raw.categories, annotations)
    }

    pub fn to_json_string(&self) -> String {
        let raw = RawDataset {
            images: self.images.clone(),
            categories: self.categories.clone(),
            annotations: self
                .annotations
                .iter()
                .map(|a| RawAnnotation {
                    id: a.id,
                    image_id: a.image_id,
                    category_id: a.category_id,
                    bbox: a.bbox.to_array(),
                    area: Some(a.area),
                    iscrowd: None,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("dataset serialization cannot fail")
    }

    pub fn images(&self) -> &[ImageInfo] {
        &self.images
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn annotations(&self) -> &[GroundTruth] {
        &self.annotations
    }

    pub fn image(&self, id: ImageId) -> Option<&ImageInfo> {
        self.image_index.get(&id).map(|&i| &self.images[i])
    }

    pub fn category(&self, id: CategoryId) -> Option<&Category> {
        self.category_index.get(&id).map(|&i| &self.categories[i])
    }

    pub fn annotation(&self, id: AnnotationId) -> Option<&GroundTruth> {
        self.annotation_index
            .get(&id)
            .map(|&i| &self.annotations[i])
    }

    /// Same images and categories, different annotations.
    pub fn with_annotations(&self, annotations: Vec<GroundTruth>) -> Result<Self> {
        Dataset::new(self.images.clone(), self.categories.clone(), annotations)
    }
}

pub fn load_dataset(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<Dataset> {
    let path = path.as_ref();
    Dataset::from_json_str(&read(path)?, opts)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ds.to_json_string()).map_err(|e| Error::io(path, e))
}

/// Parses COCO-style detection results. File order is preserved.
pub fn parse_detections(json: &str, ds: &Dataset) -> Result<Vec<Detection>> {
    let raw: Vec<RawDetection> = serde_json::from_str(json).map_err(|source| Error::Parse {
        what: "detection file".into(),
        source,
    })?;
    raw.into_iter()
        .enumerate()
        .map(|(i, d)| {
            let record = format!("detection #{i}");
            check_image(ds, &record, d.image_id)?;
            check_category(ds, &record, d.category_id)?;
            check_confidence(&record, d.score)?;
            let bbox =
                BBox::try_from(d.bbox).map_err(|e| Error::validation(&record, e.to_string()))?;
            Ok(Detection {
                image_id: d.image_id,
                category_id: d.category_id,
                bbox,
                score: d.score,
            })
        })
        .collect()
}

pub fn load_detections(path: impl AsRef<Path>, ds: &Dataset) -> Result<Vec<Detection>> {
    parse_detections(&read(path.as_ref())?, ds)
}

pub fn detections_to_json_string(dets: &[Detection]) -> String {
    serde_json::to_string_pretty(dets).expect("detection serialization cannot fail")
}

pub fn parse_classifier_outputs(json: &str, ds: &Dataset) -> Result<Vec<ClassifierOutput>> {
    let raw: Vec<RawClassifierOutput> =
        serde_json::from_str(json).map_err(|source| Error::Parse {
            what: "classifier output file".into(),
            source,
        })?;
    let mut seen = HashSet::with_capacity(raw.len());
    raw.into_iter()
        .map(|r| {
            let record = format!("classifier output for annotation {}", r.annotation_id);
            if ds.annotation(r.annotation_id).is_none() {
                return Err(Error::validation(record, "unknown annotation_id"));
            }
            if !seen.insert(r.annotation_id) {
                return Err(Error::validation(record, "duplicate annotation_id"));
            }
            check_category(ds, &record, r.label)?;
            check_confidence(&record, r.confidence)?;
            let neighbors = r
                .neighbors
                .into_iter()
                .enumerate()
                .map(|(j, n)| {
                    let nrec = format!("{record}, neighbor #{j}");
                    check_category(ds, &nrec, n.label)?;
                    check_confidence(&nrec, n.confidence)?;
                    let bbox = BBox::try_from(n.bbox)
                        .map_err(|e| Error::validation(&nrec, e.to_string()))?;
                    Ok(NeighborPrediction {
                        bbox,
                        label: n.label,
                        confidence: n.confidence,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ClassifierOutput {
                annotation_id: r.annotation_id,
                prediction: Prediction {
                    label: r.label,
                    confidence: r.confidence,
                },
                neighbors,
            })
        })
        .collect()
}

pub fn load_classifier_outputs(
    path: impl AsRef<Path>,
    ds: &Dataset,
) -> Result<Vec<ClassifierOutput>> {
    parse_classifier_outputs(&read(path.as_ref())?, ds)
}

pub fn classifier_outputs_to_json_string(outputs: &[ClassifierOutput]) -> String {
    let raw: Vec<RawClassifierOutput> = outputs
        .iter()
        .map(|o| RawClassifierOutput {
            annotation_id: o.annotation_id,
            label: o.prediction.label,
            confidence: o.prediction.confidence,
            neighbors: o
                .neighbors
                .iter()
                .map(|n| RawNeighbor {
                    bbox: n.bbox.to_array(),
                    label: n.label,
                    confidence: n.confidence,
                })
                .collect(),
        })
        .collect();
    serde_json::to_string_pretty(&raw).expect("classifier output serialization cannot fail")
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn check_image(ds: &Dataset, record: &str, id: ImageId) -> Result<()> {
    match ds.image(id) {
        Some(_) => Ok(()),
        None => Err(Error::validation(record, format!("unknown image_id {id}"))),
    }
}

fn check_category(ds: &Dataset, record: &str, id: CategoryId) -> Result<()> {
    match ds.category(id) {
        Some(_) => Ok(()),
        None => Err(Error::validation(
            record,
            format!("unknown category_id {id}"),
        )),
    }
}

fn check_confidence(record: &str, c: f64) -> Result<()> {
    if (0.0..=1.0).contains(&c) {
        Ok(())
    } else {
        Err(Error::validation(
            record,
            format!("confidence {c} outside [0, 1]"),
        ))
    }
}

#[derive(Deserialize, Serialize)]
struct RawDataset {
    #[serde(default)]
    images: Vec<ImageInfo>,
    #[serde(default)]
    categories: Vec<Category>,
    #[serde(default)]
    annotations: Vec<RawAnnotation>,
}

#[derive(Deserialize, Serialize)]
struct RawAnnotation {
    id: AnnotationId,
    image_id: ImageId,
    category_id: CategoryId,
    bbox: [f64; 4],
    #[serde(default)]
    area: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    iscrowd: Option<CrowdFlag>,
}

#[derive(Deserialize, Serialize, Clone, Copy)]
#[serde(untagged)]
enum CrowdFlag {
    Int(u64),
    Bool(bool),
}

impl CrowdFlag {
    fn is_set(self) -> bool {
        match self {
            CrowdFlag::Int(v) => v != 0,
            CrowdFlag::Bool(b) => b,
        }
    }
}

#[derive(Deserialize)]
struct RawDetection {
    image_id: ImageId,
    category_id: CategoryId,
    bbox: [f64; 4],
    score: f64,
}

#[derive(Deserialize, Serialize)]
struct RawClassifierOutput {
    annotation_id: AnnotationId,
    label: CategoryId,
    confidence: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    neighbors: Vec<RawNeighbor>,
}

#[derive(Deserialize, Serialize)]
struct RawNeighbor {
    bbox: [f64; 4],
    label: CategoryId,
    confidence: f64,
}
