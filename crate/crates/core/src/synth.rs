//! Seeded synthetic datasets, classifiers and detectors.
//!
//! Used by the test suites, the benchmarks and for smoke-testing the CLI.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{
    size_bucket, AreaThresholds, Category, CategoryId, ClassifierOutput, Dataset, Detection,
    GroundTruth, ImageInfo, NeighborPrediction, Prediction,
};
use crate::geom::{sample_boxes_min_iou, BBox};

#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub images: usize,
    pub categories: usize,
    /// Boxes per image are drawn uniformly from this inclusive range.
    pub boxes_per_image: (usize, usize),
    pub width: u32,
    pub height: u32,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            images: 100,
            categories: 10,
            boxes_per_image: (1, 9),
            width: 640,
            height: 480,
        }
    }
}

/// Boxes of all three size classes, fully inside their image.
pub fn dataset(spec: &DatasetSpec, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images: Vec<ImageInfo> = (1..=spec.images as u64)
        .map(|id| ImageInfo {
            id,
            width: spec.width,
            height: spec.height,
            file_name: format!("synth_{id:05}.png"),
        })
        .collect();
    let categories: Vec<Category> = (1..=spec.categories as u64)
        .map(|id| Category {
            id,
            name: format!("class_{id}"),
        })
        .collect();
    let thresholds = AreaThresholds::default();
    let (w_img, h_img) = (spec.width as f64, spec.height as f64);
    let mut annotations = Vec::new();
    for img in &images {
        let n = rng.gen_range(spec.boxes_per_image.0..=spec.boxes_per_image.1);
        for _ in 0..n {
            // Log-uniform side lengths cover small, medium and large objects.
            let w = (rng.gen_range(2.0f64.ln()..(w_img / 2.0).ln())).exp();
            let h = (w * rng.gen_range(0.5..2.0)).min(h_img - 1.0);
            let x = rng.gen_range(0.0..(w_img - w));
            let y = rng.gen_range(0.0..(h_img - h));
            let bbox = BBox { x, y, w, h };
            annotations.push(GroundTruth {
                id: annotations.len() as u64 + 1,
                image_id: img.id,
                category_id: rng.gen_range(1..=spec.categories as u64),
                bbox,
                area: bbox.area(),
                size_class: size_bucket(bbox.area(), &thresholds),
            });
        }
    }
    Dataset::new(images, categories, annotations).expect("synthetic dataset is consistent")
}

fn noisy_label(
    rng: &mut impl Rng,
    truth: CategoryId,
    categories: &[CategoryId],
    accuracy: f64,
) -> Prediction {
    let correct = rng.gen_bool(accuracy) || categories.len() < 2;
    if correct {
        Prediction {
            label: truth,
            confidence: rng.gen_range(0.4..=1.0),
        }
    } else {
        let others: Vec<CategoryId> = categories.iter().copied().filter(|&c| c != truth).collect();
        Prediction {
            label: *others.choose(rng).expect("at least one other category"),
            confidence: rng.gen_range(0.05..0.9),
        }
    }
}

/// Top-1 outputs of a classifier that is right with probability `accuracy`.
/// Each output carries `neighbors` predictions on boxes with IOU >= 0.5.
pub fn classifier(
    ds: &Dataset,
    accuracy: f64,
    neighbors: usize,
    seed: u64,
) -> Vec<ClassifierOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cats: Vec<CategoryId> = ds.categories().iter().map(|c| c.id).collect();
    ds.annotations()
        .iter()
        .map(|gt| {
            let prediction = noisy_label(&mut rng, gt.category_id, &cats, accuracy);
            let neighbors = if neighbors == 0 {
                Vec::new()
            } else {
                sample_boxes_min_iou(&gt.bbox, 0.5, neighbors, rng.gen())
                    .expect("valid sampling parameters")
                    .into_iter()
                    .map(|bbox| {
                        let p = noisy_label(&mut rng, gt.category_id, &cats, accuracy);
                        NeighborPrediction {
                            bbox,
                            label: p.label,
                            confidence: p.confidence,
                        }
                    })
                    .collect()
            };
            ClassifierOutput {
                annotation_id: gt.id,
                prediction,
                neighbors,
            }
        })
        .collect()
}

/// Error rates of a simulated detector.
#[derive(Debug, Clone)]
pub struct DetectorSpec {
    pub miss_rate: f64,
    /// Std. deviation of box jitter as a fraction of the box side.
    pub jitter: f64,
    pub duplicate_rate: f64,
    pub mislocalize_rate: f64,
    pub wrong_class_rate: f64,
    /// Expected background detections per image.
    pub background_per_image: f64,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        DetectorSpec {
            miss_rate: 0.15,
            jitter: 0.08,
            duplicate_rate: 0.15,
            mislocalize_rate: 0.1,
            wrong_class_rate: 0.05,
            background_per_image: 1.5,
        }
    }
}

fn gauss(rng: &mut impl Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn jittered(rng: &mut impl Rng, b: &BBox, sigma: f64) -> BBox {
    let w = (b.w * (1.0 + sigma * gauss(rng))).max(1.0);
    let h = (b.h * (1.0 + sigma * gauss(rng))).max(1.0);
    BBox {
        x: b.x + sigma * b.w * gauss(rng),
        y: b.y + sigma * b.h * gauss(rng),
        w,
        h,
    }
}

pub fn detector(ds: &Dataset, spec: &DetectorSpec, seed: u64) -> Vec<Detection> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cats: Vec<CategoryId> = ds.categories().iter().map(|c| c.id).collect();
    let mut out = Vec::new();
    for gt in ds.annotations() {
        if rng.gen_bool(spec.miss_rate) {
            continue;
        }
        let category_id = if rng.gen_bool(spec.wrong_class_rate) {
            *cats.choose(&mut rng).expect("categories exist")
        } else {
            gt.category_id
        };
        let bbox = if rng.gen_bool(spec.mislocalize_rate) {
            // Shift by most of the box so the IOU lands well below 0.5.
            let fx = rng.gen_range(0.55..0.8) * if rng.gen() { 1.0 } else { -1.0 };
            gt.bbox
                .translate(fx * gt.bbox.w, rng.gen_range(-0.2..0.2) * gt.bbox.h)
        } else {
            jittered(&mut rng, &gt.bbox, spec.jitter)
        };
        out.push(Detection {
            image_id: gt.image_id,
            category_id,
            bbox,
            score: rng.gen_range(0.3..=1.0),
        });
        if rng.gen_bool(spec.duplicate_rate) {
            out.push(Detection {
                image_id: gt.image_id,
                category_id,
                bbox: jittered(&mut rng, &gt.bbox, spec.jitter),
                score: rng.gen_range(0.05..0.7),
            });
        }
    }
    for img in ds.images() {
        let (w_img, h_img) = (img.width as f64, img.height as f64);
        let n = (spec.background_per_image * 2.0 * rng.gen::<f64>()).round() as usize;
        for _ in 0..n {
            let w = rng.gen_range(4.0..w_img / 3.0);
            let h = rng.gen_range(4.0..h_img / 3.0);
            out.push(Detection {
                image_id: img.id,
                category_id: *cats.choose(&mut rng).expect("categories exist"),
                bbox: BBox {
                    x: rng.gen_range(0.0..w_img - w),
                    y: rng.gen_range(0.0..h_img - h),
                    w,
                    h,
                },
                score: rng.gen_range(0.05..0.9),
            });
        }
    }
    out
}
