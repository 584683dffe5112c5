//! Shared fixtures and a brute-force AP reference for the integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use detbound_core::data::{size_bucket, AreaThresholds};
use detbound_core::eval::coco_iou_grid;
use detbound_core::{BBox, Category, Dataset, Detection, GroundTruth, ImageInfo};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mini")
}

pub fn bb(x: f64, y: f64, w: f64, h: f64) -> BBox {
    BBox::new(x, y, w, h).unwrap()
}

pub fn gt(id: u64, image_id: u64, category_id: u64, bbox: BBox) -> GroundTruth {
    GroundTruth {
        id,
        image_id,
        category_id,
        bbox,
        area: bbox.area(),
        size_class: size_bucket(bbox.area(), &AreaThresholds::default()),
    }
}

pub fn det(image_id: u64, category_id: u64, bbox: BBox, score: f64) -> Detection {
    Detection {
        image_id,
        category_id,
        bbox,
        score,
    }
}

pub fn dataset(n_images: u64, n_categories: u64, annotations: Vec<GroundTruth>) -> Dataset {
    let images = (1..=n_images)
        .map(|id| ImageInfo {
            id,
            width: 200,
            height: 200,
            file_name: format!("{id}.png"),
        })
        .collect();
    let categories = (1..=n_categories)
        .map(|id| Category {
            id,
            name: format!("c{id}"),
        })
        .collect();
    Dataset::new(images, categories, annotations).unwrap()
}

/// A small random instance: up to 5 targets, up to 10 detections, up to 3
/// categories, boxes on a coarse grid so overlaps and score ties are common.
pub fn small_instance(seed: u64) -> (Dataset, Vec<Detection>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_images = rng.gen_range(1..=3);
    let n_cats = rng.gen_range(1..=3);
    let grid_box = |rng: &mut ChaCha8Rng| {
        bb(
            rng.gen_range(0..8) as f64 * 5.0,
            rng.gen_range(0..8) as f64 * 5.0,
            rng.gen_range(2..8) as f64 * 5.0,
            rng.gen_range(2..8) as f64 * 5.0,
        )
    };
    let n_gt = rng.gen_range(0..=5);
    let gts: Vec<GroundTruth> = (0..n_gt)
        .map(|i| {
            let b = grid_box(&mut rng);
            gt(
                i + 1,
                rng.gen_range(1..=n_images),
                rng.gen_range(1..=n_cats),
                b,
            )
        })
        .collect();
    let n_det = rng.gen_range(0..=10);
    let dets = (0..n_det)
        .map(|_| {
            // Some detections perturb a target so true positives occur.
            let b = match gts.get(rng.gen_range(0..gts.len().max(1) * 2)) {
                Some(g) if rng.gen_bool(0.8) => {
                    let b = g.bbox;
                    return det(
                        g.image_id,
                        if rng.gen_bool(0.85) {
                            g.category_id
                        } else {
                            rng.gen_range(1..=n_cats)
                        },
                        bb(
                            b.x + rng.gen_range(-2..=2) as f64 * 2.0,
                            b.y + rng.gen_range(-2..=2) as f64 * 2.0,
                            b.w + rng.gen_range(-1..=2) as f64 * 2.0,
                            b.h + rng.gen_range(-1..=2) as f64 * 2.0,
                        ),
                        rng.gen_range(1..=9) as f64 / 10.0,
                    );
                }
                _ => grid_box(&mut rng),
            };
            det(
                rng.gen_range(1..=n_images),
                rng.gen_range(1..=n_cats),
                b,
                rng.gen_range(1..=9) as f64 / 10.0,
            )
        })
        .collect();
    (dataset(n_images, n_cats, gts), dets)
}

/// IOU from corner coordinates.
pub fn oracle_iou(a: &BBox, b: &BBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = (a.x, a.y, a.x + a.w, a.y + a.h);
    let (bx1, by1, bx2, by2) = (b.x, b.y, b.x + b.w, b.y + b.h);
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    inter / ((ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter)
}

/// AP in `[0, 1]` of one category at one threshold over all sizes, by direct
/// enumeration: per-image greedy matching, global ranking, then the max
/// precision at recall >= r/100 for every r in 0..=100. `None` without targets.
pub fn oracle_ap(ds: &Dataset, dets: &[Detection], category: u64, t: f64) -> Option<f64> {
    let gts: Vec<&GroundTruth> = ds
        .annotations()
        .iter()
        .filter(|g| g.category_id == category)
        .collect();
    let n_gt = gts.len();
    if n_gt == 0 {
        return None;
    }
    let mut image_ids: Vec<u64> = ds.images().iter().map(|i| i.id).collect();
    image_ids.sort();
    // (score, image id, rank in image, is tp)
    let mut pooled: Vec<(f64, u64, usize, bool)> = Vec::new();
    for &img in &image_ids {
        let mut mine: Vec<&Detection> = dets
            .iter()
            .filter(|d| d.image_id == img && d.category_id == category)
            .collect();
        // Insertion sort by descending score keeps equal scores in input order.
        for i in 1..mine.len() {
            let mut j = i;
            while j > 0 && mine[j - 1].score < mine[j].score {
                mine.swap(j - 1, j);
                j -= 1;
            }
        }
        mine.truncate(100);
        let targets: Vec<&&GroundTruth> = gts.iter().filter(|g| g.image_id == img).collect();
        let mut taken = vec![false; targets.len()];
        for (rank, d) in mine.iter().enumerate() {
            let mut best: Option<usize> = None;
            for (g, target) in targets.iter().enumerate() {
                let v = oracle_iou(&d.bbox, &target.bbox);
                if taken[g] || v < t {
                    continue;
                }
                if best.is_none_or(|b| v >= oracle_iou(&d.bbox, &targets[b].bbox)) {
                    best = Some(g);
                }
            }
            if let Some(g) = best {
                taken[g] = true;
            }
            pooled.push((d.score, img, rank, best.is_some()));
        }
    }
    pooled.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for e in &pooled {
        if e.3 {
            tp += 1;
        } else {
            fp += 1;
        }
        points.push((tp, tp as f64 / (tp + fp) as f64));
    }
    let total: f64 = (0..=100usize)
        .map(|r| {
            points
                .iter()
                .filter(|(tp, _)| 100 * tp >= r * n_gt)
                .map(|p| p.1)
                .fold(0.0, f64::max)
        })
        .sum();
    Some(total / 101.0)
}

/// mAP in `[0, 1]` over the COCO grid, categories without targets excluded.
pub fn oracle_map(ds: &Dataset, dets: &[Detection]) -> Option<f64> {
    let per_t: Vec<f64> = coco_iou_grid()
        .into_iter()
        .filter_map(|t| {
            let aps: Vec<f64> = ds
                .categories()
                .iter()
                .filter_map(|c| oracle_ap(ds, dets, c.id, t))
                .collect();
            (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
        })
        .collect();
    (!per_t.is_empty()).then(|| per_t.iter().sum::<f64>() / per_t.len() as f64)
}

pub fn by_category<T: Clone>(items: &[T], key: impl Fn(&T) -> u64) -> BTreeMap<u64, Vec<T>> {
    let mut out: BTreeMap<u64, Vec<T>> = BTreeMap::new();
    for it in items {
        out.entry(key(it)).or_default().push(it.clone());
    }
    out
}
