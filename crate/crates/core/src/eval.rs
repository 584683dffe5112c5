//! Greedy detection/target matching, precision-recall curves and AP.
//!
//! Matching and accumulation follow the COCO convention: detections are
//! ranked per (image, category), matched greedily to the highest-IOU free
//! target, then pooled over images and ranked again by score to build one
//! precision-recall curve per (category, IOU threshold, size bucket).
//! All reported APs are scaled by 100.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    size_bucket, AreaThresholds, CategoryId, Dataset, Detection, GroundTruth, SizeClass,
};
use crate::error::{Error, Result};
use crate::geom::{iou, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Mean of the max-interpolated precision at recall 0, 0.01, ..., 1.
    #[serde(rename = "coco_101pt")]
    Coco101,
    /// Area under the all-points interpolated curve (VOC 2010+ style).
    VocAllPoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub area: AreaThresholds,
    /// Per (image, category) cap on ranked detections; `None` is unlimited.
    pub max_dets_per_image: Option<usize>,
    pub interpolation: Interpolation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_thresholds: coco_iou_grid(),
            area: AreaThresholds::default(),
            max_dets_per_image: Some(100),
            interpolation: Interpolation::Coco101,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iou_thresholds.is_empty() {
            return Err(Error::Precondition(
                "at least one IOU threshold is required".into(),
            ));
        }
        if self.iou_thresholds.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
            return Err(Error::Precondition(format!(
                "IOU thresholds must lie in (0, 1]: {:?}",
                self.iou_thresholds
            )));
        }
        if self.iou_thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Precondition(format!(
                "IOU thresholds must be strictly increasing: {:?}",
                self.iou_thresholds
            )));
        }
        if !(self.area.small_max > 0.0 && self.area.small_max < self.area.medium_max) {
            return Err(Error::Precondition(format!(
                "bad area thresholds {:?}",
                self.area
            )));
        }
        if self.max_dets_per_image == Some(0) {
            return Err(Error::Precondition(
                "max_dets_per_image must be at least 1".into(),
            ));
        }
        Ok(())
    }

    fn threshold_index(&self, t: f64) -> Option<usize> {
        self.iou_thresholds
            .iter()
            .position(|&x| (x - t).abs() < 1e-9)
    }
}

/// 0.5:0.05:0.95, generated the way numpy's `linspace` generates it.
pub fn coco_iou_grid() -> Vec<f64> {
    linspace(0.5, 0.95, 10)
}

/// Recall sample points of the 101-point interpolation.
pub fn recall_thresholds() -> Vec<f64> {
    linspace(0.0, 1.0, 101)
}

fn linspace(start: f64, stop: f64, num: usize) -> Vec<f64> {
    let step = (stop - start) / (num - 1) as f64;
    let mut v: Vec<f64> = (0..num).map(|i| i as f64 * step + start).collect();
    v[num - 1] = stop;
    v
}

/// Size bucket used to restrict an evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AreaRange {
    All,
    Only(SizeClass),
}

impl AreaRange {
    pub const ALL: [AreaRange; 4] = [
        AreaRange::All,
        AreaRange::Only(SizeClass::Small),
        AreaRange::Only(SizeClass::Medium),
        AreaRange::Only(SizeClass::Large),
    ];

    fn contains(self, area: f64, thresholds: &AreaThresholds) -> bool {
        match self {
            AreaRange::All => true,
            AreaRange::Only(class) => size_bucket(area, thresholds) == class,
        }
    }
}

/// Outcome of matching ranked detections against the targets of one
/// (image, category) pair at one IOU threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Target index assigned to each detection.
    pub det_to_gt: Vec<Option<usize>>,
    /// Highest IOU of each detection over all targets (0 when there are none).
    pub max_iou: Vec<f64>,
    /// Target attaining `max_iou`; the first one on ties.
    pub argmax: Vec<Option<usize>>,
    /// Detection index assigned to each target.
    pub gt_to_det: Vec<Option<usize>>,
}

impl MatchResult {
    pub fn is_tp(&self, det: usize) -> bool {
        self.det_to_gt[det].is_some()
    }
}

pub(crate) fn iou_matrix(dets: &[BBox], gts: &[BBox]) -> Vec<Vec<f64>> {
    dets.iter()
        .map(|d| gts.iter().map(|g| iou(d, g)).collect())
        .collect()
}

/// Greedy assignment in rank order. Each detection takes the free target
/// with the highest IOU at or above `t`, preferring non-ignored targets;
/// among equal IOUs the later target wins, as in the COCO reference code.
pub(crate) fn greedy_match(
    ious: &[Vec<f64>],
    gt_ignored: &[bool],
    t: f64,
) -> (Vec<Option<usize>>, Vec<Option<usize>>) {
    let n_gt = gt_ignored.len();
    let mut det_to_gt = vec![None; ious.len()];
    let mut gt_to_det = vec![None; n_gt];
    let floor = t.min(1.0 - 1e-10);
    for (d, row) in ious.iter().enumerate() {
        let pick = |want_ignored: bool, gt_to_det: &[Option<usize>]| {
            let mut best = None;
            let mut best_iou = floor;
            for g in 0..n_gt {
                if gt_ignored[g] != want_ignored || gt_to_det[g].is_some() || row[g] < best_iou {
                    continue;
                }
                best_iou = row[g];
                best = Some(g);
            }
            best
        };
        if let Some(g) = pick(false, &gt_to_det).or_else(|| pick(true, &gt_to_det)) {
            det_to_gt[d] = Some(g);
            gt_to_det[g] = Some(d);
        }
    }
    (det_to_gt, gt_to_det)
}

fn max_and_argmax(row: &[f64]) -> (f64, Option<usize>) {
    row.iter()
        .enumerate()
        .fold((0.0, None), |(best, arg), (g, &v)| {
            if arg.is_none() || v > best {
                (v, Some(g))
            } else {
                (best, arg)
            }
        })
}

/// Matches detections (already ranked by descending score, ties in input
/// order) to the targets of a single image and category.
pub fn match_image_category(dets: &[Detection], gts: &[GroundTruth], t: f64) -> MatchResult {
    let dboxes: Vec<BBox> = dets.iter().map(|d| d.bbox).collect();
    let gboxes: Vec<BBox> = gts.iter().map(|g| g.bbox).collect();
    let ious = iou_matrix(&dboxes, &gboxes);
    let (det_to_gt, gt_to_det) = greedy_match(&ious, &vec![false; gts.len()], t);
    let (max_iou, argmax) = ious.iter().map(|row| max_and_argmax(row)).unzip();
    MatchResult {
        det_to_gt,
        max_iou,
        argmax,
        gt_to_det,
    }
}

/// Stable ranking by descending score.
pub fn rank_by_score<T>(items: &mut [T], score: impl Fn(&T) -> f64) {
    items.sort_by(|a, b| score(b).total_cmp(&score(a)));
}

/// Deterministic order independent of file order: image, category, box, score.
pub fn canonical_order(dets: &mut [Detection]) {
    dets.sort_by(|a, b| {
        a.image_id
            .cmp(&b.image_id)
            .then(a.category_id.cmp(&b.category_id))
            .then(a.bbox.x.total_cmp(&b.bbox.x))
            .then(a.bbox.y.total_cmp(&b.bbox.y))
            .then(a.bbox.w.total_cmp(&b.bbox.w))
            .then(a.bbox.h.total_cmp(&b.bbox.h))
            .then(b.score.total_cmp(&a.score))
    });
}

/// Ranked `(score, is_tp)` sequence plus the number of targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    ranked: Vec<(f64, bool)>,
    n_gt: usize,
}

impl PrCurve {
    /// `ranked` must already be ordered by descending score.
    pub fn new(ranked: Vec<(f64, bool)>, n_gt: usize) -> Result<Self> {
        if ranked.windows(2).any(|w| w[0].0 < w[1].0) {
            return Err(Error::Precondition(
                "PR curve entries must be ranked by descending score".into(),
            ));
        }
        let tps = ranked.iter().filter(|e| e.1).count();
        if tps > n_gt {
            return Err(Error::Precondition(format!(
                "{tps} true positives exceed {n_gt} targets"
            )));
        }
        Ok(PrCurve { ranked, n_gt })
    }

    /// Ranks `entries` stably by descending score first.
    pub fn from_unranked(mut entries: Vec<(f64, bool)>, n_gt: usize) -> Result<Self> {
        rank_by_score(&mut entries, |e| e.0);
        PrCurve::new(entries, n_gt)
    }

    pub fn n_gt(&self) -> usize {
        self.n_gt
    }

    pub fn len(&self) -> usize {
        self.ranked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranked.is_empty()
    }

    fn cumulative(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.ranked.iter().scan((0u64, 0u64), |acc, &(_, tp)| {
            if tp {
                acc.0 += 1;
            } else {
                acc.1 += 1;
            }
            Some((acc.0 as f64, acc.1 as f64))
        })
    }

    pub fn recall(&self) -> Vec<f64> {
        let n = self.n_gt as f64;
        self.cumulative().map(|(tp, _)| tp / n).collect()
    }

    pub fn precision(&self) -> Vec<f64> {
        self.cumulative().map(|(tp, fp)| tp / (tp + fp)).collect()
    }

    /// Final recall, 0 without detections.
    pub fn final_recall(&self) -> f64 {
        self.recall().last().copied().unwrap_or(0.0)
    }

    /// Precision made non-increasing from the right.
    fn envelope(&self) -> Vec<f64> {
        let mut pr = self.precision();
        for i in (1..pr.len()).rev() {
            if pr[i] > pr[i - 1] {
                pr[i - 1] = pr[i];
            }
        }
        pr
    }

    /// Interpolated precision at each of the 101 recall thresholds.
    /// `None` when there are no targets.
    pub fn interpolated_101(&self) -> Option<Vec<f64>> {
        if self.n_gt == 0 {
            return None;
        }
        let rc = self.recall();
        let pr = self.envelope();
        Some(
            recall_thresholds()
                .into_iter()
                .map(|r| {
                    let idx = rc.partition_point(|&x| x < r);
                    pr.get(idx).copied().unwrap_or(0.0)
                })
                .collect(),
        )
    }
}

/// AP of a curve as a ratio in `[0, 1]`; `None` when `n_gt` is zero.
pub fn average_precision(curve: &PrCurve, mode: Interpolation) -> Option<f64> {
    if curve.n_gt == 0 {
        return None;
    }
    match mode {
        Interpolation::Coco101 => {
            let q = curve.interpolated_101()?;
            Some(q.iter().sum::<f64>() / q.len() as f64)
        }
        Interpolation::VocAllPoints => {
            let mut mrec = Vec::with_capacity(curve.len() + 2);
            mrec.push(0.0);
            mrec.extend(curve.recall());
            mrec.push(1.0);
            let mut mpre = Vec::with_capacity(curve.len() + 2);
            mpre.push(0.0);
            mpre.extend(curve.precision());
            mpre.push(0.0);
            for i in (1..mpre.len()).rev() {
                mpre[i - 1] = mpre[i - 1].max(mpre[i]);
            }
            Some(
                (0..mrec.len() - 1)
                    .filter(|&i| mrec[i + 1] != mrec[i])
                    .map(|i| (mrec[i + 1] - mrec[i]) * mpre[i + 1])
                    .sum(),
            )
        }
    }
}

/// Arithmetic mean that returns the common value exactly when all inputs
/// are equal. `None` for an empty input.
pub(crate) fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let values: Vec<f64> = values.into_iter().collect();
    let first = *values.first()?;
    if values.iter().all(|v| v.to_bits() == first.to_bits()) {
        return Some(first);
    }
    Some(values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DetState {
    Matched,
    Unmatched,
    Ignored,
}

/// Per (image, category) matching at every threshold and area range.
struct PairEval {
    category: usize,
    scores: Vec<f64>,
    /// Indexed by area range.
    areas: Vec<AreaEval>,
}

struct AreaEval {
    n_gt: usize,
    /// `states[t][d]`
    states: Vec<Vec<DetState>>,
}

fn evaluate_pair(
    category: usize,
    dets: &[&Detection],
    gts: &[&GroundTruth],
    cfg: &EvalConfig,
) -> PairEval {
    let dboxes: Vec<BBox> = dets.iter().map(|d| d.bbox).collect();
    let gboxes: Vec<BBox> = gts.iter().map(|g| g.bbox).collect();
    let ious = iou_matrix(&dboxes, &gboxes);
    let areas = AreaRange::ALL
        .iter()
        .map(|range| {
            let gt_ignored: Vec<bool> = gts
                .iter()
                .map(|g| !range.contains(g.area, &cfg.area))
                .collect();
            let det_out: Vec<bool> = dets
                .iter()
                .map(|d| !range.contains(d.bbox.area(), &cfg.area))
                .collect();
            let states = cfg
                .iou_thresholds
                .iter()
                .map(|&t| {
                    let (det_to_gt, _) = greedy_match(&ious, &gt_ignored, t);
                    det_to_gt
                        .iter()
                        .zip(&det_out)
                        .map(|(m, &out)| match m {
                            Some(g) if gt_ignored[*g] => DetState::Ignored,
                            Some(_) => DetState::Matched,
                            None if out => DetState::Ignored,
                            None => DetState::Unmatched,
                        })
                        .collect()
                })
                .collect();
            AreaEval {
                n_gt: gt_ignored.iter().filter(|&&ig| !ig).count(),
                states,
            }
        })
        .collect();
    PairEval {
        category,
        scores: dets.iter().map(|d| d.score).collect(),
        areas,
    }
}

/// AP, recall and interpolated precision of one (area, threshold, category) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub ap: f64,
    pub recall: f64,
    pub precision_101: Vec<f64>,
}

/// Full evaluation state; `report()` summarizes it.
#[derive(Debug, Clone)]
pub struct Evaluation {
    config: EvalConfig,
    categories: Vec<(CategoryId, String, usize)>,
    /// `cells[a][t][k]`
    cells: Vec<Vec<Vec<Option<CellResult>>>>,
}

pub fn evaluate(ds: &Dataset, dets: &[Detection], cfg: &EvalConfig) -> Result<EvalReport> {
    Ok(evaluate_detailed(ds, dets, cfg)?.report())
}

pub fn evaluate_detailed(ds: &Dataset, dets: &[Detection], cfg: &EvalConfig) -> Result<Evaluation> {
    cfg.validate()?;

    let mut cat_ids: Vec<CategoryId> = ds.categories().iter().map(|c| c.id).collect();
    cat_ids.sort_unstable();
    let cat_pos: HashMap<CategoryId, usize> =
        cat_ids.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut img_ids: Vec<u64> = ds.images().iter().map(|i| i.id).collect();
    img_ids.sort_unstable();
    let img_pos: HashMap<u64, usize> = img_ids.iter().enumerate().map(|(i, &c)| (c, i)).collect();

    type Pair<'a> = (Vec<&'a GroundTruth>, Vec<&'a Detection>);
    let mut pairs: BTreeMap<(usize, usize), Pair> = BTreeMap::new();
    for g in ds.annotations() {
        let key = (cat_pos[&g.category_id], img_pos[&g.image_id]);
        pairs.entry(key).or_default().0.push(g);
    }
    for (i, d) in dets.iter().enumerate() {
        let (Some(&k), Some(&m)) = (cat_pos.get(&d.category_id), img_pos.get(&d.image_id)) else {
            return Err(Error::validation(
                format!("detection #{i}"),
                format!("unknown image {} or category {}", d.image_id, d.category_id),
            ));
        };
        pairs.entry((k, m)).or_default().1.push(d);
    }

    let pair_evals: Vec<PairEval> = pairs
        .into_par_iter()
        .map(|((k, _), (gts, mut pdets))| {
            rank_by_score(&mut pdets, |d| d.score);
            if let Some(cap) = cfg.max_dets_per_image {
                pdets.truncate(cap);
            }
            evaluate_pair(k, &pdets, &gts, cfg)
        })
        .collect();

    let n_cat = cat_ids.len();
    let n_t = cfg.iou_thresholds.len();
    let mut by_category: Vec<Vec<&PairEval>> = vec![Vec::new(); n_cat];
    for p in &pair_evals {
        by_category[p.category].push(p);
    }

    // Per category: pooled order by score, ties by image then per-image rank.
    let per_category: Vec<Vec<Vec<Option<CellResult>>>> = by_category
        .par_iter()
        .map(|pairs| {
            let mut order: Vec<(usize, usize)> = pairs
                .iter()
                .enumerate()
                .flat_map(|(p, pe)| (0..pe.scores.len()).map(move |d| (p, d)))
                .collect();
            rank_by_score(&mut order, |&(p, d)| pairs[p].scores[d]);
            (0..AreaRange::ALL.len())
                .map(|a| {
                    let n_gt: usize = pairs.iter().map(|p| p.areas[a].n_gt).sum();
                    (0..n_t)
                        .map(|t| {
                            if n_gt == 0 {
                                return None;
                            }
                            let ranked: Vec<(f64, bool)> = order
                                .iter()
                                .filter_map(|&(p, d)| match pairs[p].areas[a].states[t][d] {
                                    DetState::Ignored => None,
                                    s => Some((pairs[p].scores[d], s == DetState::Matched)),
                                })
                                .collect();
                            let curve = PrCurve { ranked, n_gt };
                            Some(CellResult {
                                ap: average_precision(&curve, cfg.interpolation)?,
                                recall: curve.final_recall(),
                                precision_101: curve.interpolated_101()?,
                            })
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    // Reorder [k][a][t] into [a][t][k].
    let cells = (0..AreaRange::ALL.len())
        .map(|a| {
            (0..n_t)
                .map(|t| (0..n_cat).map(|k| per_category[k][a][t].clone()).collect())
                .collect()
        })
        .collect();

    let mut n_gt_per_cat: HashMap<CategoryId, usize> = HashMap::new();
    for g in ds.annotations() {
        *n_gt_per_cat.entry(g.category_id).or_default() += 1;
    }
    let categories = cat_ids
        .iter()
        .map(|&id| {
            let name = ds.category(id).map(|c| c.name.clone()).unwrap_or_default();
            (id, name, n_gt_per_cat.get(&id).copied().unwrap_or(0))
        })
        .collect();

    Ok(Evaluation {
        config: cfg.clone(),
        categories,
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouSummary {
    pub iou: f64,
    pub ap: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySummary {
    pub category_id: CategoryId,
    pub name: String,
    pub n_gt: usize,
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_small: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
    pub recall: Option<f64>,
}

/// Summary metrics, all scaled by 100. `None` marks an undefined entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub interpolation: Interpolation,
    pub max_dets_per_image: Option<usize>,
    pub map: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_small: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
    pub recall: Option<f64>,
    pub per_iou: Vec<IouSummary>,
    pub per_category: Vec<CategorySummary>,
}

/// One interpolated precision sample for plotting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrPoint {
    pub category_id: CategoryId,
    pub iou: f64,
    pub recall: f64,
    pub precision: f64,
}

fn pct(v: Option<f64>) -> Option<f64> {
    v.map(|x| x * 100.0)
}

impl Evaluation {
    pub fn config(&self) -> &EvalConfig {
        &self.config
    }

    pub fn cell(&self, area: AreaRange, t: usize, k: usize) -> Option<&CellResult> {
        let a = AreaRange::ALL.iter().position(|&r| r == area)?;
        self.cells[a][t][k].as_ref()
    }

    /// AP for one area range and threshold, averaged over defined categories.
    fn ap_at(&self, a: usize, t: usize) -> Option<f64> {
        mean(self.cells[a][t].iter().flatten().map(|c| c.ap))
    }

    fn ap_over_thresholds(&self, a: usize) -> Option<f64> {
        mean((0..self.config.iou_thresholds.len()).filter_map(|t| self.ap_at(a, t)))
    }

    fn category_ap(&self, a: usize, k: usize) -> Option<f64> {
        mean(
            self.cells[a]
                .iter()
                .filter_map(|row| row[k].as_ref().map(|c| c.ap)),
        )
    }

    pub fn report(&self) -> EvalReport {
        let at = |t: f64| self.config.threshold_index(t);
        let all = 0;
        let per_iou: Vec<IouSummary> = self
            .config
            .iou_thresholds
            .iter()
            .enumerate()
            .map(|(t, &iou)| IouSummary {
                iou,
                ap: pct(self.ap_at(all, t)),
                recall: pct(mean(self.cells[all][t].iter().flatten().map(|c| c.recall))),
            })
            .collect();
        let per_category = self
            .categories
            .iter()
            .enumerate()
            .map(|(k, (id, name, n_gt))| CategorySummary {
                category_id: *id,
                name: name.clone(),
                n_gt: *n_gt,
                ap: pct(self.category_ap(all, k)),
                ap50: pct(at(0.5).and_then(|t| self.cells[all][t][k].as_ref().map(|c| c.ap))),
                ap75: pct(at(0.75).and_then(|t| self.cells[all][t][k].as_ref().map(|c| c.ap))),
                ap_small: pct(self.category_ap(1, k)),
                ap_medium: pct(self.category_ap(2, k)),
                ap_large: pct(self.category_ap(3, k)),
                recall: pct(mean(
                    self.cells[all]
                        .iter()
                        .filter_map(|row| row[k].as_ref().map(|c| c.recall)),
                )),
            })
            .collect();
        EvalReport {
            interpolation: self.config.interpolation,
            max_dets_per_image: self.config.max_dets_per_image,
            map: pct(self.ap_over_thresholds(all)),
            ap50: pct(at(0.5).and_then(|t| self.ap_at(all, t))),
            ap75: pct(at(0.75).and_then(|t| self.ap_at(all, t))),
            ap_small: pct(self.ap_over_thresholds(1)),
            ap_medium: pct(self.ap_over_thresholds(2)),
            ap_large: pct(self.ap_over_thresholds(3)),
            recall: pct(mean(
                per_iou.iter().filter_map(|r| r.recall.map(|v| v / 100.0)),
            )),
            per_iou,
            per_category,
        }
    }

    /// Interpolated PR samples over all sizes, for every category and threshold.
    pub fn pr_points(&self) -> Vec<PrPoint> {
        let recalls = recall_thresholds();
        let mut out = Vec::new();
        for (k, (id, _, _)) in self.categories.iter().enumerate() {
            for (t, &iou) in self.config.iou_thresholds.iter().enumerate() {
                if let Some(cell) = &self.cells[0][t][k] {
                    out.extend(
                        recalls
                            .iter()
                            .zip(&cell.precision_101)
                            .map(|(&r, &p)| PrPoint {
                                category_id: *id,
                                iou,
                                recall: r,
                                precision: p,
                            }),
                    );
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Category, ImageInfo};

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    fn gt(id: u64, image_id: u64, category_id: u64, bbox: BBox) -> GroundTruth {
        GroundTruth {
            id,
            image_id,
            category_id,
            bbox,
            area: bbox.area(),
            size_class: size_bucket(bbox.area(), &AreaThresholds::default()),
        }
    }

    fn det(image_id: u64, category_id: u64, bbox: BBox, score: f64) -> Detection {
        Detection {
            image_id,
            category_id,
            bbox,
            score,
        }
    }

    fn dataset(anns: Vec<GroundTruth>) -> Dataset {
        Dataset::new(
            vec![
                ImageInfo {
                    id: 1,
                    width: 200,
                    height: 200,
                    file_name: String::new(),
                },
                ImageInfo {
                    id: 2,
                    width: 200,
                    height: 200,
                    file_name: String::new(),
                },
            ],
            vec![
                Category {
                    id: 1,
                    name: "a".into(),
                },
                Category {
                    id: 2,
                    name: "b".into(),
                },
            ],
            anns,
        )
        .unwrap()
    }

    #[test]
    fn grids_match_numpy_linspace() {
        let g = coco_iou_grid();
        assert_eq!(g.len(), 10);
        assert_eq!(g[0], 0.5);
        assert_eq!(g[9], 0.95);
        let r = recall_thresholds();
        assert_eq!(r.len(), 101);
        assert_eq!(r[50], 0.5);
        assert_eq!(r[100], 1.0);
        // numpy produces 7 * 0.01, not the literal 0.07.
        assert_eq!(r[7], 7.0 * 0.01);
    }

    #[test]
    fn exact_detection_is_tp() {
        let g = [gt(1, 1, 1, bb(0.0, 0.0, 10.0, 10.0))];
        let d = [det(1, 1, bb(0.0, 0.0, 10.0, 10.0), 0.9)];
        let m = match_image_category(&d, &g, 0.5);
        assert!(m.is_tp(0));
        assert_eq!(m.gt_to_det, vec![Some(0)]);
    }

    #[test]
    fn second_detection_on_same_target_is_duplicate() {
        let g = [gt(1, 1, 1, bb(0.0, 0.0, 10.0, 10.0))];
        // Both have IOU 0.7 with the target: 0.7 = 70 / 100 with h = 7.
        let d = [
            det(1, 1, bb(0.0, 0.0, 10.0, 7.0), 0.9),
            det(1, 1, bb(0.0, 3.0, 10.0, 7.0), 0.8),
        ];
        let m = match_image_category(&d, &g, 0.5);
        assert!((m.max_iou[0] - 0.7).abs() < 1e-12 && (m.max_iou[1] - 0.7).abs() < 1e-12);
        assert!(m.is_tp(0));
        assert!(!m.is_tp(1));
    }

    #[test]
    fn detection_goes_to_highest_iou_target() {
        let d = [det(1, 1, bb(0.0, 0.0, 10.0, 10.0), 0.9)];
        // IOUs 45/100 and 60/100.
        let g = [
            gt(1, 1, 1, bb(0.0, 0.0, 10.0, 4.5)),
            gt(2, 1, 1, bb(0.0, 0.0, 10.0, 6.0)),
        ];
        let m = match_image_category(&d, &g, 0.5);
        assert!((m.max_iou[0] - 0.6).abs() < 1e-12);
        assert_eq!(m.det_to_gt[0], Some(1));
        assert_eq!(m.argmax[0], Some(1));
    }

    #[test]
    fn ap_examples() {
        let perfect = PrCurve::new(vec![(0.9, true), (0.8, true)], 2).unwrap();
        assert_eq!(
            average_precision(&perfect, Interpolation::Coco101),
            Some(1.0)
        );
        assert_eq!(
            average_precision(&perfect, Interpolation::VocAllPoints),
            Some(1.0)
        );

        let half = PrCurve::new(vec![(0.9, true), (0.8, false)], 2).unwrap();
        assert_eq!(
            average_precision(&half, Interpolation::Coco101),
            Some(51.0 / 101.0)
        );
        assert_eq!(
            average_precision(&half, Interpolation::VocAllPoints),
            Some(0.5)
        );

        let empty = PrCurve::new(vec![], 3).unwrap();
        assert_eq!(average_precision(&empty, Interpolation::Coco101), Some(0.0));
        let undefined = PrCurve::new(vec![(0.3, false)], 0).unwrap();
        assert_eq!(average_precision(&undefined, Interpolation::Coco101), None);
    }

    #[test]
    fn pr_curve_rejects_unranked_input() {
        assert!(PrCurve::new(vec![(0.1, true), (0.9, true)], 2).is_err());
        assert!(PrCurve::new(vec![(0.9, true), (0.1, true)], 1).is_err());
        let c = PrCurve::from_unranked(vec![(0.1, false), (0.9, true)], 1).unwrap();
        assert_eq!(c.precision(), vec![1.0, 0.5]);
        assert_eq!(c.recall(), vec![1.0, 1.0]);
    }

    #[test]
    fn perfect_detector_scores_100_everywhere() {
        let anns = vec![
            gt(1, 1, 1, bb(0.0, 0.0, 10.0, 10.0)),
            gt(2, 1, 2, bb(20.0, 20.0, 50.0, 60.0)),
            gt(3, 2, 1, bb(5.0, 5.0, 150.0, 120.0)),
        ];
        let ds = dataset(anns.clone());
        let dets: Vec<_> = anns
            .iter()
            .map(|g| det(g.image_id, g.category_id, g.bbox, 1.0))
            .collect();
        let r = evaluate(&ds, &dets, &EvalConfig::default()).unwrap();
        assert_eq!(r.map, Some(100.0));
        assert_eq!(r.ap50, Some(100.0));
        assert_eq!(r.ap75, Some(100.0));
        assert_eq!(r.ap_small, Some(100.0));
        assert_eq!(r.ap_medium, Some(100.0));
        assert_eq!(r.ap_large, Some(100.0));
        assert_eq!(r.recall, Some(100.0));
        for c in &r.per_category {
            assert_eq!(c.ap, Some(100.0));
        }
    }

    #[test]
    fn empty_detections_score_zero() {
        let ds = dataset(vec![gt(1, 1, 1, bb(0.0, 0.0, 10.0, 10.0))]);
        let r = evaluate(&ds, &[], &EvalConfig::default()).unwrap();
        assert_eq!(r.map, Some(0.0));
        assert_eq!(r.ap50, Some(0.0));
        assert_eq!(r.recall, Some(0.0));
        // Category 2 has no targets and is undefined, not zero.
        assert_eq!(r.per_category[1].ap, None);
        assert_eq!(r.ap_medium, None);
    }

    #[test]
    fn max_dets_caps_each_pair() {
        let ds = dataset(vec![gt(1, 1, 1, bb(0.0, 0.0, 10.0, 10.0))]);
        let dets = vec![
            det(1, 1, bb(100.0, 100.0, 10.0, 10.0), 0.9),
            det(1, 1, bb(0.0, 0.0, 10.0, 10.0), 0.5),
        ];
        let capped = EvalConfig {
            max_dets_per_image: Some(1),
            ..Default::default()
        };
        assert_eq!(evaluate(&ds, &dets, &capped).unwrap().map, Some(0.0));
        let unlimited = EvalConfig {
            max_dets_per_image: None,
            ..Default::default()
        };
        let r = evaluate(&ds, &dets, &unlimited).unwrap();
        // FP then TP with one target: precision 1/2 at every recall point.
        assert_eq!(r.ap50, Some(50.0));
    }

    #[test]
    fn size_buckets_ignore_out_of_range_targets() {
        // One small and one large target; the detector only finds the large one.
        let ds = dataset(vec![
            gt(1, 1, 1, bb(0.0, 0.0, 10.0, 10.0)),
            gt(2, 1, 1, bb(50.0, 50.0, 120.0, 120.0)),
        ]);
        let dets = vec![det(1, 1, bb(50.0, 50.0, 120.0, 120.0), 0.9)];
        let r = evaluate(&ds, &dets, &EvalConfig::default()).unwrap();
        assert_eq!(r.ap_large, Some(100.0));
        assert_eq!(r.ap_small, Some(0.0));
        assert_eq!(r.ap_medium, None);
    }

    #[test]
    fn config_validation() {
        let mut cfg = EvalConfig {
            iou_thresholds: vec![0.5, 0.5],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.iou_thresholds = vec![0.0];
        assert!(cfg.validate().is_err());
        cfg.iou_thresholds = vec![];
        assert!(cfg.validate().is_err());
        cfg.iou_thresholds = vec![0.3, 1.0];
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn unknown_detection_category_is_rejected() {
        let ds = dataset(vec![]);
        let dets = vec![det(1, 9, bb(0.0, 0.0, 1.0, 1.0), 0.5)];
        assert!(evaluate(&ds, &dets, &EvalConfig::default()).is_err());
    }

    #[test]
    fn mean_is_exact_for_constant_input() {
        assert_eq!(mean([0.1; 10]), Some(0.1));
        assert_eq!(mean(std::iter::empty()), None);
        assert_eq!(mean([1.0, 2.0]), Some(1.5));
    }
}
