//! Sequential error attribution.
//!
//! Every (image, category) pair is labeled at a single localization
//! threshold, then four fixes are applied in a fixed order and the full
//! mAP is re-measured after each:
//!
//! 1. remove background confusions (max IOU at most `t_bg`),
//! 2. snap mislocalized detections onto their best target,
//! 3. remove duplicates,
//! 4. snap matched detections onto their targets and add every missed
//!    target as a detection with score `miss_score`.
//!
//! After the last stage every target is hit exactly once by a perfect box,
//! so the final mAP is 100.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CategoryId, Dataset, Detection, GroundTruth, ImageId};
use crate::error::{Error, Result};
use crate::eval::{evaluate, match_image_category, rank_by_score, EvalConfig, MatchResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseConfig {
    /// Detections with max IOU at or below this are background confusions.
    pub t_bg: f64,
    /// Matching threshold for the labeling pass.
    pub t_loc: f64,
    /// Score given to detections inserted for missed targets.
    pub miss_score: f64,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        DiagnoseConfig {
            t_bg: 0.1,
            t_loc: 0.5,
            miss_score: 1.0,
        }
    }
}

impl DiagnoseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_bg > 0.0 && self.t_bg < self.t_loc && self.t_loc <= 1.0) {
            return Err(Error::Precondition(format!(
                "need 0 < t_bg < t_loc <= 1, got t_bg = {}, t_loc = {}",
                self.t_bg, self.t_loc
            )));
        }
        if !(0.0..=1.0).contains(&self.miss_score) {
            return Err(Error::Precondition(format!(
                "miss score {} outside [0, 1]",
                self.miss_score
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionLabel {
    TruePositive,
    BackgroundError,
    Mislocalized,
    Duplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetLabel {
    Matched,
    Missed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorLabels {
    pub detections: Vec<DetectionLabel>,
    pub targets: Vec<TargetLabel>,
    pub matching: MatchResult,
}

impl ErrorLabels {
    pub fn count(&self, label: DetectionLabel) -> usize {
        self.detections.iter().filter(|&&l| l == label).count()
    }

    pub fn missed(&self) -> usize {
        self.targets
            .iter()
            .filter(|&&l| l == TargetLabel::Missed)
            .count()
    }
}

/// Labels ranked detections and targets of one (image, category) pair.
pub fn label_errors(dets: &[Detection], gts: &[GroundTruth], cfg: &DiagnoseConfig) -> ErrorLabels {
    let matching = match_image_category(dets, gts, cfg.t_loc);
    let detections = (0..dets.len())
        .map(|d| {
            let max_iou = matching.max_iou[d];
            if max_iou <= cfg.t_bg {
                DetectionLabel::BackgroundError
            } else if matching.is_tp(d) {
                DetectionLabel::TruePositive
            } else if max_iou >= cfg.t_loc {
                // Unmatched with a target at t_loc or above: that target was
                // already taken by a higher-ranked detection.
                DetectionLabel::Duplicate
            } else {
                DetectionLabel::Mislocalized
            }
        })
        .collect();
    let targets = gts
        .iter()
        .enumerate()
        .map(|(g, gt)| {
            if matching.gt_to_det[g].is_some() {
                return TargetLabel::Matched;
            }
            let nearest_unmatched = dets
                .iter()
                .enumerate()
                .filter(|(d, _)| !matching.is_tp(*d))
                .map(|(_, det)| crate::geom::iou(&det.bbox, &gt.bbox))
                .fold(0.0, f64::max);
            if nearest_unmatched <= cfg.t_bg {
                TargetLabel::Missed
            } else {
                TargetLabel::Matched
            }
        })
        .collect();
    ErrorLabels {
        detections,
        targets,
        matching,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    RemoveBackground,
    FixLocalization,
    RemoveDuplicates,
    FixMisses,
}

impl Stage {
    pub const ORDER: [Stage; 4] = [
        Stage::RemoveBackground,
        Stage::FixLocalization,
        Stage::RemoveDuplicates,
        Stage::FixMisses,
    ];

    fn position(self) -> usize {
        Stage::ORDER
            .iter()
            .position(|&s| s == self)
            .expect("stage is listed")
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::RemoveBackground => "remove-background",
            Stage::FixLocalization => "fix-localization",
            Stage::RemoveDuplicates => "remove-duplicates",
            Stage::FixMisses => "fix-misses",
        };
        f.write_str(name)
    }
}

/// What a stage did to one pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEffect {
    pub removed: usize,
    pub corrected: usize,
    pub added: usize,
}

/// Applies one fix to a single (image, category) pair and returns the
/// detections ranked by score. Inserted detections follow existing ones of
/// equal score, in annotation-id order.
pub fn apply_stage(
    stage: Stage,
    dets: &[Detection],
    gts: &[GroundTruth],
    cfg: &DiagnoseConfig,
) -> Vec<Detection> {
    apply_stage_counted(stage, dets, gts, cfg).0
}

fn apply_stage_counted(
    stage: Stage,
    dets: &[Detection],
    gts: &[GroundTruth],
    cfg: &DiagnoseConfig,
) -> (Vec<Detection>, StageEffect) {
    let mut ranked = dets.to_vec();
    rank_by_score(&mut ranked, |d| d.score);
    let labels = label_errors(&ranked, gts, cfg);
    let mut effect = StageEffect::default();

    let out = match stage {
        Stage::RemoveBackground | Stage::RemoveDuplicates => {
            let drop = if stage == Stage::RemoveBackground {
                DetectionLabel::BackgroundError
            } else {
                DetectionLabel::Duplicate
            };
            let kept: Vec<Detection> = ranked
                .iter()
                .zip(&labels.detections)
                .filter(|(_, &l)| l != drop)
                .map(|(d, _)| *d)
                .collect();
            effect.removed = ranked.len() - kept.len();
            kept
        }
        Stage::FixLocalization => ranked
            .iter()
            .enumerate()
            .map(
                |(i, d)| match (labels.detections[i], labels.matching.argmax[i]) {
                    (DetectionLabel::Mislocalized, Some(g)) => {
                        effect.corrected += 1;
                        Detection {
                            bbox: gts[g].bbox,
                            ..*d
                        }
                    }
                    _ => *d,
                },
            )
            .collect(),
        Stage::FixMisses => {
            let mut out: Vec<Detection> = ranked
                .iter()
                .enumerate()
                .map(|(i, d)| match labels.matching.det_to_gt[i] {
                    Some(g) => Detection {
                        bbox: gts[g].bbox,
                        ..*d
                    },
                    None => *d,
                })
                .collect();
            let mut missed: Vec<&GroundTruth> = gts
                .iter()
                .zip(&labels.targets)
                .filter(|(_, &l)| l == TargetLabel::Missed)
                .map(|(g, _)| g)
                .collect();
            missed.sort_by_key(|g| g.id);
            effect.added = missed.len();
            out.extend(missed.into_iter().map(|g| Detection {
                image_id: g.image_id,
                category_id: g.category_id,
                bbox: g.bbox,
                score: cfg.miss_score,
            }));
            rank_by_score(&mut out, |d| d.score);
            out
        }
    };
    (out, effect)
}

struct Pair {
    category_id: CategoryId,
    gts: Vec<GroundTruth>,
    dets: Vec<Detection>,
}

/// Detections of a whole dataset moving through the stages in order.
pub struct StagedDetections {
    pairs: Vec<Pair>,
    cfg: DiagnoseConfig,
    last: Option<Stage>,
}

impl StagedDetections {
    pub fn new(ds: &Dataset, dets: &[Detection], cfg: &DiagnoseConfig) -> Result<Self> {
        cfg.validate()?;
        let mut grouped: BTreeMap<(ImageId, CategoryId), (Vec<GroundTruth>, Vec<Detection>)> =
            BTreeMap::new();
        for g in ds.annotations() {
            grouped
                .entry((g.image_id, g.category_id))
                .or_default()
                .0
                .push(g.clone());
        }
        for d in dets {
            grouped
                .entry((d.image_id, d.category_id))
                .or_default()
                .1
                .push(*d);
        }
        let pairs = grouped
            .into_iter()
            .map(|((_, category_id), (gts, dets))| Pair {
                category_id,
                gts,
                dets,
            })
            .collect();
        Ok(StagedDetections {
            pairs,
            cfg: *cfg,
            last: None,
        })
    }

    pub fn last_stage(&self) -> Option<Stage> {
        self.last
    }

    /// Applies `stage` to every pair. A stage may be repeated, but never
    /// applied before the stages that precede it.
    pub fn apply(&mut self, stage: Stage) -> Result<HashMap<CategoryId, StageEffect>> {
        let next = self.last.map_or(0, |s| s.position() + 1);
        if stage.position() != next && Some(stage) != self.last {
            return Err(Error::StageOrder {
                requested: stage.to_string(),
                previous: self
                    .last
                    .map_or_else(|| "the initial state".to_string(), |s| s.to_string()),
            });
        }
        let cfg = self.cfg;
        let effects: Vec<StageEffect> = self
            .pairs
            .par_iter_mut()
            .map(|p| {
                let (dets, effect) = apply_stage_counted(stage, &p.dets, &p.gts, &cfg);
                p.dets = dets;
                effect
            })
            .collect();
        let mut per_category: HashMap<CategoryId, StageEffect> = HashMap::new();
        for (p, e) in self.pairs.iter().zip(effects) {
            let acc = per_category.entry(p.category_id).or_default();
            acc.removed += e.removed;
            acc.corrected += e.corrected;
            acc.added += e.added;
        }
        self.last = Some(stage);
        Ok(per_category)
    }

    /// Current detections, grouped by (image, category).
    pub fn detections(&self) -> Vec<Detection> {
        self.pairs
            .iter()
            .flat_map(|p| p.dets.iter().copied())
            .collect()
    }

    /// Labels of the current detections, counted per category.
    pub fn label_counts(&self) -> HashMap<CategoryId, LabelCounts> {
        let mut out: HashMap<CategoryId, LabelCounts> = HashMap::new();
        for p in &self.pairs {
            let mut ranked = p.dets.clone();
            rank_by_score(&mut ranked, |d| d.score);
            let labels = label_errors(&ranked, &p.gts, &self.cfg);
            let c = out.entry(p.category_id).or_default();
            c.true_positives += labels.count(DetectionLabel::TruePositive);
            c.background += labels.count(DetectionLabel::BackgroundError);
            c.mislocalized += labels.count(DetectionLabel::Mislocalized);
            c.duplicates += labels.count(DetectionLabel::Duplicate);
            c.missed += labels.missed();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub true_positives: usize,
    pub background: usize,
    pub mislocalized: usize,
    pub duplicates: usize,
    pub missed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryDiagnosis {
    pub category_id: CategoryId,
    pub name: String,
    /// Labels of the original detections.
    pub initial: LabelCounts,
    pub background_removed: usize,
    pub localizations_fixed: usize,
    pub duplicates_removed: usize,
    pub misses_added: usize,
}

/// mAP (x100) before any fix and after each stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub map_baseline: Option<f64>,
    pub map_after_cls_removal: Option<f64>,
    pub map_after_localization_fix: Option<f64>,
    pub map_after_duplicate_removal: Option<f64>,
    pub map_after_miss_fix: Option<f64>,
    pub per_category: Vec<CategoryDiagnosis>,
}

impl DiagnosisReport {
    pub const COLUMNS: [&'static str; 5] =
        ["mAP", "-Cls. (Type I)", "+Local.", "-Duplicates", "+Misses"];

    pub fn sequence(&self) -> [Option<f64>; 5] {
        [
            self.map_baseline,
            self.map_after_cls_removal,
            self.map_after_localization_fix,
            self.map_after_duplicate_removal,
            self.map_after_miss_fix,
        ]
    }
}

pub fn diagnose(
    ds: &Dataset,
    dets: &[Detection],
    eval_cfg: &EvalConfig,
    cfg: &DiagnoseConfig,
) -> Result<DiagnosisReport> {
    let mut staged = StagedDetections::new(ds, dets, cfg)?;
    let initial = staged.label_counts();
    let mut maps = vec![evaluate(ds, dets, eval_cfg)?.map];
    let mut effects = Vec::with_capacity(Stage::ORDER.len());
    for stage in Stage::ORDER {
        effects.push(staged.apply(stage)?);
        maps.push(evaluate(ds, &staged.detections(), eval_cfg)?.map);
    }

    let mut cats: Vec<_> = ds.categories().to_vec();
    cats.sort_by_key(|c| c.id);
    let per_category = cats
        .into_iter()
        .map(|c| {
            let eff = |i: usize| effects[i].get(&c.id).copied().unwrap_or_default();
            CategoryDiagnosis {
                category_id: c.id,
                initial: initial.get(&c.id).copied().unwrap_or_default(),
                background_removed: eff(0).removed,
                localizations_fixed: eff(1).corrected,
                duplicates_removed: eff(2).removed,
                misses_added: eff(3).added,
                name: c.name,
            }
        })
        .collect();

    Ok(DiagnosisReport {
        map_baseline: maps[0],
        map_after_cls_removal: maps[1],
        map_after_localization_fix: maps[2],
        map_after_duplicate_removal: maps[3],
        map_after_miss_fix: maps[4],
        per_category,
    })
}
