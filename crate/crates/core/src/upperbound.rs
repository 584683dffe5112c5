//! Upper-bound AP: target boxes relabeled by a classifier and scored as detections.
//!
//! Strategy 1 keeps each target box and uses the classifier's top-1 label
//! and confidence on that box. Strategy 2 also pools predictions made on
//! sampled neighboring boxes and relabels the target with an aggregate.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::data::{AnnotationId, CategoryId, ClassifierOutput, Dataset, Detection, Prediction};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, EvalReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Label and confidence of the most confident box.
    MostConfidentBox,
    /// Most frequent label, with the highest confidence among its votes.
    MostFrequentLabel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UapOptions {
    /// Pool the target's own prediction with its neighbors (strategy 2).
    pub include_target: bool,
    /// Replace every detection score with this constant.
    pub constant_confidence: Option<f64>,
}

impl Default for UapOptions {
    fn default() -> Self {
        UapOptions {
            include_target: true,
            constant_confidence: None,
        }
    }
}

fn outputs_by_annotation<'a>(
    ds: &Dataset,
    outputs: &'a [ClassifierOutput],
) -> Result<HashMap<AnnotationId, &'a ClassifierOutput>> {
    let by_id: HashMap<_, _> = outputs.iter().map(|o| (o.annotation_id, o)).collect();
    let missing: Vec<AnnotationId> = ds
        .annotations()
        .iter()
        .map(|a| a.id)
        .filter(|id| !by_id.contains_key(id))
        .collect();
    if missing.is_empty() {
        Ok(by_id)
    } else {
        Err(Error::MissingOutputs(missing))
    }
}

fn relabeled_targets(
    ds: &Dataset,
    outputs: &[ClassifierOutput],
    opts: &UapOptions,
    relabel: impl Fn(&ClassifierOutput) -> Result<Prediction>,
) -> Result<Vec<Detection>> {
    let by_id = outputs_by_annotation(ds, outputs)?;
    ds.annotations()
        .iter()
        .map(|gt| {
            let pred = relabel(by_id[&gt.id])?;
            Ok(Detection {
                image_id: gt.image_id,
                category_id: pred.label,
                bbox: gt.bbox,
                score: opts.constant_confidence.unwrap_or(pred.confidence),
            })
        })
        .collect()
}

/// One detection per target: the target box with the classifier's label and score.
pub fn strategy1_detections(
    ds: &Dataset,
    outputs: &[ClassifierOutput],
    opts: &UapOptions,
) -> Result<Vec<Detection>> {
    relabeled_targets(ds, outputs, opts, |o| Ok(o.prediction))
}

pub fn uap_strategy1(
    ds: &Dataset,
    outputs: &[ClassifierOutput],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    uap_strategy1_with(ds, outputs, cfg, &UapOptions::default())
}

pub fn uap_strategy1_with(
    ds: &Dataset,
    outputs: &[ClassifierOutput],
    cfg: &EvalConfig,
    opts: &UapOptions,
) -> Result<EvalReport> {
    evaluate(ds, &strategy1_detections(ds, outputs, opts)?, cfg)
}

/// Collapses a pool of predictions into one label and confidence.
///
/// `MostFrequentLabel` ties between equally frequent labels go to the
/// label with the higher maximum confidence, then to the lower id.
/// `MostConfidentBox` ties go to the earliest entry.
pub fn aggregate_neighborhood(preds: &[Prediction], mode: AggregationMode) -> Result<Prediction> {
    if preds.is_empty() {
        return Err(Error::Precondition(
            "cannot aggregate an empty prediction pool".into(),
        ));
    }
    let best = match mode {
        AggregationMode::MostConfidentBox => preds
            .iter()
            .copied()
            .reduce(|best, p| {
                if p.confidence > best.confidence {
                    p
                } else {
                    best
                }
            })
            .expect("pool is non-empty"),
        AggregationMode::MostFrequentLabel => {
            // label -> (votes, max confidence)
            let mut votes: BTreeMap<CategoryId, (usize, f64)> = BTreeMap::new();
            for p in preds {
                let e = votes.entry(p.label).or_insert((0, f64::NEG_INFINITY));
                e.0 += 1;
                e.1 = e.1.max(p.confidence);
            }
            // BTreeMap iterates by ascending id, so strict comparisons keep the lower id.
            let (label, (_, confidence)) = votes
                .into_iter()
                .reduce(|best, cur| {
                    let (bv, bc) = best.1;
                    let (cv, cc) = cur.1;
                    if cv > bv || (cv == bv && cc > bc) {
                        cur
                    } else {
                        best
                    }
                })
                .expect("pool is non-empty");
            Prediction { label, confidence }
        }
    };
    Ok(best)
}

/// Aggregation pool for one target. Falls back to the target's own
/// prediction when neighbors are excluded and none exist.
pub fn neighborhood_pool(output: &ClassifierOutput, include_target: bool) -> Vec<Prediction> {
    let mut pool = Vec::with_capacity(output.neighbors.len() + 1);
    if include_target || output.neighbors.is_empty() {
        pool.push(output.prediction);
    }
    pool.extend(output.neighbors.iter().map(|n| n.prediction()));
    pool
}

pub fn strategy2_detections(
    ds: &Dataset,
    outputs: &[ClassifierOutput],
    mode: AggregationMode,
    opts: &UapOptions,
) -> Result<Vec<Detection>> {
    relabeled_targets(ds, outputs, opts, |o| {
        aggregate_neighborhood(&neighborhood_pool(o, opts.include_target), mode)
    })
}

pub fn uap_strategy2(
    ds: &Dataset,
    outputs: &[ClassifierOutput],
    mode: AggregationMode,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    uap_strategy2_with(ds, outputs, mode, cfg, &UapOptions::default())
}

pub fn uap_strategy2_with(
    ds: &Dataset,
    outputs: &[ClassifierOutput],
    mode: AggregationMode,
    cfg: &EvalConfig,
    opts: &UapOptions,
) -> Result<EvalReport> {
    evaluate(ds, &strategy2_detections(ds, outputs, mode, opts)?, cfg)
}

/// Fraction of targets whose top-1 label equals their category.
pub fn classifier_accuracy(ds: &Dataset, outputs: &[ClassifierOutput]) -> Result<f64> {
    if ds.annotations().is_empty() {
        return Err(Error::Precondition(
            "accuracy needs at least one target".into(),
        ));
    }
    let by_id = outputs_by_annotation(ds, outputs)?;
    let correct = ds
        .annotations()
        .iter()
        .filter(|gt| by_id[&gt.id].prediction.label == gt.category_id)
        .count();
    Ok(correct as f64 / ds.annotations().len() as f64)
}

/// Least-squares line through (accuracy, UAP) points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: usize,
}

pub fn correlate_accuracy_uap(points: &[(f64, f64)]) -> Result<Correlation> {
    if points.len() < 2 {
        return Err(Error::Precondition(
            "correlation needs at least two points".into(),
        ));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Precondition(
            "correlation points must be finite".into(),
        ));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (sxx, sxy, syy) = points
        .iter()
        .fold((0.0, 0.0, 0.0), |(sxx, sxy, syy), &(x, y)| {
            let (dx, dy) = (x - mx, y - my);
            (sxx + dx * dx, sxy + dx * dy, syy + dy * dy)
        });
    if sxx == 0.0 {
        return Err(Error::Precondition("all accuracy values are equal".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 {
        0.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Ok(Correlation {
        slope,
        intercept: my - slope * mx,
        r_squared,
        n: points.len(),
    })
}
