//! Detection matching, average precision and average recall.

use std::collections::BTreeMap;
use std::fmt::Display;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::scalar::Scalar;

pub const DEFAULT_IOU: f64 = 0.5;
pub const DEFAULT_MAX_DETS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection<T, C> {
    #[serde(rename = "box")]
    pub bbox: BBox<T>,
    #[serde(rename = "class")]
    pub class_id: C,
    pub confidence: T,
}

impl<T: Scalar, C> Detection<T, C> {
    pub fn new(bbox: BBox<T>, class_id: C, confidence: T) -> Result<Self> {
        bbox.validate()?;
        if !(confidence >= T::zero() && confidence <= T::one()) {
            return Err(Error::input(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(Detection {
            bbox,
            class_id,
            confidence,
        })
    }
}

/// Outcome for one prediction, in descending-confidence order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchEntry<T> {
    /// Index into the prediction slice that was matched.
    pub pred_index: usize,
    pub confidence: T,
    /// Matched ground-truth index; `None` marks a false positive.
    pub gt_index: Option<usize>,
}

impl<T> MatchEntry<T> {
    pub fn is_tp(&self) -> bool {
        self.gt_index.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult<T> {
    pub entries: Vec<MatchEntry<T>>,
    pub num_gt: usize,
    pub missed: usize,
}

impl<T> MatchResult<T> {
    pub fn true_positives(&self) -> usize {
        self.entries.iter().filter(|e| e.is_tp()).count()
    }

    pub fn false_positives(&self) -> usize {
        self.entries.len() - self.true_positives()
    }
}

/// Indices of `preds` by descending confidence; ties keep input order.
fn confidence_order<T: Scalar, C>(preds: &[Detection<T, C>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .confidence
            .partial_cmp(&preds[a].confidence)
            .expect("confidences are finite")
    });
    order
}

/// Greedy matching of same-class predictions to ground truth. Each
/// prediction, most confident first, takes the unmatched ground-truth box
/// with the highest IoU, provided that IoU reaches `iou_threshold`.
pub fn match_detections<T: Scalar, C>(
    preds: &[Detection<T, C>],
    gts: &[BBox<T>],
    iou_threshold: T,
) -> MatchResult<T> {
    let mut taken = vec![false; gts.len()];
    let mut entries = Vec::with_capacity(preds.len());
    for i in confidence_order(preds) {
        let mut best: Option<(usize, T)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let iou = preds[i].bbox.iou(gt);
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
        }
        entries.push(MatchEntry {
            pred_index: i,
            confidence: preds[i].confidence,
            gt_index: best.map(|(g, _)| g),
        });
    }
    let matched = taken.iter().filter(|t| **t).count();
    MatchResult {
        entries,
        num_gt: gts.len(),
        missed: gts.len() - matched,
    }
}

/// Predictions and ground truth of one image, for a single class.
#[derive(Debug, Clone, Copy)]
pub struct ImageDetections<'a, T, C> {
    pub preds: &'a [Detection<T, C>],
    pub gts: &'a [BBox<T>],
}

/// Area under the precision-envelope PR curve over all recall points, with
/// detections pooled across images. `None` when there is no ground truth.
pub fn average_precision_pooled<T: Scalar, C>(
    images: &[ImageDetections<'_, T, C>],
    iou_threshold: T,
) -> Option<T> {
    let num_gt: usize = images.iter().map(|im| im.gts.len()).sum();
    if num_gt == 0 {
        return None;
    }
    // (confidence, tp), canonical order = image index then prediction index
    let mut pooled: Vec<(T, usize, usize, bool)> = Vec::new();
    for (k, im) in images.iter().enumerate() {
        for e in match_detections(im.preds, im.gts, iou_threshold).entries {
            pooled.push((e.confidence, k, e.pred_index, e.is_tp()));
        }
    }
    pooled.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("confidences are finite")
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let flags: Vec<bool> = pooled.iter().map(|p| p.3).collect();
    Some(ap_from_flags(&flags, num_gt))
}

/// All-points interpolated AP from TP flags in ranked order.
pub(crate) fn ap_from_flags<T: Scalar>(flags: &[bool], num_gt: usize) -> T {
    let n = flags.len();
    let mut precision = Vec::with_capacity(n);
    let mut recall = Vec::with_capacity(n);
    let mut tp = 0usize;
    for (i, &f) in flags.iter().enumerate() {
        if f {
            tp += 1;
        }
        precision.push(T::lit(tp as f64) / T::lit((i + 1) as f64));
        recall.push(T::lit(tp as f64) / T::lit(num_gt as f64));
    }
    for i in (0..n.saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = T::zero();
    let mut prev = T::zero();
    for i in 0..n {
        if recall[i] > prev {
            ap = ap + (recall[i] - prev) * precision[i];
            prev = recall[i];
        }
    }
    ap
}

/// Single-image AP. `None` when `gts` is empty.
pub fn average_precision<T: Scalar, C>(
    preds: &[Detection<T, C>],
    gts: &[BBox<T>],
    iou_threshold: T,
) -> Option<T> {
    average_precision_pooled(&[ImageDetections { preds, gts }], iou_threshold)
}

/// Matched ground truth over all ground truth, keeping the `max_dets` most
/// confident predictions per image. `None` when there is no ground truth.
pub fn average_recall_pooled<T: Scalar, C: Clone>(
    images: &[ImageDetections<'_, T, C>],
    iou_threshold: T,
    max_dets: usize,
) -> Option<T> {
    let num_gt: usize = images.iter().map(|im| im.gts.len()).sum();
    if num_gt == 0 {
        return None;
    }
    let mut matched = 0usize;
    for im in images {
        let top: Vec<Detection<T, C>> = confidence_order(im.preds)
            .into_iter()
            .take(max_dets)
            .map(|i| im.preds[i].clone())
            .collect();
        matched += match_detections(&top, im.gts, iou_threshold).true_positives();
    }
    Some(T::lit(matched as f64) / T::lit(num_gt as f64))
}

pub fn average_recall<T: Scalar, C: Clone>(
    preds: &[Detection<T, C>],
    gts: &[BBox<T>],
    iou_threshold: T,
    max_dets: usize,
) -> Option<T> {
    average_recall_pooled(&[ImageDetections { preds, gts }], iou_threshold, max_dets)
}

/// Recall averaged over IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn average_recall_coco<T: Scalar, C: Clone>(
    images: &[ImageDetections<'_, T, C>],
    max_dets: usize,
) -> Option<T> {
    let mut sum = T::zero();
    for k in 0..10 {
        let thr = T::lit(0.5 + 0.05 * k as f64);
        sum = sum + average_recall_pooled(images, thr, max_dets)?;
    }
    Some(sum / T::lit(10.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvalConfig {
    pub iou_threshold: f64,
    pub max_dets: usize,
    /// Average recall over IoU 0.50:0.95 instead of the single threshold.
    pub coco_ar: bool,
}

impl Default for DetectionEvalConfig {
    fn default() -> Self {
        DetectionEvalConfig {
            iou_threshold: DEFAULT_IOU,
            max_dets: DEFAULT_MAX_DETS,
            coco_ar: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassDetectionMetrics<T> {
    pub num_gt: usize,
    pub num_pred: usize,
    pub ap_iou_0_5: Option<T>,
    pub ar: Option<T>,
}

/// Detection metrics, averaged over the classes that have ground truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport<T> {
    pub ap_iou_0_5: Option<T>,
    pub ar: Option<T>,
    pub per_class: BTreeMap<String, ClassDetectionMetrics<T>>,
}

/// All predictions and ground truth of one image, any class.
#[derive(Debug, Clone)]
pub struct ImageEval<T, C> {
    pub preds: Vec<Detection<T, C>>,
    pub gts: Vec<(BBox<T>, C)>,
}

pub fn detection_report<T: Scalar, C: Ord + Clone + Display>(
    images: &[ImageEval<T, C>],
    config: &DetectionEvalConfig,
) -> DetectionReport<T> {
    let mut classes: Vec<C> = images
        .iter()
        .flat_map(|im| {
            im.preds
                .iter()
                .map(|p| p.class_id.clone())
                .chain(im.gts.iter().map(|g| g.1.clone()))
        })
        .collect();
    classes.sort();
    classes.dedup();

    let thr = T::lit(config.iou_threshold);
    let mut per_class = BTreeMap::new();
    let (mut ap_sum, mut ar_sum, mut n) = (T::zero(), T::zero(), 0usize);
    for c in &classes {
        let split: Vec<(Vec<Detection<T, C>>, Vec<BBox<T>>)> = images
            .iter()
            .map(|im| {
                (
                    im.preds.iter().filter(|p| p.class_id == *c).cloned().collect(),
                    im.gts.iter().filter(|g| g.1 == *c).map(|g| g.0).collect(),
                )
            })
            .collect();
        let views: Vec<ImageDetections<'_, T, C>> = split
            .iter()
            .map(|(p, g)| ImageDetections { preds: p, gts: g })
            .collect();
        let ap = average_precision_pooled(&views, thr);
        let ar = if config.coco_ar {
            average_recall_coco(&views, config.max_dets)
        } else {
            average_recall_pooled(&views, thr, config.max_dets)
        };
        if let (Some(ap), Some(ar)) = (ap, ar) {
            ap_sum = ap_sum + ap;
            ar_sum = ar_sum + ar;
            n += 1;
        }
        per_class.insert(
            c.to_string(),
            ClassDetectionMetrics {
                num_gt: split.iter().map(|s| s.1.len()).sum(),
                num_pred: split.iter().map(|s| s.0.len()).sum(),
                ap_iou_0_5: ap,
                ar,
            },
        );
    }
    let mean = |s: T| (n > 0).then(|| s / T::lit(n as f64));
    DetectionReport {
        ap_iou_0_5: mean(ap_sum),
        ar: mean(ar_sum),
        per_class,
    }
}
