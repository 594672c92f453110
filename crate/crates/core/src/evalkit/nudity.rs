//! Body-part visibility evaluation, broken down by fine label group.

use std::collections::BTreeMap;

use serde::Serialize;

use super::detection::{detection_report, Detection, DetectionEvalConfig, ImageEval};
use crate::datakit::manifest::{BodyPart, BodyPartBox};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::taxonomy::{BinaryLabel, FineLabel};

/// One image: its ground truth and the body-part pipeline's output.
#[derive(Debug, Clone)]
pub struct NudityEval<T> {
    pub label: FineLabel,
    pub nudity_flag: bool,
    pub detections: Vec<Detection<T, BodyPart>>,
    pub gt_parts: Vec<BodyPartBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NudityGroupReport<T> {
    pub samples: usize,
    /// Share of images with at least one annotated part.
    pub gt_box_fraction: Option<T>,
    /// Share of images where the flag equals "has annotated parts".
    pub accuracy: Option<T>,
    pub ap_iou_0_5: Option<T>,
    pub ar: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NudityReport<T> {
    /// Keys: the three fine labels, `all_se` and `all`.
    pub groups: BTreeMap<String, NudityGroupReport<T>>,
}

pub fn nudity_report<T: Scalar>(
    images: &[NudityEval<T>],
    config: &DetectionEvalConfig,
) -> Result<NudityReport<T>> {
    if images.is_empty() {
        return Err(Error::Empty("nudity_report: no images"));
    }
    let mut groups = BTreeMap::new();
    let mut add = |name: &str, filter: &dyn Fn(FineLabel) -> bool| {
        let sel: Vec<&NudityEval<T>> = images.iter().filter(|im| filter(im.label)).collect();
        let n = sel.len();
        let frac = |k: usize| (n > 0).then(|| T::lit(k as f64) / T::lit(n as f64));
        let with_gt = sel.iter().filter(|im| !im.gt_parts.is_empty()).count();
        let correct = sel
            .iter()
            .filter(|im| im.nudity_flag == !im.gt_parts.is_empty())
            .count();
        let evals: Vec<ImageEval<T, BodyPart>> = sel
            .iter()
            .map(|im| ImageEval {
                preds: im.detections.clone(),
                gts: im.gt_parts.iter().map(|g| (g.bbox.cast(), g.part)).collect(),
            })
            .collect();
        let det = detection_report(&evals, config);
        groups.insert(
            name.to_string(),
            NudityGroupReport {
                samples: n,
                gt_box_fraction: frac(with_gt),
                accuracy: frac(correct),
                ap_iou_0_5: det.ap_iou_0_5,
                ar: det.ar,
            },
        );
    };
    for l in FineLabel::ALL {
        add(l.as_str(), &move |x| x == l);
    }
    add("all_se", &|x| x.to_binary() == BinaryLabel::SE);
    add("all", &|_| true);
    Ok(NudityReport { groups })
}
