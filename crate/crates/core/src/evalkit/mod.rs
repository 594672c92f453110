//! Classification and detection metrics.

pub mod aggregate;
pub mod classification;
pub mod detection;
pub mod nudity;

pub use aggregate::{aggregate_folds, AggregateReport, MeanStd, MetricSet};
pub use classification::{classification_report, ClassificationReport};
pub use detection::{
    average_precision, average_precision_pooled, average_recall, average_recall_pooled,
    detection_report, match_detections, Detection, DetectionEvalConfig, DetectionReport,
    ImageDetections, ImageEval, MatchEntry, MatchResult,
};
pub use nudity::{nudity_report, NudityEval, NudityReport};

use crate::geometry::BBox;
use crate::scalar::Scalar;

/// Intersection over union of two valid boxes.
pub fn iou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    a.iou(b)
}
