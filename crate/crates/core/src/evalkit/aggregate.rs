//! Cross-fold aggregation: unweighted mean and sample standard deviation per
//! metric.

use std::collections::BTreeMap;

use serde::Serialize;

use super::classification::ClassificationReport;
use super::detection::DetectionReport;
use super::nudity::NudityReport;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A report that can be flattened into named scalar metrics.
pub trait MetricSet<T> {
    /// `None` marks a metric that is undefined for this report.
    fn metrics(&self) -> Vec<(String, Option<T>)>;
}

impl<T: Scalar> MetricSet<T> for ClassificationReport<T> {
    fn metrics(&self) -> Vec<(String, Option<T>)> {
        vec![
            ("accuracy".into(), Some(self.accuracy_binary)),
            ("accuracy_fine".into(), Some(self.accuracy_fine)),
            ("f1_score".into(), Some(self.f1_binary)),
            ("tpr_sexual_activity".into(), self.tpr_sexual_activity),
            ("tpr_sexual_posing".into(), self.tpr_sexual_posing),
            ("tpr_neutral".into(), self.tpr_neutral),
        ]
    }
}

impl<T: Scalar> MetricSet<T> for DetectionReport<T> {
    fn metrics(&self) -> Vec<(String, Option<T>)> {
        let mut m = vec![
            ("ap_iou_0_5".into(), self.ap_iou_0_5),
            ("ar".into(), self.ar),
        ];
        for (c, v) in &self.per_class {
            m.push((format!("{c}.ap_iou_0_5"), v.ap_iou_0_5));
            m.push((format!("{c}.ar"), v.ar));
        }
        m
    }
}

impl<T: Scalar> MetricSet<T> for NudityReport<T> {
    fn metrics(&self) -> Vec<(String, Option<T>)> {
        self.groups
            .iter()
            .flat_map(|(g, r)| {
                [
                    (format!("{g}.gt_box_fraction"), r.gt_box_fraction),
                    (format!("{g}.accuracy"), r.accuracy),
                    (format!("{g}.ap_iou_0_5"), r.ap_iou_0_5),
                    (format!("{g}.ar"), r.ar),
                ]
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd<T> {
    pub mean: T,
    pub std: T,
    /// Reports in which the metric was defined.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateReport<T> {
    pub folds: usize,
    pub metrics: BTreeMap<String, MeanStd<T>>,
}

/// Mean and sample standard deviation (n - 1 denominator, zero for a single
/// value) of every metric across `reports`.
pub fn aggregate_folds<T: Scalar, R: MetricSet<T>>(reports: &[R]) -> Result<AggregateReport<T>> {
    if reports.is_empty() {
        return Err(Error::Empty("aggregate_folds: no reports"));
    }
    let mut values: BTreeMap<String, Vec<T>> = BTreeMap::new();
    for r in reports {
        for (name, v) in r.metrics() {
            let slot = values.entry(name).or_default();
            if let Some(v) = v {
                slot.push(v);
            }
        }
    }
    let metrics = values
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(name, v)| (name, mean_std(&v)))
        .collect();
    Ok(AggregateReport {
        folds: reports.len(),
        metrics,
    })
}

fn mean_std<T: Scalar>(v: &[T]) -> MeanStd<T> {
    let n = T::lit(v.len() as f64);
    let mean = v.iter().copied().fold(T::zero(), |a, b| a + b) / n;
    let std = if v.len() < 2 {
        T::zero()
    } else {
        let ss = v.iter().fold(T::zero(), |a, x| a + (*x - mean) * (*x - mean));
        (ss / (n - T::one())).sqrt()
    };
    MeanStd {
        mean,
        std,
        n: v.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalkit::classification::classification_report;
    use crate::taxonomy::FineLabel::*;

    struct Acc(f64);

    impl MetricSet<f64> for Acc {
        fn metrics(&self) -> Vec<(String, Option<f64>)> {
            vec![("accuracy".into(), Some(self.0))]
        }
    }

    #[test]
    fn single_report() {
        let r = classification_report::<f64>(&[Neutral, SexualPosing], &[Neutral, SexualActivity]).unwrap();
        let a = aggregate_folds(std::slice::from_ref(&r)).unwrap();
        assert_eq!(a.metrics["accuracy"].mean, r.accuracy_binary);
        assert_eq!(a.metrics["accuracy"].std, 0.0);
        assert!(!a.metrics.contains_key("tpr_sexual_posing"));
    }

    #[test]
    fn two_reports() {
        let a = aggregate_folds(&[Acc(0.8), Acc(0.9)]).unwrap();
        assert!((a.metrics["accuracy"].mean - 0.85).abs() < 1e-15);
        assert!((a.metrics["accuracy"].std - 0.0707106781186548).abs() < 1e-12);
    }

    #[test]
    fn empty_is_error() {
        assert!(aggregate_folds::<f64, Acc>(&[]).is_err());
    }
}
