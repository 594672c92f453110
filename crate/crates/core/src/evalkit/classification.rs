//! Classification metrics over fine labels: SE/NS accuracy, SE-positive F1,
//! per-class true-positive rate and the 3x3 confusion matrix.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::taxonomy::{BinaryLabel, FineLabel};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport<T> {
    pub samples: usize,
    /// SE/NS accuracy after coarsening both sides.
    #[serde(rename = "accuracy")]
    pub accuracy_binary: T,
    pub accuracy_fine: T,
    /// Binary F1 with SE as the positive class.
    #[serde(rename = "f1_score")]
    pub f1_binary: T,
    /// Recall per fine class; `None` for classes absent from the ground truth.
    pub tpr_sexual_activity: Option<T>,
    pub tpr_sexual_posing: Option<T>,
    pub tpr_neutral: Option<T>,
    /// Rows are ground truth, columns predictions, both in `FineLabel::ALL` order.
    pub confusion: [[usize; 3]; 3],
}

impl<T: Scalar> ClassificationReport<T> {
    pub fn tpr(&self, label: FineLabel) -> Option<T> {
        match label {
            FineLabel::SexualActivity => self.tpr_sexual_activity,
            FineLabel::SexualPosing => self.tpr_sexual_posing,
            FineLabel::Neutral => self.tpr_neutral,
        }
    }
}

pub fn classification_report<T: Scalar>(
    pred_labels: &[FineLabel],
    gt_labels: &[FineLabel],
) -> Result<ClassificationReport<T>> {
    if pred_labels.len() != gt_labels.len() {
        return Err(Error::LengthMismatch {
            expected: gt_labels.len(),
            found: pred_labels.len(),
        });
    }
    if gt_labels.is_empty() {
        return Err(Error::Empty("classification_report: no samples"));
    }
    let mut confusion = [[0usize; 3]; 3];
    for (p, g) in pred_labels.iter().zip(gt_labels) {
        confusion[g.index()][p.index()] += 1;
    }

    let n = gt_labels.len();
    let (mut tp, mut fp, mut fn_, mut bin_correct) = (0usize, 0usize, 0usize, 0usize);
    for (p, g) in pred_labels.iter().zip(gt_labels) {
        match (p.to_binary(), g.to_binary()) {
            (BinaryLabel::SE, BinaryLabel::SE) => tp += 1,
            (BinaryLabel::SE, BinaryLabel::NS) => fp += 1,
            (BinaryLabel::NS, BinaryLabel::SE) => fn_ += 1,
            (BinaryLabel::NS, BinaryLabel::NS) => {}
        }
        if p.to_binary() == g.to_binary() {
            bin_correct += 1;
        }
    }
    let ratio = |a: usize, b: usize| T::lit(a as f64) / T::lit(b as f64);
    // no SE in either list: nothing to get wrong
    let f1 = if tp + fp + fn_ == 0 {
        T::one()
    } else {
        ratio(2 * tp, 2 * tp + fp + fn_)
    };
    let tpr = |l: FineLabel| {
        let row = confusion[l.index()];
        let total: usize = row.iter().sum();
        (total > 0).then(|| ratio(row[l.index()], total))
    };
    let diag: usize = (0..3).map(|i| confusion[i][i]).sum();
    Ok(ClassificationReport {
        samples: n,
        accuracy_binary: ratio(bin_correct, n),
        accuracy_fine: ratio(diag, n),
        f1_binary: f1,
        tpr_sexual_activity: tpr(FineLabel::SexualActivity),
        tpr_sexual_posing: tpr(FineLabel::SexualPosing),
        tpr_neutral: tpr(FineLabel::Neutral),
        confusion,
    })
}
