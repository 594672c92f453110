//! Inference strategies: whole-image classification, person patches with
//! max-severity aggregation, body-part visibility, and the two-model CSAM
//! decision on top of either SE strategy.

pub mod reference;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datakit::manifest::{AgeGroup, BodyPart, BodyPartBox, PersonBox};
use crate::error::{Error, Result};
use crate::evalkit::Detection;
use crate::geometry::BBox;
use crate::hloss::Prob3;
use crate::scalar::Scalar;
use crate::taxonomy::{csam_decision, AgePresence, FinalClass, FineLabel};

pub const DEFAULT_CONF_THRESHOLD: f64 = 0.5;
pub const DEFAULT_PADDING: f64 = 0.1;

/// Class tag of person detections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersonClass {
    Person,
}

impl std::fmt::Display for PersonClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("person")
    }
}

/// Image to fine-label distribution. Must be deterministic in evaluation mode.
pub trait Classifier<T: Scalar>: Send + Sync {
    fn classify(&self, image: &RgbImage) -> Result<Prob3<T>>;

    /// Whether concurrent `classify` calls are allowed. Pipelines serialize
    /// calls otherwise.
    fn concurrent(&self) -> bool {
        false
    }
}

pub trait PersonDetector<T: Scalar>: Send + Sync {
    fn detect_persons(&self, image: &RgbImage) -> Result<Vec<Detection<T, PersonClass>>>;
}

pub trait BodyPartDetector<T: Scalar>: Send + Sync {
    fn detect_parts(&self, image: &RgbImage) -> Result<Vec<Detection<T, BodyPart>>>;
}

/// Age model. Internals are out of scope; only stubs ship here.
pub trait AgeEstimator: Send + Sync {
    fn estimate(&self, image: &RgbImage, persons: Option<&[BBox<f64>]>) -> Result<AgePresence>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "end2end")]
    EndToEnd,
    #[serde(rename = "patch")]
    Patch,
    #[serde(rename = "bodyparts")]
    BodyParts,
    #[serde(rename = "csam")]
    Csam,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::EndToEnd => "end2end",
            Strategy::Patch => "patch",
            Strategy::BodyParts => "bodyparts",
            Strategy::Csam => "csam",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchResult<T> {
    #[serde(rename = "box")]
    pub bbox: BBox<T>,
    pub fine_label: FineLabel,
    pub distribution: Prob3<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult<T> {
    pub strategy: Strategy,
    /// `None` only for the body-part strategy, which yields a flag instead.
    pub fine_label: Option<FineLabel>,
    pub distribution: Option<Prob3<T>>,
    pub patches: Vec<PatchResult<T>>,
    pub nudity_flag: Option<bool>,
    /// Set when the patch strategy found no person and classified the whole
    /// image instead.
    pub fallback_used: bool,
    #[serde(rename = "final")]
    pub final_class: Option<FinalClass>,
    /// Body-part detections above threshold (body-part strategy only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub detections: Vec<Detection<T, BodyPart>>,
}

impl<T: Scalar> PipelineResult<T> {
    fn labelled(strategy: Strategy, label: FineLabel, distribution: Option<Prob3<T>>) -> Self {
        PipelineResult {
            strategy,
            fine_label: Some(label),
            distribution,
            patches: Vec::new(),
            nudity_flag: None,
            fallback_used: false,
            final_class: None,
            detections: Vec::new(),
        }
    }
}

fn check_image(image: &RgbImage) -> Result<()> {
    if image.width() == 0 || image.height() == 0 {
        return Err(Error::input("empty image"));
    }
    Ok(())
}

pub fn load_image(path: &std::path::Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.to_path_buf(),
            source: other,
        },
    })?;
    Ok(img.to_rgb8())
}

fn run_classifier<T: Scalar>(model: &dyn Classifier<T>, image: &RgbImage) -> Result<Prob3<T>> {
    let d = model.classify(image)?;
    d.validate()?;
    Ok(d)
}

pub fn classify_end_to_end<T: Scalar>(model: &dyn Classifier<T>, image: &RgbImage) -> Result<PipelineResult<T>> {
    check_image(image)?;
    let d = run_classifier(model, image)?;
    Ok(PipelineResult::labelled(Strategy::EndToEnd, d.argmax(), Some(d)))
}

/// Crops `bbox` grown by `padding_fraction` of its size on each side and
/// clamped to the image. Fractional edges round outwards.
pub fn crop_patch<T: Scalar>(image: &RgbImage, bbox: &BBox<T>, padding_fraction: T) -> Result<RgbImage> {
    check_image(image)?;
    if !(padding_fraction >= T::zero()) {
        return Err(Error::param(format!("padding must be non-negative, got {padding_fraction}")));
    }
    let (w, h) = image.dimensions();
    let b = bbox
        .pad_and_clamp(padding_fraction, T::lit(w as f64), T::lit(h as f64))
        .ok_or_else(|| Error::input(format!("box {bbox:?} does not intersect the {w}x{h} image")))?;
    let x0 = b.x_min.floor().as_f64() as u32;
    let y0 = b.y_min.floor().as_f64() as u32;
    let x1 = (b.x_max.ceil().as_f64() as u32).min(w);
    let y1 = (b.y_max.ceil().as_f64() as u32).min(h);
    Ok(image::imageops::crop_imm(image, x0, y0, x1 - x0, y1 - y0).to_image())
}

/// Most severe label of a non-empty list.
pub fn aggregate_severity(labels: &[FineLabel]) -> Result<FineLabel> {
    labels
        .iter()
        .copied()
        .max_by_key(|l| l.severity())
        .ok_or(Error::Empty("aggregate_severity: no labels"))
}

pub fn classify_by_patches<T: Scalar>(
    detector: &dyn PersonDetector<T>,
    model: &dyn Classifier<T>,
    image: &RgbImage,
    conf_threshold: T,
    padding_fraction: T,
) -> Result<PipelineResult<T>> {
    check_image(image)?;
    let boxes: Vec<BBox<T>> = detector
        .detect_persons(image)?
        .into_iter()
        .filter(|d| d.confidence >= conf_threshold)
        .map(|d| d.bbox)
        .collect();

    if boxes.is_empty() {
        let mut r = classify_end_to_end(model, image)?;
        r.strategy = Strategy::Patch;
        r.fallback_used = true;
        return Ok(r);
    }

    let classify = |b: &BBox<T>| -> Result<PatchResult<T>> {
        let crop = crop_patch(image, b, padding_fraction)?;
        let d = run_classifier(model, &crop)?;
        Ok(PatchResult {
            bbox: *b,
            fine_label: d.argmax(),
            distribution: d,
        })
    };
    let patches: Vec<PatchResult<T>> = if model.concurrent() {
        boxes.par_iter().map(classify).collect::<Result<_>>()?
    } else {
        boxes.iter().map(classify).collect::<Result<_>>()?
    };

    let labels: Vec<FineLabel> = patches.iter().map(|p| p.fine_label).collect();
    let label = aggregate_severity(&labels)?;
    // distribution of the first patch that carries the image label
    let distribution = patches.iter().find(|p| p.fine_label == label).map(|p| p.distribution);
    let mut r = PipelineResult::labelled(Strategy::Patch, label, distribution);
    r.patches = patches;
    Ok(r)
}

/// Confident body-part detections: any of the three part classes at or above
/// `conf_threshold`.
pub fn confident_parts<T: Scalar>(
    detector: &dyn BodyPartDetector<T>,
    image: &RgbImage,
    conf_threshold: T,
) -> Result<Vec<Detection<T, BodyPart>>> {
    check_image(image)?;
    Ok(detector
        .detect_parts(image)?
        .into_iter()
        .filter(|d| d.confidence >= conf_threshold)
        .collect())
}

/// True iff some intimate body part is detected with confidence at or above
/// `conf_threshold`.
pub fn nudity_from_parts<T: Scalar>(
    detector: &dyn BodyPartDetector<T>,
    image: &RgbImage,
    conf_threshold: T,
) -> Result<bool> {
    Ok(!confident_parts(detector, image, conf_threshold)?.is_empty())
}

pub fn classify_by_parts<T: Scalar>(
    detector: &dyn BodyPartDetector<T>,
    image: &RgbImage,
    conf_threshold: T,
) -> Result<PipelineResult<T>> {
    let detections = confident_parts(detector, image, conf_threshold)?;
    Ok(PipelineResult {
        strategy: Strategy::BodyParts,
        fine_label: None,
        distribution: None,
        patches: Vec::new(),
        nudity_flag: Some(!detections.is_empty()),
        fallback_used: false,
        final_class: None,
        detections,
    })
}

/// An SE strategy usable as the second model of the CSAM decision.
pub trait SeStrategy<T: Scalar>: Send + Sync {
    fn run(&self, image: &RgbImage) -> Result<PipelineResult<T>>;
}

pub struct EndToEnd<'a, T: Scalar> {
    pub model: &'a dyn Classifier<T>,
}

impl<T: Scalar> SeStrategy<T> for EndToEnd<'_, T> {
    fn run(&self, image: &RgbImage) -> Result<PipelineResult<T>> {
        classify_end_to_end(self.model, image)
    }
}

pub struct Patches<'a, T: Scalar> {
    pub detector: &'a dyn PersonDetector<T>,
    pub model: &'a dyn Classifier<T>,
    pub conf_threshold: T,
    pub padding_fraction: T,
}

impl<T: Scalar> SeStrategy<T> for Patches<'_, T> {
    fn run(&self, image: &RgbImage) -> Result<PipelineResult<T>> {
        classify_by_patches(
            self.detector,
            self.model,
            image,
            self.conf_threshold,
            self.padding_fraction,
        )
    }
}

pub fn full_csam_pipeline<T: Scalar>(
    age: &dyn AgeEstimator,
    se_strategy: &dyn SeStrategy<T>,
    image: &RgbImage,
) -> Result<PipelineResult<T>> {
    let mut r = se_strategy.run(image)?;
    let label = r
        .fine_label
        .ok_or_else(|| Error::input("SE strategy produced no fine label"))?;
    let persons: Vec<BBox<f64>> = r.patches.iter().map(|p| p.bbox.cast()).collect();
    let presence = age.estimate(image, (!persons.is_empty()).then_some(persons.as_slice()))?;
    r.final_class = Some(csam_decision(presence, label.to_binary()));
    r.strategy = Strategy::Csam;
    Ok(r)
}

/// Age stub answering the same for every image.
#[derive(Debug, Clone, Copy)]
pub struct FixedAge(pub AgePresence);

impl AgeEstimator for FixedAge {
    fn estimate(&self, _: &RgbImage, _: Option<&[BBox<f64>]>) -> Result<AgePresence> {
        Ok(self.0)
    }
}

/// Age stub reading annotated person boxes: a minor is present iff any box
/// is annotated as a minor.
#[derive(Debug, Clone)]
pub struct AnnotatedAge {
    pub persons: Vec<PersonBox>,
}

impl AgeEstimator for AnnotatedAge {
    fn estimate(&self, _: &RgbImage, _: Option<&[BBox<f64>]>) -> Result<AgePresence> {
        Ok(if self.persons.iter().any(|p| p.age_group == AgeGroup::Minor) {
            AgePresence::MinorPresent
        } else {
            AgePresence::AdultsOnly
        })
    }
}

fn clamp_to_image<T: Scalar>(b: &BBox<f64>, image: &RgbImage) -> Option<BBox<T>> {
    let (w, h) = image.dimensions();
    b.pad_and_clamp(0.0, w as f64, h as f64).map(|b| b.cast())
}

/// Person "detector" replaying annotated boxes with confidence 1.
#[derive(Debug, Clone)]
pub struct AnnotatedPersons {
    pub boxes: Vec<PersonBox>,
}

impl<T: Scalar> PersonDetector<T> for AnnotatedPersons {
    fn detect_persons(&self, image: &RgbImage) -> Result<Vec<Detection<T, PersonClass>>> {
        self.boxes
            .iter()
            .filter_map(|p| clamp_to_image(&p.bbox, image))
            .map(|b| Detection::new(b, PersonClass::Person, T::one()))
            .collect()
    }
}

/// Body-part "detector" replaying annotated boxes with confidence 1.
#[derive(Debug, Clone)]
pub struct AnnotatedParts {
    pub boxes: Vec<BodyPartBox>,
}

impl<T: Scalar> BodyPartDetector<T> for AnnotatedParts {
    fn detect_parts(&self, image: &RgbImage) -> Result<Vec<Detection<T, BodyPart>>> {
        self.boxes
            .iter()
            .filter_map(|p| clamp_to_image(&p.bbox, image).map(|b| (b, p.part)))
            .map(|(b, part)| Detection::new(b, part, T::one()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::FineLabel::*;
    use image::Rgb;

    struct Fixed([f64; 3]);

    impl Classifier<f64> for Fixed {
        fn classify(&self, _: &RgbImage) -> Result<Prob3<f64>> {
            Prob3::from_array(self.0)
        }
    }

    /// Neutral unless the image contains a pure red pixel.
    struct RedIsActivity;

    impl Classifier<f64> for RedIsActivity {
        fn classify(&self, image: &RgbImage) -> Result<Prob3<f64>> {
            if image.pixels().any(|p| p.0 == [255, 0, 0]) {
                Prob3::new(0.8, 0.1, 0.1)
            } else {
                Prob3::new(0.1, 0.1, 0.8)
            }
        }

        fn concurrent(&self) -> bool {
            true
        }
    }

    struct Persons(Vec<(BBox<f64>, f64)>);

    impl PersonDetector<f64> for Persons {
        fn detect_persons(&self, _: &RgbImage) -> Result<Vec<Detection<f64, PersonClass>>> {
            self.0
                .iter()
                .map(|(b, c)| Detection::new(*b, PersonClass::Person, *c))
                .collect()
        }
    }

    struct Parts(Vec<(BodyPart, f64)>);

    impl BodyPartDetector<f64> for Parts {
        fn detect_parts(&self, _: &RgbImage) -> Result<Vec<Detection<f64, BodyPart>>> {
            self.0
                .iter()
                .map(|(p, c)| Detection::new(BBox::new(0.0, 0.0, 2.0, 2.0).unwrap(), *p, *c))
                .collect()
        }
    }

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox<f64> {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn gradient_image(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([x as u8, y as u8, (x * y) as u8]))
    }

    #[test]
    fn end_to_end_argmax() {
        let img = gradient_image(4, 4);
        let r = classify_end_to_end(&Fixed([0.7, 0.2, 0.1]), &img).unwrap();
        assert_eq!(r.fine_label, Some(SexualActivity));
        let r = classify_end_to_end(&Fixed([0.2, 0.2, 0.6]), &img).unwrap();
        assert_eq!(r.fine_label, Some(Neutral));
        let r = classify_end_to_end(&Fixed([0.4, 0.4, 0.2]), &img).unwrap();
        assert_eq!(r.fine_label, Some(SexualActivity));
        assert!(classify_end_to_end(&Fixed([0.4, 0.4, 0.2]), &RgbImage::new(0, 0)).is_err());
        assert!(classify_end_to_end(&Fixed([0.4, 0.4, 0.4]), &img).is_err());
    }

    #[test]
    fn crops() {
        let img = gradient_image(20, 10);
        assert_eq!(crop_patch(&img, &bx(0.0, 0.0, 20.0, 10.0), 0.0).unwrap(), img);
        let half = crop_patch(&img, &bx(0.0, 0.0, 10.0, 10.0), 0.0).unwrap();
        assert_eq!(half.dimensions(), (10, 10));
        assert_eq!(half.get_pixel(9, 9), img.get_pixel(9, 9));
        // 10x5 box at the right edge: 1 px / 0.5 px of padding, clamped right
        let edge = crop_patch(&img, &bx(10.0, 2.0, 20.0, 7.0), 0.1).unwrap();
        assert_eq!(edge.dimensions(), (11, 7));
        assert_eq!(edge.get_pixel(0, 0), img.get_pixel(9, 1));
        assert!(crop_patch(&img, &bx(30.0, 0.0, 40.0, 5.0), 0.0).is_err());
    }

    #[test]
    fn severity_aggregation() {
        assert_eq!(aggregate_severity(&[Neutral, SexualPosing]).unwrap(), SexualPosing);
        assert_eq!(aggregate_severity(&[Neutral]).unwrap(), Neutral);
        assert_eq!(
            aggregate_severity(&[SexualPosing, SexualActivity, Neutral]).unwrap(),
            SexualActivity
        );
        assert!(aggregate_severity(&[]).is_err());
    }

    #[test]
    fn patches_take_most_severe() {
        let mut img = gradient_image(20, 10);
        img.put_pixel(15, 5, Rgb([255, 0, 0]));
        let det = Persons(vec![(bx(0.0, 0.0, 8.0, 10.0), 0.9), (bx(12.0, 0.0, 20.0, 10.0), 0.9)]);
        let r = classify_by_patches(&det, &RedIsActivity, &img, 0.5, 0.0).unwrap();
        let labels: Vec<_> = r.patches.iter().map(|p| p.fine_label).collect();
        assert_eq!(labels, vec![Neutral, SexualActivity]);
        assert_eq!(r.fine_label, Some(SexualActivity));
        assert_eq!(r.distribution, Some(r.patches[1].distribution));
        assert!(!r.fallback_used);
    }

    #[test]
    fn full_box_matches_end_to_end() {
        let img = gradient_image(12, 9);
        let det = Persons(vec![(bx(0.0, 0.0, 12.0, 9.0), 1.0)]);
        let whole = classify_end_to_end(&RedIsActivity, &img).unwrap();
        let patch = classify_by_patches(&det, &RedIsActivity, &img, 0.5, 0.1).unwrap();
        assert_eq!(patch.distribution, whole.distribution);
        assert_eq!(patch.fine_label, whole.fine_label);
    }

    #[test]
    fn no_person_falls_back() {
        let mut img = gradient_image(8, 8);
        img.put_pixel(1, 1, Rgb([255, 0, 0]));
        let det = Persons(vec![(bx(0.0, 0.0, 8.0, 8.0), 0.2)]);
        let r = classify_by_patches(&det, &RedIsActivity, &img, 0.5, 0.1).unwrap();
        assert!(r.fallback_used);
        assert!(r.patches.is_empty());
        assert_eq!(r.fine_label, Some(SexualActivity));
    }

    #[test]
    fn nudity_rule() {
        let img = gradient_image(4, 4);
        assert!(!nudity_from_parts(&Parts(vec![]), &img, 0.5).unwrap());
        assert!(nudity_from_parts(&Parts(vec![(BodyPart::FemaleGenitalia, 0.9)]), &img, 0.5).unwrap());
        assert!(!nudity_from_parts(&Parts(vec![(BodyPart::AnalArea, 0.4)]), &img, 0.5).unwrap());
        let r = classify_by_parts(&Parts(vec![(BodyPart::MaleGenitalia, 0.7)]), &img, 0.5).unwrap();
        assert_eq!(r.nudity_flag, Some(true));
        assert_eq!(r.detections.len(), 1);
    }

    #[test]
    fn csam_decisions() {
        let img = gradient_image(4, 4);
        let posing = Fixed([0.1, 0.8, 0.1]);
        let activity = Fixed([0.8, 0.1, 0.1]);
        let neutral = Fixed([0.1, 0.1, 0.8]);
        let run = |age, m: &Fixed| {
            full_csam_pipeline(&FixedAge(age), &EndToEnd { model: m }, &img)
                .unwrap()
                .final_class
        };
        assert_eq!(run(AgePresence::MinorPresent, &posing), Some(FinalClass::Csam));
        assert_eq!(
            run(AgePresence::AdultsOnly, &activity),
            Some(FinalClass::AdultPornography)
        );
        for a in AgePresence::ALL {
            assert_eq!(run(a, &neutral), Some(FinalClass::Neutral));
        }
    }

    #[test]
    fn annotated_stubs() {
        let img = gradient_image(10, 10);
        let p = PersonBox {
            bbox: bx(5.0, 5.0, 15.0, 15.0),
            age_group: AgeGroup::Minor,
            sex: crate::datakit::Sex::Male,
            activity: String::new(),
        };
        let det = AnnotatedPersons { boxes: vec![p.clone()] };
        let d: Vec<Detection<f64, PersonClass>> = det.detect_persons(&img).unwrap();
        assert_eq!(d[0].bbox, bx(5.0, 5.0, 10.0, 10.0));
        let age = AnnotatedAge { persons: vec![p] };
        assert_eq!(age.estimate(&img, None).unwrap(), AgePresence::MinorPresent);
        let none = AnnotatedAge { persons: vec![] };
        assert_eq!(none.estimate(&img, None).unwrap(), AgePresence::AdultsOnly);
    }

    #[test]
    fn result_json_shape() {
        let img = gradient_image(4, 4);
        let r = classify_end_to_end(&Fixed([0.7, 0.2, 0.1]), &img).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["strategy"], "end2end");
        assert_eq!(v["fine_label"], "sexual_activity");
        assert_eq!(v["fallback_used"], false);
        assert!(v["final"].is_null());
        assert!(v.get("detections").is_none());
    }
}
