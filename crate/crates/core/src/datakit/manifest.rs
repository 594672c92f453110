//! JSON-lines manifest of annotated images.
//!
//! One object per line:
//!
//! ```json
//! {"id":"img-0001","image_path":"images/img-0001.png","source_category":"other neutral",
//!  "fine_label":"neutral","warning_neutral":false,
//!  "person_boxes":[{"x_min":1,"y_min":2,"x_max":10,"y_max":20,"age_group":"adult","sex":"female","activity":"standing"}],
//!  "part_boxes":[{"x_min":4,"y_min":8,"x_max":6,"y_max":10,"part":"female_genitalia"}]}
//! ```
//!
//! The fine label is derived from `source_category` through the label
//! mapping. A `fine_label` field, when present, must agree with it.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::geometry::BBox;
use crate::taxonomy::{map_source_category, FineLabel, LabelMappingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgeGroup {
    Minor,
    Adult,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Female,
    Male,
    Unknown,
}

/// SE-relevant body parts. Breasts are deliberately not part of this set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyPart {
    FemaleGenitalia,
    MaleGenitalia,
    AnalArea,
}

impl BodyPart {
    pub const ALL: [BodyPart; 3] = [
        BodyPart::FemaleGenitalia,
        BodyPart::MaleGenitalia,
        BodyPart::AnalArea,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BodyPart::FemaleGenitalia => "female_genitalia",
            BodyPart::MaleGenitalia => "male_genitalia",
            BodyPart::AnalArea => "anal_area",
        }
    }
}

impl std::fmt::Display for BodyPart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PersonBoxRepr", into = "PersonBoxRepr")]
pub struct PersonBox {
    pub bbox: BBox<f64>,
    pub age_group: AgeGroup,
    pub sex: Sex,
    pub activity: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PartBoxRepr", into = "PartBoxRepr")]
pub struct BodyPartBox {
    pub bbox: BBox<f64>,
    pub part: BodyPart,
}

// Wire forms: box corners inlined next to the attributes.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PersonBoxRepr {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
    age_group: AgeGroup,
    sex: Sex,
    #[serde(default)]
    activity: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartBoxRepr {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
    part: BodyPart,
}

impl TryFrom<PersonBoxRepr> for PersonBox {
    type Error = Error;

    fn try_from(r: PersonBoxRepr) -> Result<Self> {
        Ok(PersonBox {
            bbox: BBox::new(r.x_min, r.y_min, r.x_max, r.y_max)?,
            age_group: r.age_group,
            sex: r.sex,
            activity: r.activity,
        })
    }
}

impl From<PersonBox> for PersonBoxRepr {
    fn from(p: PersonBox) -> Self {
        PersonBoxRepr {
            x_min: p.bbox.x_min,
            y_min: p.bbox.y_min,
            x_max: p.bbox.x_max,
            y_max: p.bbox.y_max,
            age_group: p.age_group,
            sex: p.sex,
            activity: p.activity,
        }
    }
}

impl TryFrom<PartBoxRepr> for BodyPartBox {
    type Error = Error;

    fn try_from(r: PartBoxRepr) -> Result<Self> {
        Ok(BodyPartBox {
            bbox: BBox::new(r.x_min, r.y_min, r.x_max, r.y_max)?,
            part: r.part,
        })
    }
}

impl From<BodyPartBox> for PartBoxRepr {
    fn from(p: BodyPartBox) -> Self {
        PartBoxRepr {
            x_min: p.bbox.x_min,
            y_min: p.bbox.y_min,
            x_max: p.bbox.x_max,
            y_max: p.bbox.y_max,
            part: p.part,
        }
    }
}

/// Stratification attributes of one image.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct SplitAttributes {
    pub source_category: String,
    pub sex: Sex,
    pub age_group: AgeGroup,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub image_path: String,
    pub fine_label: FineLabel,
    pub source_category: String,
    pub warning_neutral: bool,
    pub person_boxes: Vec<PersonBox>,
    pub part_boxes: Vec<BodyPartBox>,
}

impl ImageRecord {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::input("empty id"));
        }
        if self.image_path.is_empty() {
            return Err(Error::input(format!("record {:?}: empty image_path", self.id)));
        }
        if self.warning_neutral && self.fine_label != FineLabel::Neutral {
            return Err(Error::input(format!(
                "record {:?}: warning_neutral set on a {} image",
                self.id, self.fine_label
            )));
        }
        for b in &self.person_boxes {
            b.bbox.validate()?;
        }
        for b in &self.part_boxes {
            b.bbox.validate()?;
        }
        Ok(())
    }

    /// Stratum attributes: the source category plus majority sex and age
    /// group over the person boxes. Ties and images without persons give
    /// `Unknown`.
    pub fn split_attributes(&self) -> SplitAttributes {
        SplitAttributes {
            source_category: self.source_category.clone(),
            sex: majority(self.person_boxes.iter().map(|p| p.sex), Sex::Unknown),
            age_group: majority(
                self.person_boxes.iter().map(|p| p.age_group),
                AgeGroup::Unknown,
            ),
        }
    }

    /// Image path resolved against the manifest's directory.
    pub fn resolve_image_path(&self, manifest_dir: &Path) -> PathBuf {
        let p = Path::new(&self.image_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            manifest_dir.join(p)
        }
    }
}

fn majority<K: Ord + Copy>(items: impl Iterator<Item = K>, tie: K) -> K {
    let mut counts: BTreeMap<K, usize> = BTreeMap::new();
    for k in items {
        *counts.entry(k).or_default() += 1;
    }
    let Some(best) = counts.values().copied().max() else {
        return tie;
    };
    let mut winners = counts.iter().filter(|(_, c)| **c == best);
    match (winners.next(), winners.next()) {
        (Some((k, _)), None) => *k,
        _ => tie,
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    image_path: String,
    source_category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fine_label: Option<FineLabel>,
    #[serde(default)]
    warning_neutral: bool,
    #[serde(default)]
    person_boxes: Vec<PersonBox>,
    #[serde(default)]
    part_boxes: Vec<BodyPartBox>,
}

/// Parses manifest text. `origin` is only used in error messages.
pub fn parse_manifest(
    text: &str,
    mapping: &LabelMappingConfig,
    origin: &Path,
) -> Result<Vec<ImageRecord>> {
    let err = |line: usize, message: String| Error::Manifest {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let line: RecordLine =
            serde_json::from_str(raw).map_err(|e| err(line_no, e.to_string()))?;
        let mapped = map_source_category(mapping, &line.source_category)
            .map_err(|e| err(line_no, e.to_string()))?;
        if let Some(declared) = line.fine_label {
            if declared != mapped {
                return Err(err(
                    line_no,
                    format!(
                        "fine_label {declared} disagrees with mapping of {:?} ({mapped})",
                        line.source_category
                    ),
                ));
            }
        }
        let rec = ImageRecord {
            id: line.id,
            image_path: line.image_path,
            fine_label: mapped,
            source_category: line.source_category,
            warning_neutral: line.warning_neutral,
            person_boxes: line.person_boxes,
            part_boxes: line.part_boxes,
        };
        rec.validate().map_err(|e| err(line_no, e.to_string()))?;
        if !seen.insert(rec.id.clone()) {
            return Err(err(line_no, format!("duplicate id {:?}", rec.id)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_manifest(path: &Path, mapping: &LabelMappingConfig) -> Result<Vec<ImageRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, mapping, path)
}

pub fn manifest_to_string(records: &[ImageRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let line = RecordLine {
            id: r.id.clone(),
            image_path: r.image_path.clone(),
            source_category: r.source_category.clone(),
            fine_label: Some(r.fine_label),
            warning_neutral: r.warning_neutral,
            person_boxes: r.person_boxes.clone(),
            part_boxes: r.part_boxes.clone(),
        };
        s.push_str(&serde_json::to_string(&line).expect("record serializes"));
        s.push('\n');
    }
    s
}

pub fn save_manifest(path: &Path, records: &[ImageRecord]) -> Result<()> {
    write_atomic(path, manifest_to_string(records).as_bytes())
}

/// Per-class sample counts, shaped like a dataset summary table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub all: usize,
    pub sexual_activity: usize,
    pub sexual_posing: usize,
    pub neutral: usize,
    pub warning_neutral: usize,
}

impl ClassCounts {
    pub fn get(&self, label: FineLabel) -> usize {
        match label {
            FineLabel::SexualActivity => self.sexual_activity,
            FineLabel::SexualPosing => self.sexual_posing,
            FineLabel::Neutral => self.neutral,
        }
    }
}

pub fn class_counts(records: &[ImageRecord]) -> ClassCounts {
    let mut c = ClassCounts::default();
    for r in records {
        c.all += 1;
        match r.fine_label {
            FineLabel::SexualActivity => c.sexual_activity += 1,
            FineLabel::SexualPosing => c.sexual_posing += 1,
            FineLabel::Neutral => c.neutral += 1,
        }
        if r.warning_neutral {
            c.warning_neutral += 1;
        }
    }
    c
}
