//! Label system: the fine three-class taxonomy, its SE/NS coarsening, severity
//! ordering, the two-model CSAM decision and the COPINE correspondence.
//!
//! Every function here is a pure table lookup.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fine label assigned by the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FineLabel {
    SexualActivity,
    SexualPosing,
    Neutral,
}

impl FineLabel {
    /// Canonical order, matching the component order of `Prob3`.
    pub const ALL: [FineLabel; 3] = [
        FineLabel::SexualActivity,
        FineLabel::SexualPosing,
        FineLabel::Neutral,
    ];

    pub fn index(self) -> usize {
        match self {
            FineLabel::SexualActivity => 0,
            FineLabel::SexualPosing => 1,
            FineLabel::Neutral => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FineLabel::SexualActivity => "sexual_activity",
            FineLabel::SexualPosing => "sexual_posing",
            FineLabel::Neutral => "neutral",
        }
    }

    pub fn to_binary(self) -> BinaryLabel {
        to_binary(self)
    }

    pub fn severity(self) -> SeverityRank {
        severity(self)
    }
}

impl fmt::Display for FineLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FineLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::input(format!("unknown fine label {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryLabel {
    #[serde(rename = "se")]
    SE,
    #[serde(rename = "ns")]
    NS,
}

impl BinaryLabel {
    pub const ALL: [BinaryLabel; 2] = [BinaryLabel::SE, BinaryLabel::NS];

    pub fn as_str(self) -> &'static str {
        match self {
            BinaryLabel::SE => "se",
            BinaryLabel::NS => "ns",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgePresence {
    MinorPresent,
    AdultsOnly,
}

impl AgePresence {
    pub const ALL: [AgePresence; 2] = [AgePresence::MinorPresent, AgePresence::AdultsOnly];
}

/// Outcome of the complete two-model system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalClass {
    #[serde(rename = "csam")]
    Csam,
    AdultPornography,
    Neutral,
}

impl FinalClass {
    pub fn as_str(self) -> &'static str {
        match self {
            FinalClass::Csam => "csam",
            FinalClass::AdultPornography => "adult_pornography",
            FinalClass::Neutral => "neutral",
        }
    }
}

/// Gravity of a fine label: neutral 1, posing 2, activity 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct SeverityRank(u8);

impl SeverityRank {
    pub const MIN: SeverityRank = SeverityRank(1);
    pub const MAX: SeverityRank = SeverityRank(3);

    pub fn new(rank: u8) -> Result<Self> {
        if (1..=3).contains(&rank) {
            Ok(SeverityRank(rank))
        } else {
            Err(Error::input(format!("severity rank {rank} outside 1..=3")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Inverse of [`severity`].
    pub fn label(self) -> FineLabel {
        match self.0 {
            1 => FineLabel::Neutral,
            2 => FineLabel::SexualPosing,
            _ => FineLabel::SexualActivity,
        }
    }
}

impl TryFrom<u8> for SeverityRank {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        SeverityRank::new(v)
    }
}

impl From<SeverityRank> for u8 {
    fn from(r: SeverityRank) -> u8 {
        r.0
    }
}

/// COPINE level a fine label corresponds to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CopineLevel {
    /// L6, explicit erotic posing.
    L6,
    /// L7, explicit sexual activity.
    L7,
    /// Anything below L6.
    BelowL6,
}

impl CopineLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            CopineLevel::L6 => "L6",
            CopineLevel::L7 => "L7",
            CopineLevel::BelowL6 => "below-L6",
        }
    }
}

impl fmt::Display for CopineLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn to_binary(label: FineLabel) -> BinaryLabel {
    match label {
        FineLabel::SexualActivity | FineLabel::SexualPosing => BinaryLabel::SE,
        FineLabel::Neutral => BinaryLabel::NS,
    }
}

pub fn severity(label: FineLabel) -> SeverityRank {
    match label {
        FineLabel::Neutral => SeverityRank(1),
        FineLabel::SexualPosing => SeverityRank(2),
        FineLabel::SexualActivity => SeverityRank(3),
    }
}

/// Combines the age model and the SE model into the final class.
pub fn csam_decision(age: AgePresence, se: BinaryLabel) -> FinalClass {
    match (age, se) {
        (_, BinaryLabel::NS) => FinalClass::Neutral,
        (AgePresence::MinorPresent, BinaryLabel::SE) => FinalClass::Csam,
        (AgePresence::AdultsOnly, BinaryLabel::SE) => FinalClass::AdultPornography,
    }
}

pub fn copine_map(label: FineLabel) -> CopineLevel {
    match label {
        FineLabel::SexualPosing => CopineLevel::L6,
        FineLabel::SexualActivity => CopineLevel::L7,
        FineLabel::Neutral => CopineLevel::BelowL6,
    }
}

/// Source-category tag to fine label table, supplied at ingestion.
///
/// Serializes as a flat JSON/TOML table `{ "<category>": "<fine_label>" }`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelMappingConfig {
    entries: BTreeMap<String, FineLabel>,
}

impl LabelMappingConfig {
    /// Builds a mapping, rejecting duplicate keys.
    pub fn new<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, FineLabel)>,
        S: Into<String>,
    {
        let mut map = BTreeMap::new();
        for (k, v) in entries {
            let k = k.into();
            if map.insert(k.clone(), v).is_some() {
                return Err(Error::param(format!("duplicate category {k:?} in label mapping")));
            }
        }
        Ok(Self { entries: map })
    }

    pub fn get(&self, tag: &str) -> Option<FineLabel> {
        self.entries.get(tag).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, FineLabel)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Categories mapped to `label`, in lexicographic order.
    pub fn categories_for(&self, label: FineLabel) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(_, v)| **v == label)
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Default for LabelMappingConfig {
    /// Default assignment of the ten global reporting categories.
    ///
    /// The activity-type categories go to `SexualActivity`, the posing and
    /// close-up categories to `SexualPosing`, and the legal erotica / nudity
    /// categories to `Neutral`. Override with a config file where the
    /// annotation practice differs.
    fn default() -> Self {
        use FineLabel::*;
        Self::new([
            ("adult pornography", SexualActivity),
            ("minors only (CSAM)", SexualActivity),
            ("minors & adults (CSAM)", SexualActivity),
            ("in the presence of a minor (CSAM)", SexualActivity),
            ("other (CSAM)", SexualActivity),
            ("sexual posing (CSAM)", SexualPosing),
            ("focus (CSAM)", SexualPosing),
            ("child erotism", Neutral),
            ("child nudity", Neutral),
            ("other neutral", Neutral),
        ])
        .expect("default mapping has unique keys")
    }
}

pub fn map_source_category(config: &LabelMappingConfig, tag: &str) -> Result<FineLabel> {
    config
        .get(tag)
        .ok_or_else(|| Error::UnmappedCategory(tag.to_string()))
}
