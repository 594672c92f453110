//! Synthetic proxy dataset with labels that are correct by construction.
//!
//! Each image shows a few rectangular "actors" (person proxies) on a noisy
//! background. An actor may carry a small saturated square, the body-part
//! proxy. Per-actor labels follow from the layout:
//!
//! * marked actor overlapping another marked actor: sexual activity
//! * marked actor otherwise: sexual posing
//! * unmarked actor: neutral
//!
//! and the image label is the most severe actor label. Neutral images can be
//! "warning" samples: they then carry distractor squares in colors no part
//! proxy ever uses.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{
    save_manifest, AgeGroup, BodyPart, BodyPartBox, ImageRecord, PersonBox, Sex,
};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::geometry::BBox;
use crate::taxonomy::{FineLabel, LabelMappingConfig};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const IMAGE_DIR: &str = "images";

/// Fill color of each body-part proxy. All have a full red channel and an
/// empty green channel.
pub fn part_color(part: BodyPart) -> [u8; 3] {
    match part {
        BodyPart::FemaleGenitalia => [255, 0, 255],
        BodyPart::MaleGenitalia => [255, 0, 0],
        BodyPart::AnalArea => [255, 0, 128],
    }
}

const DISTRACTOR_COLORS: [[u8; 3]; 3] = [[0, 255, 255], [0, 255, 0], [0, 0, 255]];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMix {
    pub sexual_activity: f64,
    pub sexual_posing: f64,
    pub neutral: f64,
}

impl Default for ClassMix {
    fn default() -> Self {
        ClassMix {
            sexual_activity: 1.0 / 3.0,
            sexual_posing: 1.0 / 3.0,
            neutral: 1.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub min: u32,
    pub max: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Signed so that a negative count is reported rather than mis-parsed.
    pub samples: i64,
    pub image_size: u32,
    pub mix: ClassMix,
    pub actors: Range,
    pub actor_size: Range,
    pub mark_size: u32,
    /// Share of neutral images that get distractor squares.
    pub warning_fraction: f64,
    /// Per-pixel uniform noise amplitude.
    pub noise: u8,
    /// Probability that an actor is annotated as a minor.
    pub minor_fraction: f64,
    pub id_prefix: String,
    /// Source categories are drawn from the categories this table maps to
    /// the sample's label.
    pub categories: LabelMappingConfig,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            samples: 300,
            image_size: 32,
            mix: ClassMix::default(),
            actors: Range { min: 1, max: 3 },
            actor_size: Range { min: 8, max: 16 },
            mark_size: 3,
            warning_fraction: 0.3,
            noise: 12,
            minor_fraction: 0.3,
            id_prefix: "img".into(),
            categories: LabelMappingConfig::default(),
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::param(m));
        if self.samples < 0 {
            return bad(format!("samples must be non-negative, got {}", self.samples));
        }
        let m = self.mix;
        let w = [m.sexual_activity, m.sexual_posing, m.neutral];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return bad(format!("class mix must be non-negative with a positive sum: {m:?}"));
        }
        if self.actors.min == 0 || self.actors.min > self.actors.max {
            return bad(format!("actors range invalid: {:?}", self.actors));
        }
        if m.sexual_activity > 0.0 && self.actors.max < 2 {
            return bad("sexual activity samples need at least 2 actors".into());
        }
        if self.actor_size.min == 0
            || self.actor_size.min > self.actor_size.max
            || self.actor_size.max >= self.image_size
        {
            return bad(format!(
                "actor size {:?} must be non-empty and smaller than the image ({} px)",
                self.actor_size, self.image_size
            ));
        }
        if self.mark_size == 0 || self.mark_size + 2 > self.actor_size.min {
            return bad(format!(
                "mark size {} must fit inside the smallest actor ({} px)",
                self.mark_size, self.actor_size.min
            ));
        }
        for (name, p) in [
            ("warning_fraction", self.warning_fraction),
            ("minor_fraction", self.minor_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        for (label, share) in FineLabel::ALL.into_iter().zip(w) {
            if share > 0.0 && self.categories.categories_for(label).is_empty() {
                return bad(format!("no source category maps to {label}"));
            }
        }
        Ok(())
    }

    /// Per-class sample counts by largest remainder, in `FineLabel::ALL` order.
    pub fn class_allocation(&self) -> [usize; 3] {
        let n = self.samples.max(0) as usize;
        let m = self.mix;
        let w = [m.sexual_activity, m.sexual_posing, m.neutral];
        let total: f64 = w.iter().sum();
        let quotas: Vec<f64> = w.iter().map(|v| n as f64 * v / total).collect();
        let mut counts = [0usize; 3];
        for i in 0..3 {
            counts[i] = (quotas[i] + 1e-9).floor() as usize;
        }
        let mut rest = n - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let fa = quotas[a] - counts[a] as f64;
            let fb = quotas[b] - counts[b] as f64;
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for i in order {
            if rest == 0 {
                break;
            }
            if w[i] > 0.0 {
                counts[i] += 1;
                rest -= 1;
            }
        }
        counts
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub records: Vec<ImageRecord>,
    pub images: Vec<RgbImage>,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone)]
struct Actor {
    bbox: BBox<f64>,
    mark: Option<(BodyPart, BBox<f64>)>,
}

/// Per-actor labels from the layout rule in the module docs.
pub fn actor_labels(boxes: &[BBox<f64>], marked: &[bool]) -> Vec<FineLabel> {
    (0..boxes.len())
        .map(|i| {
            if !marked[i] {
                FineLabel::Neutral
            } else if (0..boxes.len()).any(|j| j != i && marked[j] && boxes[i].intersects(&boxes[j])) {
                FineLabel::SexualActivity
            } else {
                FineLabel::SexualPosing
            }
        })
        .collect()
}

pub fn generate_synthetic_dataset(config: &GeneratorConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let counts = config.class_allocation();
    let mut labels: Vec<FineLabel> = FineLabel::ALL
        .iter()
        .zip(counts)
        .flat_map(|(l, c)| std::iter::repeat_n(*l, c))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);

    let width = (labels.len().max(1) - 1).to_string().len().max(4);
    let items: Vec<(ImageRecord, RgbImage)> = labels
        .par_iter()
        .enumerate()
        .map(|(i, &label)| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64 + 1);
            let id = format!("{}-{:0width$}", config.id_prefix, i);
            generate_one(config, id, label, &mut rng)
        })
        .collect();
    let (records, images) = items.into_iter().unzip();
    Ok(SyntheticDataset { records, images })
}

fn generate_one(
    cfg: &GeneratorConfig,
    id: String,
    label: FineLabel,
    rng: &mut ChaCha8Rng,
) -> (ImageRecord, RgbImage) {
    let size = cfg.image_size;
    let actors = loop {
        if let Some(a) = layout(cfg, label, rng) {
            break a;
        }
    };
    let boxes: Vec<_> = actors.iter().map(|a| a.bbox).collect();
    let marked: Vec<_> = actors.iter().map(|a| a.mark.is_some()).collect();
    let per_actor = actor_labels(&boxes, &marked);
    debug_assert_eq!(
        per_actor.iter().copied().max_by_key(|l| l.severity()),
        Some(label)
    );

    let warning = label == FineLabel::Neutral && rng.random_bool(cfg.warning_fraction);
    let mut img = RgbImage::new(size, size);
    let bg = muted(rng);
    fill(&mut img, &BBox::new(0.0, 0.0, size as f64, size as f64).unwrap(), bg);
    for a in &actors {
        let mut c = muted(rng);
        while color_dist(c, bg) < 60 {
            c = muted(rng);
        }
        fill(&mut img, &a.bbox, c);
    }
    for a in &actors {
        if let Some((part, b)) = &a.mark {
            fill(&mut img, b, part_color(*part));
        }
    }
    if warning {
        let n = rng.random_range(1..=2);
        for _ in 0..n {
            let host = &actors[rng.random_range(0..actors.len())];
            let b = square_inside(&host.bbox, cfg.mark_size, rng);
            let c = DISTRACTOR_COLORS[rng.random_range(0..DISTRACTOR_COLORS.len())];
            fill(&mut img, &b, c);
        }
    }
    add_noise(&mut img, cfg.noise, rng);

    let person_boxes = actors
        .iter()
        .zip(&per_actor)
        .map(|(a, l)| PersonBox {
            bbox: a.bbox,
            age_group: if rng.random_bool(cfg.minor_fraction) {
                AgeGroup::Minor
            } else {
                AgeGroup::Adult
            },
            sex: if rng.random_bool(0.5) { Sex::Female } else { Sex::Male },
            activity: l.as_str().to_string(),
        })
        .collect();
    let part_boxes = actors
        .iter()
        .filter_map(|a| a.mark.map(|(part, bbox)| BodyPartBox { bbox, part }))
        .collect();
    let cats = cfg.categories.categories_for(label);
    let source_category = cats[rng.random_range(0..cats.len())].to_string();

    let record = ImageRecord {
        image_path: format!("{IMAGE_DIR}/{id}.png"),
        id,
        fine_label: label,
        source_category,
        warning_neutral: warning,
        person_boxes,
        part_boxes,
    };
    (record, img)
}

fn layout(cfg: &GeneratorConfig, label: FineLabel, rng: &mut ChaCha8Rng) -> Option<Vec<Actor>> {
    let min_n = match label {
        FineLabel::SexualActivity => cfg.actors.min.max(2),
        _ => cfg.actors.min,
    };
    let n = rng.random_range(min_n..=cfg.actors.max.max(min_n)) as usize;
    let mut boxes: Vec<BBox<f64>> = (0..n).map(|_| random_box(cfg, rng)).collect();
    let mut marked = vec![false; n];
    match label {
        FineLabel::Neutral => {}
        FineLabel::SexualPosing => {
            marked[0] = true;
            for i in 1..n {
                let clear = (0..i).all(|j| !marked[j] || !boxes[i].intersects(&boxes[j]));
                if clear && rng.random_bool(0.3) {
                    marked[i] = true;
                }
            }
        }
        FineLabel::SexualActivity => {
            boxes[1] = overlapping_box(cfg, &boxes[0], rng)?;
            marked[0] = true;
            marked[1] = true;
        }
    }
    let labels = actor_labels(&boxes, &marked);
    let image_label = labels.iter().copied().max_by_key(|l| l.severity())?;
    if image_label != label {
        return None;
    }
    Some(
        boxes
            .into_iter()
            .zip(marked)
            .map(|(bbox, m)| Actor {
                bbox,
                mark: m.then(|| {
                    let part = BodyPart::ALL[rng.random_range(0..3)];
                    (part, square_inside(&bbox, cfg.mark_size, rng))
                }),
            })
            .collect(),
    )
}

fn random_box(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> BBox<f64> {
    let w = rng.random_range(cfg.actor_size.min..=cfg.actor_size.max);
    let h = rng.random_range(cfg.actor_size.min..=cfg.actor_size.max);
    let x = rng.random_range(0..=cfg.image_size - w);
    let y = rng.random_range(0..=cfg.image_size - h);
    BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64).unwrap()
}

/// A random box that shares at least a 2x2 area with `anchor`.
fn overlapping_box(cfg: &GeneratorConfig, anchor: &BBox<f64>, rng: &mut ChaCha8Rng) -> Option<BBox<f64>> {
    for _ in 0..64 {
        let b = random_box(cfg, rng);
        if b.intersection_area(anchor) >= 4.0 {
            return Some(b);
        }
    }
    None
}

fn square_inside(host: &BBox<f64>, side: u32, rng: &mut ChaCha8Rng) -> BBox<f64> {
    let (x0, y0) = (host.x_min as u32, host.y_min as u32);
    let (x1, y1) = (host.x_max as u32, host.y_max as u32);
    // keep one pixel of the actor visible around the square
    let x = rng.random_range(x0 + 1..=x1 - side - 1);
    let y = rng.random_range(y0 + 1..=y1 - side - 1);
    BBox::new(x as f64, y as f64, (x + side) as f64, (y + side) as f64).unwrap()
}

fn muted(rng: &mut ChaCha8Rng) -> [u8; 3] {
    [
        rng.random_range(60..=200),
        rng.random_range(60..=200),
        rng.random_range(60..=200),
    ]
}

fn color_dist(a: [u8; 3], b: [u8; 3]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (*x as i32 - y as i32).unsigned_abs()).sum()
}

fn fill(img: &mut RgbImage, b: &BBox<f64>, c: [u8; 3]) {
    let (w, h) = img.dimensions();
    for y in (b.y_min as u32)..(b.y_max as u32).min(h) {
        for x in (b.x_min as u32)..(b.x_max as u32).min(w) {
            img.put_pixel(x, y, Rgb(c));
        }
    }
}

fn add_noise(img: &mut RgbImage, amp: u8, rng: &mut ChaCha8Rng) {
    if amp == 0 {
        return;
    }
    let a = amp as i16;
    for p in img.pixels_mut() {
        for ch in p.0.iter_mut() {
            let v = *ch as i16 + rng.random_range(-a..=a);
            *ch = v.clamp(0, 255) as u8;
        }
    }
}

/// Writes `manifest.jsonl` and `images/<id>.png` under `dir`.
pub fn write_dataset(dir: &Path, ds: &SyntheticDataset) -> Result<()> {
    let img_dir = dir.join(IMAGE_DIR);
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    ds.records
        .par_iter()
        .zip(&ds.images)
        .try_for_each(|(r, img)| {
            let path = dir.join(&r.image_path);
            let mut buf = std::io::Cursor::new(Vec::new());
            img.write_to(&mut buf, image::ImageFormat::Png)
                .map_err(|e| Error::Image {
                    path: path.clone(),
                    source: e,
                })?;
            write_atomic(&path, buf.get_ref())
        })?;
    save_manifest(&dir.join(MANIFEST_FILE), &ds.records)
}
