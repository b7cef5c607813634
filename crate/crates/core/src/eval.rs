//! Segmentation and annotation metrics, plus a deterministic synthetic
//! dataset with planted ground truth.

use std::collections::BTreeMap;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::dataset::{hsv_to_rgb, AuxiliaryDatabase, GroundTruth, Label, LabelSet, Palette, TaggedImage, VOID};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAccuracyReport {
    /// Accuracy per label present in the ground truth.
    pub per_class: BTreeMap<usize, f64>,
    /// Mean of `per_class`.
    pub average: f64,
}

/// Pools pixel counts over any number of images before averaging per class.
#[derive(Debug, Clone, Default)]
pub struct ClassAccuracyAccumulator {
    correct: BTreeMap<usize, u64>,
    total: BTreeMap<usize, u64>,
}

impl ClassAccuracyAccumulator {
    pub fn add(&mut self, predicted: &[usize], truth: &GroundTruth) -> Result<()> {
        if predicted.len() != truth.label_map.len() {
            return Err(Error::dims(truth.label_map.len(), predicted.len()));
        }
        for (&p, &t) in predicted.iter().zip(&truth.label_map) {
            if t == VOID {
                continue;
            }
            let t = usize::from(t);
            *self.total.entry(t).or_default() += 1;
            if p == t {
                *self.correct.entry(t).or_default() += 1;
            }
        }
        Ok(())
    }

    pub fn report(&self) -> ClassAccuracyReport {
        let per_class: BTreeMap<usize, f64> = self
            .total
            .iter()
            .map(|(&c, &n)| (c, self.correct.get(&c).copied().unwrap_or(0) as f64 / n as f64))
            .collect();
        let average = if per_class.is_empty() {
            0.0
        } else {
            per_class.values().sum::<f64>() / per_class.len() as f64
        };
        ClassAccuracyReport { per_class, average }
    }
}

/// Fraction of each class's (non-void) ground-truth pixels predicted
/// correctly, averaged over the classes that occur.
pub fn per_class_accuracy(predicted: &[usize], truth: &GroundTruth) -> Result<ClassAccuracyReport> {
    let mut acc = ClassAccuracyAccumulator::default();
    acc.add(predicted, truth)?;
    Ok(acc.report())
}

/// Labels ranked by score, descending, ties to the lower id.
pub fn rank_labels(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Mean over relevant labels of the precision at each relevant label's rank.
pub fn average_precision(scores: &[f64], truth: &LabelSet) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::EmptyLabelSet);
    }
    if let Some(&bad) = truth.iter().find(|&&l| l >= scores.len()) {
        return Err(Error::UnknownLabel(bad));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, label) in rank_labels(scores).into_iter().enumerate() {
        if truth.contains(&label) {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapReport {
    pub per_query: Vec<f64>,
    pub mean: f64,
}

pub fn mean_average_precision(per_query: Vec<f64>) -> MapReport {
    let mean = if per_query.is_empty() {
        0.0
    } else {
        per_query.iter().sum::<f64>() / per_query.len() as f64
    };
    MapReport { per_query, mean }
}

/// Synthetic scene parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub width: u32,
    pub height: u32,
    /// Per-channel Gaussian noise, in 8-bit units.
    pub noise_sigma: f64,
    pub max_regions: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 96,
            height: 96,
            noise_sigma: 8.0,
            max_regions: 3,
        }
    }
}

pub const MAX_SYNTH_CLASSES: usize = 8;

const PLACEMENT_ATTEMPTS: usize = 30;
/// Minimum ground margin between regions, in pixels.
const REGION_GAP: f64 = 3.0;

const CLASS_NAMES: [&str; MAX_SYNTH_CLASSES] = [
    "c0_ground",
    "c1_red",
    "c2_blue",
    "c3_yellow",
    "c4_cyan",
    "c5_magenta",
    "c6_orange",
    "c7_purple",
];

/// Hue (degrees), saturation, value per class; class 0 is the textured
/// background.
const CLASS_HSV: [(f64, f64, f64); MAX_SYNTH_CLASSES] = [
    (0.0, 0.0, 0.50),
    (0.0, 0.85, 0.85),
    (225.0, 0.80, 0.85),
    (55.0, 0.85, 0.90),
    (180.0, 0.80, 0.80),
    (305.0, 0.70, 0.80),
    (28.0, 0.90, 0.95),
    (270.0, 0.65, 0.60),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub database: AuxiliaryDatabase,
    /// Aligned with `database.images`.
    pub ground_truth: Vec<GroundTruth>,
    pub palette: Palette,
}

impl SynthDataset {
    pub fn ground_truth_map(&self) -> BTreeMap<String, GroundTruth> {
        self.database
            .images
            .iter()
            .zip(&self.ground_truth)
            .map(|(img, gt)| (img.identifier.clone(), gt.clone()))
            .collect()
    }

    /// Splits into the first `n_train` images and the rest, keeping labels.
    pub fn split(&self, n_train: usize) -> Result<(SynthDataset, SynthDataset)> {
        let n_train = n_train.min(self.database.len());
        let part = |range: std::ops::Range<usize>| -> Result<SynthDataset> {
            Ok(SynthDataset {
                database: AuxiliaryDatabase::new(self.database.images[range.clone()].to_vec(), self.database.labels.clone())?,
                ground_truth: self.ground_truth[range].to_vec(),
                palette: self.palette.clone(),
            })
        };
        Ok((part(0..n_train)?, part(n_train..self.database.len())?))
    }
}

pub fn synth_dataset(seed: u64, n_images: usize, n_classes: usize) -> Result<SynthDataset> {
    synth_dataset_with(seed, n_images, n_classes, SynthConfig::default())
}

/// Each image is a textured ground (class 0) with up to `max_regions` flat,
/// lightly noised, non-overlapping ellipses of distinct foreground classes.
/// A region that finds no free spot is dropped.
/// Tags are exactly the classes left with at least one pixel.
pub fn synth_dataset_with(seed: u64, n_images: usize, n_classes: usize, cfg: SynthConfig) -> Result<SynthDataset> {
    if n_classes == 0 || n_classes > MAX_SYNTH_CLASSES {
        return Err(Error::InvalidArgument(format!(
            "n_classes must be in 1..={MAX_SYNTH_CLASSES}, got {n_classes}"
        )));
    }
    if n_images == 0 {
        return Err(Error::EmptyDatabase);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let colors: Vec<[f64; 3]> = CLASS_HSV[..n_classes]
        .iter()
        .map(|&(h, s, v)| hsv_to_rgb(h, s, v).map(f64::from))
        .collect();
    let (w, h) = (cfg.width as usize, cfg.height as usize);

    let mut images = Vec::with_capacity(n_images);
    let mut truths = Vec::with_capacity(n_images);
    for idx in 0..n_images {
        let mut label_map = vec![0u8; w * h];
        let mut shade = vec![1.0f64; w * h];
        // ground texture: oriented sinusoidal stripes
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let period: f64 = rng.random_range(5.0..9.0);
        let (ct, st) = (theta.cos(), theta.sin());
        for r in 0..h {
            for c in 0..w {
                let phase = (c as f64 * ct + r as f64 * st) / period * std::f64::consts::TAU;
                shade[r * w + c] = 1.0 + 0.18 * phase.sin();
            }
        }

        let fg: Vec<usize> = (1..n_classes).collect();
        if !fg.is_empty() {
            let k = rng.random_range(1..=cfg.max_regions.min(fg.len()).max(1));
            let mut pool = fg.clone();
            for _ in 0..k {
                let class = pool.swap_remove(rng.random_range(0..pool.len()));
                // regions never overlap, so every region stays a solid blob
                for _ in 0..PLACEMENT_ATTEMPTS {
                    let cy = rng.random_range(0.15..0.85) * h as f64;
                    let cx = rng.random_range(0.15..0.85) * w as f64;
                    let ry = rng.random_range(0.15..0.27) * h as f64;
                    let rx = rng.random_range(0.15..0.27) * w as f64;
                    let inside = |r: usize, c: usize, margin: f64| {
                        let dy = (r as f64 + 0.5 - cy) / (ry + margin);
                        let dx = (c as f64 + 0.5 - cx) / (rx + margin);
                        dy * dy + dx * dx <= 1.0
                    };
                    let clash = (0..w * h).any(|p| label_map[p] != 0 && inside(p / w, p % w, REGION_GAP));
                    if clash {
                        continue;
                    }
                    for p in 0..w * h {
                        if inside(p / w, p % w, 0.0) {
                            label_map[p] = class as u8;
                            shade[p] = 1.0;
                        }
                    }
                    break;
                }
            }
        }

        let mut img = RgbImage::new(cfg.width, cfg.height);
        for (p, px) in img.pixels_mut().enumerate() {
            let base = colors[usize::from(label_map[p])];
            *px = Rgb(std::array::from_fn(|i| {
                (base[i] * shade[p] + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8
            }));
        }
        let gt = GroundTruth::new(w, h, label_map, n_classes)?;
        let tags: LabelSet = gt.present_labels();
        images.push(TaggedImage::new(format!("img_{idx:04}.png"), img, tags)?);
        truths.push(gt);
    }
    let labels = CLASS_NAMES[..n_classes]
        .iter()
        .enumerate()
        .map(|(id, name)| Label { id, name: name.to_string() })
        .collect();
    let palette = Palette(
        CLASS_HSV[..n_classes]
            .iter()
            .map(|&(hue, _, _)| hsv_to_rgb(hue, 0.9, 1.0))
            .collect(),
    );
    Ok(SynthDataset {
        database: AuxiliaryDatabase::new(images, labels)?,
        ground_truth: truths,
        palette,
    })
}
