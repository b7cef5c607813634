//! Global image descriptor (codebook columns) and per-superpixel descriptor.
//!
//! Both descriptors are built from CIELAB colour histograms and
//! lightness-gradient orientation histograms. A cell or segment with no
//! gradient energy gets a uniform orientation histogram.

use std::f64::consts::PI;

use image::RgbImage;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::color::LabImage;
use crate::error::{Error, Result};
use crate::superpixel::SuperpixelDecomposition;

const GRADIENT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Histogram bins per Lab channel.
    pub color_bins: usize,
    pub orientation_bins: usize,
    /// Pyramid levels; level `l` splits the image into `2^l x 2^l` cells.
    pub pyramid_levels: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            color_bins: 8,
            orientation_bins: 8,
            pyramid_levels: 2,
        }
    }
}

impl FeatureConfig {
    pub fn cell_dim(&self) -> usize {
        3 * self.color_bins + self.orientation_bins
    }

    pub fn n_cells(&self) -> usize {
        (0..self.pyramid_levels).map(|l| 1usize << (2 * l)).sum()
    }

    /// Dimension `m` of the global feature.
    pub fn global_dim(&self) -> usize {
        self.n_cells() * self.cell_dim()
    }

    /// Dimension `d` of the region feature.
    pub fn region_dim(&self) -> usize {
        3 + 3 * self.color_bins + self.orientation_bins + 2
    }

    fn validate(&self) -> Result<()> {
        if self.color_bins == 0 || self.orientation_bins == 0 || self.pyramid_levels == 0 {
            return Err(Error::InvalidArgument(
                "feature bin counts and pyramid levels must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn bin(value: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let t = ((value - lo) / (hi - lo)).clamp(0.0, 1.0);
    ((t * bins as f64) as usize).min(bins - 1)
}

/// Channel ranges used for Lab histogramming.
const LAB_RANGE: [(f64, f64); 3] = [(0.0, 100.0), (-110.0, 110.0), (-110.0, 110.0)];

/// Accumulates colour and orientation histograms over a pixel set.
struct CellHistogram {
    color: Vec<f64>,
    orientation: Vec<f64>,
    count: usize,
    lab_sum: [f64; 3],
}

impl CellHistogram {
    fn new(cfg: &FeatureConfig) -> Self {
        Self {
            color: vec![0.0; 3 * cfg.color_bins],
            orientation: vec![0.0; cfg.orientation_bins],
            count: 0,
            lab_sum: [0.0; 3],
        }
    }

    fn add(&mut self, cfg: &FeatureConfig, lab: [f64; 3], grad: (f64, f64)) {
        for (ch, &(lo, hi)) in LAB_RANGE.iter().enumerate() {
            self.color[ch * cfg.color_bins + bin(lab[ch], lo, hi, cfg.color_bins)] += 1.0;
            self.lab_sum[ch] += lab[ch];
        }
        let (mag, theta) = grad;
        self.orientation[bin(theta, 0.0, PI, cfg.orientation_bins)] += mag;
        self.count += 1;
    }

    /// L1-normalised colour histogram (all three channels together sum to 1).
    fn color_normalized(&self) -> Vec<f64> {
        let total: f64 = self.color.iter().sum();
        if total > 0.0 {
            self.color.iter().map(|v| v / total).collect()
        } else {
            self.color.clone()
        }
    }

    fn orientation_normalized(&self) -> Vec<f64> {
        let total: f64 = self.orientation.iter().sum();
        let k = self.orientation.len();
        if total > GRADIENT_EPS {
            self.orientation.iter().map(|v| v / total).collect()
        } else {
            vec![1.0 / k as f64; k]
        }
    }
}

/// Unit-norm global descriptor `F(I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalFeature {
    pub values: DVector<f64>,
}

impl GlobalFeature {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Spatial pyramid of Lab colour and gradient-orientation histograms,
/// L2-normalised over the full concatenation.
pub fn global_feature(image: &RgbImage, cfg: &FeatureConfig) -> Result<GlobalFeature> {
    cfg.validate()?;
    let lab = LabImage::from_rgb(image);
    Ok(global_feature_lab(&lab, cfg))
}

pub(crate) fn global_feature_lab(lab: &LabImage, cfg: &FeatureConfig) -> GlobalFeature {
    let grad = lab.lightness_gradient();
    let (w, h) = (lab.width, lab.height);
    let mut values = Vec::with_capacity(cfg.global_dim());
    for level in 0..cfg.pyramid_levels {
        let cells = 1usize << level;
        let mut hists: Vec<CellHistogram> = (0..cells * cells).map(|_| CellHistogram::new(cfg)).collect();
        for r in 0..h {
            let cr = (r * cells / h).min(cells - 1);
            for c in 0..w {
                let cc = (c * cells / w).min(cells - 1);
                let p = r * w + c;
                hists[cr * cells + cc].add(cfg, lab.data[p], grad[p]);
            }
        }
        for hist in &hists {
            values.extend(hist.color_normalized());
            values.extend(hist.orientation_normalized());
        }
    }
    let mut v = DVector::from_vec(values);
    let norm = v.norm();
    if norm > 0.0 {
        v /= norm;
    }
    GlobalFeature { values: v }
}

/// Superpixel descriptor `f(x)`.
///
/// `values` is the concatenation of the four blocks, each scaled by
/// `1/sqrt(block length)`; the raw blocks are kept alongside for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFeature {
    /// Mean Lab colour, with each channel divided by 100.
    pub mean_lab: [f64; 3],
    pub color_hist: Vec<f64>,
    pub orientation_hist: Vec<f64>,
    /// Normalised `(row, col)` centroid.
    pub centroid: [f64; 2],
    pub values: Vec<f64>,
}

impl RegionFeature {
    /// Euclidean distance between balanced feature vectors.
    pub fn distance(&self, other: &RegionFeature) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

pub fn region_feature(
    image: &RgbImage,
    decomposition: &SuperpixelDecomposition,
    segment: usize,
    cfg: &FeatureConfig,
) -> Result<RegionFeature> {
    cfg.validate()?;
    check_dims(image, decomposition)?;
    if segment >= decomposition.n_segments() {
        return Err(Error::InvalidArgument(format!(
            "segment index {segment} out of range ({} segments)",
            decomposition.n_segments()
        )));
    }
    let lab = LabImage::from_rgb(image);
    let grad = lab.lightness_gradient();
    region_feature_lab(&lab, &grad, decomposition, segment, cfg)
}

/// Region features for every segment of a decomposition.
pub fn region_features(
    image: &RgbImage,
    decomposition: &SuperpixelDecomposition,
    cfg: &FeatureConfig,
) -> Result<Vec<RegionFeature>> {
    cfg.validate()?;
    check_dims(image, decomposition)?;
    let lab = LabImage::from_rgb(image);
    let grad = lab.lightness_gradient();
    (0..decomposition.n_segments())
        .map(|s| region_feature_lab(&lab, &grad, decomposition, s, cfg))
        .collect()
}

fn check_dims(image: &RgbImage, d: &SuperpixelDecomposition) -> Result<()> {
    if image.width() as usize != d.width() || image.height() as usize != d.height() {
        return Err(Error::dims(
            format!("{}x{}", d.width(), d.height()),
            format!("{}x{}", image.width(), image.height()),
        ));
    }
    Ok(())
}

fn region_feature_lab(
    lab: &LabImage,
    grad: &[(f64, f64)],
    decomposition: &SuperpixelDecomposition,
    segment: usize,
    cfg: &FeatureConfig,
) -> Result<RegionFeature> {
    let pixels = decomposition.pixels(segment);
    if pixels.is_empty() {
        return Err(Error::EmptySegment(segment));
    }
    let mut hist = CellHistogram::new(cfg);
    for &p in pixels {
        hist.add(cfg, lab.data[p], grad[p]);
    }
    let n = hist.count as f64;
    let mean_lab = hist.lab_sum.map(|s| s / n / 100.0);
    let color_hist = hist.color_normalized();
    let orientation_hist = hist.orientation_normalized();
    let centroid = decomposition.centroid(segment);

    let mut values = Vec::with_capacity(cfg.region_dim());
    let mut push_block = |block: &[f64]| {
        let scale = 1.0 / (block.len() as f64).sqrt();
        values.extend(block.iter().map(|v| v * scale));
    };
    push_block(&mean_lab);
    push_block(&color_hist);
    push_block(&orientation_hist);
    push_block(&centroid);
    Ok(RegionFeature {
        mean_lab,
        color_hist,
        orientation_hist,
        centroid,
        values,
    })
}

/// Column-stacked global features of a database, `m x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub matrix: DMatrix<f64>,
    pub identifiers: Vec<String>,
}

impl Codebook {
    pub fn from_features(features: &[GlobalFeature], identifiers: Vec<String>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        if identifiers.len() != features.len() {
            return Err(Error::dims(features.len(), identifiers.len()));
        }
        let m = features[0].dim();
        if let Some(bad) = features.iter().find(|f| f.dim() != m) {
            return Err(Error::dims(m, bad.dim()));
        }
        let cols: Vec<DVector<f64>> = features.iter().map(|f| f.values.clone()).collect();
        Ok(Self {
            matrix: DMatrix::from_columns(&cols),
            identifiers,
        })
    }

    pub fn len(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.ncols() == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Builds the codebook with one column per database image, in database order.
pub fn build_codebook(database: &crate::AuxiliaryDatabase, cfg: &FeatureConfig) -> Result<Codebook> {
    use rayon::prelude::*;
    cfg.validate()?;
    if database.images.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let features: Vec<GlobalFeature> = database
        .images
        .par_iter()
        .map(|img| global_feature_lab(&LabImage::from_rgb(&img.pixels), cfg))
        .collect();
    let ids = database.images.iter().map(|i| i.identifier.clone()).collect();
    Codebook::from_features(&features, ids)
}
