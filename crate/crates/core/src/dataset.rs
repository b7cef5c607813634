//! Tagged exemplar databases on disk, ground-truth rasters, and result
//! rendering.
//!
//! Layout of a dataset root:
//!
//! ```text
//! root/images/*.png | *.ppm    exemplar rasters
//! root/tags.json               {"<file name>": ["tag", ...], ...}
//! root/labels.json             optional: [{"id": 0, "name": "...", "color": [r, g, b]}, ...]
//! root/gt/<stem>.png           optional 8-bit label-id rasters, 255 = void
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mrf::LabelAssignment;
use crate::superpixel::SuperpixelDecomposition;

/// Ground-truth value for unlabelled pixels.
pub const VOID: u8 = 255;
pub const MIN_SIDE: u32 = 16;

pub type LabelSet = BTreeSet<usize>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub id: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggedImage {
    pub identifier: String,
    pub pixels: RgbImage,
    pub tags: LabelSet,
}

impl TaggedImage {
    pub fn new(identifier: impl Into<String>, pixels: RgbImage, tags: LabelSet) -> Result<Self> {
        let identifier = identifier.into();
        if tags.is_empty() {
            return Err(Error::Untagged(identifier));
        }
        if pixels.width() < MIN_SIDE || pixels.height() < MIN_SIDE {
            return Err(Error::InvalidArgument(format!(
                "image {identifier} is {}x{}, both sides must be at least {MIN_SIDE}",
                pixels.width(),
                pixels.height()
            )));
        }
        Ok(Self {
            identifier,
            pixels,
            tags,
        })
    }
}

/// Immutable exemplar pool with a dense label table.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryDatabase {
    pub images: Vec<TaggedImage>,
    pub labels: Vec<Label>,
}

impl AuxiliaryDatabase {
    pub fn new(images: Vec<TaggedImage>, labels: Vec<Label>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        for (i, l) in labels.iter().enumerate() {
            if l.id != i {
                return Err(Error::InvalidArgument(format!(
                    "label ids must be dense: position {i} holds id {}",
                    l.id
                )));
            }
        }
        let names: BTreeSet<&str> = labels.iter().map(|l| l.name.as_str()).collect();
        if names.len() != labels.len() {
            return Err(Error::InvalidArgument("duplicate label names".into()));
        }
        for img in &images {
            if let Some(&bad) = img.tags.iter().find(|&&t| t >= labels.len()) {
                return Err(Error::UnknownLabel(bad));
            }
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn all_labels(&self) -> LabelSet {
        (0..self.labels.len()).collect()
    }

    pub fn tag_sets(&self) -> Vec<LabelSet> {
        self.images.iter().map(|i| i.tags.clone()).collect()
    }

    pub fn label_id(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l.name == name)
    }

    pub fn label_names(&self, set: &LabelSet) -> Vec<String> {
        set.iter().map(|&i| self.labels[i].name.clone()).collect()
    }
}

/// Per-pixel label ids with `VOID` for unlabelled pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub width: usize,
    pub height: usize,
    pub label_map: Vec<u8>,
}

impl GroundTruth {
    pub fn new(width: usize, height: usize, label_map: Vec<u8>, n_labels: usize) -> Result<Self> {
        if label_map.len() != width * height {
            return Err(Error::dims(width * height, label_map.len()));
        }
        if let Some(&bad) = label_map.iter().find(|&&v| v != VOID && usize::from(v) >= n_labels) {
            return Err(Error::UnknownLabel(usize::from(bad)));
        }
        Ok(Self {
            width,
            height,
            label_map,
        })
    }

    /// Labels with at least one pixel.
    pub fn present_labels(&self) -> LabelSet {
        self.label_map
            .iter()
            .filter(|&&v| v != VOID)
            .map(|&v| usize::from(v))
            .collect()
    }

    pub fn void_fraction(&self) -> f64 {
        let void = self.label_map.iter().filter(|&&v| v == VOID).count();
        void as f64 / self.label_map.len().max(1) as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LabelEntry {
    id: usize,
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    color: Option<[u8; 3]>,
}

/// RGB colour per label id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Palette(pub Vec<[u8; 3]>);

impl Palette {
    /// Evenly spaced hues for `n` labels.
    pub fn default_for(n: usize) -> Self {
        Palette(
            (0..n)
                .map(|i| hsv_to_rgb(i as f64 * 360.0 / n.max(1) as f64, 0.8, 0.95))
                .collect(),
        )
    }

    pub fn color(&self, id: usize) -> [u8; 3] {
        self.0.get(id).copied().unwrap_or([0, 0, 0])
    }
}

pub(crate) fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = (h.rem_euclid(360.0)) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|u| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &'static str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        what,
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn is_raster(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "ppm")
    )
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path).map_err(|e| Error::raster(path, e))?.to_rgb8())
}

/// A dataset as read from disk: database, palette and whichever ground-truth
/// rasters exist (keyed by image identifier).
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub database: AuxiliaryDatabase,
    pub palette: Palette,
    pub ground_truth: BTreeMap<String, GroundTruth>,
}

/// Reads `root/images`, `root/tags.json` and the optional label table.
/// Images are ordered by identifier (their file name) and label ids follow
/// sorted name order.
pub fn load_dataset(root: &Path) -> Result<AuxiliaryDatabase> {
    Ok(load_dataset_full(root)?.database)
}

pub fn load_dataset_full(root: &Path) -> Result<LoadedDataset> {
    let tags_path = root.join("tags.json");
    if !tags_path.is_file() {
        return Err(Error::MissingTagsFile(tags_path));
    }
    let tags: BTreeMap<String, Vec<String>> = read_json(&tags_path, "tags file")?;

    let images_dir = root.join("images");
    let mut files: Vec<String> = match fs::read_dir(&images_dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file() && is_raster(p))
            .filter_map(|p| p.file_name().and_then(|n| n.to_str()).map(String::from))
            .collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(Error::io(&images_dir, e)),
    };
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let present: BTreeSet<&str> = files.iter().map(String::as_str).collect();
    if let Some(missing) = tags.keys().find(|k| !present.contains(k.as_str())) {
        return Err(Error::MissingImage(missing.clone()));
    }
    for f in &files {
        match tags.get(f) {
            Some(t) if !t.is_empty() => {}
            _ => return Err(Error::Untagged(f.clone())),
        }
    }

    let labels_path = root.join("labels.json");
    let declared: Vec<LabelEntry> = if labels_path.is_file() {
        read_json(&labels_path, "label table")?
    } else {
        Vec::new()
    };
    let names: BTreeSet<String> = tags
        .values()
        .flatten()
        .cloned()
        .chain(declared.iter().map(|e| e.name.clone()))
        .collect();
    let labels: Vec<Label> = names
        .into_iter()
        .enumerate()
        .map(|(id, name)| Label { id, name })
        .collect();
    let mut palette = Palette::default_for(labels.len());
    for entry in &declared {
        if let (Some(color), Some(id)) = (entry.color, labels.iter().position(|l| l.name == entry.name)) {
            palette.0[id] = color;
        }
    }
    let id_of = |name: &str| labels.iter().position(|l| l.name == name).expect("name in table");

    let images: Vec<TaggedImage> = files
        .par_iter()
        .map(|f| {
            let pixels = load_rgb(&images_dir.join(f))?;
            let set = tags[f].iter().map(|n| id_of(n)).collect();
            TaggedImage::new(f.clone(), pixels, set)
        })
        .collect::<Result<_>>()?;

    let mut ground_truth = BTreeMap::new();
    let gt_dir = root.join("gt");
    if gt_dir.is_dir() {
        for img in &images {
            let path = gt_dir.join(format!("{}.png", stem(&img.identifier)));
            if path.is_file() {
                let gt = load_ground_truth(&path, &labels, Some((img.pixels.width(), img.pixels.height())))?;
                ground_truth.insert(img.identifier.clone(), gt);
            }
        }
    }
    Ok(LoadedDataset {
        database: AuxiliaryDatabase::new(images, labels)?,
        palette,
        ground_truth,
    })
}

pub fn stem(identifier: &str) -> &str {
    Path::new(identifier)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(identifier)
}

/// Reads an 8-bit id raster, checking ids against `labels` and, when given,
/// the expected `(width, height)`.
pub fn load_ground_truth(path: &Path, labels: &[Label], expected: Option<(u32, u32)>) -> Result<GroundTruth> {
    let gray = image::open(path).map_err(|e| Error::raster(path, e))?.to_luma8();
    if let Some((w, h)) = expected {
        if (gray.width(), gray.height()) != (w, h) {
            return Err(Error::dims(
                format!("{w}x{h}"),
                format!("{}x{}", gray.width(), gray.height()),
            ));
        }
    }
    GroundTruth::new(
        gray.width() as usize,
        gray.height() as usize,
        gray.into_raw(),
        labels.len(),
    )
}

/// Writes a label-id raster as an 8-bit grayscale PNG.
pub fn write_label_raster(path: &Path, width: usize, height: usize, ids: &[u8]) -> Result<()> {
    let img = GrayImage::from_raw(width as u32, height as u32, ids.to_vec())
        .ok_or_else(|| Error::dims(width * height, ids.len()))?;
    img.save(path).map_err(|e| Error::raster(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlayPaths {
    pub labels: PathBuf,
    pub overlay: PathBuf,
}

/// Writes `<stem>.labels.png` (raw ids) and `<stem>.overlay.png` (image
/// blended half-and-half with each pixel's label colour).
pub fn write_overlay(
    image: &RgbImage,
    decomposition: &SuperpixelDecomposition,
    assignment: &LabelAssignment,
    palette: &Palette,
    out_dir: &Path,
    stem: &str,
) -> Result<OverlayPaths> {
    if (image.width() as usize, image.height() as usize) != (decomposition.width(), decomposition.height()) {
        return Err(Error::dims(
            format!("{}x{}", decomposition.width(), decomposition.height()),
            format!("{}x{}", image.width(), image.height()),
        ));
    }
    let ids = assignment.rasterize(decomposition)?;
    if let Some(&bad) = ids.iter().find(|&&id| id >= usize::from(VOID)) {
        return Err(Error::UnknownLabel(bad));
    }
    let ids: Vec<u8> = ids.into_iter().map(|id| id as u8).collect();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let labels = out_dir.join(format!("{stem}.labels.png"));
    write_label_raster(&labels, decomposition.width(), decomposition.height(), &ids)?;

    let mut overlay = RgbImage::new(image.width(), image.height());
    for (p, (src, dst)) in image.pixels().zip(overlay.pixels_mut()).enumerate() {
        let tint = palette.color(usize::from(ids[p]));
        *dst = Rgb(std::array::from_fn(|i| ((u16::from(src.0[i]) + u16::from(tint[i])) / 2) as u8));
    }
    let overlay_path = out_dir.join(format!("{stem}.overlay.png"));
    overlay.save(&overlay_path).map_err(|e| Error::raster(&overlay_path, e))?;
    Ok(OverlayPaths {
        labels,
        overlay: overlay_path,
    })
}

/// Writes a dataset in the layout understood by [`load_dataset`].
pub fn save_dataset(
    root: &Path,
    database: &AuxiliaryDatabase,
    palette: &Palette,
    ground_truth: &BTreeMap<String, GroundTruth>,
) -> Result<()> {
    let images_dir = root.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let mut tags = BTreeMap::new();
    for img in &database.images {
        let path = images_dir.join(&img.identifier);
        img.pixels.save(&path).map_err(|e| Error::raster(&path, e))?;
        tags.insert(img.identifier.clone(), database.label_names(&img.tags));
    }
    write_json(&root.join("tags.json"), &tags)?;
    let entries: Vec<LabelEntry> = database
        .labels
        .iter()
        .map(|l| LabelEntry {
            id: l.id,
            name: l.name.clone(),
            color: Some(palette.color(l.id)),
        })
        .collect();
    write_json(&root.join("labels.json"), &entries)?;
    if !ground_truth.is_empty() {
        let gt_dir = root.join("gt");
        fs::create_dir_all(&gt_dir).map_err(|e| Error::io(&gt_dir, e))?;
        for (id, gt) in ground_truth {
            write_label_raster(&gt_dir.join(format!("{}.png", stem(id))), gt.width, gt.height, &gt.label_map)?;
        }
    }
    Ok(())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serialisable value");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Reads back an id raster written by [`write_overlay`].
pub fn read_label_raster(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let gray = image::open(path).map_err(|e| Error::raster(path, e))?.to_luma8();
    Ok((gray.width() as usize, gray.height() as usize, gray.into_raw()))
}
