//! SLIC superpixels and their 4-neighbour adjacency.

use std::collections::{BTreeSet, VecDeque};

use image::RgbImage;

use crate::color::LabImage;
use crate::error::{Error, Result};

const SLIC_ITERATIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SlicParams {
    pub target_count: usize,
    pub compactness: f64,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self {
            target_count: 200,
            compactness: 10.0,
        }
    }
}

/// Partition of a raster into 4-connected segments.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperpixelDecomposition {
    width: usize,
    height: usize,
    segment_map: Vec<usize>,
    pixels: Vec<Vec<usize>>,
    centroids: Vec<[f64; 2]>,
}

impl SuperpixelDecomposition {
    /// Builds a decomposition from a row-major segment map. Indices must be
    /// dense in `0..n` and every segment 4-connected.
    pub fn from_segment_map(width: usize, height: usize, segment_map: Vec<usize>) -> Result<Self> {
        if segment_map.len() != width * height {
            return Err(Error::dims(width * height, segment_map.len()));
        }
        let n = segment_map.iter().copied().max().map_or(0, |m| m + 1);
        let mut pixels = vec![Vec::new(); n];
        for (p, &s) in segment_map.iter().enumerate() {
            pixels[s].push(p);
        }
        if let Some(empty) = pixels.iter().position(Vec::is_empty) {
            return Err(Error::EmptySegment(empty));
        }
        let components = connected_components(width, height, &segment_map);
        if components.iter().copied().max().map_or(0, |m| m + 1) != n {
            return Err(Error::InvalidArgument(
                "segment map contains a disconnected segment".into(),
            ));
        }
        Ok(Self::from_parts(width, height, segment_map, pixels))
    }

    fn from_parts(
        width: usize,
        height: usize,
        segment_map: Vec<usize>,
        pixels: Vec<Vec<usize>>,
    ) -> Self {
        let centroids = pixels
            .iter()
            .map(|px| {
                let (mut sr, mut sc) = (0.0, 0.0);
                for &p in px {
                    sr += (p / width) as f64 + 0.5;
                    sc += (p % width) as f64 + 0.5;
                }
                let k = px.len() as f64;
                [sr / k / height as f64, sc / k / width as f64]
            })
            .collect();
        Self {
            width,
            height,
            segment_map,
            pixels,
            centroids,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_segments(&self) -> usize {
        self.pixels.len()
    }

    /// Row-major segment index per pixel.
    pub fn segment_map(&self) -> &[usize] {
        &self.segment_map
    }

    /// Row-major pixel offsets belonging to `segment`.
    pub fn pixels(&self, segment: usize) -> &[usize] {
        &self.pixels[segment]
    }

    /// Segment centroid as `(row, col)`, each normalised to [0, 1].
    pub fn centroid(&self, segment: usize) -> [f64; 2] {
        self.centroids[segment]
    }

    /// Spatially adjacent segment pairs under 4-connectivity.
    pub fn adjacency(&self) -> AdjacencyList {
        let (w, h) = (self.width, self.height);
        let mut pairs = BTreeSet::new();
        for r in 0..h {
            for c in 0..w {
                let s = self.segment_map[r * w + c];
                if c + 1 < w {
                    let t = self.segment_map[r * w + c + 1];
                    if s != t {
                        pairs.insert((s.min(t), s.max(t)));
                    }
                }
                if r + 1 < h {
                    let t = self.segment_map[(r + 1) * w + c];
                    if s != t {
                        pairs.insert((s.min(t), s.max(t)));
                    }
                }
            }
        }
        AdjacencyList {
            pairs: pairs.into_iter().collect(),
        }
    }

    /// Raster marking pixels whose right or lower neighbour lies in another
    /// segment.
    pub fn boundary_mask(&self) -> Vec<bool> {
        let (w, h) = (self.width, self.height);
        let mut mask = vec![false; w * h];
        for r in 0..h {
            for c in 0..w {
                let s = self.segment_map[r * w + c];
                let right = c + 1 < w && self.segment_map[r * w + c + 1] != s;
                let down = r + 1 < h && self.segment_map[(r + 1) * w + c] != s;
                mask[r * w + c] = right || down;
            }
        }
        mask
    }
}

/// Unordered segment pairs `(a, b)` with `a < b`, sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AdjacencyList {
    pub pairs: Vec<(usize, usize)>,
}

impl AdjacencyList {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Labels 4-connected runs of equal segment index; returns dense component ids
/// assigned in raster-scan order.
fn connected_components(width: usize, height: usize, labels: &[usize]) -> Vec<usize> {
    let mut comp = vec![usize::MAX; labels.len()];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for start in 0..labels.len() {
        if comp[start] != usize::MAX {
            continue;
        }
        comp[start] = next;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            let (r, c) = (p / width, p % width);
            let mut visit = |q: usize| {
                if comp[q] == usize::MAX && labels[q] == labels[p] {
                    comp[q] = next;
                    queue.push_back(q);
                }
            };
            if c > 0 {
                visit(p - 1);
            }
            if c + 1 < width {
                visit(p + 1);
            }
            if r > 0 {
                visit(p - width);
            }
            if r + 1 < height {
                visit(p + width);
            }
        }
        next += 1;
    }
    comp
}

#[derive(Clone, Copy)]
struct Center {
    lab: [f64; 3],
    row: f64,
    col: f64,
}

/// SLIC in CIELAB with the linear distance `d_lab + compactness * d_xy / S`.
///
/// Orphaned fragments left by the clustering are merged into their largest
/// neighbouring segment so every output segment is 4-connected.
pub fn slic_segment(image: &RgbImage, params: SlicParams) -> Result<SuperpixelDecomposition> {
    if params.target_count == 0 {
        return Err(Error::InvalidArgument("target_count must be positive".into()));
    }
    if !(params.compactness > 0.0 && params.compactness.is_finite()) {
        return Err(Error::InvalidArgument("compactness must be positive".into()));
    }
    let w = image.width() as usize;
    let h = image.height() as usize;
    let n = w * h;
    if n == 0 {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    if params.target_count >= n {
        let pixels = (0..n).map(|p| vec![p]).collect();
        return Ok(SuperpixelDecomposition::from_parts(w, h, (0..n).collect(), pixels));
    }

    let lab = LabImage::from_rgb(image);
    let step = (n as f64 / params.target_count as f64).sqrt();
    let mut centers = seed_centers(&lab, params.target_count);

    let mut labels = vec![0usize; n];
    let mut dist = vec![f64::INFINITY; n];
    let radius = step.ceil() as isize;
    for _ in 0..SLIC_ITERATIONS {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        for (k, ctr) in centers.iter().enumerate() {
            let r0 = (ctr.row.round() as isize - radius).max(0) as usize;
            let r1 = ((ctr.row.round() as isize + radius) as usize).min(h - 1);
            let c0 = (ctr.col.round() as isize - radius).max(0) as usize;
            let c1 = ((ctr.col.round() as isize + radius) as usize).min(w - 1);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let p = lab.at(r, c);
                    let dl = ((p[0] - ctr.lab[0]).powi(2)
                        + (p[1] - ctr.lab[1]).powi(2)
                        + (p[2] - ctr.lab[2]).powi(2))
                    .sqrt();
                    let dxy = ((r as f64 - ctr.row).powi(2) + (c as f64 - ctr.col).powi(2)).sqrt();
                    let d = dl + params.compactness * dxy / step;
                    let idx = r * w + c;
                    if d < dist[idx] {
                        dist[idx] = d;
                        labels[idx] = k;
                    }
                }
            }
        }
        let mut sums = vec![[0.0f64; 6]; centers.len()];
        for (idx, &k) in labels.iter().enumerate() {
            let p = lab.data[idx];
            let s = &mut sums[k];
            s[0] += p[0];
            s[1] += p[1];
            s[2] += p[2];
            s[3] += (idx / w) as f64;
            s[4] += (idx % w) as f64;
            s[5] += 1.0;
        }
        for (ctr, s) in centers.iter_mut().zip(&sums) {
            if s[5] > 0.0 {
                ctr.lab = [s[0] / s[5], s[1] / s[5], s[2] / s[5]];
                ctr.row = s[3] / s[5];
                ctr.col = s[4] / s[5];
            }
        }
    }

    let min_size = ((step * step) / 4.0).round().max(1.0) as usize;
    Ok(enforce_connectivity(w, h, &labels, min_size))
}

fn seed_centers(lab: &LabImage, target: usize) -> Vec<Center> {
    let (w, h) = (lab.width, lab.height);
    // grid as close to `target` cells as the aspect ratio allows
    let nx = ((target as f64 * w as f64 / h as f64).sqrt().round() as usize).clamp(1, w);
    let ny = ((target as f64 / nx as f64).round() as usize).clamp(1, h);
    let grad = |r: usize, c: usize| {
        let a = lab.at(r, (c + 1).min(w - 1));
        let b = lab.at(r, c.saturating_sub(1));
        let u = lab.at((r + 1).min(h - 1), c);
        let d = lab.at(r.saturating_sub(1), c);
        (0..3).map(|i| (a[i] - b[i]).powi(2) + (u[i] - d[i]).powi(2)).sum::<f64>()
    };
    let mut centers = Vec::with_capacity(nx * ny);
    for i in 0..ny {
        for j in 0..nx {
            let r = (((i as f64 + 0.5) * h as f64 / ny as f64) as usize).min(h - 1);
            let c = (((j as f64 + 0.5) * w as f64 / nx as f64) as usize).min(w - 1);
            // move the seed to the lowest-gradient pixel of its 3x3 neighbourhood
            let mut best = (grad(r, c), r, c);
            for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                    let g = grad(rr, cc);
                    if g < best.0 {
                        best = (g, rr, cc);
                    }
                }
            }
            centers.push(Center {
                lab: lab.at(best.1, best.2),
                row: best.1 as f64,
                col: best.2 as f64,
            });
        }
    }
    centers
}

/// Splits clusters into 4-connected components. The largest piece of each
/// cluster is kept if it has at least `min_size` pixels; every other piece
/// joins the largest adjacent kept segment.
fn enforce_connectivity(w: usize, h: usize, labels: &[usize], min_size: usize) -> SuperpixelDecomposition {
    let comp = connected_components(w, h, labels);
    let n_comp = comp.iter().copied().max().map_or(0, |m| m + 1);
    let mut size = vec![0usize; n_comp];
    let mut cluster_of = vec![0usize; n_comp];
    for (p, &c) in comp.iter().enumerate() {
        size[c] += 1;
        cluster_of[c] = labels[p];
    }
    let n_clusters = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut largest = vec![usize::MAX; n_clusters];
    for c in 0..n_comp {
        let k = cluster_of[c];
        if largest[k] == usize::MAX || size[c] > size[largest[k]] {
            largest[k] = c;
        }
    }
    let mut owner: Vec<usize> = (0..n_comp)
        .map(|c| if size[c] >= min_size && largest[cluster_of[c]] == c { c } else { usize::MAX })
        .collect();
    if owner.iter().all(|&o| o == usize::MAX) {
        let biggest = (0..n_comp).max_by_key(|&c| (size[c], std::cmp::Reverse(c))).expect("nonempty image");
        owner[biggest] = biggest;
    }

    let mut neighbours: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_comp];
    for r in 0..h {
        for c in 0..w {
            let p = r * w + c;
            for q in [(c + 1 < w).then(|| p + 1), (r + 1 < h).then(|| p + w)].into_iter().flatten() {
                if comp[p] != comp[q] {
                    neighbours[comp[p]].insert(comp[q]);
                    neighbours[comp[q]].insert(comp[p]);
                }
            }
        }
    }
    let mut group_size = vec![0usize; n_comp];
    for c in 0..n_comp {
        if owner[c] == c {
            group_size[c] = size[c];
        }
    }
    // orphans attach in waves outward from the kept segments
    loop {
        let snapshot = owner.clone();
        let mut changed = false;
        for c in 0..n_comp {
            if snapshot[c] != usize::MAX {
                continue;
            }
            let best = neighbours[c]
                .iter()
                .filter_map(|&nb| (snapshot[nb] != usize::MAX).then_some(snapshot[nb]))
                .max_by_key(|&o| (group_size[o], std::cmp::Reverse(o)));
            if let Some(o) = best {
                owner[c] = o;
                changed = true;
            }
        }
        for c in 0..n_comp {
            if snapshot[c] == usize::MAX && owner[c] != usize::MAX {
                group_size[owner[c]] += size[c];
            }
        }
        if !changed {
            break;
        }
    }
    let merged: Vec<usize> = comp.iter().map(|&c| owner[c]).collect();
    let dense = connected_components(w, h, &merged);
    let n = dense.iter().copied().max().map_or(0, |m| m + 1);
    let mut pixels = vec![Vec::new(); n];
    for (p, &s) in dense.iter().enumerate() {
        pixels[s].push(p);
    }
    SuperpixelDecomposition::from_parts(w, h, dense, pixels)
}
