//! The alternating parse loop and tag annotation.

use image::RgbImage;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{AuxiliaryDatabase, LabelSet};
use crate::error::{Error, Result};
use crate::eval::rank_labels;
use crate::features::{self, Codebook, FeatureConfig, GlobalFeature, RegionFeature};
use crate::mrf::{self, LabelAssignment, PairwiseMode, ReferenceView, UnaryParams};
use crate::semantics::{self, SemanticAffinity};
use crate::sparse_coder::{self, CodeInit, CoderConfig, ReferenceSet, SemanticCode};
use crate::superpixel::{self, AdjacencyList, SlicParams, SuperpixelDecomposition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Number of references kept from the sparse code.
    pub p: usize,
    /// Outer edges per (target superpixel, reference).
    pub q: usize,
    pub sigma: f64,
    pub max_coder_iters: usize,
    /// Coefficients must exceed this to be selected.
    pub selection_threshold: f64,
    pub coder_init: CodeInit,
    pub max_em_iters: usize,
    pub superpixels: SlicParams,
    pub features: FeatureConfig,
    pub unary: UnaryParams,
    pub pairwise: PairwiseMode,
    /// Nearest neighbours used by annotation.
    pub annotate_k: usize,
    /// Labels reported by annotation.
    pub annotate_n: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            gamma: 0.2,
            lambda: 1.0,
            p: 10,
            q: 20,
            sigma: 1e-5,
            max_coder_iters: 1000,
            selection_threshold: 0.0,
            coder_init: CodeInit::Zero,
            max_em_iters: 10,
            superpixels: SlicParams::default(),
            features: FeatureConfig::default(),
            unary: UnaryParams::default(),
            pairwise: PairwiseMode::default(),
            annotate_k: 10,
            annotate_n: 3,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Format {
            what: "run config",
            path: "<config>".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Format { what, message, .. } => Error::Format {
                what,
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn coder(&self) -> CoderConfig {
        CoderConfig {
            beta: self.beta,
            gamma: self.gamma,
            sigma: self.sigma,
            max_iters: self.max_coder_iters,
            init: self.coder_init,
            ..CoderConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.coder().validate()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument("lambda must be nonnegative".into()));
        }
        if self.p == 0 || self.q == 0 || self.max_em_iters == 0 || self.annotate_k == 0 || self.annotate_n == 0 {
            return Err(Error::InvalidArgument(
                "p, q, max_em_iters, annotate_k and annotate_n must be positive".into(),
            ));
        }
        if !(self.unary.absent_cost >= 0.0 && self.unary.absent_cost.is_finite()) {
            return Err(Error::InvalidArgument("absent_cost must be nonnegative".into()));
        }
        if self.superpixels.target_count == 0 || !(self.superpixels.compactness > 0.0) {
            return Err(Error::InvalidArgument("superpixel settings must be positive".into()));
        }
        Ok(())
    }
}

/// Superpixels and descriptors of one image.
#[derive(Debug, Clone)]
pub struct PreparedImage {
    pub decomposition: SuperpixelDecomposition,
    pub adjacency: AdjacencyList,
    pub regions: Vec<RegionFeature>,
    pub global: GlobalFeature,
}

pub fn prepare_image(image: &RgbImage, cfg: &RunConfig) -> Result<PreparedImage> {
    let decomposition = superpixel::slic_segment(image, cfg.superpixels)?;
    let regions = features::region_features(image, &decomposition, &cfg.features)?;
    let global = features::global_feature(image, &cfg.features)?;
    Ok(PreparedImage {
        adjacency: decomposition.adjacency(),
        decomposition,
        regions,
        global,
    })
}

/// Database with every per-image quantity the parse loop needs.
#[derive(Debug, Clone)]
pub struct PreparedDatabase {
    pub database: AuxiliaryDatabase,
    pub codebook: Codebook,
    pub tag_sets: Vec<LabelSet>,
    pub affinity: SemanticAffinity,
    pub images: Vec<PreparedImage>,
}

impl PreparedDatabase {
    pub fn new(database: AuxiliaryDatabase, cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        if database.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        let images: Vec<PreparedImage> = database
            .images
            .par_iter()
            .map(|img| prepare_image(&img.pixels, cfg))
            .collect::<Result<_>>()?;
        let globals: Vec<GlobalFeature> = images.iter().map(|p| p.global.clone()).collect();
        let codebook = Codebook::from_features(&globals, database.images.iter().map(|i| i.identifier.clone()).collect())?;
        let tag_sets = database.tag_sets();
        let affinity = semantics::build_affinity(&tag_sets)?;
        Ok(Self {
            database,
            codebook,
            tag_sets,
            affinity,
            images,
        })
    }

    pub fn len(&self) -> usize {
        self.database.len()
    }

    pub fn is_empty(&self) -> bool {
        self.database.is_empty()
    }

    /// Database positions available for retrieval.
    fn active(&self, exclude: Option<&str>) -> Vec<usize> {
        (0..self.len())
            .filter(|&k| exclude != Some(self.database.images[k].identifier.as_str()))
            .collect()
    }
}

/// Retrieval restricted to a subset of the database; coefficients are
/// scattered back to full database positions.
struct RetrievalProblem {
    active: Vec<usize>,
    codebook: DMatrix<f64>,
    tags: Vec<LabelSet>,
    affinity: SemanticAffinity,
    n_total: usize,
}

impl RetrievalProblem {
    fn new(db: &PreparedDatabase, exclude: Option<&str>) -> Result<Self> {
        let active = db.active(exclude);
        if active.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        let (codebook, tags, affinity) = if active.len() == db.len() {
            (db.codebook.matrix.clone(), db.tag_sets.clone(), db.affinity.clone())
        } else {
            let tags: Vec<LabelSet> = active.iter().map(|&k| db.tag_sets[k].clone()).collect();
            let affinity = semantics::build_affinity(&tags)?;
            (db.codebook.matrix.select_columns(&active), tags, affinity)
        };
        Ok(Self {
            active,
            codebook,
            tags,
            affinity,
            n_total: db.len(),
        })
    }

    fn solve(&self, feature: &GlobalFeature, label_set: &LabelSet, lambda: f64, coder: &CoderConfig) -> Result<SemanticCode> {
        let diag = semantics::dissimilarity_diag(label_set, &self.tags)?;
        let constraint = semantics::constraint_matrix(&self.affinity, &diag, lambda)?;
        let mut code = sparse_coder::solve_code(&feature.values, &self.codebook, &constraint, coder)?;
        let mut full = DVector::zeros(self.n_total);
        for (slot, &k) in self.active.iter().enumerate() {
            full[k] = code.alpha[slot];
        }
        code.alpha = full;
        Ok(code)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    /// Label estimate driving this iteration's retrieval.
    pub label_set: LabelSet,
    pub references: Vec<usize>,
    pub reference_weights: Vec<f64>,
    pub code_energy_trace: Vec<f64>,
    pub code_converged: bool,
    pub candidate_labels: Vec<usize>,
    /// Swap-move energies of the labelling step.
    pub mrf_energies: Vec<f64>,
    pub assignment: LabelAssignment,
}

impl IterationRecord {
    pub fn final_mrf_energy(&self) -> f64 {
        *self.mrf_energies.last().expect("initial energy present")
    }
}

#[derive(Debug, Clone)]
pub struct ParseResult {
    pub assignment: LabelAssignment,
    pub decomposition: SuperpixelDecomposition,
    /// Starts with the full label table; one entry appended per iteration.
    pub label_set_history: Vec<LabelSet>,
    pub iterations: Vec<IterationRecord>,
    pub em_iterations: usize,
    pub converged: bool,
    /// Stopped because a previously seen label set came back.
    pub oscillated: bool,
}

impl ParseResult {
    pub fn final_label_set(&self) -> LabelSet {
        self.assignment.induced_set()
    }

    pub fn references_per_iter(&self) -> Vec<ReferenceSet> {
        self.iterations
            .iter()
            .map(|it| {
                let mut masked = DVector::zeros(0);
                if let Some(&max) = it.references.iter().max() {
                    masked = DVector::zeros(max + 1);
                    for (&k, &w) in it.references.iter().zip(&it.reference_weights) {
                        masked[k] = w;
                    }
                }
                ReferenceSet {
                    indices: it.references.clone(),
                    weights: it.reference_weights.clone(),
                    masked,
                }
            })
            .collect()
    }

    /// Per-pixel labels of the final assignment.
    pub fn label_raster(&self) -> Vec<usize> {
        self.assignment
            .rasterize(&self.decomposition)
            .expect("assignment covers the decomposition")
    }
}

/// Parses `target` against the database. `exclude` removes the database
/// image with that identifier from retrieval.
pub fn infer_labels(target: &RgbImage, db: &PreparedDatabase, cfg: &RunConfig, exclude: Option<&str>) -> Result<ParseResult> {
    cfg.validate()?;
    let prepared = prepare_image(target, cfg)?;
    infer_labels_prepared(&prepared, db, cfg, exclude)
}

pub fn infer_labels_prepared(
    target: &PreparedImage,
    db: &PreparedDatabase,
    cfg: &RunConfig,
    exclude: Option<&str>,
) -> Result<ParseResult> {
    let problem = RetrievalProblem::new(db, exclude)?;
    let coder = cfg.coder();
    let mut label_set = db.database.all_labels();
    if label_set.is_empty() {
        return Err(Error::EmptyLabelSet);
    }
    let mut history = vec![label_set.clone()];
    let mut iterations: Vec<IterationRecord> = Vec::new();
    let mut converged = false;
    let mut oscillated = false;

    for _ in 0..cfg.max_em_iters {
        let code = problem.solve(&target.global, &label_set, cfg.lambda, &coder)?;
        let refs = sparse_coder::select_references(&code.alpha, cfg.p, cfg.selection_threshold)?;
        let views: Vec<ReferenceView<'_>> = refs
            .indices
            .iter()
            .map(|&k| ReferenceView {
                index: k,
                tags: &db.tag_sets[k],
                features: &db.images[k].regions,
            })
            .collect();
        let graph = mrf::build_graph(&target.regions, &target.adjacency, &views, cfg.q)?;
        let unary = mrf::unary_table(&graph, &refs.masked, cfg.unary)?;
        let init = mrf::unary_argmin(&unary);
        let swap = mrf::alpha_beta_swap_traced(&graph, &unary, &init, cfg.pairwise)?;
        let next_set = swap.assignment.induced_set();
        iterations.push(IterationRecord {
            label_set: label_set.clone(),
            references: refs.indices.clone(),
            reference_weights: refs.weights.clone(),
            code_energy_trace: code.energy_trace,
            code_converged: code.converged,
            candidate_labels: graph.candidate_labels.clone(),
            mrf_energies: swap.energies,
            assignment: swap.assignment,
        });
        let seen_before = history[..history.len() - 1].contains(&next_set);
        history.push(next_set.clone());
        if next_set == label_set {
            converged = true;
            break;
        }
        if seen_before {
            oscillated = true;
            log::warn!("label set revisited without settling; keeping the lowest-energy labelling");
            break;
        }
        label_set = next_set;
    }
    if !converged && !oscillated {
        log::warn!("parse loop hit max_em_iters={} before the label set settled", cfg.max_em_iters);
    }

    let chosen = if oscillated {
        iterations
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.final_mrf_energy().total_cmp(&b.1.final_mrf_energy()).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)
            .expect("at least one iteration")
    } else {
        iterations.len() - 1
    };
    Ok(ParseResult {
        assignment: iterations[chosen].assignment.clone(),
        decomposition: target.decomposition.clone(),
        label_set_history: history,
        em_iterations: iterations.len(),
        iterations,
        converged,
        oscillated,
    })
}

/// One retrieval step for a given label estimate (the full label table when
/// `label_set` is `None`).
pub fn retrieve(
    target: &RgbImage,
    db: &PreparedDatabase,
    cfg: &RunConfig,
    label_set: Option<&LabelSet>,
    exclude: Option<&str>,
) -> Result<(SemanticCode, ReferenceSet)> {
    cfg.validate()?;
    let feature = features::global_feature(target, &cfg.features)?;
    let problem = RetrievalProblem::new(db, exclude)?;
    let all = db.database.all_labels();
    let code = problem.solve(&feature, label_set.unwrap_or(&all), cfg.lambda, &cfg.coder())?;
    let refs = sparse_coder::select_references(&code.alpha, cfg.p, cfg.selection_threshold)?;
    Ok((code, refs))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotationResult {
    /// Score per label id.
    pub scores: Vec<f64>,
    /// All label ids, best first (ties to the lower id).
    pub ranked_labels: Vec<usize>,
    pub top_n: Vec<usize>,
    /// Neighbours used, with their transfer weights.
    pub neighbours: Vec<(usize, f64)>,
    /// Fewer than `K` positive coefficients were available.
    pub short: bool,
}

/// Label scores `z = sum_i pi_i l_i` over the `k` largest positive
/// coefficients.
pub fn transfer_labels(
    alpha: &DVector<f64>,
    tags: &[LabelSet],
    n_labels: usize,
    k: usize,
    n: usize,
    weighted: bool,
) -> AnnotationResult {
    let mut order: Vec<usize> = (0..alpha.len()).filter(|&i| alpha[i] > 0.0).collect();
    order.sort_by(|&a, &b| alpha[b].total_cmp(&alpha[a]).then(a.cmp(&b)));
    let short = order.len() < k;
    order.truncate(k);
    let mut scores = vec![0.0; n_labels];
    let mut neighbours = Vec::with_capacity(order.len());
    for &i in &order {
        let pi = if weighted { alpha[i] } else { 1.0 };
        neighbours.push((i, pi));
        for &l in &tags[i] {
            scores[l] += pi;
        }
    }
    let ranked_labels = rank_labels(&scores);
    let top_n = ranked_labels.iter().copied().take(n).collect();
    AnnotationResult {
        scores,
        ranked_labels,
        top_n,
        neighbours,
        short,
    }
}

/// Tags a test image by label transfer from its sparse-code neighbours; the
/// tag-dissimilarity penalty is switched off since the image has no tags.
pub fn annotate(
    test: &RgbImage,
    db: &PreparedDatabase,
    k: usize,
    n: usize,
    weighted: bool,
    cfg: &RunConfig,
    exclude: Option<&str>,
) -> Result<AnnotationResult> {
    let feature = features::global_feature(test, &cfg.features)?;
    annotate_feature(&feature, db, k, n, weighted, cfg, exclude)
}

pub fn annotate_feature(
    feature: &GlobalFeature,
    db: &PreparedDatabase,
    k: usize,
    n: usize,
    weighted: bool,
    cfg: &RunConfig,
    exclude: Option<&str>,
) -> Result<AnnotationResult> {
    cfg.validate()?;
    if k == 0 || n == 0 {
        return Err(Error::InvalidArgument("K and n must be positive".into()));
    }
    if k > db.len() {
        return Err(Error::InvalidArgument(format!("K = {k} exceeds database size {}", db.len())));
    }
    let problem = RetrievalProblem::new(db, exclude)?;
    let code = problem.solve(feature, &db.database.all_labels(), 0.0, &cfg.coder())?;
    let result = transfer_labels(&code.alpha, &db.tag_sets, db.database.n_labels(), k, n, weighted);
    if result.short {
        log::warn!("only {} positive coefficients for K = {k}", result.neighbours.len());
    }
    Ok(result)
}
