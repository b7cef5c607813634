//! Label propagation from retrieved exemplars to target superpixels.
//!
//! Target superpixels are vertices. Inner edges join spatially adjacent
//! target superpixels; outer edges join each target superpixel to its `q`
//! nearest superpixels (in region-feature space) within every reference. The
//! unary cost of a label is a coefficient-weighted density prior over the
//! references; the pairwise cost is the feature distance across a label
//! boundary. The energy is minimised with alpha-beta swap moves.

pub mod maxflow;
pub mod swap;

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dataset::LabelSet;
use crate::error::{Error, Result};
use crate::features::RegionFeature;
use crate::superpixel::{AdjacencyList, SuperpixelDecomposition};

pub use maxflow::{FlowNetwork, MinCut};
pub use swap::{PairwiseMrf, SwapOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum UnaryMode {
    /// `sum_k alpha_k rho_k [l in L_k]` exactly as written; a distance, so
    /// unsupported labels are free.
    Literal,
    /// Bounded dissimilarity `1 - exp(-rho^2 / 2 tau^2)` for labels a
    /// reference carries, a fixed charge for labels it lacks. Coefficients
    /// are normalised to sum to one over the references.
    #[default]
    Affinity,
}

/// Weight of a label change across an inner edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PairwiseMode {
    /// The feature distance `|f_i - f_j|` itself; dissimilar neighbours are
    /// the expensive ones to separate.
    Literal,
    /// `exp(-d^2 / 2 sigma^2)` with `sigma` the median inner-edge distance, so
    /// cutting between similar neighbours costs the most.
    #[default]
    Contrast,
}

/// Borrowed view of one retrieved exemplar.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceView<'a> {
    /// Position in the database (and in the coefficient vector).
    pub index: usize,
    pub tags: &'a LabelSet,
    pub features: &'a [RegionFeature],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InnerEdge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OuterEdge {
    /// Superpixel index inside the reference.
    pub segment: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphReference {
    pub index: usize,
    pub tags: LabelSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationGraph {
    pub n_vertices: usize,
    pub inner_edges: Vec<InnerEdge>,
    pub references: Vec<GraphReference>,
    /// `outer_edges[vertex][slot]` lists the nearest superpixels of
    /// `references[slot]`, closest first.
    pub outer_edges: Vec<Vec<Vec<OuterEdge>>>,
    /// Sorted union of the references' tags.
    pub candidate_labels: Vec<usize>,
}

/// Builds inner edges from `adjacency` and outer edges to the `q` nearest
/// superpixels of every reference (clamped to the reference size, ties to
/// the lower index).
pub fn build_graph(
    target: &[RegionFeature],
    adjacency: &AdjacencyList,
    references: &[ReferenceView<'_>],
    q: usize,
) -> Result<PropagationGraph> {
    if references.is_empty() {
        return Err(Error::NoReferences);
    }
    if q == 0 {
        return Err(Error::InvalidArgument("q must be positive".into()));
    }
    if let Some(r) = references.iter().find(|r| r.features.is_empty()) {
        return Err(Error::EmptyReference(r.index));
    }
    let n = target.len();
    let mut inner_edges = Vec::with_capacity(adjacency.len());
    for &(a, b) in &adjacency.pairs {
        if a >= n || b >= n || a == b {
            return Err(Error::InvalidArgument(format!("adjacency pair ({a}, {b}) out of range")));
        }
        inner_edges.push(InnerEdge {
            a,
            b,
            weight: target[a].distance(&target[b]),
        });
    }
    let outer_edges = target
        .iter()
        .map(|f| {
            references
                .iter()
                .map(|r| {
                    let mut d: Vec<OuterEdge> = r
                        .features
                        .iter()
                        .enumerate()
                        .map(|(segment, g)| OuterEdge {
                            segment,
                            distance: f.distance(g),
                        })
                        .collect();
                    d.sort_by(|x, y| x.distance.total_cmp(&y.distance).then(x.segment.cmp(&y.segment)));
                    d.truncate(q);
                    d
                })
                .collect()
        })
        .collect();
    let candidate_labels: BTreeSet<usize> = references.iter().flat_map(|r| r.tags.iter().copied()).collect();
    Ok(PropagationGraph {
        n_vertices: n,
        inner_edges,
        references: references
            .iter()
            .map(|r| GraphReference {
                index: r.index,
                tags: r.tags.clone(),
            })
            .collect(),
        outer_edges,
        candidate_labels: candidate_labels.into_iter().collect(),
    })
}

impl PropagationGraph {
    /// Text dump of vertices, edges and (optionally) unary costs.
    pub fn dump(&self, unary: Option<&UnaryTable>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "vertices {}", self.n_vertices);
        let refs: Vec<usize> = self.references.iter().map(|r| r.index).collect();
        let _ = writeln!(out, "references {refs:?}");
        let _ = writeln!(out, "candidate_labels {:?}", self.candidate_labels);
        for e in &self.inner_edges {
            let _ = writeln!(out, "inner {} {} {:.6}", e.a, e.b, e.weight);
        }
        for (v, per_ref) in self.outer_edges.iter().enumerate() {
            for (slot, edges) in per_ref.iter().enumerate() {
                for e in edges {
                    let _ = writeln!(out, "outer {v} {} {} {:.6}", self.references[slot].index, e.segment, e.distance);
                }
            }
        }
        if let Some(u) = unary {
            for (v, row) in u.cost.iter().enumerate() {
                let cells: Vec<String> = row.iter().map(|c| format!("{c:.6}")).collect();
                let _ = writeln!(out, "unary {v} {}", cells.join(" "));
            }
        }
        out
    }
}

/// Mean outer-edge distance from `vertex` into the reference at `slot`.
pub fn density(graph: &PropagationGraph, vertex: usize, slot: usize) -> f64 {
    let edges = &graph.outer_edges[vertex][slot];
    edges.iter().map(|e| e.distance).sum::<f64>() / edges.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnaryTable {
    /// Column order of `cost`.
    pub labels: Vec<usize>,
    /// `cost[vertex][column]`.
    pub cost: Vec<Vec<f64>>,
}

impl UnaryTable {
    pub fn column(&self, label: usize) -> Option<usize> {
        self.labels.binary_search(&label).ok()
    }
}

/// Settings of the density prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnaryParams {
    pub mode: UnaryMode,
    /// Charge per unit coefficient for a label the reference does not carry
    /// (affinity mode).
    pub absent_cost: f64,
}

impl Default for UnaryParams {
    fn default() -> Self {
        Self {
            mode: UnaryMode::Affinity,
            absent_cost: 0.9,
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Unary costs over the candidate labels. `masked` is the full coefficient
/// vector with non-selected entries zeroed.
pub fn unary_table(graph: &PropagationGraph, masked: &DVector<f64>, params: UnaryParams) -> Result<UnaryTable> {
    if graph.candidate_labels.is_empty() {
        return Err(Error::EmptyLabelSet);
    }
    let selected: BTreeSet<usize> = graph.references.iter().map(|r| r.index).collect();
    if let Some(stray) = (0..masked.len()).find(|k| masked[*k] != 0.0 && !selected.contains(k)) {
        return Err(Error::InvalidArgument(format!(
            "coefficient {stray} is nonzero but not a graph reference"
        )));
    }
    if let Some(r) = graph.references.iter().find(|r| r.index >= masked.len()) {
        return Err(Error::dims(format!("coefficient index {}", r.index), masked.len()));
    }
    let total: f64 = graph.references.iter().map(|r| masked[r.index]).sum();
    let scale = match params.mode {
        UnaryMode::Affinity if total > 0.0 => 1.0 / total,
        _ => 1.0,
    };
    let n = graph.n_vertices;
    let rho: Vec<Vec<f64>> = (0..n)
        .map(|v| (0..graph.references.len()).map(|s| density(graph, v, s)).collect())
        .collect();
    let tau = {
        let mut all: Vec<f64> = rho.iter().flatten().copied().collect();
        median(&mut all)
    };
    let cost = rho
        .iter()
        .map(|row| {
            graph
                .candidate_labels
                .iter()
                .map(|&label| {
                    graph
                        .references
                        .iter()
                        .zip(row)
                        .map(|(r, &rho)| {
                            let w = masked[r.index] * scale;
                            let carries = r.tags.contains(&label);
                            match params.mode {
                                UnaryMode::Literal => {
                                    if carries {
                                        w * rho
                                    } else {
                                        0.0
                                    }
                                }
                                UnaryMode::Affinity => {
                                    if carries {
                                        let dissim = if tau > 0.0 {
                                            1.0 - (-rho * rho / (2.0 * tau * tau)).exp()
                                        } else {
                                            0.0
                                        };
                                        w * dissim
                                    } else {
                                        w * params.absent_cost
                                    }
                                }
                            }
                        })
                        .sum()
                })
                .collect()
        })
        .collect();
    Ok(UnaryTable {
        labels: graph.candidate_labels.clone(),
        cost,
    })
}

/// Feature-distance Potts term between two superpixels (literal mode).
pub fn pairwise(fi: &RegionFeature, fj: &RegionFeature, yi: usize, yj: usize) -> f64 {
    if yi == yj {
        0.0
    } else {
        fi.distance(fj)
    }
}

/// Label per target superpixel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelAssignment {
    pub labels: Vec<usize>,
}

impl LabelAssignment {
    pub fn new(labels: Vec<usize>) -> Self {
        Self { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Distinct labels used.
    pub fn induced_set(&self) -> LabelSet {
        self.labels.iter().copied().collect()
    }

    /// Per-pixel label ids, row-major.
    pub fn rasterize(&self, decomposition: &SuperpixelDecomposition) -> Result<Vec<usize>> {
        if self.labels.len() != decomposition.n_segments() {
            return Err(Error::dims(
                format!("{} superpixels", decomposition.n_segments()),
                self.labels.len(),
            ));
        }
        Ok(decomposition.segment_map().iter().map(|&s| self.labels[s]).collect())
    }
}

impl PropagationGraph {
    /// Label-change cost of every inner edge, in `inner_edges` order.
    pub fn edge_costs(&self, mode: PairwiseMode) -> Vec<f64> {
        match mode {
            PairwiseMode::Literal => self.inner_edges.iter().map(|e| e.weight).collect(),
            PairwiseMode::Contrast => {
                let mut d: Vec<f64> = self.inner_edges.iter().map(|e| e.weight).collect();
                let sigma = median(&mut d);
                self.inner_edges
                    .iter()
                    .map(|e| {
                        if sigma > 0.0 {
                            (-e.weight * e.weight / (2.0 * sigma * sigma)).exp()
                        } else if e.weight == 0.0 {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect()
            }
        }
    }

    /// Column-indexed MRF over the unary table's labels.
    pub fn to_mrf(&self, unary: &UnaryTable, mode: PairwiseMode) -> Result<PairwiseMrf> {
        if unary.cost.len() != self.n_vertices {
            return Err(Error::dims(self.n_vertices, unary.cost.len()));
        }
        Ok(PairwiseMrf {
            unary: unary.cost.clone(),
            edges: self
                .inner_edges
                .iter()
                .zip(self.edge_costs(mode))
                .map(|(e, w)| (e.a, e.b, w))
                .collect(),
        })
    }

    fn columns(&self, unary: &UnaryTable, assignment: &LabelAssignment) -> Result<Vec<usize>> {
        if assignment.len() != self.n_vertices {
            return Err(Error::dims(self.n_vertices, assignment.len()));
        }
        assignment
            .labels
            .iter()
            .map(|&l| unary.column(l).ok_or(Error::UnknownLabel(l)))
            .collect()
    }
}

/// Unary plus pairwise energy of an assignment.
pub fn total_energy(
    assignment: &LabelAssignment,
    graph: &PropagationGraph,
    unary: &UnaryTable,
    mode: PairwiseMode,
) -> Result<f64> {
    let cols = graph.columns(unary, assignment)?;
    let mut e: f64 = cols.iter().enumerate().map(|(v, &c)| unary.cost[v][c]).sum();
    for (edge, w) in graph.inner_edges.iter().zip(graph.edge_costs(mode)) {
        if assignment.labels[edge.a] != assignment.labels[edge.b] {
            e += w;
        }
    }
    Ok(e)
}

/// Per-vertex argmin of the unary table (lowest label on ties).
pub fn unary_argmin(unary: &UnaryTable) -> LabelAssignment {
    let mrf = PairwiseMrf {
        unary: unary.cost.clone(),
        edges: Vec::new(),
    };
    LabelAssignment::new(mrf.unary_argmin().into_iter().map(|c| unary.labels[c]).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwapResult {
    pub assignment: LabelAssignment,
    pub energies: Vec<f64>,
    pub sweeps: usize,
}

pub fn alpha_beta_swap(
    graph: &PropagationGraph,
    unary: &UnaryTable,
    initial: &LabelAssignment,
    mode: PairwiseMode,
) -> Result<LabelAssignment> {
    Ok(alpha_beta_swap_traced(graph, unary, initial, mode)?.assignment)
}

/// Alpha-beta swap returning the energy after every accepted move.
pub fn alpha_beta_swap_traced(
    graph: &PropagationGraph,
    unary: &UnaryTable,
    initial: &LabelAssignment,
    mode: PairwiseMode,
) -> Result<SwapResult> {
    if unary.labels.is_empty() {
        return Err(Error::EmptyLabelSet);
    }
    let cols = graph.columns(unary, initial)?;
    let out = graph.to_mrf(unary, mode)?.alpha_beta_swap(cols);
    Ok(SwapResult {
        assignment: LabelAssignment::new(out.labels.into_iter().map(|c| unary.labels[c]).collect()),
        energies: out.energies,
        sweeps: out.sweeps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Region feature with the given raw vector (blocks left empty).
    fn feat(values: &[f64]) -> RegionFeature {
        RegionFeature {
            mean_lab: [0.0; 3],
            color_hist: vec![],
            orientation_hist: vec![],
            centroid: [0.0; 2],
            values: values.to_vec(),
        }
    }

    fn tags(v: &[usize]) -> LabelSet {
        v.iter().copied().collect()
    }

    #[test]
    fn q_one_single_segment_reference() {
        let target = vec![feat(&[0.0]), feat(&[1.0]), feat(&[2.0])];
        let rf = vec![feat(&[0.5])];
        let t = tags(&[0]);
        let refs = [ReferenceView { index: 3, tags: &t, features: &rf }];
        let adj = AdjacencyList { pairs: vec![(0, 1), (1, 2)] };
        let g = build_graph(&target, &adj, &refs, 1).unwrap();
        assert!(g.outer_edges.iter().all(|per| per[0].len() == 1));
        assert_eq!(g.inner_edges.len(), 2);
        assert_eq!(g.inner_edges[1].weight, 1.0);
        assert_eq!(g.candidate_labels, vec![0]);
    }

    #[test]
    fn identical_reference_matches_twins() {
        let target: Vec<_> = (0..5).map(|i| feat(&[i as f64, (i * i) as f64])).collect();
        let t = tags(&[1]);
        let refs = [ReferenceView { index: 0, tags: &t, features: &target }];
        let g = build_graph(&target, &AdjacencyList::default(), &refs, 1).unwrap();
        for (v, per) in g.outer_edges.iter().enumerate() {
            assert_eq!(per[0][0].segment, v);
            assert_eq!(per[0][0].distance, 0.0);
        }
    }

    #[test]
    fn q_is_clamped() {
        let target = vec![feat(&[0.0])];
        let rf = vec![feat(&[1.0]), feat(&[2.0])];
        let t = tags(&[0]);
        let refs = [ReferenceView { index: 0, tags: &t, features: &rf }];
        let g = build_graph(&target, &AdjacencyList::default(), &refs, 20).unwrap();
        assert_eq!(g.outer_edges[0][0].len(), 2);
    }

    #[test]
    fn empty_reference_rejected() {
        let t = tags(&[0]);
        let refs = [ReferenceView { index: 4, tags: &t, features: &[] }];
        let err = build_graph(&[feat(&[0.0])], &AdjacencyList::default(), &refs, 1);
        assert!(matches!(err, Err(Error::EmptyReference(4))));
    }

    fn graph_with_distances(per_ref: &[&[f64]], ref_tags: &[LabelSet]) -> PropagationGraph {
        PropagationGraph {
            n_vertices: 1,
            inner_edges: vec![],
            references: ref_tags
                .iter()
                .enumerate()
                .map(|(index, t)| GraphReference { index, tags: t.clone() })
                .collect(),
            outer_edges: vec![per_ref
                .iter()
                .map(|ds| ds.iter().enumerate().map(|(segment, &distance)| OuterEdge { segment, distance }).collect())
                .collect()],
            candidate_labels: ref_tags.iter().flatten().copied().collect::<BTreeSet<_>>().into_iter().collect(),
        }
    }

    #[test]
    fn density_examples() {
        let g = graph_with_distances(&[&[0.0, 0.0], &[0.7], &[1.0, 3.0]], &[tags(&[0]), tags(&[0]), tags(&[0])]);
        assert_eq!(density(&g, 0, 0), 0.0);
        assert_eq!(density(&g, 0, 1), 0.7);
        assert_eq!(density(&g, 0, 2), 2.0);
    }

    const LITERAL: UnaryParams = UnaryParams { mode: UnaryMode::Literal, absent_cost: 1.0 };

    #[test]
    fn literal_unary_single_reference() {
        let g = graph_with_distances(&[&[0.4]], &[tags(&[1])]);
        let mut g = g;
        g.candidate_labels = vec![0, 1];
        let u = unary_table(&g, &DVector::from_vec(vec![1.0]), LITERAL).unwrap();
        assert_eq!(u.cost[0], vec![0.0, 0.4]);
        let zero = unary_table(&g, &DVector::zeros(1), LITERAL).unwrap();
        assert!(zero.cost[0].iter().all(|&c| c == 0.0));
    }

    #[test]
    fn literal_unary_weighted_sum() {
        let g = graph_with_distances(&[&[0.2], &[0.5]], &[tags(&[3]), tags(&[3])]);
        let u = unary_table(&g, &DVector::from_vec(vec![0.6, 0.4]), LITERAL).unwrap();
        assert!((u.cost[0][0] - 0.32).abs() < 1e-15);
    }

    #[test]
    fn affinity_unary_charges_absent_labels() {
        let g = graph_with_distances(&[&[0.0], &[5.0]], &[tags(&[0]), tags(&[1])]);
        let params = UnaryParams { mode: UnaryMode::Affinity, absent_cost: 0.5 };
        let u = unary_table(&g, &DVector::from_vec(vec![0.5, 0.5]), params).unwrap();
        // tau = median(0, 5) = 2.5
        let far = 1.0 - (-25.0f64 / 12.5).exp();
        assert!((u.cost[0][0] - 0.5 * 0.5).abs() < 1e-15);
        assert!((u.cost[0][1] - (0.5 * 0.5 + 0.5 * far)).abs() < 1e-15);
        assert!(u.cost[0][0] < u.cost[0][1]);
    }

    #[test]
    fn affinity_unary_ignores_coefficient_scale() {
        let g = graph_with_distances(&[&[0.3], &[1.2]], &[tags(&[0, 2]), tags(&[1])]);
        let params = UnaryParams::default();
        let a = unary_table(&g, &DVector::from_vec(vec![0.6, 0.2]), params).unwrap();
        let b = unary_table(&g, &DVector::from_vec(vec![0.3, 0.1]), params).unwrap();
        for (x, y) in a.cost[0].iter().zip(&b.cost[0]) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn edge_costs_by_mode() {
        let target = vec![feat(&[0.0]), feat(&[1.0]), feat(&[3.0]), feat(&[3.5])];
        let t = tags(&[0]);
        let refs = [ReferenceView { index: 0, tags: &t, features: &target }];
        let adj = AdjacencyList { pairs: vec![(0, 1), (1, 2), (2, 3)] };
        let g = build_graph(&target, &adj, &refs, 1).unwrap();
        assert_eq!(g.edge_costs(PairwiseMode::Literal), vec![1.0, 2.0, 0.5]);
        // sigma = median(1, 2, 0.5) = 1
        let want: Vec<f64> = [1.0f64, 2.0, 0.5].iter().map(|d| (-d * d / 2.0).exp()).collect();
        for (got, want) in g.edge_costs(PairwiseMode::Contrast).iter().zip(&want) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn contrast_edges_of_identical_neighbours_cost_one() {
        let target = vec![feat(&[0.2]), feat(&[0.2])];
        let t = tags(&[0]);
        let refs = [ReferenceView { index: 0, tags: &t, features: &target }];
        let g = build_graph(&target, &AdjacencyList { pairs: vec![(0, 1)] }, &refs, 1).unwrap();
        assert_eq!(g.edge_costs(PairwiseMode::Contrast), vec![1.0]);
    }

    #[test]
    fn stray_coefficient_rejected() {
        let g = graph_with_distances(&[&[0.1]], &[tags(&[0])]);
        let err = unary_table(&g, &DVector::from_vec(vec![1.0, 0.3]), LITERAL);
        assert!(err.is_err());
    }

    #[test]
    fn pairwise_examples() {
        let (a, b) = (feat(&[0.0, 0.0]), feat(&[0.7, 0.0]));
        assert_eq!(pairwise(&a, &b, 2, 2), 0.0);
        assert!((pairwise(&a, &b, 1, 2) - 0.7).abs() < 1e-15);
        assert_eq!(pairwise(&a, &b, 1, 2), pairwise(&b, &a, 2, 1));
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize, labels: &[usize]) -> (PropagationGraph, UnaryTable, Vec<RegionFeature>) {
        let feats: Vec<_> = (0..n).map(|_| feat(&[rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])).collect();
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(0.5) {
                    pairs.push((i, j));
                }
            }
        }
        let t: LabelSet = labels.iter().copied().collect();
        let refs = [ReferenceView { index: 0, tags: &t, features: &feats }];
        let g = build_graph(&feats, &AdjacencyList { pairs }, &refs, 1).unwrap();
        let u = UnaryTable {
            labels: labels.to_vec(),
            cost: (0..n).map(|_| labels.iter().map(|_| rng.random_range(0.0..1.0)).collect()).collect(),
        };
        (g, u, feats)
    }

    #[test]
    fn total_energy_matches_straight_line_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (g, u, feats) = random_instance(&mut rng, 4, &[2, 5, 7]);
            let y: Vec<usize> = (0..4).map(|_| [2, 5, 7][rng.random_range(0..3)]).collect();
            let mut want = 0.0;
            for v in 0..4 {
                want += u.cost[v][u.labels.iter().position(|&l| l == y[v]).unwrap()];
            }
            for i in 0..4 {
                for j in i + 1..4 {
                    if g.inner_edges.iter().any(|e| (e.a, e.b) == (i, j)) {
                        want += pairwise(&feats[i], &feats[j], y[i], y[j]);
                    }
                }
            }
            let got = total_energy(&LabelAssignment::new(y), &g, &u, PairwiseMode::Literal).unwrap();
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn total_energy_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (mut g, u, _) = random_instance(&mut rng, 5, &[0, 1]);
        let uniform = LabelAssignment::new(vec![1; 5]);
        let unary_only: f64 = u.cost.iter().map(|r| r[1]).sum();
        assert!((total_energy(&uniform, &g, &u, PairwiseMode::Contrast).unwrap() - unary_only).abs() < 1e-12);
        g.inner_edges.clear();
        let argmin = unary_argmin(&u);
        let mins: f64 = u.cost.iter().map(|r| r.iter().copied().fold(f64::INFINITY, f64::min)).sum();
        assert!((total_energy(&argmin, &g, &u, PairwiseMode::Contrast).unwrap() - mins).abs() < 1e-12);
        let swapped = alpha_beta_swap(&g, &u, &uniform, PairwiseMode::Contrast).unwrap();
        assert_eq!(swapped, argmin);
    }

    #[test]
    fn swap_never_increases_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (g, u, _) = random_instance(&mut rng, 6, &[0, 3, 4]);
            let init = unary_argmin(&u);
            for mode in [PairwiseMode::Literal, PairwiseMode::Contrast] {
                let r = alpha_beta_swap_traced(&g, &u, &init, mode).unwrap();
                assert!(r.energies.windows(2).all(|w| w[1] <= w[0]));
                let e0 = total_energy(&init, &g, &u, mode).unwrap();
                let e1 = total_energy(&r.assignment, &g, &u, mode).unwrap();
                assert!(e1 <= e0 + 1e-12);
                assert!((e1 - r.energies.last().unwrap()).abs() < 1e-9);
                assert!(r.assignment.labels.iter().all(|l| u.labels.contains(l)));
            }
        }
    }

    #[test]
    fn rasterize_and_induced_set() {
        let d = SuperpixelDecomposition::from_segment_map(2, 2, vec![0, 1, 0, 1]).unwrap();
        let a = LabelAssignment::new(vec![4, 2]);
        assert_eq!(a.rasterize(&d).unwrap(), vec![4, 2, 4, 2]);
        assert_eq!(a.induced_set(), tags(&[2, 4]));
        assert!(LabelAssignment::new(vec![1]).rasterize(&d).is_err());
    }
}
