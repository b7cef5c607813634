//! Alpha-beta swap moves for a Potts-style pairwise MRF.

use super::maxflow::FlowNetwork;

/// Improvements smaller than this do not count as progress.
const IMPROVEMENT_EPS: f64 = 1e-12;

/// Energy `sum_i unary[i][y_i] + sum_{(i,j,w)} w [y_i != y_j]` over label
/// columns `0..n_labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseMrf {
    pub unary: Vec<Vec<f64>>,
    /// Undirected edges `(i, j, weight)` with `weight >= 0`.
    pub edges: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwapOutcome {
    pub labels: Vec<usize>,
    /// Energy of the initial labelling followed by the energy after each
    /// accepted move.
    pub energies: Vec<f64>,
    pub sweeps: usize,
}

impl PairwiseMrf {
    pub fn n_vertices(&self) -> usize {
        self.unary.len()
    }

    pub fn n_labels(&self) -> usize {
        self.unary.first().map_or(0, Vec::len)
    }

    pub fn energy(&self, labels: &[usize]) -> f64 {
        let unary: f64 = labels.iter().enumerate().map(|(i, &l)| self.unary[i][l]).sum();
        let pairwise: f64 = self
            .edges
            .iter()
            .filter(|&&(i, j, _)| labels[i] != labels[j])
            .map(|e| e.2)
            .sum();
        unary + pairwise
    }

    /// Per-vertex unary argmin, lowest column on ties.
    pub fn unary_argmin(&self) -> Vec<usize> {
        self.unary
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::INFINITY), |best, (l, &c)| if c < best.1 { (l, c) } else { best })
                    .0
            })
            .collect()
    }

    fn neighbours(&self) -> Vec<Vec<(usize, f64)>> {
        let mut nb = vec![Vec::new(); self.n_vertices()];
        for &(i, j, w) in &self.edges {
            nb[i].push((j, w));
            nb[j].push((i, w));
        }
        nb
    }

    /// Optimal relabelling of the vertices currently labelled `a` or `b`
    /// among `{a, b}`, everything else fixed.
    pub fn swap_move(&self, labels: &[usize], a: usize, b: usize) -> Vec<usize> {
        self.swap_move_with(labels, a, b, &self.neighbours())
    }

    fn swap_move_with(&self, labels: &[usize], a: usize, b: usize, nb: &[Vec<(usize, f64)>]) -> Vec<usize> {
        let active: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == a || labels[i] == b).collect();
        if active.is_empty() || a == b {
            return labels.to_vec();
        }
        let mut slot = vec![usize::MAX; labels.len()];
        for (k, &v) in active.iter().enumerate() {
            slot[v] = k;
        }
        let source = active.len();
        let sink = source + 1;
        let mut net = FlowNetwork::new(active.len() + 2, source, sink);
        for (k, &v) in active.iter().enumerate() {
            // cost of taking label a / b, including edges to fixed vertices
            let mut cost_a = self.unary[v][a];
            let mut cost_b = self.unary[v][b];
            for &(u, w) in &nb[v] {
                if slot[u] == usize::MAX {
                    if labels[u] != a {
                        cost_a += w;
                    }
                    if labels[u] != b {
                        cost_b += w;
                    }
                }
            }
            let base = cost_a.min(cost_b);
            // source side = label a, paid through the arc to the sink
            net.add_edge(k, sink, cost_a - base);
            net.add_edge(source, k, cost_b - base);
        }
        for &(i, j, w) in &self.edges {
            if slot[i] != usize::MAX && slot[j] != usize::MAX {
                net.add_edge(slot[i], slot[j], w);
                net.add_edge(slot[j], slot[i], w);
            }
        }
        let cut = net.max_flow_min_cut();
        let mut out = labels.to_vec();
        for (k, &v) in active.iter().enumerate() {
            out[v] = if cut.source_side[k] { a } else { b };
        }
        out
    }

    /// Runs swap moves over every label pair until a full sweep makes no
    /// strict improvement.
    pub fn alpha_beta_swap(&self, initial: Vec<usize>) -> SwapOutcome {
        let n_labels = self.n_labels();
        let nb = self.neighbours();
        let mut labels = initial;
        let mut energy = self.energy(&labels);
        let mut energies = vec![energy];
        let mut sweeps = 0;
        loop {
            sweeps += 1;
            let mut improved = false;
            for a in 0..n_labels {
                for b in a + 1..n_labels {
                    let candidate = self.swap_move_with(&labels, a, b, &nb);
                    let e = self.energy(&candidate);
                    if e < energy - IMPROVEMENT_EPS {
                        labels = candidate;
                        energy = e;
                        energies.push(e);
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        SwapOutcome {
            labels,
            energies,
            sweeps,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn enumerate_min(mrf: &PairwiseMrf) -> f64 {
        let (n, l) = (mrf.n_vertices(), mrf.n_labels());
        let mut best = f64::INFINITY;
        let mut labels = vec![0; n];
        for code in 0..l.pow(n as u32) {
            let mut c = code;
            for y in labels.iter_mut() {
                *y = c % l;
                c /= l;
            }
            best = best.min(mrf.energy(&labels));
        }
        best
    }

    /// Best labelling reachable by one swap move on `(a, b)`, by enumeration.
    fn best_swap_by_enumeration(mrf: &PairwiseMrf, labels: &[usize], a: usize, b: usize) -> f64 {
        let active: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == a || labels[i] == b).collect();
        let mut best = mrf.energy(labels);
        for mask in 0..1u32 << active.len() {
            let mut y = labels.to_vec();
            for (k, &v) in active.iter().enumerate() {
                y[v] = if mask >> k & 1 == 1 { a } else { b };
            }
            best = best.min(mrf.energy(&y));
        }
        best
    }

    fn random_mrf(rng: &mut ChaCha8Rng) -> PairwiseMrf {
        let n = rng.random_range(2..=6);
        let l = rng.random_range(2..=3);
        let unary = (0..n).map(|_| (0..l).map(|_| rng.random_range(0.0..2.0)).collect()).collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(0.5) {
                    edges.push((i, j, rng.random_range(0.0..1.0)));
                }
            }
        }
        PairwiseMrf { unary, edges }
    }

    #[test]
    fn no_edges_gives_unary_argmin() {
        let mrf = PairwiseMrf {
            unary: vec![vec![3.0, 1.0, 2.0], vec![0.0, 5.0, 0.0], vec![2.0, 2.0, 1.0]],
            edges: vec![],
        };
        let out = mrf.alpha_beta_swap(vec![0, 1, 0]);
        assert_eq!(out.labels, vec![1, 0, 2]);
        assert_eq!(mrf.unary_argmin(), vec![1, 0, 2]);
    }

    #[test]
    fn two_vertices_two_labels_exhaustive() {
        let mrf = PairwiseMrf {
            unary: vec![vec![0.0, 1.0], vec![1.2, 0.0]],
            edges: vec![(0, 1, 1.5)],
        };
        // energies: (0,0)=1.2, (0,1)=1.5, (1,0)=3.7, (1,1)=1.0
        let out = mrf.alpha_beta_swap(mrf.unary_argmin());
        assert_eq!(out.labels, vec![1, 1]);
        assert_eq!(mrf.energy(&out.labels), enumerate_min(&mrf));
    }

    #[test]
    fn swap_local_optimality_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let mrf = random_mrf(&mut rng);
            let init: Vec<usize> = (0..mrf.n_vertices()).map(|_| rng.random_range(0..mrf.n_labels())).collect();
            let e0 = mrf.energy(&init);
            let out = mrf.alpha_beta_swap(init);
            let e = mrf.energy(&out.labels);
            assert!(e <= e0 + 1e-12);
            assert!(out.energies.windows(2).all(|w| w[1] <= w[0]));
            for a in 0..mrf.n_labels() {
                for b in a + 1..mrf.n_labels() {
                    assert!(best_swap_by_enumeration(&mrf, &out.labels, a, b) >= e - 1e-9);
                    assert_eq!(mrf.swap_move(&out.labels, a, b).len(), out.labels.len());
                }
            }
        }
    }

    #[test]
    fn single_swap_move_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let mrf = random_mrf(&mut rng);
            let labels: Vec<usize> = (0..mrf.n_vertices()).map(|_| rng.random_range(0..mrf.n_labels())).collect();
            let moved = mrf.swap_move(&labels, 0, 1);
            let best = best_swap_by_enumeration(&mrf, &labels, 0, 1);
            assert!((mrf.energy(&moved) - best).abs() < 1e-9);
        }
    }
}
