//! Edmonds-Karp max-flow (shortest augmenting paths by BFS) on a residual
//! graph with real capacities.

use std::collections::VecDeque;

/// Residual capacities at or below this are treated as saturated.
const EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
struct Arc {
    to: usize,
    residual: f64,
    rev: usize,
}

/// Directed network with a distinguished source and sink.
#[derive(Debug, Clone)]
pub struct FlowNetwork {
    adj: Vec<Vec<Arc>>,
    source: usize,
    sink: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinCut {
    pub flow: f64,
    /// `true` for vertices reachable from the source in the final residual
    /// graph.
    pub source_side: Vec<bool>,
}

impl FlowNetwork {
    pub fn new(n: usize, source: usize, sink: usize) -> Self {
        assert!(source < n && sink < n && source != sink, "bad terminals");
        Self {
            adj: vec![Vec::new(); n],
            source,
            sink,
        }
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    /// Adds the arc `u -> v`. Capacities must be finite and nonnegative.
    pub fn add_edge(&mut self, u: usize, v: usize, capacity: f64) {
        assert!(capacity >= 0.0 && capacity.is_finite(), "capacity {capacity}");
        if u == v || capacity == 0.0 {
            return;
        }
        let ru = self.adj[v].len();
        let rv = self.adj[u].len();
        self.adj[u].push(Arc { to: v, residual: capacity, rev: ru });
        self.adj[v].push(Arc { to: u, residual: 0.0, rev: rv });
    }

    pub fn max_flow_min_cut(mut self) -> MinCut {
        let n = self.adj.len();
        let mut flow = 0.0;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
        loop {
            parent.iter_mut().for_each(|p| *p = None);
            let mut seen = vec![false; n];
            seen[self.source] = true;
            let mut queue = VecDeque::from([self.source]);
            while let Some(u) = queue.pop_front() {
                if u == self.sink {
                    break;
                }
                for (i, arc) in self.adj[u].iter().enumerate() {
                    if arc.residual > EPS && !seen[arc.to] {
                        seen[arc.to] = true;
                        parent[arc.to] = Some((u, i));
                        queue.push_back(arc.to);
                    }
                }
            }
            if !seen[self.sink] {
                return MinCut { flow, source_side: seen };
            }
            let mut bottleneck = f64::INFINITY;
            let mut v = self.sink;
            while let Some((u, i)) = parent[v] {
                bottleneck = bottleneck.min(self.adj[u][i].residual);
                v = u;
            }
            let mut v = self.sink;
            while let Some((u, i)) = parent[v] {
                self.adj[u][i].residual -= bottleneck;
                let (to, rev) = (self.adj[u][i].to, self.adj[u][i].rev);
                self.adj[to][rev].residual += bottleneck;
                v = u;
            }
            flow += bottleneck;
        }
    }
}
