//! Sampled accessibility classes and admissible (leafwise) distances.

use petgraph::algo::dijkstra;
use petgraph::graph::{NodeIndex, UnGraph};
use petgraph::unionfind::UnionFind;
use rayon::prelude::*;
use serde::Serialize;

use super::curve::cumulative_length;
use super::sampling::{bundle_from_library, ControlLibrary, Filtration, SamplingOptions};
use super::system::AnchoredSystem;
use crate::error::{Error, Result};
use crate::metric::FiniteMetricSpace;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProbeOptions {
    pub r_probe: f64,
    pub n_probe: usize,
    pub eps_link: f64,
    pub n_segments: usize,
    pub seed: u64,
}

/// Class label per sample point; labels are numbered by lowest member index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Partition {
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Partition {
    fn from_union_find(uf: &UnionFind<usize>, n: usize) -> Self {
        let mut canon = vec![usize::MAX; n];
        let mut labels = vec![0; n];
        let mut next = 0;
        for (i, label) in labels.iter_mut().enumerate() {
            let root = uf.find(i);
            if canon[root] == usize::MAX {
                canon[root] = next;
                next += 1;
            }
            *label = canon[root];
        }
        Self { labels, n_classes: next }
    }

    pub fn same_class(&self, a: usize, b: usize) -> bool {
        self.labels[a] == self.labels[b]
    }

    /// True when both partitions group points identically.
    pub fn matches(&self, other: &[usize]) -> bool {
        if other.len() != self.labels.len() {
            return false;
        }
        let n = other.len();
        (0..n).all(|i| (0..n).all(|j| (self.labels[i] == self.labels[j]) == (other[i] == other[j])))
    }
}

/// Probe graph: edge `p - q` when a probe curve from `p` passes within
/// `eps_link` of `q`, weighted by the curve length up to that sample plus
/// `eps_link`.
#[derive(Clone, Debug)]
pub struct AdmissibleGraph {
    pub partition: Partition,
    /// All-pairs shortest paths, `INFINITY` across classes.
    dist: Vec<f64>,
    n: usize,
}

impl AdmissibleGraph {
    pub fn build(system: &AnchoredSystem, space: &FiniteMetricSpace, opts: &ProbeOptions) -> Result<Self> {
        Self::build_with_edges(system, space, opts, &[])
    }

    /// Probe graph plus known admissible joins `(p, q, length)`, e.g. steering connectors.
    pub fn build_with_edges(
        system: &AnchoredSystem,
        space: &FiniteMetricSpace,
        opts: &ProbeOptions,
        extra: &[(usize, usize, f64)],
    ) -> Result<Self> {
        if !system.symmetric_controls {
            return Err(Error::AsymmetricControls);
        }
        let pts = space.points().ok_or_else(|| Error::Shape("probing needs coordinates".into()))?;
        let n = pts.len();
        let metric = space
            .base_metric()
            .ok_or_else(|| Error::Shape("probing needs a coordinate metric".into()))?;
        let library = ControlLibrary::generate(&system.norm, opts.n_probe, opts.n_segments, opts.seed)?;
        let sopts = SamplingOptions::default();
        let edges: Vec<Vec<(usize, f64)>> = (0..n)
            .into_par_iter()
            .map(|p| -> Result<Vec<(usize, f64)>> {
                let bundle =
                    bundle_from_library(system, &pts[p], p, opts.r_probe, &library, Filtration::SpeedBounded, &sopts)?;
                let mut best = vec![f64::INFINITY; n];
                for curve in &bundle.curves {
                    let cum = cumulative_length(curve, system)?;
                    for (s, x) in curve.points.iter().enumerate() {
                        for q in 0..n {
                            if q != p && cum[s] < best[q] && metric.distance(x, &pts[q]) <= opts.eps_link {
                                best[q] = cum[s];
                            }
                        }
                    }
                }
                Ok(best
                    .into_iter()
                    .enumerate()
                    .filter(|(_, w)| w.is_finite())
                    .map(|(q, w)| (q, w + opts.eps_link))
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        let mut uf = UnionFind::new(n);
        let mut graph = UnGraph::<(), f64>::with_capacity(n, 0);
        let nodes: Vec<NodeIndex> = (0..n).map(|_| graph.add_node(())).collect();
        // Symmetrise with the smaller weight of the two directions.
        let mut weight = vec![f64::INFINITY; n * n];
        for (p, es) in edges.iter().enumerate() {
            for &(q, w) in es {
                uf.union(p, q);
                let (a, b) = (p.min(q), p.max(q));
                weight[a * n + b] = weight[a * n + b].min(w);
            }
        }
        for &(p, q, w) in extra {
            if p >= n || q >= n {
                return Err(Error::IndexOutOfRange { index: p.max(q), len: n });
            }
            uf.union(p, q);
            let (a, b) = (p.min(q), p.max(q));
            weight[a * n + b] = weight[a * n + b].min(w);
        }
        for a in 0..n {
            for b in (a + 1)..n {
                let w = weight[a * n + b];
                if w.is_finite() {
                    graph.add_edge(nodes[a], nodes[b], w);
                }
            }
        }
        let partition = Partition::from_union_find(&uf, n);
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|s| {
                let reach = dijkstra(&graph, nodes[s], None, |e| *e.weight());
                let mut row = vec![f64::INFINITY; n];
                for (node, d) in reach {
                    row[node.index()] = d;
                }
                row
            })
            .collect();
        Ok(Self { partition, dist: rows.into_iter().flatten().collect(), n })
    }

    /// Shortest-path length, `None` across classes.
    pub fn distance(&self, x: usize, y: usize) -> Option<f64> {
        let d = self.dist[x * self.n + y];
        d.is_finite().then_some(d)
    }
}

/// Connected components of the probe graph.
pub fn accessibility_partition(
    system: &AnchoredSystem,
    space: &FiniteMetricSpace,
    opts: &ProbeOptions,
) -> Result<Partition> {
    AdmissibleGraph::build(system, space, opts).map(|g| g.partition)
}

/// Upper-biased estimate of the leafwise admissible distance; `None` means
/// the points lie in different sampled classes.
pub fn admissible_graph_distance(graph: &AdmissibleGraph, x: usize, y: usize) -> Option<f64> {
    graph.distance(x, y)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::curves::norm::ControlNorm;
    use crate::curves::system::AnchorFn;
    use crate::manifold::ManifoldModel;
    use crate::metric::BaseMetric;

    fn probe(r: f64, eps: f64) -> ProbeOptions {
        ProbeOptions { r_probe: r, n_probe: 16, eps_link: eps, n_segments: 8, seed: 3 }
    }

    #[test]
    fn full_rank_torus_is_one_class() {
        let anchor: Arc<AnchorFn> = Arc::new(|_x, u, out| out.copy_from_slice(u));
        let sys = AnchoredSystem::new(ManifoldModel::torus(2), 2, anchor, ControlNorm::euclidean(2), "flat").unwrap();
        let space = ManifoldModel::torus(2).grid_space(5).unwrap();
        let p = accessibility_partition(&sys, &space, &probe(1.0, 0.12)).unwrap();
        assert_eq!(p.n_classes, 1);
    }

    #[test]
    fn zero_generators_give_singletons() {
        let anchor: Arc<AnchorFn> = Arc::new(|_x, _u, out| out.iter_mut().for_each(|v| *v = 0.0));
        let sys = AnchoredSystem::new(ManifoldModel::torus(2), 2, anchor, ControlNorm::euclidean(2), "zero").unwrap();
        let space = ManifoldModel::torus(2).grid_space(4).unwrap();
        let p = accessibility_partition(&sys, &space, &probe(1.0, 0.1)).unwrap();
        assert_eq!(p.n_classes, 16);
    }

    #[test]
    fn asymmetric_controls_rejected() {
        let anchor: Arc<AnchorFn> = Arc::new(|_x, u, out| out.copy_from_slice(u));
        let mut sys = AnchoredSystem::new(ManifoldModel::torus(1), 1, anchor, ControlNorm::euclidean(1), "c").unwrap();
        sys.symmetric_controls = false;
        let space = ManifoldModel::torus(1).grid_space(4).unwrap();
        assert!(matches!(accessibility_partition(&sys, &space, &probe(1.0, 0.1)), Err(Error::AsymmetricControls)));
    }

    #[test]
    fn circle_antipodal_distance() {
        let anchor: Arc<AnchorFn> = Arc::new(|_x, u, out| out[0] = u[0]);
        let sys = AnchoredSystem::new(ManifoldModel::torus(1), 1, anchor, ControlNorm::euclidean(1), "c").unwrap();
        let space = ManifoldModel::torus(1).grid_space(32).unwrap();
        let g = AdmissibleGraph::build(&sys, &space, &probe(0.6, 0.01)).unwrap();
        assert_eq!(admissible_graph_distance(&g, 3, 3), Some(0.0));
        let d = admissible_graph_distance(&g, 0, 16).unwrap();
        assert!((d - 0.5).abs() <= 0.05, "{d}");
        let m = BaseMetric::Torus { circumference: 1.0 };
        assert!(d >= m.distance(&[0.0], &[0.5]) - 1e-9);
    }

    #[test]
    fn partition_is_permutation_invariant() {
        // Single generator d/dx on the 2-torus: classes are horizontal circles.
        let anchor: Arc<AnchorFn> = Arc::new(|_x, u, out| {
            out[0] = 0.0;
            out[1] = u[0];
        });
        let sys = AnchoredSystem::new(ManifoldModel::torus(2), 1, anchor, ControlNorm::euclidean(1), "h").unwrap();
        let grid = ManifoldModel::torus(2).grid(6);
        let space = FiniteMetricSpace::from_coords(grid.clone(), BaseMetric::Torus { circumference: 1.0 }).unwrap();
        let p = accessibility_partition(&sys, &space, &probe(2.0, 0.05)).unwrap();
        let rows: Vec<usize> = (0..36).map(|i| i / 6).collect();
        assert!(p.matches(&rows));
        let perm: Vec<usize> = (0..36).map(|i| (i * 7) % 36).collect();
        let shuffled = FiniteMetricSpace::from_coords(
            perm.iter().map(|&i| grid[i].clone()).collect(),
            BaseMetric::Torus { circumference: 1.0 },
        )
        .unwrap();
        let q = accessibility_partition(&sys, &shuffled, &probe(2.0, 0.05)).unwrap();
        let permuted: Vec<usize> = perm.iter().map(|&i| p.labels[i]).collect();
        assert!(q.matches(&permuted));
    }
}
