//! Social graph data model and the graph algorithms shared across the pipeline.

mod io;
mod louvain;

use std::collections::{BTreeSet, HashSet};
use std::rc::Rc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Neighborhood, SparseMatrix};
use crate::error::{Error, Result};

pub use io::{load_dataset, save_dataset, DatasetBundle, DatasetMetadata, Provenance};
pub(crate) use io::{read_json, write_json};
pub use louvain::{louvain_partition, louvain_with_trace, modularity, CommunityPartition};

pub const HUMAN: i8 = 0;
pub const BOT: i8 = 1;
pub const UNLABELED: i8 = -1;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Users as nodes with features, typed directed edges, optional labels and splits.
#[derive(Debug, Clone, PartialEq)]
pub struct SocialGraph {
    pub num_nodes: usize,
    /// `N×d` node features, stored at the on-disk precision.
    pub features: Array2<f32>,
    pub relations: Vec<String>,
    /// `edges[r]` holds the directed `(src, dst)` pairs of relation `r`.
    pub edges: Vec<Vec<(usize, usize)>>,
    pub labels: Vec<i8>,
    pub splits: Splits,
}

impl SocialGraph {
    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    pub fn features_f64(&self) -> Matrix {
        self.features.mapv(f64::from)
    }

    /// Every edge as `(src, dst, relation)`.
    pub fn edge_triples(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.edges
            .iter()
            .enumerate()
            .flat_map(|(r, es)| es.iter().map(move |&(s, d)| (s, d, r)))
    }

    /// Returns one description per violated invariant; empty when the graph is well formed.
    pub fn validate(&self) -> Vec<String> {
        let n = self.num_nodes;
        let mut violations = Vec::new();
        if self.features.nrows() != n {
            violations.push(format!(
                "feature_matrix: has {} rows, expected {n}",
                self.features.nrows()
            ));
        }
        if let Some((idx, _)) = self.features.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let d = self.features.ncols().max(1);
            violations.push(format!(
                "feature_matrix: non-finite value at row {}, column {}",
                idx / d,
                idx % d
            ));
        }
        if self.edges.len() != self.relations.len() {
            violations.push(format!(
                "edges: {} relation edge lists but {} relation names",
                self.edges.len(),
                self.relations.len()
            ));
        }
        for (r, es) in self.edges.iter().enumerate() {
            for (k, &(s, d)) in es.iter().enumerate() {
                if s >= n || d >= n {
                    violations.push(format!(
                        "edges: relation {r} edge #{k} ({s}, {d}) has an endpoint outside [0, {n})"
                    ));
                } else if s == d {
                    violations.push(format!("edges: relation {r} edge #{k} ({s}, {d}) is a self-loop"));
                }
            }
        }
        if self.labels.len() != n {
            violations.push(format!("labels: has {} entries, expected {n}", self.labels.len()));
        }
        for (i, &l) in self.labels.iter().enumerate() {
            if !(UNLABELED..=BOT).contains(&l) {
                violations.push(format!("labels: node {i} has invalid label {l}"));
            }
        }
        let mut seen = HashSet::new();
        for (name, split) in [
            ("train", &self.splits.train),
            ("val", &self.splits.val),
            ("test", &self.splits.test),
        ] {
            for &i in split {
                if i >= n {
                    violations.push(format!("splits.{name}: index {i} outside [0, {n})"));
                    continue;
                }
                if self.labels.get(i).copied().unwrap_or(UNLABELED) == UNLABELED {
                    violations.push(format!("splits.{name}: node {i} is unlabeled"));
                }
                if !seen.insert(i) {
                    violations.push(format!("splits.{name}: node {i} appears in more than one split"));
                }
            }
        }
        violations
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    /// Fraction of edges, pooled over relations, whose endpoints share a label.
    pub fn edge_homophily(&self) -> Result<f64> {
        let total = self.num_edges();
        if total == 0 {
            return Err(Error::EmptyEdgeSet);
        }
        let mut same = 0usize;
        for (s, d, _) in self.edge_triples() {
            let (ls, ld) = (self.labels[s], self.labels[d]);
            if ls == UNLABELED {
                return Err(Error::UnlabeledNode(s));
            }
            if ld == UNLABELED {
                return Err(Error::UnlabeledNode(d));
            }
            if ls == ld {
                same += 1;
            }
        }
        Ok(same as f64 / total as f64)
    }

    /// Closes every 2-path `a → b → c` (with `a ≠ c`) of one relation with a direct edge `a → c`.
    pub fn augment_two_hop(&self, relation: usize) -> Result<SocialGraph> {
        let es = self
            .edges
            .get(relation)
            .ok_or(Error::UnknownRelation(relation))?;
        let mut out_adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.num_nodes];
        for &(s, d) in es {
            out_adj[s].insert(d);
        }
        let mut added = BTreeSet::new();
        for (a, succ) in out_adj.iter().enumerate() {
            for &b in succ {
                for &c in &out_adj[b] {
                    if c != a && !succ.contains(&c) {
                        added.insert((a, c));
                    }
                }
            }
        }
        let mut merged: Vec<(usize, usize)> = es.iter().copied().chain(added).collect();
        merged.sort_unstable();
        let mut g = self.clone();
        g.edges[relation] = merged;
        Ok(g)
    }

    /// Induced subgraph over `nodes` (kept in ascending order, indices compacted); splits dropped.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> SocialGraph {
        let mut keep: Vec<usize> = nodes.to_vec();
        keep.sort_unstable();
        keep.dedup();
        let mut remap = vec![usize::MAX; self.num_nodes];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let edges = self
            .edges
            .iter()
            .map(|es| {
                es.iter()
                    .filter_map(|&(s, d)| {
                        let (ns, nd) = (remap[s], remap[d]);
                        (ns != usize::MAX && nd != usize::MAX).then_some((ns, nd))
                    })
                    .collect()
            })
            .collect();
        SocialGraph {
            num_nodes: keep.len(),
            features: self.features.select(ndarray::Axis(0), &keep),
            relations: self.relations.clone(),
            edges,
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
            splits: Splits::default(),
        }
    }

    /// Induced subgraph over the nodes belonging to the selected communities.
    pub fn subgraph_by_communities(
        &self,
        partition: &CommunityPartition,
        ids: &BTreeSet<usize>,
    ) -> Result<SocialGraph> {
        if ids.is_empty() {
            return Err(Error::InvalidArgument("empty community selection".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&c| c >= partition.num_communities) {
            return Err(Error::UnknownCommunity(bad));
        }
        let nodes: Vec<usize> = partition
            .assignment
            .iter()
            .enumerate()
            .filter(|(_, c)| ids.contains(c))
            .map(|(i, _)| i)
            .collect();
        if nodes.is_empty() {
            return Err(Error::InvalidArgument("selected communities contain no nodes".into()));
        }
        Ok(self.induced_subgraph(&nodes))
    }

    /// Row-normalized incoming adjacency of one relation: row `i` averages over sources of edges into `i`.
    pub fn mean_adjacency(&self, relation: usize) -> SparseMatrix {
        let n = self.num_nodes;
        let mut indeg = vec![0usize; n];
        for &(_, d) in &self.edges[relation] {
            indeg[d] += 1;
        }
        let entries = self.edges[relation]
            .iter()
            .map(|&(s, d)| (d, s, 1.0 / indeg[d] as f64))
            .collect();
        SparseMatrix {
            rows: n,
            cols: n,
            entries,
        }
    }

    pub fn neighborhood(&self, relation: usize) -> Neighborhood {
        let mut incoming = vec![Vec::new(); self.num_nodes];
        for &(s, d) in &self.edges[relation] {
            incoming[d].push(s);
        }
        Neighborhood { incoming }
    }

    /// Labeled `(node, label)` pairs for the given indices.
    pub fn labeled(&self, nodes: &[usize]) -> Result<Vec<(usize, f64)>> {
        nodes
            .iter()
            .map(|&i| match self.labels.get(i) {
                Some(&l) if l != UNLABELED => Ok((i, f64::from(l))),
                _ => Err(Error::UnlabeledNode(i)),
            })
            .collect()
    }
}

/// Precomputed per-relation message-passing structure for a fixed graph.
#[derive(Debug, Clone)]
pub struct GraphStructure {
    pub num_nodes: usize,
    pub mean_adj: Vec<Rc<SparseMatrix>>,
    pub neighborhoods: Vec<Rc<Neighborhood>>,
}

impl GraphStructure {
    pub fn new(graph: &SocialGraph) -> Self {
        let r = graph.num_relations();
        Self {
            num_nodes: graph.num_nodes,
            mean_adj: (0..r).map(|k| Rc::new(graph.mean_adjacency(k))).collect(),
            neighborhoods: (0..r).map(|k| Rc::new(graph.neighborhood(k))).collect(),
        }
    }

    pub fn num_relations(&self) -> usize {
        self.mean_adj.len()
    }
}

#[cfg(test)]
pub(crate) fn toy_graph(n: usize, edges: &[(usize, usize)], labels: &[i8]) -> SocialGraph {
    SocialGraph {
        num_nodes: n,
        features: Array2::zeros((n, 2)),
        relations: vec!["follow".into()],
        edges: vec![edges.to_vec()],
        labels: labels.to_vec(),
        splits: Splits::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn well_formed_graph_has_no_violations() {
        let g = toy_graph(3, &[(0, 1), (1, 2)], &[0, 1, -1]);
        assert!(g.validate().is_empty());
    }

    #[test]
    fn out_of_range_edge_is_named() {
        let g = toy_graph(3, &[(0, 5)], &[0, 0, 0]);
        let v = g.validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("(0, 5)"), "{v:?}");
    }

    #[test]
    fn short_feature_matrix_is_named() {
        let mut g = toy_graph(3, &[(0, 1)], &[0, 0, 0]);
        g.features = Array2::zeros((2, 2));
        let v = g.validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].starts_with("feature_matrix"));
    }

    #[test]
    fn unlabeled_split_member_is_a_violation() {
        let mut g = toy_graph(3, &[(0, 1)], &[0, -1, 1]);
        g.splits.train = vec![0, 1];
        g.splits.test = vec![2, 0];
        let v = g.validate();
        assert_eq!(v.len(), 2, "{v:?}");
    }

    #[test]
    fn homophily_of_single_class_triangle_is_one() {
        let g = toy_graph(3, &[(0, 1), (1, 2), (2, 0)], &[1, 1, 1]);
        assert_eq!(g.edge_homophily().unwrap(), 1.0);
    }

    #[test]
    fn homophily_counts_directed_edges() {
        // hand count: (0,1) same, (1,0) same, (1,2) cross, (3,0) cross
        let g = toy_graph(4, &[(0, 1), (1, 0), (1, 2), (3, 0)], &[0, 0, 1, 1]);
        assert_eq!(g.edge_homophily().unwrap(), 0.5);
    }

    #[test]
    fn homophily_errors() {
        let g = toy_graph(2, &[], &[0, 1]);
        assert!(matches!(g.edge_homophily(), Err(Error::EmptyEdgeSet)));
        let g = toy_graph(2, &[(0, 1)], &[0, -1]);
        assert!(matches!(g.edge_homophily(), Err(Error::UnlabeledNode(1))));
    }

    #[test]
    fn two_hop_on_path() {
        let g = toy_graph(3, &[(0, 1), (1, 2)], &[0, 0, 0]);
        let a = g.augment_two_hop(0).unwrap();
        assert_eq!(a.edges[0], vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn two_hop_on_directed_triangle() {
        let g = toy_graph(3, &[(0, 1), (1, 2), (2, 0)], &[0, 0, 0]);
        let a = g.augment_two_hop(0).unwrap();
        // boolean square of the cyclic permutation matrix: a→c, b→a, c→b
        assert_eq!(a.edges[0], vec![(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]);
    }

    #[test]
    fn two_hop_on_empty_graph_and_bad_relation() {
        let g = toy_graph(3, &[], &[0, 0, 0]);
        assert_eq!(g.augment_two_hop(0).unwrap(), g);
        assert!(matches!(g.augment_two_hop(3), Err(Error::UnknownRelation(3))));
    }

    #[test]
    fn mean_adjacency_averages_incoming() {
        let g = toy_graph(3, &[(0, 2), (1, 2)], &[0, 0, 0]);
        let a = g.mean_adjacency(0);
        let x = ndarray::array![[2.0], [4.0], [100.0]];
        assert_eq!(a.mul_dense(&x), ndarray::array![[0.0], [0.0], [3.0]]);
    }

    proptest::proptest! {
        #[test]
        fn two_hop_matches_boolean_square(
            n in 1usize..9,
            raw in proptest::collection::btree_set((0usize..9, 0usize..9), 0..30),
        ) {
            let edges: Vec<(usize, usize)> = raw.into_iter().filter(|&(s, d)| s < n && d < n).collect();
            let g = toy_graph(n, &edges, &vec![0; n]);
            let mut adj = vec![vec![false; n]; n];
            for &(s, d) in &edges {
                adj[s][d] = true;
            }
            let mut expected = Vec::new();
            for a in 0..n {
                for c in 0..n {
                    let two = a != c && (0..n).any(|b| adj[a][b] && adj[b][c]);
                    if adj[a][c] || two {
                        expected.push((a, c));
                    }
                }
            }
            proptest::prop_assert_eq!(&g.augment_two_hop(0).unwrap().edges[0], &expected);
        }
    }
}
