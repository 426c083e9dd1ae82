//! Louvain modularity optimization on the symmetrized, relation-pooled graph.
//!
//! Each level runs local moves until no node changes community, then collapses
//! communities into super-nodes. Adjacency uses the symmetric-matrix convention:
//! `k_i = Σ_j A_ij` and `2m = Σ_ij A_ij`, so a collapsed community's internal
//! weight lands on its diagonal and modularity is preserved by aggregation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SocialGraph;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityPartition {
    pub assignment: Vec<usize>,
    pub num_communities: usize,
    pub modularity: f64,
}

impl CommunityPartition {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_communities];
        for &c in &self.assignment {
            sizes[c] += 1;
        }
        sizes
    }

    pub fn members(&self, community: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == community)
            .map(|(i, _)| i)
            .collect()
    }
}

const GAIN_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
struct LevelGraph {
    /// Symmetric adjacency including diagonal entries.
    adj: Vec<Vec<(usize, f64)>>,
    degree: Vec<f64>,
    two_m: f64,
}

impl LevelGraph {
    fn from_social(graph: &SocialGraph) -> Self {
        let n = graph.num_nodes;
        let mut maps: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        for (s, d, _) in graph.edge_triples() {
            if s == d {
                *maps[s].entry(s).or_default() += 2.0;
            } else {
                *maps[s].entry(d).or_default() += 1.0;
                *maps[d].entry(s).or_default() += 1.0;
            }
        }
        Self::from_maps(maps)
    }

    fn from_maps(maps: Vec<BTreeMap<usize, f64>>) -> Self {
        let adj: Vec<Vec<(usize, f64)>> = maps.into_iter().map(|m| m.into_iter().collect()).collect();
        let degree: Vec<f64> = adj.iter().map(|row| row.iter().map(|&(_, w)| w).sum()).collect();
        let two_m = degree.iter().sum();
        Self { adj, degree, two_m }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    fn modularity(&self, comm: &[usize]) -> f64 {
        let k = comm.iter().copied().max().map_or(0, |c| c + 1);
        let mut internal = vec![0.0; k];
        let mut tot = vec![0.0; k];
        for (i, row) in self.adj.iter().enumerate() {
            tot[comm[i]] += self.degree[i];
            for &(j, w) in row {
                if comm[i] == comm[j] {
                    internal[comm[i]] += w;
                }
            }
        }
        internal
            .iter()
            .zip(&tot)
            .map(|(&inn, &t)| inn / self.two_m - (t / self.two_m).powi(2))
            .sum()
    }

    /// Local-move phase. Returns the community of each node and whether any node moved.
    fn local_moves(&self, rng: &mut ChaCha8Rng) -> (Vec<usize>, bool) {
        let n = self.len();
        let mut comm: Vec<usize> = (0..n).collect();
        let mut tot = self.degree.clone();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut any_moved = false;
        loop {
            let mut moved = false;
            for &i in &order {
                let ki = self.degree[i];
                let current = comm[i];
                let mut links: BTreeMap<usize, f64> = BTreeMap::new();
                for &(j, w) in &self.adj[i] {
                    if j != i {
                        *links.entry(comm[j]).or_default() += w;
                    }
                }
                tot[current] -= ki;
                let gain = |c: usize, link: f64| link - tot[c] * ki / self.two_m;
                let mut best = current;
                let mut best_gain = gain(current, links.get(&current).copied().unwrap_or(0.0));
                // ascending community ids: the first strictly better candidate wins ties
                for (&c, &link) in &links {
                    if c == current {
                        continue;
                    }
                    let g = gain(c, link);
                    if g > best_gain + GAIN_EPS {
                        best = c;
                        best_gain = g;
                    }
                }
                tot[best] += ki;
                if best != current {
                    comm[i] = best;
                    moved = true;
                    any_moved = true;
                }
            }
            if !moved {
                break;
            }
        }
        (comm, any_moved)
    }

    fn aggregate(&self, comm: &[usize], k: usize) -> LevelGraph {
        let mut maps: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); k];
        for (i, row) in self.adj.iter().enumerate() {
            for &(j, w) in row {
                *maps[comm[i]].entry(comm[j]).or_default() += w;
            }
        }
        LevelGraph::from_maps(maps)
    }
}

/// Relabels ids to `0..k` in order of first appearance.
fn compact(comm: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    let mut next = 0;
    let mut order = Vec::with_capacity(comm.len());
    for &c in comm {
        let id = *map.entry(c).or_insert_with(|| {
            next += 1;
            next - 1
        });
        order.push(id);
    }
    (order, next)
}

/// Newman modularity (resolution 1) of an assignment on the symmetrized, relation-pooled graph.
pub fn modularity(graph: &SocialGraph, assignment: &[usize]) -> Result<f64> {
    if graph.num_edges() == 0 {
        return Err(Error::EmptyEdgeSet);
    }
    if assignment.len() != graph.num_nodes {
        return Err(Error::shape("modularity assignment", graph.num_nodes, assignment.len()));
    }
    Ok(LevelGraph::from_social(graph).modularity(assignment))
}

pub fn louvain_partition(graph: &SocialGraph, seed: u64) -> Result<CommunityPartition> {
    louvain_with_trace(graph, seed).map(|(p, _)| p)
}

/// Louvain partition together with the modularity recorded before the first pass and after each pass.
pub fn louvain_with_trace(graph: &SocialGraph, seed: u64) -> Result<(CommunityPartition, Vec<f64>)> {
    if graph.num_edges() == 0 {
        return Err(Error::EmptyEdgeSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut level = LevelGraph::from_social(graph);
    let mut assignment: Vec<usize> = (0..graph.num_nodes).collect();
    let singletons: Vec<usize> = (0..level.len()).collect();
    let mut trace = vec![level.modularity(&singletons)];
    loop {
        let (comm, moved) = level.local_moves(&mut rng);
        if !moved {
            break;
        }
        let (comm, k) = compact(&comm);
        trace.push(level.modularity(&comm));
        for a in assignment.iter_mut() {
            *a = comm[*a];
        }
        level = level.aggregate(&comm, k);
        if k == 1 {
            break;
        }
    }
    let (assignment, num_communities) = compact(&assignment);
    let modularity = LevelGraph::from_social(graph).modularity(&assignment);
    log::debug!("louvain: {num_communities} communities, modularity {modularity:.4}");
    Ok((
        CommunityPartition {
            assignment,
            num_communities,
            modularity,
        },
        trace,
    ))
}
