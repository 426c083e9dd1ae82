//! Synthetic social graphs with planted labels, tunable edge homophily and
//! bot collectives that share a feature prototype but scatter across
//! topological communities.

use std::collections::HashSet;

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DatasetBundle, DatasetMetadata, Provenance, SocialGraph, Splits, BOT, HUMAN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_nodes: usize,
    pub bot_fraction: f64,
    pub target_homophily: f64,
    pub num_bot_clusters: usize,
    pub num_topo_communities: usize,
    /// 0 confines each bot cluster to one community, 1 spreads it uniformly.
    pub dispersion: f64,
    pub feature_dim: usize,
    /// Pairwise distance between bot-cluster feature prototypes.
    pub cluster_signal: f64,
    pub noise_sigma: f64,
    pub mean_degree: f64,
    pub relations: usize,
    /// Probability that an edge endpoint is drawn from the other endpoint's community.
    pub intra_community_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_nodes: 2000,
            bot_fraction: 0.5,
            target_homophily: 0.5,
            num_bot_clusters: 4,
            num_topo_communities: 8,
            dispersion: 0.8,
            feature_dim: 16,
            cluster_signal: 4.0,
            noise_sigma: 1.0,
            mean_degree: 10.0,
            relations: 2,
            intra_community_prob: 0.9,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn num_bots(&self) -> usize {
        (self.bot_fraction * self.num_nodes as f64).floor() as usize
    }

    pub fn num_pairs(&self) -> usize {
        (self.mean_degree * self.num_nodes as f64 / 2.0).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.num_nodes < 2 {
            problems.push(format!("num_nodes {} must be at least 2", self.num_nodes));
        }
        if !(self.bot_fraction > 0.0 && self.bot_fraction < 1.0) {
            problems.push(format!("bot_fraction {} outside (0, 1)", self.bot_fraction));
        }
        if !(0.0..=1.0).contains(&self.target_homophily) {
            problems.push(format!("target_homophily {} outside [0, 1]", self.target_homophily));
        }
        if self.num_bot_clusters == 0 || self.num_bot_clusters > self.num_bots() {
            problems.push(format!(
                "num_bot_clusters {} must be in [1, {}]",
                self.num_bot_clusters,
                self.num_bots()
            ));
        }
        if self.num_topo_communities == 0 || self.num_topo_communities > self.num_nodes {
            problems.push(format!(
                "num_topo_communities {} must be in [1, {}]",
                self.num_topo_communities, self.num_nodes
            ));
        }
        for (name, v) in [("dispersion", self.dispersion), ("intra_community_prob", self.intra_community_prob)] {
            if !(0.0..=1.0).contains(&v) {
                problems.push(format!("{name} {v} outside [0, 1]"));
            }
        }
        if self.feature_dim == 0 || self.relations == 0 {
            problems.push("feature_dim and relations must be >= 1".into());
        }
        if !(self.cluster_signal >= 0.0 && self.cluster_signal.is_finite()) {
            problems.push(format!("cluster_signal {} must be finite and >= 0", self.cluster_signal));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            problems.push(format!("noise_sigma {} must be > 0", self.noise_sigma));
        }
        if !(self.mean_degree > 0.0 && self.mean_degree.is_finite()) {
            problems.push(format!("mean_degree {} must be > 0", self.mean_degree));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Planted structure of a synthetic graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub labels: Vec<i8>,
    /// Bot collective of each bot; `None` for humans.
    pub bot_cluster: Vec<Option<usize>>,
    pub topo_community: Vec<usize>,
}

pub const PRESETS: [&str; 2] = ["camouflage", "homophilic"];

/// Scaled-down regimes of the two benchmark datasets: a heterophilic,
/// bot-heavy graph and a strongly homophilic, human-heavy one.
pub fn preset(name: &str) -> Result<SynthConfig> {
    let base = SynthConfig::default();
    match name {
        "camouflage" => Ok(SynthConfig {
            target_homophily: 0.53,
            bot_fraction: 0.56,
            ..base
        }),
        "homophilic" => Ok(SynthConfig {
            target_homophily: 0.92,
            bot_fraction: 0.27,
            ..base
        }),
        other => Err(Error::InvalidArgument(format!(
            "unknown preset {other:?}; expected one of {PRESETS:?}"
        ))),
    }
}

fn bot_prototypes(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let (b, d) = (config.num_bot_clusters, config.feature_dim);
    let scale = config.cluster_signal / std::f64::consts::SQRT_2;
    if b <= d {
        // scaled basis vectors are exactly cluster_signal apart
        Array2::from_shape_fn((b, d), |(i, j)| if i == j { scale } else { 0.0 })
    } else {
        let mut m: Array2<f64> = Array2::from_shape_fn((b, d), |_| StandardNormal.sample(rng));
        for mut row in m.rows_mut() {
            let norm = row.dot(&row).sqrt().max(f64::MIN_POSITIVE);
            row.mapv_inplace(|v| v * scale / norm);
        }
        m
    }
}

struct Pools {
    by_label: [Vec<usize>; 2],
    /// `by_label_community[label][community]`
    by_label_community: [Vec<Vec<usize>>; 2],
}

impl Pools {
    fn new(labels: &[i8], community: &[usize], m: usize) -> Self {
        let mut by_label = [Vec::new(), Vec::new()];
        let mut by_label_community = [vec![Vec::new(); m], vec![Vec::new(); m]];
        for (i, (&l, &c)) in labels.iter().zip(community).enumerate() {
            by_label[l as usize].push(i);
            by_label_community[l as usize][c].push(i);
        }
        Self {
            by_label,
            by_label_community,
        }
    }

    fn partner(&self, label: usize, community: usize, intra: f64, rng: &mut ChaCha8Rng) -> Option<usize> {
        let local = &self.by_label_community[label][community];
        let pool = if !local.is_empty() && rng.random::<f64>() < intra {
            local
        } else {
            &self.by_label[label]
        };
        pool.choose(rng).copied()
    }
}

fn pair_key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

fn choose2(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

fn infeasible(config: &SynthConfig, same_cap: usize, cross_cap: usize, pairs: usize) -> Error {
    let p = pairs.max(1) as f64;
    Error::InfeasibleHomophily {
        target: config.target_homophily,
        min: pairs.saturating_sub(cross_cap) as f64 / p,
        max: pairs.min(same_cap) as f64 / p,
    }
}

/// Samples the undirected pairs: exactly `round(h·P)` same-label pairs and the rest cross-label.
fn sample_pairs(
    config: &SynthConfig,
    labels: &[i8],
    community: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, usize)>> {
    let n = config.num_nodes;
    let pairs = config.num_pairs();
    let same_quota = (config.target_homophily * pairs as f64).round() as usize;
    let cross_quota = pairs - same_quota;
    let pools = Pools::new(labels, community, config.num_topo_communities);
    let (nh, nb) = (pools.by_label[0].len(), pools.by_label[1].len());
    let same_cap = choose2(nh) + choose2(nb);
    let cross_cap = nh * nb;
    if same_quota > same_cap || cross_quota > cross_cap {
        return Err(infeasible(config, same_cap, cross_cap, pairs));
    }

    let mut seen = HashSet::with_capacity(pairs);
    let mut out = Vec::with_capacity(pairs);
    let budget = 50 * pairs + 1000;
    let mut attempts = 0;
    for (quota, same) in [(same_quota, true), (cross_quota, false)] {
        let mut made = 0;
        while made < quota {
            attempts += 1;
            if attempts > budget {
                return Err(infeasible(config, same_cap, cross_cap, pairs));
            }
            let u = rng.random_range(0..n);
            let lu = labels[u] as usize;
            let lv = if same { lu } else { 1 - lu };
            let Some(v) = pools.partner(lv, community[u], config.intra_community_prob, rng) else {
                continue;
            };
            if u == v || !seen.insert(pair_key(u, v)) {
                continue;
            }
            out.push((u, v));
            made += 1;
        }
    }
    Ok(out)
}

fn stratified_splits(labels: &[i8], rng: &mut ChaCha8Rng) -> Splits {
    let mut splits = Splits::default();
    for class in [HUMAN, BOT] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(rng);
        let n = members.len();
        let n_train = n * 7 / 10;
        let n_val = n * 2 / 10;
        splits.train.extend_from_slice(&members[..n_train]);
        splits.val.extend_from_slice(&members[n_train..n_train + n_val]);
        splits.test.extend_from_slice(&members[n_train + n_val..]);
    }
    splits.train.sort_unstable();
    splits.val.sort_unstable();
    splits.test.sort_unstable();
    splits
}

/// Builds a labeled graph from the config; deterministic given `config.seed`.
pub fn generate(config: &SynthConfig) -> Result<(DatasetBundle, GroundTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.num_nodes;
    let m = config.num_topo_communities;
    let b = config.num_bot_clusters;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut labels = vec![HUMAN; n];
    let mut bot_cluster = vec![None; n];
    for (k, &i) in order[..config.num_bots()].iter().enumerate() {
        labels[i] = BOT;
        bot_cluster[i] = Some(k % b);
    }

    let community: Vec<usize> = (0..n)
        .map(|i| match bot_cluster[i] {
            Some(c) if rng.random::<f64>() >= config.dispersion => c % m,
            _ => rng.random_range(0..m),
        })
        .collect();

    let protos = bot_prototypes(config, &mut rng);
    let noise = Normal::new(0.0, config.noise_sigma).expect("sigma validated positive");
    let d = config.feature_dim;
    let mut features = Array2::<f32>::zeros((n, d));
    for i in 0..n {
        for j in 0..d {
            let mu = bot_cluster[i].map_or(0.0, |c| protos[[c, j]]);
            features[[i, j]] = (mu + noise.sample(&mut rng)) as f32;
        }
    }

    let pairs = sample_pairs(config, &labels, &community, &mut rng)?;
    let mut edges = vec![Vec::new(); config.relations];
    for (u, v) in pairs {
        let r = rng.random_range(0..config.relations);
        edges[r].push((u, v));
        edges[r].push((v, u));
    }

    let splits = stratified_splits(&labels, &mut rng);
    let relations = (0..config.relations).map(|r| format!("relation{r}")).collect();
    let graph = SocialGraph {
        num_nodes: n,
        features,
        relations,
        edges,
        labels: labels.clone(),
        splits,
    };
    let truth = GroundTruth {
        labels,
        bot_cluster,
        topo_community: community,
    };
    let bundle = DatasetBundle {
        graph,
        metadata: DatasetMetadata {
            name: "synthetic".into(),
            provenance: Provenance::Synthetic,
            seed: Some(config.seed),
        },
        ground_truth: Some(truth.clone()),
    };
    Ok((bundle, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            num_nodes: 300,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn presets_match_benchmark_regimes() {
        let c = preset("camouflage").unwrap();
        assert_eq!((c.num_nodes, c.target_homophily, c.bot_fraction), (2000, 0.53, 0.56));
        let h = preset("homophilic").unwrap();
        assert_eq!((h.num_nodes, h.target_homophily, h.bot_fraction), (2000, 0.92, 0.27));
        assert_eq!(preset("camouflage").unwrap(), c);
        assert!(preset("twitter").is_err());
    }

    #[test]
    fn generated_graph_is_valid_and_deterministic() {
        let (a, truth) = generate(&small(3)).unwrap();
        assert!(a.graph.validate().is_empty());
        assert_eq!(a.graph.labels.iter().filter(|&&l| l == BOT).count(), 150);
        assert_eq!(a.graph.num_edges(), 2 * 1500);
        for (i, c) in truth.bot_cluster.iter().enumerate() {
            assert_eq!(c.is_some(), truth.labels[i] == BOT);
        }
        let (b, _) = generate(&small(3)).unwrap();
        assert_eq!(a, b);
        let (c, _) = generate(&small(4)).unwrap();
        assert_ne!(a.graph, c.graph);
    }

    #[test]
    fn full_homophily_has_no_cross_edges() {
        let config = SynthConfig {
            target_homophily: 1.0,
            dispersion: 0.0,
            ..small(1)
        };
        let (bundle, _) = generate(&config).unwrap();
        assert_eq!(bundle.graph.edge_homophily().unwrap(), 1.0);
    }

    #[test]
    fn homophily_tracks_target() {
        let config = SynthConfig {
            target_homophily: 0.55,
            ..SynthConfig::default()
        };
        let (bundle, _) = generate(&config).unwrap();
        assert!((bundle.graph.edge_homophily().unwrap() - 0.55).abs() <= 0.02);
    }

    fn spans(truth: &GroundTruth, b: usize) -> Vec<usize> {
        (0..b)
            .map(|c| {
                truth
                    .bot_cluster
                    .iter()
                    .zip(&truth.topo_community)
                    .filter(|(k, _)| **k == Some(c))
                    .map(|(_, &m)| m)
                    .collect::<BTreeSet<_>>()
                    .len()
            })
            .collect()
    }

    #[test]
    fn dispersion_controls_community_spread() {
        let (_, truth) = generate(&SynthConfig { dispersion: 1.0, ..small(2) }).unwrap();
        assert!(spans(&truth, 4).iter().all(|&s| s >= 4));
        let (_, truth) = generate(&SynthConfig { dispersion: 0.0, ..small(2) }).unwrap();
        assert!(spans(&truth, 4).iter().all(|&s| s == 1));
    }

    #[test]
    fn infeasible_homophily_reports_range() {
        // 2 bots and 8 humans: at most 16 cross pairs, 29 same-label pairs
        let config = SynthConfig {
            num_nodes: 10,
            bot_fraction: 0.2,
            num_bot_clusters: 1,
            num_topo_communities: 2,
            mean_degree: 8.0,
            target_homophily: 0.0,
            ..SynthConfig::default()
        };
        match generate(&config) {
            Err(Error::InfeasibleHomophily { min, max, .. }) => {
                assert!((min - 24.0 / 40.0).abs() < 1e-12);
                assert!((max - 29.0 / 40.0).abs() < 1e-12);
            }
            other => panic!("expected infeasible homophily, got {other:?}"),
        }
    }

    #[test]
    fn splits_are_stratified() {
        let (bundle, _) = generate(&small(5)).unwrap();
        let s = &bundle.graph.splits;
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (210, 60, 30));
    }

    #[test]
    fn zero_signal_bot_means_are_indistinguishable() {
        let config = SynthConfig {
            cluster_signal: 0.0,
            ..SynthConfig::default()
        };
        let (bundle, truth) = generate(&config).unwrap();
        let x = &bundle.graph.features;
        let rows = |c: usize| -> Vec<usize> {
            (0..x.nrows()).filter(|&i| truth.bot_cluster[i] == Some(c)).collect()
        };
        let (a, b) = (rows(0), rows(1));
        for j in 0..x.ncols() {
            let mean = |r: &[usize]| r.iter().map(|&i| x[[i, j]] as f64).sum::<f64>() / r.len() as f64;
            let se = (1.0 / a.len() as f64 + 1.0 / b.len() as f64).sqrt();
            assert!((mean(&a) - mean(&b)).abs() < 3.0 * se, "column {j}");
        }
    }
}
