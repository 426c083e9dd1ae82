//! Experimental protocols: arms, ablations, label-efficiency and sensitivity
//! sweeps, cross-community generalization, embedding-spread analysis.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{metrics_on, MetricsReport};
use super::wilcoxon::{wilcoxon_signed_rank, WilcoxonResult};
use crate::autodiff::Matrix;
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::finetune::{finetune, predict, Embeddings, FinetuneConfig, TrainedModel};
use crate::graph::{louvain_partition, SocialGraph, Splits, BOT, HUMAN};
use crate::pretext::{pretrain, EncoderSet, PretrainCheckpoint, PretrainConfig, PretrainTrace};

/// Everything needed to run one pipeline cell apart from the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// `feature_dim` and `num_relations` are taken from the graph.
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            pretrain: PretrainConfig {
                standardize_semantic: true,
                ..PretrainConfig::default()
            },
            finetune: FinetuneConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn encoder_for(&self, graph: &SocialGraph) -> EncoderConfig {
        EncoderConfig {
            feature_dim: graph.feature_dim(),
            num_relations: graph.num_relations(),
            ..self.encoder.clone()
        }
    }

    fn pretrain_seeded(&self, seed: u64) -> PretrainConfig {
        PretrainConfig {
            seed,
            ..self.pretrain.clone()
        }
    }

    fn finetune_seeded(&self, seed: u64) -> FinetuneConfig {
        FinetuneConfig {
            seed,
            ..self.finetune.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    /// Dual pre-training followed by fine-tuning.
    Bothp,
    SupervisedGraphAware,
    SupervisedGraphAgnostic,
    /// Dual encoders with fusion, trained from random weights.
    NoPretrainDual,
}

impl Arm {
    pub const ALL: [Arm; 4] = [
        Arm::Bothp,
        Arm::SupervisedGraphAware,
        Arm::SupervisedGraphAgnostic,
        Arm::NoPretrainDual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Bothp => "bothp",
            Arm::SupervisedGraphAware => "supervised-graph-aware",
            Arm::SupervisedGraphAgnostic => "supervised-graph-agnostic",
            Arm::NoPretrainDual => "no-pretrain-dual",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.name() == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown arm {name:?}")))
    }

    pub fn is_pretrained(self) -> bool {
        self == Arm::Bothp
    }

    fn scratch_encoders(self) -> EncoderSet {
        match self {
            Arm::SupervisedGraphAware => EncoderSet::GraphAwareOnly,
            Arm::SupervisedGraphAgnostic => EncoderSet::GraphAgnosticOnly,
            Arm::Bothp | Arm::NoPretrainDual => EncoderSet::Dual,
        }
    }
}

/// Trains one arm. `checkpoint` is reused by the pre-trained arm when given.
pub fn train_arm(
    graph: &SocialGraph,
    arm: Arm,
    experiment: &ExperimentConfig,
    seed: u64,
    checkpoint: Option<&PretrainCheckpoint>,
) -> Result<TrainedModel> {
    let encoder = experiment.encoder_for(graph);
    let ft = experiment.finetune_seeded(seed);
    if arm.is_pretrained() {
        let owned;
        let ckpt = match checkpoint {
            Some(c) => c,
            None => {
                owned = pretrain(graph, &experiment.pretrain_seeded(seed), &encoder)?;
                &owned
            }
        };
        finetune(graph, Some(ckpt), &ft, &encoder)
    } else {
        let ft = FinetuneConfig {
            encoders: arm.scratch_encoders(),
            ..ft
        };
        finetune(graph, None, &ft, &encoder)
    }
}

/// Test-split metrics of a trained model.
pub fn evaluate(model: &TrainedModel, graph: &SocialGraph, nodes: &[usize]) -> Result<MetricsReport> {
    if nodes.is_empty() {
        return Err(Error::InvalidArgument("evaluation split is empty".into()));
    }
    let probs = predict(model, graph)?;
    graph.labeled(nodes)?;
    metrics_on(&probs, &graph.labels, nodes)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

// ---------------------------------------------------------------- ablation

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationVariant {
    Full,
    NoGraphAware,
    NoGraphAgnostic,
    #[serde(rename = "no-NFR")]
    NoNfr,
    #[serde(rename = "no-EFR")]
    NoEfr,
    #[serde(rename = "no-SC")]
    NoSc,
    #[serde(rename = "no-PGCD")]
    NoPgcd,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 7] = [
        AblationVariant::Full,
        AblationVariant::NoGraphAware,
        AblationVariant::NoGraphAgnostic,
        AblationVariant::NoNfr,
        AblationVariant::NoEfr,
        AblationVariant::NoSc,
        AblationVariant::NoPgcd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoGraphAware => "no-graph-aware",
            AblationVariant::NoGraphAgnostic => "no-graph-agnostic",
            AblationVariant::NoNfr => "no-NFR",
            AblationVariant::NoEfr => "no-EFR",
            AblationVariant::NoSc => "no-SC",
            AblationVariant::NoPgcd => "no-PGCD",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        AblationVariant::ALL
            .into_iter()
            .find(|v| v.name() == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation variant {name:?}")))
    }

    /// Applies the variant to a pre-training config.
    pub fn apply(self, config: &PretrainConfig) -> PretrainConfig {
        let mut c = config.clone();
        match self {
            AblationVariant::Full => {}
            AblationVariant::NoGraphAware => c.encoders = EncoderSet::GraphAgnosticOnly,
            AblationVariant::NoGraphAgnostic => c.encoders = EncoderSet::GraphAwareOnly,
            AblationVariant::NoNfr => c.weights.neighbor = 0.0,
            AblationVariant::NoEfr => c.weights.ego = 0.0,
            AblationVariant::NoSc => c.weights.semantic = 0.0,
            AblationVariant::NoPgcd => c.weights.cluster = 0.0,
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub seed: u64,
    pub metrics: MetricsReport,
    pub pretrain_trace: PretrainTrace,
}

/// Pre-trains with the variant applied, fine-tunes, and scores the test split, once per seed.
pub fn ablation_run(
    graph: &SocialGraph,
    variant: AblationVariant,
    seeds: &[u64],
    experiment: &ExperimentConfig,
) -> Result<Vec<AblationCell>> {
    let encoder = experiment.encoder_for(graph);
    seeds
        .iter()
        .map(|&seed| {
            let config = variant.apply(&experiment.pretrain_seeded(seed));
            let ckpt = pretrain(graph, &config, &encoder)?;
            let model = finetune(graph, Some(&ckpt), &experiment.finetune_seeded(seed), &encoder)?;
            Ok(AblationCell {
                seed,
                metrics: evaluate(&model, graph, &graph.splits.test)?,
                pretrain_trace: ckpt.trace,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

pub fn ablation_rows(variant: AblationVariant, cells: &[AblationCell]) -> Vec<AblationRow> {
    cells
        .iter()
        .map(|c| AblationRow {
            variant: variant.name().into(),
            seed: c.seed,
            accuracy: c.metrics.accuracy,
            f1: c.metrics.f1,
            precision: c.metrics.precision,
            recall: c.metrics.recall,
        })
        .collect()
}

// ---------------------------------------------------------- label efficiency

/// Keeps `⌊fraction · |train_c|⌋` training nodes of each class, chosen by `seed`.
pub fn subsample_train(graph: &SocialGraph, fraction: f64, seed: u64) -> Result<SocialGraph> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("label fraction {fraction} outside (0, 1]")));
    }
    let mut out = graph.clone();
    if fraction == 1.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = Vec::new();
    for class in [HUMAN, BOT] {
        let mut members: Vec<usize> = graph
            .splits
            .train
            .iter()
            .copied()
            .filter(|&i| graph.labels[i] == class)
            .collect();
        if members.is_empty() {
            continue;
        }
        let k = (fraction * members.len() as f64).floor() as usize;
        if k == 0 {
            return Err(Error::InvalidArgument(format!(
                "label fraction {fraction} leaves class {class} without training nodes"
            )));
        }
        members.shuffle(&mut rng);
        kept.extend_from_slice(&members[..k]);
    }
    kept.sort_unstable();
    out.splits.train = kept;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEfficiencyRow {
    pub fraction: f64,
    pub arm: String,
    pub seed: u64,
    pub train_size: usize,
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Trains each arm on stratified subsets of the train split and scores the full test split.
/// Pre-training is label-free, so one checkpoint per seed serves every fraction.
pub fn label_efficiency_sweep(
    graph: &SocialGraph,
    fractions: &[f64],
    arms: &[Arm],
    seeds: &[u64],
    experiment: &ExperimentConfig,
) -> Result<Vec<LabelEfficiencyRow>> {
    let encoder = experiment.encoder_for(graph);
    let mut rows = Vec::new();
    for &seed in seeds {
        let ckpt = if arms.iter().any(|a| a.is_pretrained()) {
            Some(pretrain(graph, &experiment.pretrain_seeded(seed), &encoder)?)
        } else {
            None
        };
        for &fraction in fractions {
            let sub = subsample_train(graph, fraction, seed)?;
            for &arm in arms {
                let model = train_arm(&sub, arm, experiment, seed, ckpt.as_ref())?;
                let m = evaluate(&model, &sub, &sub.splits.test)?;
                rows.push(LabelEfficiencyRow {
                    fraction,
                    arm: arm.name().into(),
                    seed,
                    train_size: sub.splits.train.len(),
                    accuracy: m.accuracy,
                    f1: m.f1,
                    precision: m.precision,
                    recall: m.recall,
                });
            }
        }
    }
    rows.sort_by(|a, b| {
        (a.arm.as_str(), a.seed)
            .cmp(&(b.arm.as_str(), b.seed))
            .then(a.fraction.total_cmp(&b.fraction))
    });
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub group: String,
    pub x: f64,
    pub runs: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub median_accuracy: f64,
    pub median_f1: f64,
}

fn curve(points: impl Iterator<Item = (String, f64, f64, f64)>) -> Vec<CurvePoint> {
    let mut groups: BTreeMap<(String, u64), (f64, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (group, x, acc, f1) in points {
        let e = groups.entry((group, x.to_bits())).or_insert((x, Vec::new(), Vec::new()));
        e.1.push(acc);
        e.2.push(f1);
    }
    let mut out: Vec<CurvePoint> = groups
        .into_iter()
        .map(|((group, _), (x, acc, f1))| {
            let (mean, std) = mean_std(&acc);
            CurvePoint {
                group,
                x,
                runs: acc.len(),
                mean_accuracy: mean,
                std_accuracy: std,
                median_accuracy: median(&acc),
                median_f1: median(&f1),
            }
        })
        .collect();
    out.sort_by(|a, b| a.group.cmp(&b.group).then(a.x.total_cmp(&b.x)));
    out
}

/// Accuracy-vs-fraction curve per arm.
pub fn label_efficiency_curve(rows: &[LabelEfficiencyRow]) -> Vec<CurvePoint> {
    curve(rows.iter().map(|r| (r.arm.clone(), r.fraction, r.accuracy, r.f1)))
}

// --------------------------------------------------------------- sensitivity

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensitivityAxis {
    /// Prototype count `K`.
    Prototypes,
    /// Target refresh interval `T`.
    Interval,
}

impl SensitivityAxis {
    pub fn name(self) -> &'static str {
        match self {
            SensitivityAxis::Prototypes => "prototypes",
            SensitivityAxis::Interval => "interval",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub axis: String,
    pub value: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub f1: f64,
}

pub fn sensitivity_sweep(
    graph: &SocialGraph,
    axis: SensitivityAxis,
    values: &[usize],
    seeds: &[u64],
    experiment: &ExperimentConfig,
) -> Result<Vec<SensitivityRow>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("sensitivity sweep needs at least one value".into()));
    }
    if axis == SensitivityAxis::Prototypes {
        if let Some(&k) = values.iter().find(|&&k| k > graph.num_nodes) {
            return Err(Error::InvalidArgument(format!("K={k} exceeds N={}", graph.num_nodes)));
        }
    }
    let encoder = experiment.encoder_for(graph);
    let mut rows = Vec::new();
    for &value in values {
        for &seed in seeds {
            let mut config = experiment.pretrain_seeded(seed);
            match axis {
                SensitivityAxis::Prototypes => config.num_prototypes = value,
                SensitivityAxis::Interval => config.update_interval = value,
            }
            let ckpt = pretrain(graph, &config, &encoder)?;
            let model = finetune(graph, Some(&ckpt), &experiment.finetune_seeded(seed), &encoder)?;
            let m = evaluate(&model, graph, &graph.splits.test)?;
            rows.push(SensitivityRow {
                axis: axis.name().into(),
                value,
                seed,
                accuracy: m.accuracy,
                f1: m.f1,
            });
        }
    }
    Ok(rows)
}

/// Mean ± std of accuracy per swept value.
pub fn sensitivity_curve(rows: &[SensitivityRow]) -> Vec<CurvePoint> {
    curve(rows.iter().map(|r| (r.axis.clone(), r.value as f64, r.accuracy, r.f1)))
}

// ----------------------------------------------------------- cross-community

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCommunityMatrix {
    /// Louvain community id of each fold, in matrix order.
    pub communities: Vec<usize>,
    /// `accuracy[i][j]`: trained on fold `i`, tested on fold `j`.
    pub accuracy: Vec<Vec<f64>>,
    pub off_diagonal_mean: f64,
}

impl CrossCommunityMatrix {
    pub fn new(communities: Vec<usize>, accuracy: Vec<Vec<f64>>) -> Result<Self> {
        let k = accuracy.len();
        if k < 2 || communities.len() != k || accuracy.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidArgument(
                "cross-community matrix must be square with at least two folds".into(),
            ));
        }
        let mut total = 0.0;
        for (i, row) in accuracy.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if i != j {
                    total += v;
                }
            }
        }
        Ok(Self {
            communities,
            off_diagonal_mean: total / (k * (k - 1)) as f64,
            accuracy,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldInfo {
    pub community: usize,
    pub size: usize,
    pub bots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCommunityReport {
    pub num_communities: usize,
    pub modularity: f64,
    pub folds: Vec<FoldInfo>,
    /// `(community, reason)` for candidate folds that were left out.
    pub skipped: Vec<(usize, String)>,
    pub seeds: Vec<u64>,
    /// Fine-tuning settings used inside every fold.
    pub finetune: FinetuneConfig,
    pub arms: Vec<(Arm, CrossCommunityMatrix)>,
}

impl CrossCommunityReport {
    pub fn matrix(&self, arm: Arm) -> Option<&CrossCommunityMatrix> {
        self.arms.iter().find(|(a, _)| *a == arm).map(|(_, m)| m)
    }
}

/// Stratified 60/20/20 split of a fold's nodes.
fn fold_splits(labels: &[i8], seed: u64) -> Splits {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Splits::default();
    for class in [HUMAN, BOT] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        let n = members.len();
        let (a, b) = (n * 6 / 10, n * 8 / 10);
        s.train.extend_from_slice(&members[..a]);
        s.val.extend_from_slice(&members[a..b]);
        s.test.extend_from_slice(&members[b..]);
    }
    s.train.sort_unstable();
    s.val.sort_unstable();
    s.test.sort_unstable();
    s
}

/// Trains on each of the largest Louvain communities and tests on every other one.
/// The pre-trained arm is pre-trained once per seed on the whole graph.
pub fn cross_community_eval(
    graph: &SocialGraph,
    num_folds_cap: usize,
    arms: &[Arm],
    seeds: &[u64],
    experiment: &ExperimentConfig,
    louvain_seed: u64,
) -> Result<CrossCommunityReport> {
    let partition = louvain_partition(graph, louvain_seed)?;
    if partition.num_communities < 2 {
        return Err(Error::InvalidArgument("graph forms a single community".into()));
    }
    let sizes = partition.sizes();
    let mut order: Vec<usize> = (0..partition.num_communities).collect();
    order.sort_by_key(|&c| (std::cmp::Reverse(sizes[c]), c));

    let mut folds = Vec::new();
    let mut skipped = Vec::new();
    for &c in &order {
        if folds.len() == num_folds_cap {
            break;
        }
        let sub = graph.subgraph_by_communities(&partition, &BTreeSet::from([c]))?;
        let bots = sub.labels.iter().filter(|&&l| l == BOT).count();
        let humans = sub.labels.iter().filter(|&&l| l == HUMAN).count();
        if bots < 2 || humans < 2 {
            log::info!("skipping community {c}: {bots} bots, {humans} humans");
            skipped.push((c, format!("needs both classes; has {bots} bots and {humans} humans")));
            continue;
        }
        let mut sub = sub;
        sub.splits = fold_splits(&sub.labels, louvain_seed ^ c as u64);
        folds.push((c, sub, bots));
    }
    if folds.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "only {} usable communities; need at least two",
            folds.len()
        )));
    }

    let encoder = experiment.encoder_for(graph);
    let k = folds.len();
    let mut sums: BTreeMap<Arm, Vec<Vec<f64>>> = arms.iter().map(|&a| (a, vec![vec![0.0; k]; k])).collect();
    for &seed in seeds {
        let ckpt = if arms.iter().any(|a| a.is_pretrained()) {
            Some(pretrain(graph, &experiment.pretrain_seeded(seed), &encoder)?)
        } else {
            None
        };
        for &arm in arms {
            for (i, (_, train_graph, _)) in folds.iter().enumerate() {
                let model = train_arm(train_graph, arm, experiment, seed, ckpt.as_ref())?;
                for (j, (_, test_graph, _)) in folds.iter().enumerate() {
                    let m = evaluate(&model, test_graph, &test_graph.splits.test)?;
                    sums.get_mut(&arm).expect("arm registered")[i][j] += m.accuracy;
                }
            }
        }
    }
    let communities: Vec<usize> = folds.iter().map(|f| f.0).collect();
    let n_seeds = seeds.len().max(1) as f64;
    let mut matrices = Vec::new();
    for &arm in arms {
        let acc = sums[&arm]
            .iter()
            .map(|r| r.iter().map(|v| v / n_seeds).collect())
            .collect();
        matrices.push((arm, CrossCommunityMatrix::new(communities.clone(), acc)?));
    }
    Ok(CrossCommunityReport {
        num_communities: partition.num_communities,
        modularity: partition.modularity,
        folds: folds
            .iter()
            .map(|(c, g, bots)| FoldInfo {
                community: *c,
                size: g.num_nodes,
                bots: *bots,
            })
            .collect(),
        skipped,
        seeds: seeds.to_vec(),
        finetune: experiment.finetune.clone(),
        arms: matrices,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCommunityCell {
    pub arm: String,
    pub train_fold: usize,
    pub test_fold: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCommunitySummary {
    pub arm: String,
    pub off_diagonal_mean: f64,
    /// Pre-trained arm's off-diagonal mean minus this arm's.
    pub delta_vs_bothp: Option<f64>,
}

impl CrossCommunityReport {
    pub fn cells(&self) -> Vec<CrossCommunityCell> {
        let mut out = Vec::new();
        for (arm, m) in &self.arms {
            for (i, row) in m.accuracy.iter().enumerate() {
                for (j, &accuracy) in row.iter().enumerate() {
                    out.push(CrossCommunityCell {
                        arm: arm.name().into(),
                        train_fold: m.communities[i],
                        test_fold: m.communities[j],
                        accuracy,
                    });
                }
            }
        }
        out
    }

    pub fn summary(&self) -> Vec<CrossCommunitySummary> {
        let reference = self.matrix(Arm::Bothp).map(|m| m.off_diagonal_mean);
        self.arms
            .iter()
            .map(|(arm, m)| CrossCommunitySummary {
                arm: arm.name().into(),
                off_diagonal_mean: m.off_diagonal_mean,
                delta_vs_bothp: reference.map(|r| r - m.off_diagonal_mean),
            })
            .collect()
    }
}

// ---------------------------------------------------------- embedding spread

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StdComparison {
    pub sigma_g: Vec<f64>,
    pub sigma_l: Vec<f64>,
    /// One-sided test of `σ^l > σ^g` over paired dimensions.
    pub wilcoxon: WilcoxonResult,
}

impl StdComparison {
    pub fn p_value(&self) -> f64 {
        self.wilcoxon.p_value
    }
}

fn column_std(h: &Matrix) -> Vec<f64> {
    h.std_axis(ndarray::Axis(0), 0.0).to_vec()
}

/// Per-dimension spread of both embeddings and the paired signed-rank test.
pub fn embedding_std_analysis(hg: &Matrix, hl: &Matrix) -> Result<StdComparison> {
    if hg.dim() != hl.dim() {
        return Err(Error::shape("embedding std", format!("{:?}", hg.dim()), format!("{:?}", hl.dim())));
    }
    if hg.ncols() < 5 {
        return Err(Error::InvalidArgument(format!(
            "embedding std analysis needs at least 5 dimensions, got {}",
            hg.ncols()
        )));
    }
    let sigma_g = column_std(hg);
    let sigma_l = column_std(hl);
    if sigma_g.iter().chain(&sigma_l).all(|&s| s == 0.0) {
        return Err(Error::InvalidArgument(
            "every embedding dimension has zero variance in both encoders".into(),
        ));
    }
    let wilcoxon = wilcoxon_signed_rank(&sigma_l, &sigma_g)?;
    Ok(StdComparison {
        sigma_g,
        sigma_l,
        wilcoxon,
    })
}

fn require_both(hg: Option<Matrix>, hl: Option<Matrix>) -> Result<(Matrix, Matrix)> {
    match (hg, hl) {
        (Some(g), Some(l)) => Ok((g, l)),
        _ => Err(Error::InvalidArgument("embedding std analysis needs both encoders".into())),
    }
}

pub fn checkpoint_std_analysis(ckpt: &PretrainCheckpoint, graph: &SocialGraph) -> Result<StdComparison> {
    ckpt.encoder.check_graph(graph)?;
    let (hg, hl) = ckpt.params.embed(graph, ckpt.encoder.activation)?;
    let (hg, hl) = require_both(hg, hl)?;
    embedding_std_analysis(&hg, &hl)
}

pub fn model_std_analysis(model: &TrainedModel, graph: &SocialGraph) -> Result<StdComparison> {
    let e = model.embed(graph)?;
    let (hg, hl) = require_both(e.hg, e.hl)?;
    embedding_std_analysis(&hg, &hl)
}

// ------------------------------------------------------------------- export

/// CSV with a `label` column followed by `u*`, then `hg*` and `hl*` when present.
/// Values are written at f32 precision.
pub fn export_embeddings(embeddings: &Embeddings, labels: &[i8], path: &Path) -> Result<()> {
    let n = embeddings.u.nrows();
    if labels.len() != n {
        return Err(Error::shape("embedding export labels", n, labels.len()));
    }
    let blocks: Vec<(&str, &Matrix)> = [("u", Some(&embeddings.u)), ("hg", embeddings.hg.as_ref()), ("hl", embeddings.hl.as_ref())]
        .into_iter()
        .filter_map(|(name, m)| m.map(|m| (name, m)))
        .collect();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::malformed(path, e.to_string()))?;
    let mut header = vec!["label".to_string()];
    for (name, m) in &blocks {
        header.extend((0..m.ncols()).map(|k| format!("{name}{k}")));
    }
    w.write_record(&header)?;
    for i in 0..n {
        let mut record = vec![labels[i].to_string()];
        for (_, m) in &blocks {
            record.extend(m.row(i).iter().map(|&v| (v as f32).to_string()));
        }
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Serializes rows to CSV with a header taken from the row type.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::malformed(path, e.to_string()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
