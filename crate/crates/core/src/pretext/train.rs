//! The pre-training loop: per epoch, masked reconstruction through the
//! graph-aware branch, corrupted reconstruction through the graph-agnostic
//! branch, semantic consistency on clean embeddings, and the KL cluster term
//! against a target distribution refreshed every `T` epochs.

use std::path::Path;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cluster::{kmeans_init, target_distribution, PrototypeSet, KL_FLOOR};
use super::{
    dropout_mask, ego_recon_tape, neighbor_recon_tape, sample_mask, semantic_consistency_tape,
    MaskSchedule,
};
use crate::autodiff::{Matrix, Tape, Var};
use crate::checkpoint::{load_into, quantize, read_manifest, save_model};
use crate::encoders::{
    decode_g_tape, decode_l_tape, graph_agnostic_forward_tape, graph_aware_forward_tape,
    init_params, DecoderParams, EncoderConfig, GraphAgnosticParams, GraphAwareParams, ParamTree,
};
use crate::error::{Error, Result};
use crate::graph::{GraphStructure, SocialGraph};
use crate::optim::{Adam, AdamConfig};

/// Which encoders take part; single-encoder sets drop the other branch and its pretext terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderSet {
    #[default]
    Dual,
    GraphAwareOnly,
    GraphAgnosticOnly,
}

impl EncoderSet {
    pub fn has_graph_aware(self) -> bool {
        self != EncoderSet::GraphAgnosticOnly
    }

    pub fn has_graph_agnostic(self) -> bool {
        self != EncoderSet::GraphAwareOnly
    }

    pub fn count(self) -> usize {
        if self == EncoderSet::Dual {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub neighbor: f64,
    pub ego: f64,
    pub semantic: f64,
    pub cluster: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            neighbor: 1.0,
            ego: 1.0,
            semantic: 1.0,
            cluster: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    /// `schedule.total_epochs` is the number of pre-training epochs.
    pub schedule: MaskSchedule,
    pub dropout_p: f64,
    pub weights: LossWeights,
    /// Epochs of reconstruction-only training before prototypes are initialized.
    pub warmup_epochs: usize,
    pub optimizer: AdamConfig,
    pub num_prototypes: usize,
    /// Student-t degrees of freedom.
    pub alpha: f64,
    /// Target distribution refresh interval `T`.
    pub update_interval: usize,
    /// Column-standardize both embeddings before the semantic consistency term.
    pub standardize_semantic: bool,
    pub encoders: EncoderSet,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            schedule: MaskSchedule {
                p_start: 0.3,
                p_end: 0.6,
                total_epochs: 100,
            },
            dropout_p: 0.2,
            weights: LossWeights::default(),
            warmup_epochs: 10,
            optimizer: AdamConfig::default(),
            num_prototypes: 8,
            alpha: 1.0,
            update_interval: 5,
            standardize_semantic: false,
            encoders: EncoderSet::Dual,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn epochs(&self) -> usize {
        self.schedule.total_epochs
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidArgument(format!("dropout_p {} outside [0, 1)", self.dropout_p)));
        }
        let w = self.weights;
        if [w.neighbor, w.ego, w.semantic, w.cluster]
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::InvalidArgument("loss weights must be finite and non-negative".into()));
        }
        if self.warmup_epochs >= self.epochs() {
            return Err(Error::InvalidArgument(format!(
                "warmup_epochs {} must be below the epoch count {}",
                self.warmup_epochs,
                self.epochs()
            )));
        }
        if self.num_prototypes == 0 || self.update_interval == 0 || !(self.alpha > 0.0) {
            return Err(Error::InvalidArgument(
                "num_prototypes and update_interval must be >= 1 and alpha > 0".into(),
            ));
        }
        Ok(())
    }

    fn cluster_active(&self) -> bool {
        self.weights.cluster > 0.0
    }
}

/// Everything learned during pre-training.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainParams<T = Matrix> {
    pub graph_aware: Option<GraphAwareParams<T>>,
    pub graph_agnostic: Option<GraphAgnosticParams<T>>,
    pub decoders: DecoderParams<T>,
    /// `1×d` learnable replacement for masked feature rows.
    pub mask_token: T,
    /// `K × (encoders·d_h)` prototype centers.
    pub prototypes: T,
}

impl<T> ParamTree<T> for PretrainParams<T> {
    type Mapped<U> = PretrainParams<U>;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        let p = |s: &str| if prefix.is_empty() { s.to_string() } else { format!("{prefix}.{s}") };
        if let Some(g) = &self.graph_aware {
            g.visit(&p("graph_aware"), f);
        }
        if let Some(l) = &self.graph_agnostic {
            l.visit(&p("graph_agnostic"), f);
        }
        self.decoders.visit(prefix, f);
        f(p("mask_token"), &self.mask_token);
        f(p("prototypes"), &self.prototypes);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        let p = |s: &str| if prefix.is_empty() { s.to_string() } else { format!("{prefix}.{s}") };
        if let Some(g) = &mut self.graph_aware {
            g.visit_mut(&p("graph_aware"), f);
        }
        if let Some(l) = &mut self.graph_agnostic {
            l.visit_mut(&p("graph_agnostic"), f);
        }
        self.decoders.visit_mut(prefix, f);
        f(p("mask_token"), &mut self.mask_token);
        f(p("prototypes"), &mut self.prototypes);
    }

    fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(String, &T) -> U) -> PretrainParams<U> {
        let p = |s: &str| if prefix.is_empty() { s.to_string() } else { format!("{prefix}.{s}") };
        PretrainParams {
            graph_aware: self.graph_aware.as_ref().map(|g| g.map(&p("graph_aware"), f)),
            graph_agnostic: self.graph_agnostic.as_ref().map(|l| l.map(&p("graph_agnostic"), f)),
            decoders: self.decoders.map(prefix, f),
            mask_token: f(p("mask_token"), &self.mask_token),
            prototypes: f(p("prototypes"), &self.prototypes),
        }
    }
}

impl PretrainParams {
    pub fn init(encoder: &EncoderConfig, config: &PretrainConfig) -> Self {
        let (aware, agnostic, decoders) = init_params(encoder, config.seed);
        let set = config.encoders;
        PretrainParams {
            graph_aware: set.has_graph_aware().then_some(aware),
            graph_agnostic: set.has_graph_agnostic().then_some(agnostic),
            decoders,
            mask_token: Matrix::zeros((1, encoder.feature_dim)),
            prototypes: Matrix::zeros((config.num_prototypes, set.count() * encoder.hidden_dim)),
        }
    }

    /// Clean embeddings `(H^g, H^l)` of the present encoders.
    pub fn embed(&self, graph: &SocialGraph, act: crate::autodiff::Activation) -> Result<(Option<Matrix>, Option<Matrix>)> {
        let x = graph.features_f64();
        let hg = self.graph_aware.as_ref().map(|p| p.forward(graph, &x, act)).transpose()?;
        let hl = self.graph_agnostic.as_ref().map(|p| p.forward(&x, act)).transpose()?;
        Ok((hg, hl))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    /// One-based epoch index.
    pub epoch: usize,
    pub mask_rate: f64,
    pub neighbor: f64,
    pub ego: f64,
    pub semantic: f64,
    pub cluster: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainTrace {
    pub epochs: Vec<EpochLosses>,
    /// One-based epochs at which the target distribution was recomputed.
    pub target_refreshes: Vec<usize>,
    /// One-based epoch at which prototypes were initialized by k-means.
    pub kmeans_epoch: Option<usize>,
}

impl PretrainTrace {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::malformed(path, e.to_string()))?;
        w.write_record(["epoch", "L_N", "L_E", "L_S", "L_C", "L_P"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.neighbor.to_string(),
                e.ego.to_string(),
                e.semantic.to_string(),
                e.cluster.to_string(),
                e.total.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainCheckpoint {
    pub encoder: EncoderConfig,
    pub config: PretrainConfig,
    pub params: PretrainParams,
    pub prototypes_initialized: bool,
    pub trace: PretrainTrace,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    encoder: EncoderConfig,
    config: PretrainConfig,
    seed: u64,
    prototypes_initialized: bool,
    trace: PretrainTrace,
    loss_summary: Option<LossSummary>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LossSummary {
    initial_total: f64,
    final_total: f64,
}

const CHECKPOINT_KIND: &str = "pretrain-checkpoint";

impl PretrainCheckpoint {
    pub fn prototype_set(&self) -> PrototypeSet {
        PrototypeSet {
            centers: self.params.prototypes.clone(),
            alpha: self.config.alpha,
            update_interval: self.config.update_interval,
            initialized: self.prototypes_initialized,
        }
    }

    /// Writes `manifest.json`, `params/*.f32` and `losses.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let summary = match (self.trace.epochs.first(), self.trace.epochs.last()) {
            (Some(a), Some(b)) => Some(LossSummary {
                initial_total: a.total,
                final_total: b.total,
            }),
            _ => None,
        };
        let meta = CheckpointMeta {
            encoder: self.encoder.clone(),
            config: self.config.clone(),
            seed: self.config.seed,
            prototypes_initialized: self.prototypes_initialized,
            trace: self.trace.clone(),
            loss_summary: summary,
        };
        save_model(dir, CHECKPOINT_KIND, &self.params, &meta)?;
        self.trace.write_csv(&dir.join("losses.csv"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = read_manifest::<CheckpointMeta>(dir, CHECKPOINT_KIND)?;
        let meta = &manifest.meta;
        let mut params = PretrainParams::init(&meta.encoder, &meta.config);
        load_into(dir, &manifest, &mut params)?;
        Ok(Self {
            encoder: meta.encoder.clone(),
            config: meta.config.clone(),
            params,
            prototypes_initialized: meta.prototypes_initialized,
            trace: meta.trace.clone(),
        })
    }
}

fn concat_embeddings(tape: &mut Tape, hg: Option<Var>, hl: Option<Var>) -> Var {
    match (hg, hl) {
        (Some(g), Some(l)) => tape.concat_cols(g, l),
        (Some(g), None) => g,
        (None, Some(l)) => l,
        (None, None) => unreachable!("at least one encoder is present"),
    }
}

fn check_finite(tape: &Tape, v: Var, term: &str, epoch: usize) -> Result<f64> {
    let value = tape.scalar_value(v);
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite {
            term: term.to_string(),
            epoch,
        })
    }
}

/// Runs the full pre-training schedule and returns the learned parameters with their loss trace.
pub fn pretrain(
    graph: &SocialGraph,
    config: &PretrainConfig,
    encoder: &EncoderConfig,
) -> Result<PretrainCheckpoint> {
    config.validate()?;
    encoder.validate()?;
    encoder.check_graph(graph)?;
    graph.ensure_valid()?;
    let n = graph.num_nodes;
    if config.cluster_active() && n < config.num_prototypes {
        return Err(Error::InvalidArgument(format!(
            "N={n} is smaller than the prototype count {}",
            config.num_prototypes
        )));
    }

    let act = encoder.activation;
    let set = config.encoders;
    let structure = GraphStructure::new(graph);
    let x = graph.features_f64();
    let mut params = PretrainParams::init(encoder, config);
    let mut adam = Adam::new(config.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_0F_B07);
    let mut trace = PretrainTrace::default();
    let mut initialized = false;
    let mut target: Option<Rc<Matrix>> = None;
    let w = config.weights;

    for e in 0..config.epochs() {
        let epoch = e + 1;
        let rate = config.schedule.rate_at(e)?;
        let cluster_on = config.cluster_active() && e >= config.warmup_epochs;

        if cluster_on && !initialized {
            let (hg, hl) = params.embed(graph, act)?;
            let h = match (hg, hl) {
                (Some(g), Some(l)) => ndarray::concatenate(ndarray::Axis(1), &[g.view(), l.view()])
                    .expect("equal row counts"),
                (Some(g), None) => g,
                (None, Some(l)) => l,
                (None, None) => unreachable!(),
            };
            let (protos, _) =
                kmeans_init(&h, config.num_prototypes, config.alpha, config.update_interval, &mut rng)?;
            params.prototypes = protos.centers;
            initialized = true;
            trace.kmeans_epoch = Some(epoch);
        }

        let masked = if set.has_graph_aware() && w.neighbor > 0.0 {
            sample_mask(n, rate, &mut rng)
        } else {
            Vec::new()
        };
        let drop = (set.has_graph_agnostic() && w.ego > 0.0)
            .then(|| dropout_mask(n, graph.feature_dim(), config.dropout_p, &mut rng));

        let mut tape = Tape::new();
        let bound = params.map("", &mut |_, m| tape.leaf(m.clone()));
        let xv = tape.leaf(x.clone());
        let mut terms: Vec<Var> = Vec::new();
        let mut losses = EpochLosses {
            epoch,
            mask_rate: rate,
            neighbor: 0.0,
            ego: 0.0,
            semantic: 0.0,
            cluster: 0.0,
            total: 0.0,
        };

        if let (Some(aware), false) = (&bound.graph_aware, masked.is_empty()) {
            let mut flags = vec![false; n];
            for &i in &masked {
                flags[i] = true;
            }
            let x_masked = tape.replace_rows(xv, bound.mask_token, Rc::new(flags));
            let h = graph_aware_forward_tape(&mut tape, aware, &structure, x_masked, act);
            let z = decode_g_tape(&mut tape, &bound.decoders, h, act);
            let l = neighbor_recon_tape(&mut tape, xv, z, Rc::new(masked));
            losses.neighbor = check_finite(&tape, l, "L_N", epoch)?;
            terms.push(tape.scale(l, w.neighbor));
        }

        if let (Some(agnostic), Some(drop)) = (&bound.graph_agnostic, drop) {
            let x_corrupt = tape.mul_const(xv, Rc::new(drop));
            let h = graph_agnostic_forward_tape(&mut tape, agnostic, x_corrupt, act);
            let z = decode_l_tape(&mut tape, &bound.decoders, h);
            let l = ego_recon_tape(&mut tape, xv, z);
            losses.ego = check_finite(&tape, l, "L_E", epoch)?;
            terms.push(tape.scale(l, w.ego));
        }

        let need_clean = (set == EncoderSet::Dual && w.semantic > 0.0) || cluster_on;
        if need_clean {
            let hg = bound
                .graph_aware
                .as_ref()
                .map(|p| graph_aware_forward_tape(&mut tape, p, &structure, xv, act));
            let hl = bound
                .graph_agnostic
                .as_ref()
                .map(|p| graph_agnostic_forward_tape(&mut tape, p, xv, act));

            if let (Some(g), Some(l), true) = (hg, hl, w.semantic > 0.0) {
                let s = semantic_consistency_tape(&mut tape, g, l, config.standardize_semantic);
                losses.semantic = check_finite(&tape, s, "L_S", epoch)?;
                terms.push(tape.scale(s, w.semantic));
            }

            if cluster_on {
                let h = concat_embeddings(&mut tape, hg, hl);
                let q = tape.student_t_assign(h, bound.prototypes, config.alpha);
                if target.is_none() || e % config.update_interval == 0 {
                    let p = target_distribution(tape.value(q)).map_err(|err| match err {
                        Error::EmptySoftCluster(j) => Error::TrainingAborted(format!(
                            "prototype {j} lost all soft assignment mass at epoch {epoch}"
                        )),
                        other => other,
                    })?;
                    target = Some(Rc::new(p));
                    trace.target_refreshes.push(epoch);
                }
                let p = Rc::clone(target.as_ref().expect("target set above"));
                let l = tape.kl_div(p, q, KL_FLOOR);
                losses.cluster = check_finite(&tape, l, "L_C", epoch)?;
                terms.push(tape.scale(l, w.cluster));
            }
        }

        let Some((&first, rest)) = terms.split_first() else {
            trace.epochs.push(losses);
            continue;
        };
        let mut total = first;
        for &t in rest {
            total = tape.add(total, t);
        }
        losses.total = check_finite(&tape, total, "L_P", epoch)?;
        trace.epochs.push(losses);

        let grads = tape.backward(total);
        let grad_tree = bound.map("", &mut |_, v| grads.wrt(*v));
        adam.step(&mut params, &grad_tree);
    }

    quantize(&mut params);
    Ok(PretrainCheckpoint {
        encoder: encoder.clone(),
        config: config.clone(),
        params,
        prototypes_initialized: initialized,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, preset, SynthConfig};

    fn tiny() -> SocialGraph {
        let config = SynthConfig {
            num_nodes: 40,
            feature_dim: 6,
            mean_degree: 4.0,
            num_topo_communities: 4,
            seed: 11,
            ..SynthConfig::default()
        };
        generate(&config).unwrap().0.graph
    }

    fn quick(epochs: usize, warmup: usize) -> PretrainConfig {
        PretrainConfig {
            schedule: MaskSchedule {
                p_start: 0.3,
                p_end: 0.6,
                total_epochs: epochs,
            },
            warmup_epochs: warmup,
            num_prototypes: 3,
            seed: 5,
            ..PretrainConfig::default()
        }
    }

    fn encoder_for(graph: &SocialGraph) -> EncoderConfig {
        EncoderConfig {
            hidden_dim: 8,
            ..EncoderConfig::for_graph(graph)
        }
    }

    #[test]
    fn identical_seeds_give_identical_checkpoints() {
        let g = tiny();
        let enc = encoder_for(&g);
        let a = pretrain(&g, &quick(2, 0), &enc).unwrap();
        let b = pretrain(&g, &quick(2, 0), &enc).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn target_refreshes_follow_interval() {
        let g = tiny();
        let ckpt = pretrain(&g, &quick(20, 0), &encoder_for(&g)).unwrap();
        assert_eq!(ckpt.trace.target_refreshes, vec![1, 6, 11, 16]);
        assert_eq!(ckpt.trace.kmeans_epoch, Some(1));
    }

    #[test]
    fn warmup_defers_cluster_term() {
        let g = tiny();
        let ckpt = pretrain(&g, &quick(12, 4), &encoder_for(&g)).unwrap();
        assert_eq!(ckpt.trace.kmeans_epoch, Some(5));
        assert!(ckpt.trace.epochs[..4].iter().all(|e| e.cluster == 0.0));
        assert!(ckpt.trace.epochs[4..].iter().all(|e| e.cluster > 0.0));
        assert_eq!(ckpt.trace.target_refreshes, vec![5, 6, 11]);
    }

    #[test]
    fn zero_cluster_weight_leaves_trace_column_zero() {
        let g = tiny();
        let mut config = quick(6, 0);
        config.weights.cluster = 0.0;
        let ckpt = pretrain(&g, &config, &encoder_for(&g)).unwrap();
        assert!(ckpt.trace.epochs.iter().all(|e| e.cluster == 0.0));
        assert!(!ckpt.prototypes_initialized);
    }

    #[test]
    fn single_encoder_sets_drop_branch_terms() {
        let g = tiny();
        let mut config = quick(4, 0);
        config.encoders = EncoderSet::GraphAwareOnly;
        let ckpt = pretrain(&g, &config, &encoder_for(&g)).unwrap();
        assert!(ckpt.params.graph_agnostic.is_none());
        assert!(ckpt.trace.epochs.iter().all(|e| e.ego == 0.0 && e.semantic == 0.0));
        assert_eq!(ckpt.params.prototypes.ncols(), 8);
    }

    #[test]
    fn checkpoint_round_trip_is_identity() {
        let g = tiny();
        let ckpt = pretrain(&g, &quick(3, 0), &encoder_for(&g)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ckpt.save(dir.path()).unwrap();
        let back = PretrainCheckpoint::load(dir.path()).unwrap();
        assert_eq!(back.params, ckpt.params);
        assert_eq!(back.config, ckpt.config);
        assert_eq!(back.encoder, ckpt.encoder);
        assert_eq!(back.trace, ckpt.trace);
        assert_eq!(back, ckpt);
        let csv = std::fs::read_to_string(dir.path().join("losses.csv")).unwrap();
        assert!(csv.starts_with("epoch,L_N,L_E,L_S,L_C,L_P"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn too_few_nodes_for_prototypes() {
        let g = tiny();
        let mut config = quick(3, 0);
        config.num_prototypes = 41;
        assert!(pretrain(&g, &config, &encoder_for(&g)).is_err());
    }

    #[test]
    fn pretraining_reduces_total_loss() {
        let config = SynthConfig {
            num_nodes: 200,
            ..preset("camouflage").unwrap()
        };
        let g = generate(&config).unwrap().0.graph;
        let ckpt = pretrain(&g, &quick(50, 5), &EncoderConfig::for_graph(&g)).unwrap();
        let first = ckpt.trace.epochs.first().unwrap().total;
        let last = ckpt.trace.epochs.last().unwrap().total;
        assert!(last < first, "{first} -> {last}");
    }
}
