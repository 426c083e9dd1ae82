//! Supervised adaptation: attention fusion of the two embeddings, a linear
//! logistic head, and binary cross-entropy with L2 on every trainable tensor.

use std::path::Path;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Matrix, Tape, Var};
use crate::checkpoint::{load_into, quantize, read_manifest, save_model};
use crate::encoders::{
    graph_agnostic_forward_tape, graph_aware_forward_tape, init_params, uniform, EncoderConfig,
    GraphAgnosticParams, GraphAwareParams, ParamTree,
};
use crate::error::{Error, Result};
use crate::eval::metrics::metrics_on;
use crate::graph::{GraphStructure, SocialGraph};
use crate::optim::{Adam, AdamConfig};
use crate::pretext::{EncoderSet, PretrainCheckpoint};

/// Probability clip used inside the cross-entropy.
pub const BCE_CLIP: f64 = 1e-7;

/// Attention that scores each embedding with `qᵀ tanh(W h + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams<T = Matrix> {
    /// `d_a × 1`
    pub q: T,
    /// `d_h × d_a`
    pub w: T,
    /// `1 × d_a`
    pub b: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T = Matrix> {
    /// `d_h × 1`
    pub w: T,
    /// `1 × 1`
    pub b: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneParams<T = Matrix> {
    pub graph_aware: Option<GraphAwareParams<T>>,
    pub graph_agnostic: Option<GraphAgnosticParams<T>>,
    /// Present only when both encoders are.
    pub fusion: Option<FusionParams<T>>,
    pub head: HeadParams<T>,
}

fn join(prefix: &str, s: &str) -> String {
    if prefix.is_empty() {
        s.to_string()
    } else {
        format!("{prefix}.{s}")
    }
}

impl<T> ParamTree<T> for FusionParams<T> {
    type Mapped<U> = FusionParams<U>;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        f(join(prefix, "q"), &self.q);
        f(join(prefix, "w"), &self.w);
        f(join(prefix, "b"), &self.b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        f(join(prefix, "q"), &mut self.q);
        f(join(prefix, "w"), &mut self.w);
        f(join(prefix, "b"), &mut self.b);
    }

    fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(String, &T) -> U) -> FusionParams<U> {
        FusionParams {
            q: f(join(prefix, "q"), &self.q),
            w: f(join(prefix, "w"), &self.w),
            b: f(join(prefix, "b"), &self.b),
        }
    }
}

impl<T> ParamTree<T> for HeadParams<T> {
    type Mapped<U> = HeadParams<U>;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        f(join(prefix, "w"), &self.w);
        f(join(prefix, "b"), &self.b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        f(join(prefix, "w"), &mut self.w);
        f(join(prefix, "b"), &mut self.b);
    }

    fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(String, &T) -> U) -> HeadParams<U> {
        HeadParams {
            w: f(join(prefix, "w"), &self.w),
            b: f(join(prefix, "b"), &self.b),
        }
    }
}

impl<T> ParamTree<T> for FinetuneParams<T> {
    type Mapped<U> = FinetuneParams<U>;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        if let Some(g) = &self.graph_aware {
            g.visit(&join(prefix, "graph_aware"), f);
        }
        if let Some(l) = &self.graph_agnostic {
            l.visit(&join(prefix, "graph_agnostic"), f);
        }
        if let Some(u) = &self.fusion {
            u.visit(&join(prefix, "fusion"), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        if let Some(g) = &mut self.graph_aware {
            g.visit_mut(&join(prefix, "graph_aware"), f);
        }
        if let Some(l) = &mut self.graph_agnostic {
            l.visit_mut(&join(prefix, "graph_agnostic"), f);
        }
        if let Some(u) = &mut self.fusion {
            u.visit_mut(&join(prefix, "fusion"), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }

    fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(String, &T) -> U) -> FinetuneParams<U> {
        FinetuneParams {
            graph_aware: self.graph_aware.as_ref().map(|g| g.map(&join(prefix, "graph_aware"), f)),
            graph_agnostic: self
                .graph_agnostic
                .as_ref()
                .map(|l| l.map(&join(prefix, "graph_agnostic"), f)),
            fusion: self.fusion.as_ref().map(|u| u.map(&join(prefix, "fusion"), f)),
            head: self.head.map(&join(prefix, "head"), f),
        }
    }
}

/// Fusion scores `s = tanh(H W + b) q` as an `N×1` column.
pub fn fusion_scores_tape(tape: &mut Tape, p: &FusionParams<Var>, h: Var) -> Var {
    let a = tape.matmul(h, p.w);
    let a = tape.add_row(a, p.b);
    let a = tape.activate(a, Activation::Tanh);
    tape.matmul(a, p.q)
}

/// Returns `(U, α^g)`. The two-way softmax equals `σ(s^g − s^l)`.
pub fn fuse_tape(tape: &mut Tape, p: &FusionParams<Var>, hg: Var, hl: Var) -> (Var, Var) {
    let sg = fusion_scores_tape(tape, p, hg);
    let sl = fusion_scores_tape(tape, p, hl);
    let diff = tape.sub(sg, sl);
    let alpha = tape.activate(diff, Activation::Sigmoid);
    let delta = tape.sub(hg, hl);
    let weighted = tape.mul_col(delta, alpha);
    (tape.add(hl, weighted), alpha)
}

/// Attention fusion of two `N×d_h` embeddings.
pub fn fuse(hg: &Matrix, hl: &Matrix, params: &FusionParams) -> Result<Matrix> {
    fuse_with_weights(hg, hl, params).map(|(u, _)| u)
}

/// Fused embeddings together with the per-row weight `α^g` (`α^l = 1 − α^g`).
pub fn fuse_with_weights(hg: &Matrix, hl: &Matrix, params: &FusionParams) -> Result<(Matrix, Vec<f64>)> {
    if hg.dim() != hl.dim() {
        return Err(Error::shape("fusion inputs", format!("{:?}", hg.dim()), format!("{:?}", hl.dim())));
    }
    let d_a = params.w.ncols();
    if params.w.nrows() != hg.ncols() || params.q.dim() != (d_a, 1) || params.b.dim() != (1, d_a) {
        return Err(Error::shape(
            "fusion params",
            format!("W {}×d_a, q d_a×1, b 1×d_a", hg.ncols()),
            format!("W {:?}, q {:?}, b {:?}", params.w.dim(), params.q.dim(), params.b.dim()),
        ));
    }
    let mut tape = Tape::new();
    let p = params.map("", &mut |_, m| tape.leaf(m.clone()));
    let g = tape.leaf(hg.clone());
    let l = tape.leaf(hl.clone());
    let (u, alpha) = fuse_tape(&mut tape, &p, g, l);
    Ok((tape.value(u).clone(), tape.value(alpha).column(0).to_vec()))
}

/// Mean binary cross-entropy over `(probability, label)` pairs plus `λ · ‖θ‖²`.
pub fn loss_finetune(probabilities: &[f64], labels: &[f64], param_sq_norm: f64, lambda: f64) -> Result<f64> {
    if probabilities.len() != labels.len() {
        return Err(Error::shape("fine-tuning loss", labels.len(), probabilities.len()));
    }
    if probabilities.is_empty() {
        return Err(Error::InvalidArgument("fine-tuning loss over zero nodes".into()));
    }
    let mut total = 0.0;
    for (i, (&p, &y)) in probabilities.iter().zip(labels).enumerate() {
        let p = p.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument(format!("probability at {i} is not in (0, 1)")));
        }
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(total / probabilities.len() as f64 + lambda * param_sq_norm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub l2_lambda: f64,
    pub optimizer: AdamConfig,
    pub epochs: usize,
    /// Stop after this many epochs without a validation improvement; 0 disables early stopping.
    pub patience: usize,
    /// Encoders used when training from scratch; a checkpoint fixes its own.
    pub encoders: EncoderSet,
    /// Attention width; defaults to `d_h`.
    pub fusion_dim: Option<usize>,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            l2_lambda: 5e-4,
            optimizer: AdamConfig::default(),
            epochs: 200,
            patience: 50,
            encoders: EncoderSet::Dual,
            fusion_dim: None,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("fine-tuning needs at least one epoch".into()));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("l2_lambda {} must be >= 0", self.l2_lambda)));
        }
        if self.fusion_dim == Some(0) {
            return Err(Error::InvalidArgument("fusion_dim must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1: Option<f64>,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FinetuneTrace {
    pub epochs: Vec<FinetuneEpoch>,
    /// One-based epoch whose parameters were kept.
    pub selected_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub encoder: EncoderConfig,
    pub config: FinetuneConfig,
    pub encoders: EncoderSet,
    pub pretrained: bool,
    pub params: FinetuneParams,
    pub trace: FinetuneTrace,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelMeta {
    encoder: EncoderConfig,
    config: FinetuneConfig,
    encoders: EncoderSet,
    pretrained: bool,
    seed: u64,
    trace: FinetuneTrace,
}

const MODEL_KIND: &str = "trained-model";

/// Clean embeddings of a model: fused `U` plus whichever branch outputs exist.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub u: Matrix,
    pub hg: Option<Matrix>,
    pub hl: Option<Matrix>,
}

struct Forward {
    prob: Var,
    u: Var,
    hg: Option<Var>,
    hl: Option<Var>,
}

fn forward_tape(
    tape: &mut Tape,
    p: &FinetuneParams<Var>,
    structure: &GraphStructure,
    x: Var,
    act: Activation,
) -> Forward {
    let hg = p
        .graph_aware
        .as_ref()
        .map(|g| graph_aware_forward_tape(tape, g, structure, x, act));
    let hl = p
        .graph_agnostic
        .as_ref()
        .map(|l| graph_agnostic_forward_tape(tape, l, x, act));
    let u = match (hg, hl, &p.fusion) {
        (Some(g), Some(l), Some(f)) => fuse_tape(tape, f, g, l).0,
        (Some(g), None, _) => g,
        (None, Some(l), _) => l,
        _ => unreachable!("parameter trees always hold a usable branch"),
    };
    let logit = tape.matmul(u, p.head.w);
    let logit = tape.add_row(logit, p.head.b);
    let prob = tape.activate(logit, Activation::Sigmoid);
    Forward { prob, u, hg, hl }
}

fn l2_tape(tape: &mut Tape, p: &FinetuneParams<Var>) -> Var {
    let mut vars = Vec::new();
    p.visit("", &mut |_, v| vars.push(*v));
    let mut total = tape.sq_sum(vars[0]);
    for &v in &vars[1..] {
        let s = tape.sq_sum(v);
        total = tape.add(total, s);
    }
    total
}

impl TrainedModel {
    fn check_graph(&self, graph: &SocialGraph) -> Result<()> {
        self.encoder.check_graph(graph)
    }

    /// Clean forward pass returning the fused and per-branch embeddings.
    pub fn embed(&self, graph: &SocialGraph) -> Result<Embeddings> {
        self.check_graph(graph)?;
        let (_, e) = self.run(graph);
        Ok(e)
    }

    fn run(&self, graph: &SocialGraph) -> (Vec<f64>, Embeddings) {
        let structure = GraphStructure::new(graph);
        let mut tape = Tape::new();
        let p = self.params.map("", &mut |_, m| tape.leaf(m.clone()));
        let x = tape.leaf(graph.features_f64());
        let f = forward_tape(&mut tape, &p, &structure, x, self.encoder.activation);
        let probs = tape.value(f.prob).column(0).to_vec();
        let e = Embeddings {
            u: tape.value(f.u).clone(),
            hg: f.hg.map(|v| tape.value(v).clone()),
            hl: f.hl.map(|v| tape.value(v).clone()),
        };
        (probs, e)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let meta = ModelMeta {
            encoder: self.encoder.clone(),
            config: self.config.clone(),
            encoders: self.encoders,
            pretrained: self.pretrained,
            seed: self.config.seed,
            trace: self.trace.clone(),
        };
        save_model(dir, MODEL_KIND, &self.params, &meta)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = read_manifest::<ModelMeta>(dir, MODEL_KIND)?;
        let meta = &manifest.meta;
        let mut params = init_finetune_params(&meta.encoder, &meta.config, meta.encoders, None);
        load_into(dir, &manifest, &mut params)?;
        Ok(Self {
            encoder: meta.encoder.clone(),
            config: meta.config.clone(),
            encoders: meta.encoders,
            pretrained: meta.pretrained,
            params,
            trace: meta.trace.clone(),
        })
    }
}

/// Per-node bot probabilities from a clean forward pass.
pub fn predict(model: &TrainedModel, graph: &SocialGraph) -> Result<Vec<f64>> {
    model.check_graph(graph)?;
    Ok(model.run(graph).0)
}

/// Writes `node,probability,label` with the label decided at 0.5.
pub fn write_predictions(path: &Path, probabilities: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::malformed(path, e.to_string()))?;
    w.write_record(["node", "probability", "label"])?;
    for (i, &p) in probabilities.iter().enumerate() {
        w.write_record([i.to_string(), p.to_string(), i8::from(p >= 0.5).to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn init_finetune_params(
    encoder: &EncoderConfig,
    config: &FinetuneConfig,
    set: EncoderSet,
    checkpoint: Option<&PretrainCheckpoint>,
) -> FinetuneParams {
    let (aware, agnostic, _) = init_params(encoder, config.seed);
    let (aware, agnostic) = match checkpoint {
        Some(c) => (c.params.graph_aware.clone(), c.params.graph_agnostic.clone()),
        None => (
            set.has_graph_aware().then_some(aware),
            set.has_graph_agnostic().then_some(agnostic),
        ),
    };
    let h = encoder.hidden_dim;
    let d_a = config.fusion_dim.unwrap_or(h);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xF1_7E);
    let fusion = (set == EncoderSet::Dual).then(|| FusionParams {
        q: uniform(&mut rng, d_a, 1, d_a),
        w: uniform(&mut rng, h, d_a, h),
        b: Matrix::zeros((1, d_a)),
    });
    let head = HeadParams {
        w: uniform(&mut rng, h, 1, h),
        b: Matrix::zeros((1, 1)),
    };
    FinetuneParams {
        graph_aware: aware,
        graph_agnostic: agnostic,
        fusion,
        head,
    }
}

fn sigmoid_probs(tape: &Tape, v: Var) -> Vec<f64> {
    tape.value(v).column(0).to_vec()
}

fn split_loss(probs: &[f64], targets: &[(usize, f64)]) -> f64 {
    let (p, y): (Vec<f64>, Vec<f64>) = targets.iter().map(|&(i, y)| (probs[i], y)).unzip();
    loss_finetune(&p, &y, 0.0, 0.0).unwrap_or(f64::INFINITY)
}

/// Trains encoders, fusion and head on the train split. Starts from the
/// checkpoint's encoders when one is given, otherwise from random weights.
pub fn finetune(
    graph: &SocialGraph,
    checkpoint: Option<&PretrainCheckpoint>,
    config: &FinetuneConfig,
    encoder: &EncoderConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    graph.ensure_valid()?;
    let encoder = match checkpoint {
        Some(c) => {
            if &c.encoder != encoder {
                log::warn!("fine-tuning uses the checkpoint's encoder config");
            }
            c.encoder.clone()
        }
        None => {
            encoder.validate()?;
            encoder.clone()
        }
    };
    encoder.check_graph(graph)?;
    if graph.splits.train.is_empty() {
        return Err(Error::InvalidArgument("train split is empty".into()));
    }
    let train = Rc::new(graph.labeled(&graph.splits.train)?);
    let val = graph.labeled(&graph.splits.val)?;
    let set = checkpoint.map_or(config.encoders, |c| c.config.encoders);

    let act = encoder.activation;
    let structure = GraphStructure::new(graph);
    let x = graph.features_f64();
    let mut params = init_finetune_params(&encoder, config, set, checkpoint);
    let mut adam = Adam::new(config.optimizer);
    let mut trace = FinetuneTrace::default();
    let mut best: Option<(f64, f64, usize, FinetuneParams)> = None;

    for e in 0..config.epochs {
        let epoch = e + 1;
        let mut tape = Tape::new();
        let p = params.map("", &mut |_, m| tape.leaf(m.clone()));
        let xv = tape.leaf(x.clone());
        let f = forward_tape(&mut tape, &p, &structure, xv, act);
        let bce = tape.bce(f.prob, Rc::clone(&train), BCE_CLIP);
        let l2 = l2_tape(&mut tape, &p);
        let reg = tape.scale(l2, config.l2_lambda);
        let loss = tape.add(bce, reg);
        let train_loss = tape.scalar_value(loss);
        if !train_loss.is_finite() {
            return Err(Error::NonFinite {
                term: "L_F".into(),
                epoch,
            });
        }

        // validation scores the parameters that produced this forward pass
        let probs = sigmoid_probs(&tape, f.prob);
        let (val_f1, val_loss) = if val.is_empty() {
            (None, None)
        } else {
            let f1 = metrics_on(&probs, &graph.labels, &graph.splits.val)?.f1;
            (Some(f1), Some(split_loss(&probs, &val)))
        };
        trace.epochs.push(FinetuneEpoch {
            epoch,
            train_loss,
            val_f1,
            val_loss,
        });
        if let (Some(f1), Some(vl)) = (val_f1, val_loss) {
            let better = match &best {
                None => true,
                Some((bf, bl, _, _)) => f1 > *bf || (f1 == *bf && vl < *bl),
            };
            if better {
                best = Some((f1, vl, epoch, params.clone()));
            } else if config.patience > 0 {
                let since = epoch - best.as_ref().map_or(0, |b| b.2);
                if since >= config.patience {
                    break;
                }
            }
        }

        let grads = tape.backward(loss);
        let g = p.map("", &mut |_, v| grads.wrt(*v));
        adam.step(&mut params, &g);
    }

    let (selected_epoch, mut params) = match best {
        Some((_, _, epoch, p)) => (epoch, p),
        // no validation split: keep the final parameters
        None => (trace.epochs.len(), params),
    };
    trace.selected_epoch = selected_epoch;
    quantize(&mut params);
    Ok(TrainedModel {
        encoder,
        config: config.clone(),
        encoders: set,
        pretrained: checkpoint.is_some(),
        params,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::squared_norm;
    use crate::graph::Splits;
    use crate::synth::{generate, SynthConfig};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};

    fn fusion_1d(w: f64, q: f64) -> FusionParams {
        FusionParams {
            q: array![[q]],
            w: array![[w]],
            b: array![[0.0]],
        }
    }

    #[test]
    fn fusion_of_equal_inputs_is_identity() {
        let h = array![[1.0, -2.0], [0.5, 3.0]];
        let p = FusionParams {
            q: array![[0.7], [-1.3]],
            w: array![[0.2, 1.0], [-0.4, 0.9]],
            b: array![[0.1, -0.1]],
        };
        assert_eq!(fuse(&h, &h, &p).unwrap(), h);
    }

    #[test]
    fn equal_scores_give_the_mean() {
        let (u, a) = fuse_with_weights(&array![[2.0]], &array![[4.0]], &fusion_1d(1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(a[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(u[[0, 0]], 3.0, epsilon = 1e-15);
    }

    #[test]
    fn score_gap_of_ln3_weights_three_to_one() {
        // h^l = 0 gives s^l = 0; choose q so that s^g = q·tanh(1) = ln 3
        let q = 3f64.ln() / 1f64.tanh();
        let hg = array![[1.0]];
        let hl = array![[0.0]];
        let (u, a) = fuse_with_weights(&hg, &hl, &fusion_1d(1.0, q)).unwrap();
        assert_abs_diff_eq!(a[0], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(u[[0, 0]], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn fusion_weights_are_convex_and_shift_invariant() {
        let hg = array![[1.0, 0.0], [0.3, -0.8], [5.0, 5.0]];
        let hl = array![[0.0, 2.0], [-1.0, 0.1], [0.0, 0.0]];
        let p = FusionParams {
            q: array![[2.0], [-1.0]],
            w: array![[0.5, -0.3], [0.8, 1.1]],
            b: array![[0.2, 0.0]],
        };
        let (_, a) = fuse_with_weights(&hg, &hl, &p).unwrap();
        assert!(a.iter().all(|&v| v > 0.0 && v < 1.0));
        // σ(s^g − s^l) depends only on the score difference
        let s = |h: &Matrix| (h.dot(&p.w) + &p.b).mapv(f64::tanh).dot(&p.q);
        let (sg, sl) = (s(&hg), s(&hl));
        for i in 0..3 {
            let shifted = (sg[[i, 0]] + 7.0, sl[[i, 0]] + 7.0);
            let softmax = shifted.0.exp() / (shifted.0.exp() + shifted.1.exp());
            assert_abs_diff_eq!(a[i], softmax, epsilon = 1e-12);
        }
    }

    #[test]
    fn fusion_shape_mismatch() {
        assert!(fuse(&array![[1.0]], &array![[1.0, 2.0]], &fusion_1d(1.0, 1.0)).is_err());
    }

    #[test]
    fn bce_cases() {
        assert_abs_diff_eq!(loss_finetune(&[0.5], &[1.0], 0.0, 0.0).unwrap(), 2f64.ln(), epsilon = 1e-12);
        assert!(loss_finetune(&[1.0, 0.0], &[1.0, 0.0], 0.0, 0.0).unwrap() <= 1e-6);
        assert_eq!(loss_finetune(&[0.5], &[1.0], 0.0, 3.0).unwrap(), 2f64.ln());
        assert!(loss_finetune(&[f64::NAN], &[1.0], 0.0, 0.0).is_err());
    }

    fn separable(n: usize) -> SocialGraph {
        let labels: Vec<i8> = (0..n).map(|i| (i % 2) as i8).collect();
        let features = Array2::from_shape_fn((n, 3), |(i, j)| {
            let sign = if labels[i] == 1 { 1.0 } else { -1.0 };
            (sign * (1.0 + 0.1 * j as f64) + 0.05 * (i as f64 / n as f64)) as f32
        });
        let edges = vec![(0..n).map(|i| (i, (i + 1) % n)).collect()];
        SocialGraph {
            num_nodes: n,
            features,
            relations: vec!["follow".into()],
            edges,
            labels,
            splits: Splits {
                train: (0..n).collect(),
                val: vec![],
                test: vec![],
            },
        }
    }

    fn small_encoder(g: &SocialGraph) -> EncoderConfig {
        EncoderConfig {
            hidden_dim: 8,
            ..EncoderConfig::for_graph(g)
        }
    }

    #[test]
    fn zero_head_predicts_one_half() {
        let g = separable(6);
        let config = FinetuneConfig {
            epochs: 1,
            ..FinetuneConfig::default()
        };
        let mut model = finetune(&g, None, &config, &small_encoder(&g)).unwrap();
        model.params.head.w.fill(0.0);
        model.params.head.b.fill(0.0);
        assert!(predict(&model, &g).unwrap().iter().all(|&p| p == 0.5));
        model.params.head.b.fill(50.0);
        assert!(predict(&model, &g).unwrap().iter().all(|&p| p > 1.0 - 1e-12));
    }

    #[test]
    fn separable_graph_is_fit_exactly() {
        let g = separable(20);
        let config = FinetuneConfig {
            epochs: 200,
            seed: 1,
            ..FinetuneConfig::default()
        };
        let model = finetune(&g, None, &config, &small_encoder(&g)).unwrap();
        let probs = predict(&model, &g).unwrap();
        let m = metrics_on(&probs, &g.labels, &g.splits.train).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(model.trace.selected_epoch, model.trace.epochs.len());
    }

    #[test]
    fn finetune_is_deterministic_and_persists() {
        let g = generate(&SynthConfig {
            num_nodes: 60,
            feature_dim: 4,
            mean_degree: 4.0,
            seed: 2,
            ..SynthConfig::default()
        })
        .unwrap()
        .0
        .graph;
        let config = FinetuneConfig {
            epochs: 15,
            ..FinetuneConfig::default()
        };
        let enc = small_encoder(&g);
        let a = finetune(&g, None, &config, &enc).unwrap();
        let b = finetune(&g, None, &config, &enc).unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path()).unwrap();
        let back = TrainedModel::load(dir.path()).unwrap();
        assert_eq!(back, a);
        assert_eq!(predict(&back, &g).unwrap(), predict(&a, &g).unwrap());
    }

    #[test]
    fn empty_train_split_is_rejected() {
        let mut g = separable(6);
        g.splits.train.clear();
        assert!(finetune(&g, None, &FinetuneConfig::default(), &small_encoder(&g)).is_err());
    }

    #[test]
    fn stronger_l2_shrinks_weights() {
        let g = separable(20);
        let norms: Vec<f64> = [0.0, 0.05, 0.5]
            .iter()
            .map(|&l2_lambda| {
                let config = FinetuneConfig {
                    epochs: 150,
                    l2_lambda,
                    ..FinetuneConfig::default()
                };
                squared_norm(&finetune(&g, None, &config, &small_encoder(&g)).unwrap().params)
            })
            .collect();
        assert!(norms[0] > norms[1] && norms[1] > norms[2], "{norms:?}");
    }

    #[test]
    fn single_encoder_models_skip_fusion() {
        let g = separable(10);
        let config = FinetuneConfig {
            epochs: 2,
            encoders: EncoderSet::GraphAwareOnly,
            ..FinetuneConfig::default()
        };
        let model = finetune(&g, None, &config, &small_encoder(&g)).unwrap();
        assert!(model.params.fusion.is_none() && model.params.graph_agnostic.is_none());
        let e = model.embed(&g).unwrap();
        assert_eq!(Some(&e.u), e.hg.as_ref());
        assert!(e.hl.is_none());
    }

    #[test]
    fn checkpoint_supplies_the_encoder_weights() {
        let graph = generate(&SynthConfig { num_nodes: 60, feature_dim: 4, num_topo_communities: 2, ..SynthConfig::default() })
            .unwrap()
            .0
            .graph;
        let encoder = EncoderConfig { hidden_dim: 6, ..EncoderConfig::for_graph(&graph) };
        let mut pre = crate::pretext::PretrainConfig { num_prototypes: 2, warmup_epochs: 1, ..Default::default() };
        pre.schedule.total_epochs = 3;
        let ckpt = crate::pretext::pretrain(&graph, &pre, &encoder).unwrap();
        let config = FinetuneConfig::default();
        let from_ckpt = init_finetune_params(&encoder, &config, EncoderSet::Dual, Some(&ckpt));
        assert_eq!(from_ckpt.graph_aware, ckpt.params.graph_aware);
        assert_eq!(from_ckpt.graph_agnostic, ckpt.params.graph_agnostic);
        let scratch = init_finetune_params(&encoder, &config, EncoderSet::Dual, None);
        assert_ne!(scratch.graph_aware, ckpt.params.graph_aware);
        assert_eq!(scratch.fusion, from_ckpt.fusion);
    }
}
