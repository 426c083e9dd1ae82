//! Dual encoder (graph-aware message passing and graph-agnostic MLP) and the two
//! reconstruction decoders.
//!
//! Parameter containers are generic over their leaf type. The same struct holds
//! `Matrix` values, tape handles (`Var`) during a forward pass, or gradients, so
//! binding to a tape and reading gradients back are both a `map`.
//!
//! Row-vector convention throughout: a layer computes `x · W + b` with `W` of
//! shape `d_in × d_out`.

use std::rc::Rc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{GraphStructure, SocialGraph};

/// Leaky slope inside the attention logits of the relational-attention variant.
pub const ATTENTION_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphAwareVariant {
    #[default]
    RelationalMean,
    RelationalAttention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_relations: usize,
    pub activation: Activation,
    pub variant: GraphAwareVariant,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            feature_dim: 16,
            hidden_dim: 32,
            num_layers: 2,
            num_relations: 2,
            activation: Activation::default(),
            variant: GraphAwareVariant::default(),
        }
    }
}

impl EncoderConfig {
    pub fn for_graph(graph: &SocialGraph) -> Self {
        Self {
            feature_dim: graph.feature_dim(),
            num_relations: graph.num_relations(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden_dim == 0 || self.num_layers == 0 {
            return Err(Error::InvalidArgument(
                "feature_dim, hidden_dim and num_layers must be at least 1".into(),
            ));
        }
        if self.num_relations == 0 {
            return Err(Error::InvalidArgument("num_relations must be at least 1".into()));
        }
        Ok(())
    }

    pub fn check_graph(&self, graph: &SocialGraph) -> Result<()> {
        if graph.feature_dim() != self.feature_dim {
            return Err(Error::shape("feature dimension", self.feature_dim, graph.feature_dim()));
        }
        if graph.num_relations() != self.num_relations {
            return Err(Error::shape("relation count", self.num_relations, graph.num_relations()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphAwareLayer<T = Matrix> {
    pub w_self: T,
    pub w_rel: Vec<T>,
    pub bias: T,
    /// Empty for the relational-mean variant.
    pub att_src: Vec<T>,
    pub att_dst: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphAwareParams<T = Matrix> {
    pub layers: Vec<GraphAwareLayer<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphAgnosticParams<T = Matrix> {
    pub w0: T,
    pub b0: T,
    pub w1: T,
    pub b1: T,
}

/// `decoder_g` is a two-layer MLP, `decoder_l` a single affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams<T = Matrix> {
    pub g_w0: T,
    pub g_b0: T,
    pub g_w1: T,
    pub g_b1: T,
    pub l_w: T,
    pub l_b: T,
}

/// Visiting and mapping over named tensors. Names form the checkpoint registry.
pub trait ParamTree<T> {
    type Mapped<U>;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T));
    fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(String, &T) -> U) -> Self::Mapped<U>;
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<T> ParamTree<T> for GraphAwareParams<T> {
    type Mapped<U> = GraphAwareParams<U>;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        for (k, layer) in self.layers.iter().enumerate() {
            let p = join(prefix, &format!("layer{k}"));
            f(join(&p, "w_self"), &layer.w_self);
            for (r, w) in layer.w_rel.iter().enumerate() {
                f(join(&p, &format!("w_rel{r}")), w);
            }
            f(join(&p, "bias"), &layer.bias);
            for (r, a) in layer.att_src.iter().enumerate() {
                f(join(&p, &format!("att_src{r}")), a);
            }
            for (r, a) in layer.att_dst.iter().enumerate() {
                f(join(&p, &format!("att_dst{r}")), a);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        for (k, layer) in self.layers.iter_mut().enumerate() {
            let p = join(prefix, &format!("layer{k}"));
            f(join(&p, "w_self"), &mut layer.w_self);
            for (r, w) in layer.w_rel.iter_mut().enumerate() {
                f(join(&p, &format!("w_rel{r}")), w);
            }
            f(join(&p, "bias"), &mut layer.bias);
            for (r, a) in layer.att_src.iter_mut().enumerate() {
                f(join(&p, &format!("att_src{r}")), a);
            }
            for (r, a) in layer.att_dst.iter_mut().enumerate() {
                f(join(&p, &format!("att_dst{r}")), a);
            }
        }
    }

    fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(String, &T) -> U) -> GraphAwareParams<U> {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(k, layer)| {
                let p = join(prefix, &format!("layer{k}"));
                GraphAwareLayer {
                    w_self: f(join(&p, "w_self"), &layer.w_self),
                    w_rel: (layer.w_rel.iter().enumerate())
                        .map(|(r, w)| f(join(&p, &format!("w_rel{r}")), w))
                        .collect(),
                    bias: f(join(&p, "bias"), &layer.bias),
                    att_src: (layer.att_src.iter().enumerate())
                        .map(|(r, a)| f(join(&p, &format!("att_src{r}")), a))
                        .collect(),
                    att_dst: (layer.att_dst.iter().enumerate())
                        .map(|(r, a)| f(join(&p, &format!("att_dst{r}")), a))
                        .collect(),
                }
            })
            .collect();
        GraphAwareParams { layers }
    }
}

impl<T> ParamTree<T> for GraphAgnosticParams<T> {
    type Mapped<U> = GraphAgnosticParams<U>;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        f(join(prefix, "w0"), &self.w0);
        f(join(prefix, "b0"), &self.b0);
        f(join(prefix, "w1"), &self.w1);
        f(join(prefix, "b1"), &self.b1);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        f(join(prefix, "w0"), &mut self.w0);
        f(join(prefix, "b0"), &mut self.b0);
        f(join(prefix, "w1"), &mut self.w1);
        f(join(prefix, "b1"), &mut self.b1);
    }

    fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(String, &T) -> U) -> GraphAgnosticParams<U> {
        GraphAgnosticParams {
            w0: f(join(prefix, "w0"), &self.w0),
            b0: f(join(prefix, "b0"), &self.b0),
            w1: f(join(prefix, "w1"), &self.w1),
            b1: f(join(prefix, "b1"), &self.b1),
        }
    }
}

impl<T> ParamTree<T> for DecoderParams<T> {
    type Mapped<U> = DecoderParams<U>;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        f(join(prefix, "decoder_g.w0"), &self.g_w0);
        f(join(prefix, "decoder_g.b0"), &self.g_b0);
        f(join(prefix, "decoder_g.w1"), &self.g_w1);
        f(join(prefix, "decoder_g.b1"), &self.g_b1);
        f(join(prefix, "decoder_l.w"), &self.l_w);
        f(join(prefix, "decoder_l.b"), &self.l_b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        f(join(prefix, "decoder_g.w0"), &mut self.g_w0);
        f(join(prefix, "decoder_g.b0"), &mut self.g_b0);
        f(join(prefix, "decoder_g.w1"), &mut self.g_w1);
        f(join(prefix, "decoder_g.b1"), &mut self.g_b1);
        f(join(prefix, "decoder_l.w"), &mut self.l_w);
        f(join(prefix, "decoder_l.b"), &mut self.l_b);
    }

    fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(String, &T) -> U) -> DecoderParams<U> {
        DecoderParams {
            g_w0: f(join(prefix, "decoder_g.w0"), &self.g_w0),
            g_b0: f(join(prefix, "decoder_g.b0"), &self.g_b0),
            g_w1: f(join(prefix, "decoder_g.w1"), &self.g_w1),
            g_b1: f(join(prefix, "decoder_g.b1"), &self.g_b1),
            l_w: f(join(prefix, "decoder_l.w"), &self.l_w),
            l_b: f(join(prefix, "decoder_l.b"), &self.l_b),
        }
    }
}

impl<T> ParamTree<T> for Option<T> {
    type Mapped<U> = Option<U>;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        if let Some(v) = self {
            f(prefix.to_string(), v);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        if let Some(v) = self {
            f(prefix.to_string(), v);
        }
    }

    fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(String, &T) -> U) -> Option<U> {
        self.as_ref().map(|v| f(prefix.to_string(), v))
    }
}

/// Binds every tensor of a parameter tree to a fresh tape leaf.
pub fn bind<P: ParamTree<Matrix>>(params: &P, tape: &mut Tape) -> P::Mapped<Var> {
    params.map("", &mut |_, m| tape.leaf(m.clone()))
}

/// Collects named tensors in registry order.
pub fn named_tensors<P: ParamTree<Matrix>>(params: &P, prefix: &str) -> Vec<(String, Matrix)> {
    let mut out = Vec::new();
    params.visit(prefix, &mut |name, m| out.push((name, m.clone())));
    out
}

/// Sum of squared entries over every tensor in the tree.
pub fn squared_norm<P: ParamTree<Matrix>>(params: &P) -> f64 {
    let mut total = 0.0;
    params.visit("", &mut |_, m| total += m.iter().map(|v| v * v).sum::<f64>());
    total
}

pub(crate) fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Matrix {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
}

pub fn init_graph_aware(config: &EncoderConfig, rng: &mut ChaCha8Rng) -> GraphAwareParams {
    let h = config.hidden_dim;
    let attention = config.variant == GraphAwareVariant::RelationalAttention;
    let layers = (0..config.num_layers)
        .map(|k| {
            let d_in = if k == 0 { config.feature_dim } else { h };
            let w_self = uniform(rng, d_in, h, d_in);
            let w_rel = (0..config.num_relations).map(|_| uniform(rng, d_in, h, d_in)).collect();
            let (att_src, att_dst) = if attention {
                (
                    (0..config.num_relations).map(|_| uniform(rng, h, 1, h)).collect(),
                    (0..config.num_relations).map(|_| uniform(rng, h, 1, h)).collect(),
                )
            } else {
                (Vec::new(), Vec::new())
            };
            GraphAwareLayer {
                w_self,
                w_rel,
                bias: Matrix::zeros((1, h)),
                att_src,
                att_dst,
            }
        })
        .collect();
    GraphAwareParams { layers }
}

pub fn init_graph_agnostic(config: &EncoderConfig, rng: &mut ChaCha8Rng) -> GraphAgnosticParams {
    let (d, h) = (config.feature_dim, config.hidden_dim);
    GraphAgnosticParams {
        w0: uniform(rng, d, h, d),
        b0: Matrix::zeros((1, h)),
        w1: uniform(rng, h, h, h),
        b1: Matrix::zeros((1, h)),
    }
}

pub fn init_decoders(config: &EncoderConfig, rng: &mut ChaCha8Rng) -> DecoderParams {
    let (d, h) = (config.feature_dim, config.hidden_dim);
    DecoderParams {
        g_w0: uniform(rng, h, h, h),
        g_b0: Matrix::zeros((1, h)),
        g_w1: uniform(rng, h, d, h),
        g_b1: Matrix::zeros((1, d)),
        l_w: uniform(rng, h, d, h),
        l_b: Matrix::zeros((1, d)),
    }
}

/// Fan-in-scaled uniform weights and zero biases, deterministic in `seed`.
pub fn init_params(
    config: &EncoderConfig,
    seed: u64,
) -> (GraphAwareParams, GraphAgnosticParams, DecoderParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let aware = init_graph_aware(config, &mut rng);
    let agnostic = init_graph_agnostic(config, &mut rng);
    let decoders = init_decoders(config, &mut rng);
    (aware, agnostic, decoders)
}

fn affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Var {
    let xw = tape.matmul(x, w);
    tape.add_row(xw, b)
}

/// Relational message passing: per layer, `act(h W_self + Σ_r AGG_r(h W_r) + b)`.
pub fn graph_aware_forward_tape(
    tape: &mut Tape,
    params: &GraphAwareParams<Var>,
    structure: &GraphStructure,
    x: Var,
    act: Activation,
) -> Var {
    let mut h = x;
    for layer in &params.layers {
        let mut pre = tape.matmul(h, layer.w_self);
        for (r, &w) in layer.w_rel.iter().enumerate() {
            let msg = if layer.att_src.is_empty() {
                let mean = tape.spmm(Rc::clone(&structure.mean_adj[r]), h);
                tape.matmul(mean, w)
            } else {
                let proj = tape.matmul(h, w);
                let src = tape.matmul(proj, layer.att_src[r]);
                let dst = tape.matmul(proj, layer.att_dst[r]);
                tape.attention_aggregate(
                    proj,
                    src,
                    dst,
                    Rc::clone(&structure.neighborhoods[r]),
                    ATTENTION_SLOPE,
                )
            };
            pre = tape.add(pre, msg);
        }
        let pre = tape.add_row(pre, layer.bias);
        h = tape.activate(pre, act);
    }
    h
}

/// Row-wise `W_1 · σ(W_0 · x + b_0) + b_1`; no edge information.
pub fn graph_agnostic_forward_tape(
    tape: &mut Tape,
    params: &GraphAgnosticParams<Var>,
    x: Var,
    act: Activation,
) -> Var {
    let hidden = affine(tape, x, params.w0, params.b0);
    let hidden = tape.activate(hidden, act);
    affine(tape, hidden, params.w1, params.b1)
}

pub fn decode_g_tape(tape: &mut Tape, dec: &DecoderParams<Var>, h: Var, act: Activation) -> Var {
    let hidden = affine(tape, h, dec.g_w0, dec.g_b0);
    let hidden = tape.activate(hidden, act);
    affine(tape, hidden, dec.g_w1, dec.g_b1)
}

pub fn decode_l_tape(tape: &mut Tape, dec: &DecoderParams<Var>, h: Var) -> Var {
    affine(tape, h, dec.l_w, dec.l_b)
}

fn check_rows(context: &'static str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.dim() != (rows, cols) {
        return Err(Error::shape(
            context,
            format!("{rows}×{cols}"),
            format!("{}×{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

impl GraphAwareParams {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.w_self.nrows())
    }

    pub fn num_relations(&self) -> usize {
        self.layers.first().map_or(0, |l| l.w_rel.len())
    }

    pub fn forward(&self, graph: &SocialGraph, features: &Matrix, act: Activation) -> Result<Matrix> {
        check_rows("graph-aware features", features, graph.num_nodes, self.input_dim())?;
        if graph.num_relations() != self.num_relations() {
            return Err(Error::shape("relation count", self.num_relations(), graph.num_relations()));
        }
        let structure = GraphStructure::new(graph);
        let mut tape = Tape::new();
        let bound = bind(self, &mut tape);
        let x = tape.leaf(features.clone());
        let out = graph_aware_forward_tape(&mut tape, &bound, &structure, x, act);
        Ok(tape.value(out).clone())
    }
}

impl GraphAgnosticParams {
    pub fn forward(&self, features: &Matrix, act: Activation) -> Result<Matrix> {
        check_rows("graph-agnostic features", features, features.nrows(), self.w0.nrows())?;
        let mut tape = Tape::new();
        let bound = bind(self, &mut tape);
        let x = tape.leaf(features.clone());
        let out = graph_agnostic_forward_tape(&mut tape, &bound, x, act);
        Ok(tape.value(out).clone())
    }
}

impl DecoderParams {
    pub fn decode_g(&self, h: &Matrix, act: Activation) -> Result<Matrix> {
        check_rows("decoder_g input", h, h.nrows(), self.g_w0.nrows())?;
        let mut tape = Tape::new();
        let bound = bind(self, &mut tape);
        let x = tape.leaf(h.clone());
        let out = decode_g_tape(&mut tape, &bound, x, act);
        Ok(tape.value(out).clone())
    }

    pub fn decode_l(&self, h: &Matrix) -> Result<Matrix> {
        check_rows("decoder_l input", h, h.nrows(), self.l_w.nrows())?;
        let mut tape = Tape::new();
        let bound = bind(self, &mut tape);
        let x = tape.leaf(h.clone());
        let out = decode_l_tape(&mut tape, &bound, x);
        Ok(tape.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::toy_graph;
    use ndarray::array;

    fn identity_layer(d: usize, relations: usize) -> GraphAwareLayer {
        GraphAwareLayer {
            w_self: Matrix::eye(d),
            w_rel: vec![Matrix::eye(d); relations],
            bias: Matrix::zeros((1, d)),
            att_src: Vec::new(),
            att_dst: Vec::new(),
        }
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let cfg = EncoderConfig {
            feature_dim: 4,
            hidden_dim: 8,
            ..EncoderConfig::default()
        };
        let a = init_params(&cfg, 3);
        let b = init_params(&cfg, 3);
        let c = init_params(&cfg, 4);
        assert_eq!(a, b);
        assert_ne!(a.1.w0, c.1.w0);
        assert_eq!(a.1.w0.dim(), (4, 8));
        assert!(a.0.layers.iter().all(|l| l.bias.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn isolated_node_passes_through_self_path() {
        let g = toy_graph(1, &[], &[0]);
        let p = GraphAwareParams {
            layers: vec![identity_layer(2, 1)],
        };
        let x = array![[0.3, -1.2]];
        let out = p.forward(&g, &x, Activation::Identity).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn mutual_pair_mean_aggregation() {
        let g = toy_graph(2, &[(0, 1), (1, 0)], &[0, 0]);
        let p = GraphAwareParams {
            layers: vec![identity_layer(2, 1)],
        };
        let out = p.forward(&g, &Matrix::eye(2), Activation::Identity).unwrap();
        assert_eq!(out, array![[1.0, 1.0], [1.0, 1.0]]);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let g = toy_graph(3, &[(0, 1), (2, 1)], &[0, 0, 0]);
        let mut layer = identity_layer(2, 1);
        layer.w_self.fill(0.0);
        layer.w_rel[0].fill(0.0);
        let p = GraphAwareParams { layers: vec![layer] };
        let out = p.forward(&g, &array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], Activation::default());
        assert!(out.unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn graph_agnostic_scalar_chain() {
        let p = GraphAgnosticParams {
            w0: array![[2.0]],
            b0: array![[-1.0]],
            w1: array![[3.0]],
            b1: array![[0.0]],
        };
        let out = p.forward(&array![[2.0]], Activation::Relu).unwrap();
        assert_eq!(out, array![[9.0]]);
    }

    #[test]
    fn graph_agnostic_identity_and_offset() {
        let p = GraphAgnosticParams {
            w0: Matrix::eye(3),
            b0: Matrix::zeros((1, 3)),
            w1: Matrix::eye(3),
            b1: Matrix::zeros((1, 3)),
        };
        let x = array![[0.5, 0.0, 2.0], [1.0, 3.0, 0.25]];
        assert_eq!(p.forward(&x, Activation::Relu).unwrap(), x);
        let p = GraphAgnosticParams {
            b1: array![[1.0, -2.0, 0.5]],
            ..p
        };
        let out = p.forward(&Matrix::zeros((1, 3)), Activation::Relu).unwrap();
        assert_eq!(out, array![[1.0, -2.0, 0.5]]);
    }

    #[test]
    fn decoder_scalar_cases() {
        let dec = DecoderParams {
            g_w0: array![[2.0]],
            g_b0: array![[0.0]],
            g_w1: array![[0.5]],
            g_b1: array![[1.0]],
            l_w: Matrix::eye(1),
            l_b: array![[0.0]],
        };
        assert_eq!(dec.decode_g(&array![[3.0]], Activation::Relu).unwrap(), array![[4.0]]);
        let h = array![[0.7], [-0.2]];
        assert_eq!(dec.decode_l(&h).unwrap(), h);
    }

    #[test]
    fn zero_input_zero_bias_decodes_to_zero() {
        let cfg = EncoderConfig {
            feature_dim: 3,
            hidden_dim: 4,
            ..EncoderConfig::default()
        };
        let (_, _, dec) = init_params(&cfg, 1);
        let z = Matrix::zeros((5, 4));
        assert!(dec.decode_g(&z, cfg.activation).unwrap().iter().all(|&v| v == 0.0));
        assert!(dec.decode_l(&z).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let cfg = EncoderConfig {
            feature_dim: 3,
            hidden_dim: 4,
            num_relations: 1,
            ..EncoderConfig::default()
        };
        let (aware, agnostic, _) = init_params(&cfg, 0);
        assert!(matches!(
            agnostic.forward(&Matrix::zeros((2, 5)), cfg.activation),
            Err(Error::Shape { .. })
        ));
        let g = toy_graph(2, &[(0, 1)], &[0, 0]);
        assert!(aware.forward(&g, &Matrix::zeros((3, 3)), cfg.activation).is_err());
    }

    #[test]
    fn registry_names_are_stable() {
        let cfg = EncoderConfig {
            feature_dim: 3,
            hidden_dim: 4,
            num_layers: 1,
            num_relations: 2,
            variant: GraphAwareVariant::RelationalAttention,
            ..EncoderConfig::default()
        };
        let (aware, _, _) = init_params(&cfg, 0);
        let names: Vec<String> = named_tensors(&aware, "graph_aware").into_iter().map(|(n, _)| n).collect();
        assert_eq!(
            names,
            [
                "graph_aware.layer0.w_self",
                "graph_aware.layer0.w_rel0",
                "graph_aware.layer0.w_rel1",
                "graph_aware.layer0.bias",
                "graph_aware.layer0.att_src0",
                "graph_aware.layer0.att_src1",
                "graph_aware.layer0.att_dst0",
                "graph_aware.layer0.att_dst1",
            ]
        );
    }

    proptest::proptest! {
        #[test]
        fn graph_aware_encoder_is_permutation_equivariant(
            n in 2usize..8,
            raw in proptest::collection::vec((0usize..8, 0usize..8), 0..20),
            shuffle_seed in proptest::prelude::any::<u64>(),
            attention in proptest::prelude::any::<bool>(),
        ) {
            use rand::seq::SliceRandom;
            let cfg = EncoderConfig {
                feature_dim: 3,
                hidden_dim: 4,
                num_relations: 1,
                variant: if attention { GraphAwareVariant::RelationalAttention } else { GraphAwareVariant::RelationalMean },
                ..EncoderConfig::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
            let params = init_graph_aware(&cfg, &mut rng);
            let mut edges: Vec<(usize, usize)> = raw.into_iter().filter(|&(s, d)| s < n && d < n).collect();
            edges.sort_unstable();
            edges.dedup();
            let x = Matrix::from_shape_fn((n, 3), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 2.0 + 0.1 * i as f64);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let permuted_edges: Vec<(usize, usize)> = edges.iter().map(|&(s, d)| (perm[s], perm[d])).collect();
            let mut px = Matrix::zeros((n, 3));
            for i in 0..n {
                px.row_mut(perm[i]).assign(&x.row(i));
            }
            let act = Activation::default();
            let out = params.forward(&toy_graph(n, &edges, &vec![0; n]), &x, act).unwrap();
            let pout = params.forward(&toy_graph(n, &permuted_edges, &vec![0; n]), &px, act).unwrap();
            for i in 0..n {
                for j in 0..4 {
                    proptest::prop_assert!((out[[i, j]] - pout[[perm[i], j]]).abs() < 1e-10);
                }
            }
        }
    }
}
