//! The denoising transformer: parameter registry, initialization, and the
//! conditioned forward pass.
//!
//! Every block is residual with zero-initialized modulation, so a freshly
//! initialized model predicts exactly zero for any input. The conditioning
//! vector (timestep + attribute) drives per-block shift/scale/gate rows; the
//! blocks themselves are plain pre-norm attention and MLP.

use std::collections::HashMap;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::rope::rope_angles;
use super::tokens::{PositionId, TokenLayout};
use super::{Conditioning, ModelConfig, ModelError};
use crate::geometry::Attribute;
use crate::numerics::{Tape, Tensor, Var};

/// Number of trainable target attributes (coord, normal, radius).
pub const ATTRIBUTE_COUNT: usize = 3;

/// Row of the attribute embedding table used for a target attribute.
pub fn attr_index(attribute: Attribute) -> Result<usize, ModelError> {
    match attribute {
        Attribute::Coord => Ok(0),
        Attribute::Normal => Ok(1),
        Attribute::Radius => Ok(2),
        other => Err(ModelError::UnsupportedAttribute(other)),
    }
}

/// Shape and init class of one named parameter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Zero at init: biases, modulation projections, and the output head.
    pub zero_init: bool,
}

/// Full parameter list for a config, in registry order. Initialization and
/// checkpoint loading both walk this list, so the order is load-bearing.
pub fn params_schema(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let d = cfg.dim;
    let mut specs = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, zero_init: bool| {
        specs.push(ParamSpec { name, shape, zero_init });
    };
    push("input.w".into(), vec![cfg.input_dim(), d], false);
    push("input.b".into(), vec![d], true);
    push("time.w1".into(), vec![d, d], false);
    push("time.b1".into(), vec![d], true);
    push("time.w2".into(), vec![d, d], false);
    push("time.b2".into(), vec![d], true);
    push("attr.table".into(), vec![ATTRIBUTE_COUNT, d], false);
    for i in 0..cfg.layers {
        push(format!("layer{i}.mod.w"), vec![d, 6 * d], true);
        push(format!("layer{i}.mod.b"), vec![6 * d], true);
        for w in ["wq", "wk", "wv", "wo"] {
            push(format!("layer{i}.attn.{w}"), vec![d, d], false);
        }
        push(format!("layer{i}.mlp.w1"), vec![d, cfg.mlp_ratio * d], false);
        push(format!("layer{i}.mlp.b1"), vec![cfg.mlp_ratio * d], true);
        push(format!("layer{i}.mlp.w2"), vec![cfg.mlp_ratio * d, d], false);
        push(format!("layer{i}.mlp.b2"), vec![d], true);
    }
    push("final.mod.w".into(), vec![d, 2 * d], true);
    push("final.mod.b".into(), vec![2 * d], true);
    push("final.w".into(), vec![d, cfg.patch_dim()], true);
    push("final.b".into(), vec![cfg.patch_dim()], true);
    specs
}

/// Named parameter tensors in a fixed registry order.
#[derive(Debug, Clone)]
pub struct Params {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl Params {
    pub fn new() -> Self {
        Params { entries: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: String, tensor: Tensor) {
        assert!(
            self.index.insert(name.clone(), self.entries.len()).is_none(),
            "duplicate parameter {name}"
        );
        self.entries.push((name, tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = *self.index.get(name)?;
        Some(&mut self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }
}

impl Default for Params {
    fn default() -> Self {
        Self::new()
    }
}

/// Tape leaves for every parameter, in registry order, so gradients from
/// [`Tape::gradient`] line up with [`Params::iter`].
pub struct Staged {
    names: Vec<String>,
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl Staged {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Panics on unknown names; callers only use schema names.
    pub fn var(&self, name: &str) -> Var {
        self.vars[*self.index.get(name).unwrap_or_else(|| panic!("no parameter {name}"))]
    }
}

/// Forward pass results.
pub struct ForwardOutput {
    /// [image_tokens, patch_dim] normalized-space prediction for the
    /// geometry stream.
    pub prediction: Var,
    /// Post-softmax attention probabilities per layer, [heads, tokens,
    /// tokens], copied out of the tape.
    pub attention: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
}

impl Model {
    /// Fresh weights: N(0, 0.02) for projection weights, zeros for biases,
    /// modulation, and the output head. Zero-init entries draw nothing from
    /// the stream, so adding layers never reshuffles earlier tensors.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, 0.02).expect("constant std");
        let mut params = Params::new();
        for spec in params_schema(&config) {
            let tensor = if spec.zero_init {
                Tensor::zeros(spec.shape)
            } else {
                let n: usize = spec.shape.iter().product();
                Tensor::from_vec(spec.shape, (0..n).map(|_| dist.sample(&mut rng)).collect())
            };
            params.insert(spec.name, tensor);
        }
        Ok(Model { config, params })
    }

    /// Builds a model from existing tensors, checking them against the
    /// schema for the config.
    pub fn from_parts(config: ModelConfig, params: Params) -> Result<Self, ModelError> {
        config.validate()?;
        let schema = params_schema(&config);
        if params.len() != schema.len() {
            return Err(ModelError::Shape(format!(
                "parameter count {} does not match schema {}",
                params.len(),
                schema.len()
            )));
        }
        for (spec, (name, tensor)) in schema.iter().zip(params.iter()) {
            if spec.name != name {
                return Err(ModelError::Shape(format!(
                    "parameter order: expected {}, found {name}",
                    spec.name
                )));
            }
            if spec.shape != tensor.shape() {
                return Err(ModelError::Shape(format!(
                    "parameter {name}: shape {:?}, schema wants {:?}",
                    tensor.shape(),
                    spec.shape
                )));
            }
        }
        Ok(Model { config, params })
    }

    /// Puts every parameter on the tape as a leaf.
    pub fn stage(&self, tape: &mut Tape) -> Staged {
        let mut names = Vec::with_capacity(self.params.len());
        let mut vars = Vec::with_capacity(self.params.len());
        let mut index = HashMap::with_capacity(self.params.len());
        for (name, tensor) in self.params.iter() {
            index.insert(name.to_string(), vars.len());
            names.push(name.to_string());
            vars.push(tape.leaf(tensor.clone()));
        }
        Staged { names, vars, index }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        staged: &Staged,
        input: &Tensor,
        layout: &TokenLayout,
        t: f64,
        attribute: Attribute,
    ) -> Result<ForwardOutput, ModelError> {
        if layout.mode != self.config.mode {
            return Err(ModelError::Shape(format!(
                "layout mode {:?} does not match model mode {:?}",
                layout.mode, self.config.mode
            )));
        }
        self.forward_tokens(tape, staged, input, &layout.position_ids(), t, attribute)
    }

    /// Forward over an explicit token list. Two-stream modes expect the rgb
    /// half first and the geometry half second; the prediction always has one
    /// row per geometry token.
    pub fn forward_tokens(
        &self,
        tape: &mut Tape,
        staged: &Staged,
        input: &Tensor,
        positions: &[PositionId],
        t: f64,
        attribute: Attribute,
    ) -> Result<ForwardOutput, ModelError> {
        let cfg = &self.config;
        let n = positions.len();
        if input.shape() != [n, cfg.input_dim()] {
            return Err(ModelError::Shape(format!(
                "input shape {:?}, expected [{n}, {}]",
                input.shape(),
                cfg.input_dim()
            )));
        }
        let n_geo = match cfg.mode {
            Conditioning::ChannelConcat => n,
            _ => {
                if n == 0 || n % 2 != 0 {
                    return Err(ModelError::Shape(format!(
                        "two-stream input needs an even positive token count, got {n}"
                    )));
                }
                n / 2
            }
        };
        let a_idx = attr_index(attribute)?;
        let d = cfg.dim;
        let angles = rope_angles(positions, cfg.rope_split, cfg.rope_base);

        // Conditioning: sinusoidal timestep through a SiLU MLP, plus a learned
        // attribute embedding, activated once and shared by all modulations.
        let temb = tape.leaf(Tensor::from_vec(vec![1, d], timestep_embedding(t, d)));
        let h = tape.matmul(temb, staged.var("time.w1"));
        let h = tape.add_row(h, staged.var("time.b1"));
        let h = tape.silu(h);
        let h = tape.matmul(h, staged.var("time.w2"));
        let tvec = tape.add_row(h, staged.var("time.b2"));
        let avec = tape.embed_rows(staged.var("attr.table"), vec![a_idx]);
        let cond = tape.add(tvec, avec);
        let cond = tape.silu(cond);

        let x = tape.leaf(input.clone());
        let x = tape.matmul(x, staged.var("input.w"));
        let mut x = tape.add_row(x, staged.var("input.b"));

        let mut attention = Vec::with_capacity(cfg.layers);
        for layer in 0..cfg.layers {
            let pname = |s: &str| format!("layer{layer}.{s}");
            let m = tape.matmul(cond, staged.var(&pname("mod.w")));
            let m = tape.add_row(m, staged.var(&pname("mod.b")));
            let m = tape.reshape(m, vec![6, d]);
            let rows: Vec<Var> = (0..6).map(|r| tape.slice_rows(m, r, 1)).collect();

            let xn = tape.layer_norm_rows(x);
            let xm = modulate(tape, xn, rows[0], rows[1]);
            let (ctx, probs) = attention_block(tape, staged, layer, xm, &angles, cfg);
            let gated = tape.mul_row(ctx, rows[2]);
            x = tape.add(x, gated);

            let xn = tape.layer_norm_rows(x);
            let xm = modulate(tape, xn, rows[3], rows[4]);
            let h = tape.matmul(xm, staged.var(&pname("mlp.w1")));
            let h = tape.add_row(h, staged.var(&pname("mlp.b1")));
            let h = tape.gelu(h);
            let h = tape.matmul(h, staged.var(&pname("mlp.w2")));
            let h = tape.add_row(h, staged.var(&pname("mlp.b2")));
            let gated = tape.mul_row(h, rows[5]);
            x = tape.add(x, gated);

            attention.push(probs);
        }

        let m = tape.matmul(cond, staged.var("final.mod.w"));
        let m = tape.add_row(m, staged.var("final.mod.b"));
        let m = tape.reshape(m, vec![2, d]);
        let shift = tape.slice_rows(m, 0, 1);
        let scale = tape.slice_rows(m, 1, 1);
        let xn = tape.layer_norm_rows(x);
        let xm = modulate(tape, xn, shift, scale);
        let geo = match cfg.mode {
            Conditioning::ChannelConcat => xm,
            _ => tape.slice_rows(xm, n_geo, n_geo),
        };
        let pred = tape.matmul(geo, staged.var("final.w"));
        let prediction = tape.add_row(pred, staged.var("final.b"));

        Ok(ForwardOutput { prediction, attention })
    }
}

/// x * (1 + scale) + shift, broadcast over rows.
fn modulate(tape: &mut Tape, x: Var, shift: Var, scale: Var) -> Var {
    let one_plus = tape.add_scalar(scale, 1.0);
    let scaled = tape.mul_row(x, one_plus);
    tape.add_row(scaled, shift)
}

/// Multi-head self-attention with rotary positions on q and k. Returns the
/// output projection and a copy of the softmax probabilities.
fn attention_block(
    tape: &mut Tape,
    staged: &Staged,
    layer: usize,
    x: Var,
    angles: &Rc<Vec<f64>>,
    cfg: &ModelConfig,
) -> (Var, Tensor) {
    let n = tape.value(x).shape()[0];
    let (heads, dh, d) = (cfg.heads, cfg.head_dim(), cfg.dim);
    let wname = |s: &str| format!("layer{layer}.attn.{s}");
    let q = tape.matmul(x, staged.var(&wname("wq")));
    let k = tape.matmul(x, staged.var(&wname("wk")));
    let v = tape.matmul(x, staged.var(&wname("wv")));
    let heads_first = |tape: &mut Tape, a: Var| {
        let a = tape.reshape(a, vec![n, heads, dh]);
        tape.permute102(a)
    };
    let q = heads_first(tape, q);
    let k = heads_first(tape, k);
    let v = heads_first(tape, v);
    let q = tape.rope(q, angles.clone());
    let k = tape.rope(k, angles.clone());
    let scores = tape.bmm_tb(q, k);
    let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
    let probs = tape.softmax_rows(scores);
    let snapshot = tape.value(probs).clone();
    let ctx = tape.bmm(probs, v);
    let ctx = tape.permute102(ctx);
    let ctx = tape.reshape(ctx, vec![n, d]);
    let out = tape.matmul(ctx, staged.var(&wname("wo")));
    (out, snapshot)
}

/// Sinusoidal embedding: first half cos(t * f_i), second half sin(t * f_i),
/// with f_i = 10000^(-i / (dim/2)).
pub(super) fn timestep_embedding(t: f64, dim: usize) -> Vec<f64> {
    assert!(dim % 2 == 0, "embedding dim must be even");
    let half = dim / 2;
    let freq = |i: usize| (-(10000f64).ln() * i as f64 / half as f64).exp();
    let mut out = Vec::with_capacity(dim);
    out.extend((0..half).map(|i| (t * freq(i)).cos()));
    out.extend((0..half).map(|i| (t * freq(i)).sin()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tokens::TokenLayout;

    fn tiny_config(mode: Conditioning) -> ModelConfig {
        ModelConfig {
            layers: 1,
            heads: 2,
            dim: 16,
            patch: 2,
            mlp_ratio: 2,
            mode,
            rope_base: 100.0,
            rope_split: [4, 2, 2],
        }
    }

    fn tiny_layout(cfg: &ModelConfig) -> TokenLayout {
        TokenLayout::new(cfg, 2, 4, 4).unwrap()
    }

    fn test_input(rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols).map(|i| ((i * 23 + 7) % 17) as f64 / 8.5 - 1.0).collect();
        Tensor::from_vec(vec![rows, cols], data)
    }

    use crate::model::test_util::perturb;

    fn run_tiny(model: &Model, input: &Tensor, t: f64, attribute: Attribute) -> (Tensor, Vec<Tensor>) {
        let layout = tiny_layout(&model.config);
        let mut tape = Tape::new();
        let staged = model.stage(&mut tape);
        let out = model.forward(&mut tape, &staged, input, &layout, t, attribute).unwrap();
        (tape.value(out.prediction).clone(), out.attention)
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let cfg = tiny_config(Conditioning::SharedPos);
        let a = Model::init(cfg, 7).unwrap();
        let b = Model::init(cfg, 7).unwrap();
        for ((na, ta), (nb, tb)) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data(), "{na}");
        }
        let c = Model::init(cfg, 8).unwrap();
        let differs = a
            .params
            .iter()
            .zip(c.params.iter())
            .any(|((_, ta), (_, tc))| ta.data() != tc.data());
        assert!(differs);
    }

    #[test]
    fn zero_initialized_parts_make_the_initial_prediction_zero() {
        let cfg = tiny_config(Conditioning::SharedPos);
        let model = Model::init(cfg, 3).unwrap();
        for name in ["layer0.mod.w", "layer0.mod.b", "final.mod.w", "final.w", "final.b"] {
            assert!(model.params.get(name).unwrap().data().iter().all(|&v| v == 0.0), "{name}");
        }
        let layout = tiny_layout(&cfg);
        let input = test_input(layout.total_tokens(), cfg.input_dim());
        let (pred, _) = run_tiny(&model, &input, 250.0, Attribute::Coord);
        assert!(pred.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_shapes_hold_in_every_mode() {
        for mode in [Conditioning::SharedPos, Conditioning::SeqConcat, Conditioning::ChannelConcat] {
            let cfg = tiny_config(mode);
            let model = Model::init(cfg, 5).unwrap();
            let layout = tiny_layout(&cfg);
            let input = test_input(layout.total_tokens(), cfg.input_dim());
            let (pred, attention) = run_tiny(&model, &input, 10.0, Attribute::Normal);
            assert_eq!(pred.shape(), &[layout.image_tokens(), cfg.patch_dim()], "{mode:?}");
            assert_eq!(attention.len(), cfg.layers);
            let nt = layout.total_tokens();
            assert_eq!(attention[0].shape(), &[cfg.heads, nt, nt], "{mode:?}");
        }
    }

    #[test]
    fn attention_rows_are_probability_distributions() {
        let cfg = tiny_config(Conditioning::SeqConcat);
        let mut model = Model::init(cfg, 11).unwrap();
        perturb(&mut model);
        let layout = tiny_layout(&cfg);
        let input = test_input(layout.total_tokens(), cfg.input_dim());
        let (_, attention) = run_tiny(&model, &input, 77.0, Attribute::Radius);
        for probs in &attention {
            let n = probs.last_dim();
            for row in probs.data().chunks_exact(n) {
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&p| p >= 0.0));
            }
        }
    }

    #[test]
    fn forward_is_bitwise_reproducible() {
        let cfg = tiny_config(Conditioning::SharedPos);
        let mut model = Model::init(cfg, 6).unwrap();
        perturb(&mut model);
        let layout = tiny_layout(&cfg);
        let input = test_input(layout.total_tokens(), cfg.input_dim());
        let (a, _) = run_tiny(&model, &input, 500.0, Attribute::Coord);
        let (b, _) = run_tiny(&model, &input, 500.0, Attribute::Coord);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn prediction_rows_follow_a_token_permutation() {
        let cfg = tiny_config(Conditioning::SharedPos);
        let mut model = Model::init(cfg, 9).unwrap();
        perturb(&mut model);
        let layout = tiny_layout(&cfg);
        let ids = layout.position_ids();
        let n_img = layout.image_tokens();
        let input = test_input(layout.total_tokens(), cfg.input_dim());
        let perm: Vec<usize> = vec![3, 0, 7, 1, 5, 2, 6, 4];
        assert_eq!(perm.len(), n_img);

        let w = cfg.input_dim();
        let mut p_input = Tensor::zeros(vec![2 * n_img, w]);
        let mut p_ids = vec![ids[0]; 2 * n_img];
        for (i, &s) in perm.iter().enumerate() {
            for half in [0, n_img] {
                p_input.data_mut()[(half + i) * w..(half + i + 1) * w]
                    .copy_from_slice(&input.data()[(half + s) * w..(half + s + 1) * w]);
                p_ids[half + i] = ids[half + s];
            }
        }

        let run = |inp: &Tensor, pos: &[PositionId]| -> Tensor {
            let mut tape = Tape::new();
            let staged = model.stage(&mut tape);
            let out = model
                .forward_tokens(&mut tape, &staged, inp, pos, 40.0, Attribute::Coord)
                .unwrap();
            tape.value(out.prediction).clone()
        };
        let base = run(&input, &ids);
        let permuted = run(&p_input, &p_ids);
        let pd = cfg.patch_dim();
        for (i, &s) in perm.iter().enumerate() {
            for c in 0..pd {
                let a = permuted.data()[i * pd + c];
                let b = base.data()[s * pd + c];
                assert!((a - b).abs() < 1e-10, "row {i} ch {c}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn prediction_depends_on_timestep_and_attribute() {
        let cfg = tiny_config(Conditioning::SharedPos);
        let mut model = Model::init(cfg, 13).unwrap();
        perturb(&mut model);
        let layout = tiny_layout(&cfg);
        let input = test_input(layout.total_tokens(), cfg.input_dim());
        let (a, _) = run_tiny(&model, &input, 1.0, Attribute::Coord);
        let (b, _) = run_tiny(&model, &input, 999.0, Attribute::Coord);
        let (c, _) = run_tiny(&model, &input, 1.0, Attribute::Radius);
        let diff = |x: &Tensor, y: &Tensor| {
            x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
        };
        assert!(diff(&a, &b) > 1e-6, "timestep had no effect");
        assert!(diff(&a, &c) > 1e-6, "attribute had no effect");
    }

    #[test]
    fn gradients_match_central_differences() {
        let cfg = tiny_config(Conditioning::SharedPos);
        let mut model = Model::init(cfg, 21).unwrap();
        perturb(&mut model);
        let layout = tiny_layout(&cfg);
        let input = test_input(layout.total_tokens(), cfg.input_dim());
        let target = Rc::new(test_input(layout.image_tokens(), cfg.patch_dim()));

        let loss_of = |m: &Model| -> f64 {
            let mut tape = Tape::new();
            let staged = m.stage(&mut tape);
            let out = m.forward(&mut tape, &staged, &input, &layout, 33.0, Attribute::Normal).unwrap();
            let loss = tape.mse(out.prediction, target.clone());
            tape.value(loss).data()[0]
        };

        let mut tape = Tape::new();
        let staged = model.stage(&mut tape);
        let out = model.forward(&mut tape, &staged, &input, &layout, 33.0, Attribute::Normal).unwrap();
        let loss = tape.mse(out.prediction, target.clone());
        let grads = tape.gradient(loss, staged.vars()).unwrap();

        let h = 1e-5;
        let probes = [
            "input.w",
            "time.w1",
            "attr.table",
            "layer0.mod.w",
            "layer0.attn.wq",
            "layer0.attn.wo",
            "layer0.mlp.w1",
            "final.mod.w",
            "final.w",
            "final.b",
        ];
        for (pi, name) in probes.iter().enumerate() {
            let slot = staged.names().iter().position(|n| n == name).unwrap();
            let coord = (pi * 37 + 13) % model.params.get(name).unwrap().numel();
            let orig = model.params.get(name).unwrap().data()[coord];
            model.params.get_mut(name).unwrap().data_mut()[coord] = orig + h;
            let up = loss_of(&model);
            model.params.get_mut(name).unwrap().data_mut()[coord] = orig - h;
            let down = loss_of(&model);
            model.params.get_mut(name).unwrap().data_mut()[coord] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = grads[slot].data()[coord];
            let tol = 1e-6 + 1e-4 * fd.abs().max(an.abs());
            assert!((fd - an).abs() < tol, "{name}[{coord}]: fd {fd} vs grad {an}");
        }
    }

    #[test]
    fn from_parts_rejects_wrong_shapes() {
        let cfg = tiny_config(Conditioning::SharedPos);
        let model = Model::init(cfg, 2).unwrap();
        let mut params = Params::new();
        for (name, tensor) in model.params.iter() {
            if name == "input.b" {
                params.insert(name.to_string(), Tensor::zeros(vec![cfg.dim + 1]));
            } else {
                params.insert(name.to_string(), tensor.clone());
            }
        }
        assert!(matches!(Model::from_parts(cfg, params), Err(ModelError::Shape(_))));
    }

    #[test]
    fn timestep_embedding_matches_the_formula() {
        let e = timestep_embedding(0.0, 8);
        assert_eq!(&e[0..4], &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(&e[4..8], &[0.0, 0.0, 0.0, 0.0]);
        let t = 17.0;
        let e = timestep_embedding(t, 8);
        for i in 0..4 {
            let f = (-(10000f64).ln() * i as f64 / 4.0).exp();
            assert_eq!(e[i], (t * f).cos());
            assert_eq!(e[4 + i], (t * f).sin());
        }
    }

    #[test]
    fn attribute_rows_cover_the_trainable_targets() {
        assert_eq!(attr_index(Attribute::Coord).unwrap(), 0);
        assert_eq!(attr_index(Attribute::Normal).unwrap(), 1);
        assert_eq!(attr_index(Attribute::Radius).unwrap(), 2);
        assert!(attr_index(Attribute::Rgb).is_err());
        assert!(attr_index(Attribute::Depth).is_err());
    }

    #[test]
    fn schema_matches_the_documented_budget() {
        let model = Model::init(ModelConfig::default(), 0).unwrap();
        // 6 layers at dim 128 with 4x MLP and a 192-wide patch head.
        assert_eq!(model.params.total_values(), 1_893_824);
    }
}
