//! Training loop: per-step seeded randomness, AdamW, gradient clipping, and
//! bitwise-resumable checkpoints.
//!
//! Each optimizer step draws its sequence, target attribute, timestep, and
//! noise from a ChaCha8 stream keyed by (seed, step), so a run resumed from a
//! checkpoint replays exactly the steps the original run would have taken.
//! Checkpoints round the live f64 state to f32 in place at save time, which
//! makes "train 10 steps" and "train 5, save, resume, train 5" produce
//! bitwise-identical parameters.

use std::path::Path;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{DataIoError, SequenceSample};
use crate::diffusion::{add_noise, DiffusionError, NoiseSchedule, Parameterization};
use crate::geometry::Attribute;
use crate::model::{
    assemble_input, attr_index, build_tokens, model_from_checkpoint, save_checkpoint,
    wash_tensor_f32, CheckpointMeta, Model, ModelError, Params,
};
use crate::numerics::{NumericsError, Tape, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("train config: {0}")]
    Config(String),
    #[error("no training sequences")]
    NoData,
    #[error("non-finite loss or gradients at step {step}")]
    Diverged { step: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DataIoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Total optimizer steps for the run.
    pub steps: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Global-norm gradient clip; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    pub parameterization: Parameterization,
    pub diffusion_steps: usize,
    /// Attributes drawn uniformly per step.
    pub attributes: Vec<Attribute>,
    /// Save cadence in steps; 0 saves only at the end. Interpreted by the
    /// caller driving the loop.
    pub checkpoint_every: u64,
    /// Log cadence; interpreted by the caller.
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            grad_clip: 1.0,
            seed: 0,
            parameterization: Parameterization::X0,
            diffusion_steps: 1000,
            attributes: vec![Attribute::Coord, Attribute::Normal, Attribute::Radius],
            checkpoint_every: 0,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |m: String| Err(TrainError::Config(m));
        if !(self.lr > 0.0) {
            return err(format!("lr {} must be positive", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return err(format!("{name} {b} must lie in [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return err(format!("adam_eps {} must be positive", self.adam_eps));
        }
        if self.weight_decay < 0.0 || self.grad_clip < 0.0 {
            return err("weight_decay and grad_clip must be non-negative".into());
        }
        if self.diffusion_steps == 0 {
            return err("diffusion_steps must be positive".into());
        }
        if self.attributes.is_empty() {
            return err("attributes must not be empty".into());
        }
        for &a in &self.attributes {
            attr_index(a).map_err(|e| TrainError::Config(e.to_string()))?;
        }
        let mut seen = self.attributes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.attributes.len() {
            return err(format!("duplicate attributes in {:?}", self.attributes));
        }
        Ok(())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Fresh RNG for one optimizer step, independent of all other steps.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(step)))
}

/// Per-step draw: (sequence index, attribute, timestep). The same RNG then
/// supplies the noise, so the whole step is a pure function of (seed, step).
pub(crate) fn step_plan(
    rng: &mut ChaCha8Rng,
    n_samples: usize,
    attributes: &[Attribute],
    t_max: usize,
) -> (usize, Attribute, usize) {
    let sample = rng.gen_range(0..n_samples);
    let attribute = attributes[rng.gen_range(0..attributes.len())];
    let timestep = rng.gen_range(1..=t_max);
    (sample, attribute, timestep)
}

/// Scales all gradients by max_norm / norm when the global norm exceeds
/// max_norm (0 disables). Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let sq: f64 = grads.iter().flat_map(|g| g.data()).map(|&x| x * x).sum();
    let norm = sq.sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}

/// AdamW with decoupled weight decay. Moments are stored in parameter
/// registry order.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    steps_taken: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(cfg: &TrainConfig, params: &Params) -> Self {
        let zeros: Vec<Tensor> =
            params.iter().map(|(_, t)| Tensor::zeros(t.shape().to_vec())).collect();
        AdamW {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            steps_taken: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Rebuilds the optimizer from checkpoint extras ("adam_m.x"/"adam_v.x").
    pub fn resume(
        cfg: &TrainConfig,
        params: &Params,
        extras: &[(String, Tensor)],
        steps_taken: u64,
    ) -> Result<Self, TrainError> {
        let mut opt = AdamW::new(cfg, params);
        opt.steps_taken = steps_taken;
        for (i, (name, tensor)) in params.iter().enumerate() {
            for (prefix, slot) in [("adam_m", &mut opt.m[i]), ("adam_v", &mut opt.v[i])] {
                let key = format!("{prefix}.{name}");
                let found = extras
                    .iter()
                    .find(|(n, _)| n == &key)
                    .ok_or_else(|| TrainError::Config(format!("checkpoint lacks {key}")))?;
                if found.1.shape() != tensor.shape() {
                    return Err(TrainError::Config(format!(
                        "{key} has shape {:?}, parameter is {:?}",
                        found.1.shape(),
                        tensor.shape()
                    )));
                }
                *slot = found.1.clone();
            }
        }
        Ok(opt)
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }

    pub fn apply(&mut self, params: &mut Params, grads: &[Tensor]) -> Result<(), TrainError> {
        if grads.len() != self.m.len() {
            return Err(TrainError::Config(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.m.len()
            )));
        }
        self.steps_taken += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps_taken as i32);
        let bc2 = 1.0 - self.beta2.powi(self.steps_taken as i32);
        for (i, (_, p)) in params.iter_mut().enumerate() {
            let g = grads[i].data();
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let pd = p.data_mut();
            for j in 0..pd.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                pd[j] -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * pd[j]);
            }
        }
        Ok(())
    }
}

/// One logged optimizer step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepStats {
    pub step: u64,
    pub loss: f64,
    /// Pre-clip global gradient norm.
    pub grad_norm: f64,
    pub attribute: Attribute,
    pub timestep: usize,
    pub sample_index: usize,
}

/// Runs `steps` optimizer steps, numbered start_step+1 ..= start_step+steps.
/// Batch size is one sequence. On a non-finite loss or gradient the loop
/// stops without applying the update, so the last saved checkpoint stays
/// usable.
pub fn train_loop(
    model: &mut Model,
    opt: &mut AdamW,
    samples: &[SequenceSample],
    cfg: &TrainConfig,
    start_step: u64,
    steps: u64,
    mut on_step: impl FnMut(&StepStats),
) -> Result<(), TrainError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(TrainError::NoData);
    }
    let schedule = NoiseSchedule::linear(cfg.diffusion_steps)?;
    for step in start_step + 1..=start_step + steps {
        let mut rng = step_rng(cfg.seed, step);
        let (sample_index, attribute, timestep) =
            step_plan(&mut rng, samples.len(), &cfg.attributes, cfg.diffusion_steps);
        let sample = &samples[sample_index];
        let batch = build_tokens(sample, attribute, &model.config)?;
        let (xt, eps) = add_noise(&batch.geo, timestep, &schedule, &mut rng);
        let input = assemble_input(&batch.layout, &batch.rgb, &xt);

        let mut tape = Tape::new();
        let staged = model.stage(&mut tape);
        let out =
            model.forward(&mut tape, &staged, &input, &batch.layout, timestep as f64, attribute)?;
        let target = match cfg.parameterization {
            Parameterization::Epsilon => eps,
            Parameterization::X0 => batch.geo.clone(),
        };
        let loss = tape.mse(out.prediction, Rc::new(target));
        let loss_val = tape.value(loss).data()[0];
        if !loss_val.is_finite() {
            return Err(TrainError::Diverged { step });
        }
        let mut grads = tape.gradient(loss, staged.vars())?;
        let grad_norm = clip_global_norm(&mut grads, cfg.grad_clip);
        if !grad_norm.is_finite() {
            return Err(TrainError::Diverged { step });
        }
        opt.apply(&mut model.params, &grads)?;
        on_step(&StepStats { step, loss: loss_val, grad_norm, attribute, timestep, sample_index });
    }
    Ok(())
}

/// Saves model + optimizer state. Washes the live f64 tensors (parameters
/// and moments) to f32 in place first, so continuing this process and
/// resuming from the file compute on identical values.
pub fn save_train_checkpoint(
    path: impl AsRef<Path>,
    model: &mut Model,
    opt: &mut AdamW,
    train_seed: u64,
) -> Result<(), TrainError> {
    for t in opt.m.iter_mut().chain(opt.v.iter_mut()) {
        wash_tensor_f32(t);
    }
    let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).collect();
    let mut extras = Vec::with_capacity(2 * names.len());
    for (i, name) in names.iter().enumerate() {
        extras.push((format!("adam_m.{name}"), opt.m[i].clone()));
        extras.push((format!("adam_v.{name}"), opt.v[i].clone()));
    }
    save_checkpoint(path, model, &mut extras, opt.steps_taken, train_seed)?;
    Ok(())
}

/// Restores a model and optimizer saved by [`save_train_checkpoint`].
/// Hyperparameters come from `cfg`; the checkpoint carries the tensors and
/// the step counter.
pub fn load_train_checkpoint(
    path: impl AsRef<Path>,
    cfg: &TrainConfig,
) -> Result<(Model, AdamW, CheckpointMeta), TrainError> {
    let (model, meta, extras) = model_from_checkpoint(path)?;
    let opt = AdamW::resume(cfg, &model.params, &extras, meta.trained_steps)?;
    Ok((model, opt, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::test_util::synthetic_sample;
    use crate::model::{Conditioning, ModelConfig};
    use tempfile::tempdir;

    fn tiny_model_config() -> ModelConfig {
        ModelConfig {
            layers: 1,
            heads: 2,
            dim: 16,
            patch: 2,
            mlp_ratio: 2,
            mode: Conditioning::SharedPos,
            rope_base: 100.0,
            rope_split: [4, 2, 2],
        }
    }

    fn tiny_train_config() -> TrainConfig {
        TrainConfig { lr: 3e-3, seed: 5, ..Default::default() }
    }

    fn tiny_samples() -> Vec<SequenceSample> {
        vec![
            synthetic_sample("a", 2, 8, 8, 1),
            synthetic_sample("b", 2, 8, 8, 2),
        ]
    }

    #[test]
    fn adamw_matches_a_hand_computed_step() {
        let cfg = TrainConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.1,
            ..Default::default()
        };
        let mut params = Params::new();
        params.insert("w".into(), Tensor::from_vec(vec![2], vec![1.0, -2.0]));
        let mut opt = AdamW::new(&cfg, &params);
        let grads = [Tensor::from_vec(vec![2], vec![0.5, 0.0])];
        opt.apply(&mut params, &grads).unwrap();

        // Element 0: independent arithmetic for one bias-corrected step.
        let (m, v): (f64, f64) = (0.1 * 0.5, 0.001 * 0.25);
        let (m_hat, v_hat) = (m / 0.1, v / 0.001);
        let want0 = 1.0 - 0.1 * (m_hat / (v_hat.sqrt() + 1e-8) + 0.1 * 1.0);
        // Element 1 sees only decoupled decay.
        let want1 = -2.0 - 0.1 * (0.1 * -2.0);
        let got = params.get("w").unwrap().data();
        assert!((got[0] - want0).abs() < 1e-15, "{} vs {want0}", got[0]);
        assert!((got[1] - want1).abs() < 1e-15, "{} vs {want1}", got[1]);
        assert_eq!(opt.steps_taken(), 1);
    }

    #[test]
    fn second_step_uses_the_next_bias_correction() {
        let cfg = TrainConfig { lr: 0.01, weight_decay: 0.0, ..Default::default() };
        let mut params = Params::new();
        params.insert("w".into(), Tensor::from_vec(vec![1], vec![0.0]));
        let mut opt = AdamW::new(&cfg, &params);
        let g = [Tensor::from_vec(vec![1], vec![1.0])];
        opt.apply(&mut params, &g).unwrap();
        opt.apply(&mut params, &g).unwrap();

        let (b1, b2): (f64, f64) = (0.9, 0.999);
        let m2 = b1 * 0.1 + 0.1;
        let v2 = b2 * 0.001 + 0.001;
        let m_hat = m2 / (1.0 - b1 * b1);
        let v_hat = v2 / (1.0 - b2 * b2);
        let step1 = 0.01 * (0.1 / 0.1 / ((0.001f64 / 0.001).sqrt() + 1e-8));
        let want = -step1 - 0.01 * (m_hat / (v_hat.sqrt() + 1e-8));
        let got = params.get("w").unwrap().data()[0];
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
    }

    #[test]
    fn global_norm_clip_rescales_only_above_the_limit() {
        let mut grads = vec![
            Tensor::from_vec(vec![2], vec![3.0, 0.0]),
            Tensor::from_vec(vec![1], vec![4.0]),
        ];
        let norm = clip_global_norm(&mut grads, 1.0);
        assert_eq!(norm, 5.0);
        assert!((grads[0].data()[0] - 0.6).abs() < 1e-15);
        assert!((grads[1].data()[0] - 0.8).abs() < 1e-15);

        let mut small = vec![Tensor::from_vec(vec![1], vec![0.5])];
        let norm = clip_global_norm(&mut small, 1.0);
        assert_eq!(norm, 0.5);
        assert_eq!(small[0].data()[0], 0.5);

        let mut any = vec![Tensor::from_vec(vec![1], vec![9.0])];
        clip_global_norm(&mut any, 0.0);
        assert_eq!(any[0].data()[0], 9.0, "0 disables clipping");
    }

    #[test]
    fn step_rng_depends_only_on_seed_and_step() {
        let a: Vec<u64> = (0..4).map(|_| step_rng(7, 3).gen()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        assert_ne!(step_rng(7, 3).gen::<u64>(), step_rng(7, 4).gen::<u64>());
        assert_ne!(step_rng(7, 3).gen::<u64>(), step_rng(8, 3).gen::<u64>());
    }

    #[test]
    fn step_plan_draws_attributes_uniformly() {
        let attrs = [Attribute::Coord, Attribute::Normal, Attribute::Radius];
        let n = 3000;
        let mut counts = [0usize; 3];
        let mut t_min = usize::MAX;
        let mut t_max = 0;
        let mut sample_one = 0;
        for step in 1..=n {
            let mut rng = step_rng(11, step);
            let (s, a, t) = step_plan(&mut rng, 2, &attrs, 1000);
            counts[attrs.iter().position(|&x| x == a).unwrap()] += 1;
            t_min = t_min.min(t);
            t_max = t_max.max(t);
            sample_one += s;
        }
        // 4 sigma of Binomial(3000, 1/3) is about 103.
        for (i, &c) in counts.iter().enumerate() {
            assert!((c as i64 - 1000).abs() < 110, "attribute {i} drawn {c} times");
        }
        assert!(t_min >= 1 && t_min < 50, "t_min {t_min}");
        assert!(t_max <= 1000 && t_max > 950, "t_max {t_max}");
        // 4 sigma of Binomial(3000, 1/2) is about 110.
        assert!((sample_one as i64 - 1500).abs() < 115, "sample 1 drawn {sample_one} times");
    }

    #[test]
    fn training_reduces_the_loss() {
        let samples = tiny_samples();
        let cfg = tiny_train_config();
        let mut model = Model::init(tiny_model_config(), 1).unwrap();
        let mut opt = AdamW::new(&cfg, &model.params);
        let mut losses = Vec::new();
        train_loop(&mut model, &mut opt, &samples, &cfg, 0, 120, |s| losses.push(s.loss))
            .unwrap();
        assert_eq!(losses.len(), 120);
        let head: f64 = losses[..20].iter().sum::<f64>() / 20.0;
        let tail: f64 = losses[100..].iter().sum::<f64>() / 20.0;
        assert!(
            tail < 0.6 * head,
            "loss did not drop: first 20 avg {head}, last 20 avg {tail}"
        );
        assert!(losses.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn resume_from_checkpoint_is_bitwise() {
        let dir = tempdir().unwrap();
        let ck_a = dir.path().join("a.ugck");
        let ck_b = dir.path().join("b.ugck");
        let samples = tiny_samples();
        let cfg = tiny_train_config();

        // Run A: 4 steps, checkpoint (washes in place), 4 more steps.
        let mut model_a = Model::init(tiny_model_config(), 9).unwrap();
        let mut opt_a = AdamW::new(&cfg, &model_a.params);
        train_loop(&mut model_a, &mut opt_a, &samples, &cfg, 0, 4, |_| {}).unwrap();
        save_train_checkpoint(&ck_a, &mut model_a, &mut opt_a, cfg.seed).unwrap();
        train_loop(&mut model_a, &mut opt_a, &samples, &cfg, 4, 4, |_| {}).unwrap();

        // Run B: restart from the file and replay the back half.
        let (mut model_b, mut opt_b, meta) = load_train_checkpoint(&ck_a, &cfg).unwrap();
        assert_eq!(meta.trained_steps, 4);
        train_loop(&mut model_b, &mut opt_b, &samples, &cfg, 4, 4, |_| {}).unwrap();

        for ((na, ta), (nb, tb)) in model_a.params.iter().zip(model_b.params.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data(), "parameter {na} diverged after resume");
        }
        // The optimizer state also matches: a further checkpoint from each
        // run serializes identically.
        save_train_checkpoint(&ck_b, &mut model_b, &mut opt_b, cfg.seed).unwrap();
        let ck_a2 = dir.path().join("a2.ugck");
        save_train_checkpoint(&ck_a2, &mut model_a, &mut opt_a, cfg.seed).unwrap();
        assert_eq!(std::fs::read(&ck_a2).unwrap(), std::fs::read(&ck_b).unwrap());
    }

    #[test]
    fn poisoned_parameters_abort_with_the_step_number() {
        let samples = tiny_samples();
        let cfg = tiny_train_config();
        let mut model = Model::init(tiny_model_config(), 2).unwrap();
        model.params.get_mut("input.w").unwrap().data_mut()[0] = f64::NAN;
        let mut opt = AdamW::new(&cfg, &model.params);
        let err = train_loop(&mut model, &mut opt, &samples, &cfg, 6, 3, |_| {}).unwrap_err();
        assert!(matches!(err, TrainError::Diverged { step: 7 }), "{err}");
    }

    #[test]
    fn config_validation_catches_bad_fields() {
        for cfg in [
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { beta1: 1.0, ..Default::default() },
            TrainConfig { attributes: vec![], ..Default::default() },
            TrainConfig { attributes: vec![Attribute::Rgb], ..Default::default() },
            TrainConfig {
                attributes: vec![Attribute::Coord, Attribute::Coord],
                ..Default::default()
            },
            TrainConfig { diffusion_steps: 0, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn empty_sample_list_is_rejected() {
        let cfg = tiny_train_config();
        let mut model = Model::init(tiny_model_config(), 3).unwrap();
        let mut opt = AdamW::new(&cfg, &model.params);
        assert!(matches!(
            train_loop(&mut model, &mut opt, &[], &cfg, 0, 1, |_| {}),
            Err(TrainError::NoData)
        ));
    }
}
