//! Forward noising and deterministic denoising in token space.
//!
//! The schedule is the standard linear-beta chain; geometry tokens are noised
//! and denoised while rgb tokens stay clean and are reattached before every
//! model call. The main inference path is a single call at the final
//! timestep with zeroed geometry tokens and a clean-sample prediction head,
//! which makes inference deterministic; the multi-step sampler exists for
//! parity checks and experiments.

use thiserror::Error;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::geometry::Attribute;
use crate::model::{assemble_input, Model, ModelError, TokenLayout};
use crate::numerics::{Tape, Tensor};

pub const DEFAULT_DIFFUSION_STEPS: usize = 1000;
pub const BETA_MIN: f64 = 1e-4;
pub const BETA_MAX: f64 = 0.02;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("schedule: {0}")]
    Schedule(String),
    #[error("sampling produced non-finite values at step {step}")]
    Diverged { step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// What the network output means during denoising.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// The model predicts the noise added to the clean tokens.
    Epsilon,
    /// The model predicts the clean tokens directly.
    X0,
}

/// Linear-beta noising chain. `alpha_bar(t)` is the surviving signal power
/// after t steps, with `alpha_bar(0) = 1`.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    pub steps: usize,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(steps: usize) -> Result<Self, DiffusionError> {
        if steps == 0 {
            return Err(DiffusionError::Schedule("schedule needs at least one step".into()));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    BETA_MIN
                } else {
                    BETA_MIN + (BETA_MAX - BETA_MIN) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let mut alpha_bars = Vec::with_capacity(steps + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for &b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(NoiseSchedule { steps, betas, alpha_bars })
    }

    /// Beta for timestep t in 1..=steps.
    pub fn beta(&self, t: usize) -> f64 {
        assert!(t >= 1 && t <= self.steps, "timestep {t} outside 1..={}", self.steps);
        self.betas[t - 1]
    }

    /// Cumulative signal power for t in 0..=steps.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        assert!(t <= self.steps, "timestep {t} outside 0..={}", self.steps);
        self.alpha_bars[t]
    }
}

/// Forward noising: x_t = sqrt(a_bar_t) x0 + sqrt(1 - a_bar_t) eps with
/// standard normal eps. Returns (x_t, eps).
pub fn add_noise<R: Rng>(
    x0: &Tensor,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> (Tensor, Tensor) {
    let ab = schedule.alpha_bar(t);
    assert!(t >= 1, "noising starts at timestep 1");
    let (signal, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
    let eps: Vec<f64> = (0..x0.numel()).map(|_| rng.sample(StandardNormal)).collect();
    let xt: Vec<f64> =
        x0.data().iter().zip(&eps).map(|(&x, &e)| signal * x + noise * e).collect();
    (
        Tensor::from_vec(x0.shape().to_vec(), xt),
        Tensor::from_vec(x0.shape().to_vec(), eps),
    )
}

/// Deterministic sampler (no stochastic term) over an evenly spaced timestep
/// grid, generic over the denoiser. The denoiser sees the current geometry
/// tokens and the timestep; its output is interpreted per `parameterization`.
pub fn ddim_with<F>(
    schedule: &NoiseSchedule,
    steps: usize,
    parameterization: Parameterization,
    init: Tensor,
    mut denoise: F,
) -> Result<Tensor, DiffusionError>
where
    F: FnMut(&Tensor, usize) -> Result<Tensor, DiffusionError>,
{
    if steps == 0 || steps > schedule.steps {
        return Err(DiffusionError::Schedule(format!(
            "sampler wants {steps} steps, schedule has {}",
            schedule.steps
        )));
    }
    let times: Vec<usize> = (0..=steps).map(|i| schedule.steps * i / steps).collect();
    let mut x = init;
    for i in (1..=steps).rev() {
        let (t, t_prev) = (times[i], times[i - 1]);
        let pred = denoise(&x, t)?;
        if pred.shape() != x.shape() {
            return Err(ModelError::Shape(format!(
                "denoiser returned {:?} for state {:?}",
                pred.shape(),
                x.shape()
            ))
            .into());
        }
        let ab_t = schedule.alpha_bar(t);
        let ab_p = schedule.alpha_bar(t_prev);
        let (s_t, n_t) = (ab_t.sqrt(), (1.0 - ab_t).sqrt());
        let (s_p, n_p) = (ab_p.sqrt(), (1.0 - ab_p).sqrt());
        let next: Vec<f64> = x
            .data()
            .iter()
            .zip(pred.data())
            .map(|(&xt, &p)| {
                let (x0_hat, eps_hat) = match parameterization {
                    Parameterization::Epsilon => ((xt - n_t * p) / s_t, p),
                    Parameterization::X0 => (p, (xt - s_t * p) / n_t),
                };
                s_p * x0_hat + n_p * eps_hat
            })
            .collect();
        x = Tensor::from_vec(x.shape().to_vec(), next);
        if !x.all_finite() {
            return Err(DiffusionError::Diverged { step: t });
        }
    }
    Ok(x)
}

/// Denoised geometry tokens plus the attention maps recorded during the
/// final (for the multi-step sampler, last executed) model call.
pub struct InferOutput {
    /// [image_tokens, patch_dim] in normalized space.
    pub tokens: Tensor,
    /// Per-layer [heads, tokens, tokens] softmax probabilities.
    pub attention: Vec<Tensor>,
}

/// Multi-step deterministic sampling with the rgb tokens held clean.
#[allow(clippy::too_many_arguments)]
pub fn ddim_sample(
    model: &Model,
    layout: &TokenLayout,
    rgb: &Tensor,
    attribute: Attribute,
    schedule: &NoiseSchedule,
    parameterization: Parameterization,
    steps: usize,
    init: Tensor,
) -> Result<InferOutput, DiffusionError> {
    let mut attention = Vec::new();
    let tokens = ddim_with(schedule, steps, parameterization, init, |geo, t| {
        let input = assemble_input(layout, rgb, geo);
        let mut tape = Tape::new();
        let staged = model.stage(&mut tape);
        let out = model.forward(&mut tape, &staged, &input, layout, t as f64, attribute)?;
        attention = out.attention;
        Ok(tape.value(out.prediction).clone())
    })?;
    Ok(InferOutput { tokens, attention })
}

/// The primary inference path: one model call at the final timestep with
/// zeroed geometry tokens, reading the output as the clean tokens. Requires
/// a model trained with the [`Parameterization::X0`] objective; fully
/// deterministic.
pub fn one_step_infer(
    model: &Model,
    layout: &TokenLayout,
    rgb: &Tensor,
    attribute: Attribute,
    schedule: &NoiseSchedule,
) -> Result<InferOutput, DiffusionError> {
    let geo = Tensor::zeros(vec![layout.image_tokens(), model.config.patch_dim()]);
    let input = assemble_input(layout, rgb, &geo);
    let mut tape = Tape::new();
    let staged = model.stage(&mut tape);
    let out =
        model.forward(&mut tape, &staged, &input, layout, schedule.steps as f64, attribute)?;
    let tokens = tape.value(out.prediction).clone();
    if !tokens.all_finite() {
        return Err(DiffusionError::Diverged { step: schedule.steps });
    }
    Ok(InferOutput { tokens, attention: out.attention })
}
