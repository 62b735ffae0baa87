//! DDPM schedule algebra, forward noising, posterior sampling and inpainting.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{DipError, Result};
use crate::scene::Action;
use crate::{NUM_JOINTS, POSE_DIM};

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;
pub const DEFAULT_T_INPAINT: usize = 50;

/// Per-step coefficients. Index 0 of `alpha`, `beta` and `beta_tilde` is an
/// unused placeholder so that step `t` lives at index `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub beta: Vec<f64>,
    pub beta_tilde: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_betas(betas: &[f64]) -> Result<Self> {
        if betas.is_empty() {
            return Err(DipError::InvalidSchedule("need at least one step".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(DipError::InvalidSchedule(format!(
                "beta {b} outside (0, 1)"
            )));
        }
        let steps = betas.len();
        let mut alpha = vec![1.0; steps + 1];
        let mut alpha_bar = vec![1.0; steps + 1];
        let mut beta = vec![0.0; steps + 1];
        let mut beta_tilde = vec![0.0; steps + 1];
        for t in 1..=steps {
            beta[t] = betas[t - 1];
            alpha[t] = 1.0 - beta[t];
            alpha_bar[t] = alpha_bar[t - 1] * alpha[t];
            beta_tilde[t] = (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]) * beta[t];
        }
        Ok(NoiseSchedule {
            steps,
            alpha,
            alpha_bar,
            beta,
            beta_tilde,
        })
    }

    /// `(c0, ct)` with `mu = c0 * x0_hat + ct * x_t`.
    pub fn posterior_coefs(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bar[t];
        let ab_prev = self.alpha_bar[t - 1];
        if ab_prev == 1.0 {
            // 1 - abar_1 equals beta_1 in exact arithmetic only
            return (1.0, 0.0);
        }
        let denom = 1.0 - ab;
        (
            ab_prev.sqrt() * self.beta[t] / denom,
            self.alpha[t].sqrt() * (1.0 - ab_prev) / denom,
        )
    }
}

/// Linear betas from `beta_start` to `beta_end` over `steps`.
pub fn build_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(DipError::InvalidSchedule(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    NoiseSchedule::from_betas(&linear_betas(steps, beta_start, beta_end, 1.0))
}

fn linear_betas(steps: usize, start: f64, end: f64, scale: f64) -> Vec<f64> {
    (0..steps)
        .map(|i| {
            let u = if steps > 1 {
                i as f64 / (steps - 1) as f64
            } else {
                0.0
            };
            scale * (start + (end - start) * u)
        })
        .collect()
}

/// The default linear schedule. Other step counts scale every beta by one
/// factor, found by bisection, so the final `alpha_bar` matches the
/// 1000-step value.
pub fn default_schedule(steps: usize) -> Result<NoiseSchedule> {
    let base = build_schedule(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)?;
    if steps == DEFAULT_STEPS {
        return Ok(base);
    }
    if steps == 0 {
        return Err(DipError::InvalidSchedule("need at least one step".into()));
    }
    let target = base.alpha_bar[DEFAULT_STEPS].ln();
    let max_beta = if steps > 1 {
        DEFAULT_BETA_END
    } else {
        DEFAULT_BETA_START
    };
    let log_ab = |k: f64| {
        linear_betas(steps, DEFAULT_BETA_START, DEFAULT_BETA_END, k)
            .iter()
            .map(|b| (1.0 - b).ln())
            .sum::<f64>()
    };
    let (mut lo, mut hi) = (1e-9, (1.0 - 1e-12) / max_beta);
    if log_ab(hi) > target {
        return Err(DipError::InvalidSchedule(format!(
            "cannot reach the default noise level in {steps} steps"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if log_ab(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    NoiseSchedule::from_betas(&linear_betas(
        steps,
        DEFAULT_BETA_START,
        DEFAULT_BETA_END,
        0.5 * (lo + hi),
    ))
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
pub fn forward_noise<R: Rng + ?Sized>(
    x0: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Vec<f64> {
    let ab = sched.alpha_bar[t];
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.iter()
        .map(|&x| a * x + b * standard_normal(rng))
        .collect()
}

pub fn posterior_mean(x0_hat: &[f64], x_t: &[f64], t: usize, sched: &NoiseSchedule) -> Vec<f64> {
    let (c0, ct) = sched.posterior_coefs(t);
    x0_hat
        .iter()
        .zip(x_t)
        .map(|(a, b)| c0 * a + ct * b)
        .collect()
}

/// Draws from `N(mu, beta_tilde_t I)`; returns `mu` unchanged when the
/// variance is zero.
pub fn posterior_sample<R: Rng + ?Sized>(
    mu: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Vec<f64> {
    let var = sched.beta_tilde[t];
    if var == 0.0 {
        return mu.to_vec();
    }
    let sd = var.sqrt();
    mu.iter().map(|&m| m + sd * standard_normal(rng)).collect()
}

/// Sparse joint-position hints over `frames x 22` slots.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeHints {
    frames: usize,
    values: Vec<Vector3<f64>>,
    valid: Vec<bool>,
}

impl KeyframeHints {
    pub fn empty(frames: usize) -> Self {
        KeyframeHints {
            frames,
            values: vec![Vector3::zeros(); frames * NUM_JOINTS],
            valid: vec![false; frames * NUM_JOINTS],
        }
    }

    /// Builds hints from zero-padded values plus a validity mask.
    pub fn from_parts(frames: usize, values: Vec<Vector3<f64>>, valid: Vec<bool>) -> Result<Self> {
        let n = frames * NUM_JOINTS;
        for (what, len) in [("hint values", values.len()), ("hint mask", valid.len())] {
            if len != n {
                return Err(DipError::Shape {
                    what,
                    expected: n,
                    actual: len,
                });
            }
        }
        let mut h = KeyframeHints::empty(frames);
        for (i, (v, ok)) in values.into_iter().zip(valid).enumerate() {
            if ok {
                h.set(i / NUM_JOINTS, i % NUM_JOINTS, v)?;
            }
        }
        Ok(h)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn set(&mut self, frame: usize, joint: usize, p: Vector3<f64>) -> Result<()> {
        if frame >= self.frames || joint >= NUM_JOINTS {
            return Err(DipError::Validation(format!(
                "hint slot ({frame}, {joint}) outside {} x {NUM_JOINTS}",
                self.frames
            )));
        }
        if !p.iter().all(|v| v.is_finite()) {
            return Err(DipError::Validation("hint position must be finite".into()));
        }
        let i = frame * NUM_JOINTS + joint;
        self.values[i] = p;
        self.valid[i] = true;
        Ok(())
    }

    pub fn get(&self, frame: usize, joint: usize) -> Option<Vector3<f64>> {
        let i = frame * NUM_JOINTS + joint;
        self.valid[i].then(|| self.values[i])
    }

    /// `(frame, joint, position)` for every valid slot in frame-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, Vector3<f64>)> + '_ {
        self.valid
            .iter()
            .enumerate()
            .filter(|(_, ok)| **ok)
            .map(|(i, _)| (i / NUM_JOINTS, i % NUM_JOINTS, self.values[i]))
    }

    pub fn len(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> &[Vector3<f64>] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.valid
    }
}

/// Entries of the clean-motion prediction held fixed during sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct InpaintSpec {
    pub mask: Vec<bool>,
    pub values: Vec<f64>,
}

impl InpaintSpec {
    pub fn none(frames: usize) -> Self {
        InpaintSpec {
            mask: vec![false; frames * POSE_DIM],
            values: vec![0.0; frames * POSE_DIM],
        }
    }

    /// Holds every coordinate of `pose` at `frame`.
    pub fn hold_frame(&mut self, frame: usize, pose: &[f64]) {
        let r = frame * POSE_DIM..(frame + 1) * POSE_DIM;
        self.mask[r.clone()].iter_mut().for_each(|m| *m = true);
        self.values[r].copy_from_slice(pose);
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|m| *m)
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        for (what, n) in [
            ("inpaint mask", self.mask.len()),
            ("inpaint values", self.values.len()),
        ] {
            if n != len {
                return Err(DipError::Shape {
                    what,
                    expected: len,
                    actual: n,
                });
            }
        }
        if self
            .mask
            .iter()
            .zip(&self.values)
            .any(|(m, v)| *m && !v.is_finite())
        {
            return Err(DipError::Validation(
                "held inpaint values must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Replaces masked entries by the held values when `t > t_inpaint`.
pub fn apply_inpaint_in_place(x0_hat: &mut [f64], spec: &InpaintSpec, t: usize, t_inpaint: usize) {
    if t <= t_inpaint {
        return;
    }
    for ((x, &m), &v) in x0_hat.iter_mut().zip(&spec.mask).zip(&spec.values) {
        if m {
            *x = v;
        }
    }
}

pub fn apply_inpaint(x0_hat: &[f64], spec: &InpaintSpec, t: usize, t_inpaint: usize) -> Vec<f64> {
    let mut out = x0_hat.to_vec();
    apply_inpaint_in_place(&mut out, spec, t, t_inpaint);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub action: Action,
    pub hints: KeyframeHints,
}

/// A model predicting the clean motion from a noisy one.
pub trait Denoiser: Send + Sync {
    fn schedule(&self) -> &NoiseSchedule;

    fn predict_x0(&self, x_t: &[f64], t: usize, c: &Condition) -> Result<Vec<f64>>;

    /// Gradient of `<x0_hat(x_t), cot>` with respect to `x_t`. The default
    /// uses central differences and costs two predictions per coordinate.
    fn vjp(&self, x_t: &[f64], t: usize, c: &Condition, cot: &[f64]) -> Result<Vec<f64>> {
        fd_vjp(self, x_t, t, c, cot)
    }
}

pub fn fd_vjp<D: Denoiser + ?Sized>(
    d: &D,
    x_t: &[f64],
    t: usize,
    c: &Condition,
    cot: &[f64],
) -> Result<Vec<f64>> {
    let mut x = x_t.to_vec();
    let mut out = vec![0.0; x.len()];
    for i in 0..x.len() {
        let h = 1e-6 * x_t[i].abs().max(1.0);
        x[i] = x_t[i] + h;
        let up = d.predict_x0(&x, t, c)?;
        x[i] = x_t[i] - h;
        let down = d.predict_x0(&x, t, c)?;
        x[i] = x_t[i];
        out[i] = up
            .iter()
            .zip(&down)
            .zip(cot)
            .map(|((a, b), w)| (a - b) * w)
            .sum::<f64>()
            / (2.0 * h);
    }
    Ok(out)
}
