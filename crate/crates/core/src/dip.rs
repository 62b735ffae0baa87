//! Reward-guided ancestral sampling. Each step denoises, inpaints, forms the
//! posterior mean, nudges it up the interaction reward and samples.

use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    apply_inpaint_in_place, posterior_mean, posterior_sample, Condition, Denoiser, InpaintSpec,
    DEFAULT_T_INPAINT,
};
use crate::error::{DipError, Result};
use crate::kinematics::MotionClip;
use crate::rewards::{r_total, RewardConfig, RewardContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceMode {
    /// Gradient taken through the denoiser's prediction from the mean.
    Inversion,
    /// Gradient of the reward at the mean itself.
    Direct,
    Unguided,
}

impl GuidanceMode {
    pub const ALL: [GuidanceMode; 3] = [
        GuidanceMode::Inversion,
        GuidanceMode::Direct,
        GuidanceMode::Unguided,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GuidanceMode::Inversion => "inversion",
            GuidanceMode::Direct => "direct",
            GuidanceMode::Unguided => "unguided",
        }
    }
}

impl fmt::Display for GuidanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GuidanceMode {
    type Err = DipError;

    fn from_str(s: &str) -> Result<Self> {
        GuidanceMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| DipError::Validation(format!("unknown guidance mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    pub mode: GuidanceMode,
    pub inner_iters: usize,
    /// Gradient norm cap applied before scaling by the posterior variance.
    pub clip: f64,
    pub t_inpaint: usize,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            mode: GuidanceMode::Inversion,
            inner_iters: 1,
            clip: 100.0,
            t_inpaint: DEFAULT_T_INPAINT,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner_iters < 1 {
            return Err(DipError::Validation(
                "guidance needs at least one inner iteration".into(),
            ));
        }
        if !(self.clip > 0.0) {
            return Err(DipError::Validation(format!(
                "gradient clip {} must be > 0",
                self.clip
            )));
        }
        Ok(())
    }
}

/// Per-step bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    /// Interaction reward of the inpainted prediction.
    pub reward: f64,
    /// Unweighted term values, zero for terms with zero weight.
    pub terms: [f64; 6],
    /// `|mu_t - x_t|`, the step the denoiser itself takes.
    pub nat_step: f64,
    /// Norm of the guidance displacement actually applied.
    pub guide_step: f64,
    /// False when a non-finite gradient forced an unguided step.
    pub guided: bool,
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub motion: MotionClip,
    /// One record per step, from `t = T` down to 1.
    pub trace: Vec<StepRecord>,
    pub seed: u64,
    pub mode: GuidanceMode,
}

impl SynthesisResult {
    /// Reward of the final prediction.
    pub fn final_reward(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.reward)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `g` down to norm `clip`. Returns `None` if it stays non-finite.
fn clip_gradient(mut g: Vec<f64>, clip: f64) -> Option<Vec<f64>> {
    let n = norm(&g);
    if n.is_finite() && n > clip {
        let s = clip / n;
        g.iter_mut().for_each(|x| *x *= s);
    } else if !n.is_finite() {
        // infinities alone can still be clipped to a direction
        if g.iter().any(|x| x.is_nan()) {
            return None;
        }
        let inf: Vec<f64> = g
            .iter()
            .map(|x| if x.is_infinite() { x.signum() } else { 0.0 })
            .collect();
        let k = norm(&inf);
        g = inf.into_iter().map(|x| x * clip / k).collect();
    }
    Some(g)
}

/// Raw (unclipped) reward gradient with respect to the mean.
pub fn guidance_gradient(
    mu: &[f64],
    t: usize,
    c: &Condition,
    denoiser: &dyn Denoiser,
    ctx: &RewardContext,
    rcfg: &RewardConfig,
    mode: GuidanceMode,
) -> Result<Vec<f64>> {
    match mode {
        GuidanceMode::Unguided => Ok(vec![0.0; mu.len()]),
        GuidanceMode::Direct => Ok(r_total(mu, ctx, rcfg, true, false).1.unwrap()),
        GuidanceMode::Inversion => {
            let x0 = denoiser.predict_x0(mu, t - 1, c)?;
            let g = r_total(&x0, ctx, rcfg, true, false).1.unwrap();
            denoiser.vjp(mu, t - 1, c, &g)
        }
    }
}

/// `mu + beta_tilde_t * clip(grad)`, repeated `inner_iters` times. The
/// second value is false when a non-finite gradient cut the update short.
pub fn guidance_step(
    mu: &[f64],
    t: usize,
    c: &Condition,
    denoiser: &dyn Denoiser,
    ctx: &RewardContext,
    rcfg: &RewardConfig,
    gcfg: &GuidanceConfig,
) -> Result<(Vec<f64>, bool)> {
    let sched = denoiser.schedule();
    if t == 0 || t > sched.steps {
        return Err(DipError::Validation(format!(
            "step {t} outside 1..={}",
            sched.steps
        )));
    }
    let var = sched.beta_tilde[t];
    let mut out = mu.to_vec();
    if gcfg.mode == GuidanceMode::Unguided || var == 0.0 {
        return Ok((out, true));
    }
    for _ in 0..gcfg.inner_iters {
        let g = guidance_gradient(&out, t, c, denoiser, ctx, rcfg, gcfg.mode)?;
        match clip_gradient(g, gcfg.clip) {
            Some(g) => out.iter_mut().zip(&g).for_each(|(m, d)| *m += var * d),
            None => {
                warn!("non-finite guidance gradient at t={t}; taking an unguided step");
                return Ok((mu.to_vec(), false));
            }
        }
    }
    Ok((out, true))
}

/// Runs the full reverse chain from `x_T ~ N(0, I)` seeded by `seed`.
#[allow(clippy::too_many_arguments)]
pub fn synthesize(
    denoiser: &dyn Denoiser,
    ctx: &RewardContext,
    c: &Condition,
    inpaint: &InpaintSpec,
    rcfg: &RewardConfig,
    gcfg: &GuidanceConfig,
    seed: u64,
) -> Result<SynthesisResult> {
    gcfg.validate()?;
    rcfg.validate()?;
    let frames = c.hints.frames();
    let n = frames * crate::POSE_DIM;
    inpaint.validate(n)?;
    let sched = denoiser.schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut trace = Vec::with_capacity(sched.steps);
    let mut last = Vec::new();
    for t in (1..=sched.steps).rev() {
        let mut x0 = denoiser.predict_x0(&x, t, c)?;
        apply_inpaint_in_place(&mut x0, inpaint, t, gcfg.t_inpaint);
        let breakdown = r_total(&x0, ctx, rcfg, false, false).0;
        let mu = posterior_mean(&x0, &x, t, sched);
        let nat_step = norm(&mu.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>());
        let (mu_t, guided) = guidance_step(&mu, t, c, denoiser, ctx, rcfg, gcfg)?;
        let guide_step = norm(&mu_t.iter().zip(&mu).map(|(a, b)| a - b).collect::<Vec<_>>());
        trace.push(StepRecord {
            t,
            reward: breakdown.total,
            terms: breakdown.values,
            nat_step,
            guide_step,
            guided,
        });
        x = posterior_sample(&mu_t, t, sched, &mut rng);
        last = x0;
    }
    if last.iter().any(|v| !v.is_finite()) {
        return Err(DipError::Validation(
            "synthesized motion is not finite".into(),
        ));
    }
    Ok(SynthesisResult {
        motion: MotionClip::from_flat(&last, rcfg.fps)?,
        trace,
        seed,
        mode: gcfg.mode,
    })
}
