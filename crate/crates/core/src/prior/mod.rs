//! Denoisers satisfying the diffusion contract. The default is an analytic
//! projection onto a per-action linear motion basis, conditioned on
//! keyframe hints through a weighted least-squares pull.

mod basis;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub use basis::{
    build_action_basis, decode_basis, encode_basis, load_basis, save_basis, translation_ramp_std,
    MotionBasis, GAIT_HZ, MAX_COLUMNS, ORIENT_RAMPS, STAND_DROP, TRANSLATION_RAMPS,
};

use crate::diffusion::{Condition, Denoiser, KeyframeHints, NoiseSchedule};
use crate::error::{DipError, Result};
use crate::kinematics::{forward, joint_jacobian, Skeleton, PELVIS, TAU_OFFSET};
use crate::scene::Action;
use crate::POSE_DIM;

pub const DEFAULT_HINT_WEIGHT: f64 = 10.0;
const RIDGE: f64 = 1e-8;

/// How the noisy input is mapped to basis coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    /// Orthogonal projection of `x_t / sqrt(abar_t)`.
    Projection,
    /// Posterior mean of the coefficients under the basis prior, which
    /// shrinks toward the prior mean as the noise grows.
    Wiener,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionConfig {
    pub hint_weight: f64,
    pub mode: PriorMode,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            hint_weight: DEFAULT_HINT_WEIGHT,
            mode: PriorMode::Wiener,
        }
    }
}

/// Orthonormal columns stored sparsely, with a row index for row access.
#[derive(Debug, Clone)]
struct SparseBasis {
    n: usize,
    cols: Vec<Vec<(u32, f64)>>,
    rows: Vec<Vec<(u32, f64)>>,
}

impl SparseBasis {
    fn from_dense(n: usize, dense: Vec<Vec<f64>>) -> Self {
        let mut rows = vec![Vec::new(); n];
        let cols: Vec<Vec<(u32, f64)>> = dense
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let nz: Vec<(u32, f64)> = c
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(i, v)| (i as u32, *v))
                    .collect();
                for &(i, v) in &nz {
                    rows[i as usize].push((j as u32, v));
                }
                nz
            })
            .collect();
        SparseBasis { n, cols, rows }
    }

    fn dim(&self) -> usize {
        self.cols.len()
    }

    /// `Q^T x`
    fn t_mul(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.cols
                .iter()
                .map(|c| c.iter().map(|&(i, v)| v * x[i as usize]).sum::<f64>()),
        )
    }

    /// `Q theta`
    fn mul(&self, theta: &DVector<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (c, &w) in self.cols.iter().zip(theta.iter()) {
            if w != 0.0 {
                for &(i, v) in c {
                    out[i as usize] += w * v;
                }
            }
        }
        out
    }

    fn row_dot(&self, row: usize, theta: &DVector<f64>) -> f64 {
        self.rows[row]
            .iter()
            .map(|&(j, v)| v * theta[j as usize])
            .sum()
    }

    fn row_dense(&self, row: usize) -> DVector<f64> {
        let mut r = DVector::zeros(self.dim());
        for &(j, v) in &self.rows[row] {
            r[j as usize] = v;
        }
        r
    }
}

/// Per-action orthonormal basis and coefficient prior.
#[derive(Debug, Clone)]
pub struct ActionModel {
    pub action: Action,
    pub frames: usize,
    q: SparseBasis,
    theta_mean: DVector<f64>,
    eig_vecs: DMatrix<f64>,
    eig_vals: DVector<f64>,
}

/// Modified Gram-Schmidt with one reorthogonalization pass. Returns the
/// orthonormal columns and the upper-triangular `R` with `B = Q R`.
/// Columns touching disjoint pose dimensions are never combined, which
/// keeps `Q` as sparse as the input.
fn orthonormalize(columns: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, DMatrix<f64>)> {
    let d = columns.len();
    let support = |c: &[f64]| -> u128 {
        c.iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .fold(0u128, |m, (i, _)| m | (1u128 << (i % POSE_DIM)))
    };
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut masks: Vec<u128> = Vec::with_capacity(d);
    let mut r = DMatrix::zeros(d, d);
    for (j, b) in columns.iter().enumerate() {
        let mut v = b.clone();
        let mut mask = support(b);
        let norm0 = basis::dot(b, b).sqrt();
        for _ in 0..2 {
            for i in 0..j {
                if masks[i] & mask == 0 {
                    continue;
                }
                let c = basis::dot(&q[i], &v);
                if c != 0.0 {
                    for (x, y) in v.iter_mut().zip(&q[i]) {
                        *x -= c * y;
                    }
                    r[(i, j)] += c;
                    mask |= masks[i];
                }
            }
        }
        let nv = basis::dot(&v, &v).sqrt();
        if !(nv > 1e-10 * norm0.max(1e-300)) {
            return Err(DipError::Validation(format!(
                "basis column {j} is linearly dependent"
            )));
        }
        r[(j, j)] = nv;
        v.iter_mut().for_each(|x| *x /= nv);
        q.push(v);
        masks.push(mask);
    }
    Ok((q, r))
}

impl ActionModel {
    pub fn new(basis: &MotionBasis) -> Result<Self> {
        let d = basis.dim();
        if d == 0 || d > MAX_COLUMNS {
            return Err(DipError::Validation(format!(
                "basis has {d} columns, allowed 1..={MAX_COLUMNS}"
            )));
        }
        if basis.prior_mean.len() != d || basis.prior_std.len() != d {
            return Err(DipError::Shape {
                what: "basis prior",
                expected: d,
                actual: basis.prior_mean.len().min(basis.prior_std.len()),
            });
        }
        let (q, r) = orthonormalize(&basis.columns)?;
        let phi = DVector::from_column_slice(&basis.prior_mean);
        let c2 = DVector::from_iterator(d, basis.prior_std.iter().map(|s| s * s));
        let theta_mean = &r * phi;
        let sigma = &r * DMatrix::from_diagonal(&c2) * r.transpose();
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sigma);
        Ok(ActionModel {
            action: basis.action,
            frames: basis.frames,
            q: SparseBasis::from_dense(basis.len(), q),
            theta_mean,
            eig_vecs: eig.eigenvectors,
            eig_vals: eig.eigenvalues.map(|v| v.max(0.0)),
        })
    }

    pub fn dim(&self) -> usize {
        self.q.dim()
    }

    /// Orthogonal projection onto the basis span.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.q.mul(&self.q.t_mul(x))
    }

    /// Euclidean distance from `x` to the basis span.
    pub fn span_residual(&self, x: &[f64]) -> f64 {
        let p = self.project(x);
        x.iter()
            .zip(&p)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Per-eigendirection gain of the coefficient filter at noise level
    /// `s2 = (1 - abar) / abar`.
    fn gains(&self, mode: PriorMode, s2: f64) -> Option<DVector<f64>> {
        match mode {
            PriorMode::Projection => None,
            PriorMode::Wiener => {
                Some(
                    self.eig_vals
                        .map(|l| if l + s2 > 0.0 { l / (l + s2) } else { 1.0 }),
                )
            }
        }
    }

    fn apply_gain(&self, gains: &Option<DVector<f64>>, v: &DVector<f64>) -> DVector<f64> {
        match gains {
            None => v.clone(),
            Some(f) => {
                let w = self.eig_vecs.tr_mul(v).component_mul(f);
                &self.eig_vecs * w
            }
        }
    }
}

/// Linearized hint constraints `A theta ~ c`.
struct HintSystem {
    a: DMatrix<f64>,
    c: DVector<f64>,
}

/// How hints combine with the hint-free estimate: minimize
/// `(theta - theta_hat)^T K^{-1} (theta - theta_hat) + w |A theta - c|^2`.
struct HintMetric<'m> {
    model: &'m ActionModel,
    gains: Option<DVector<f64>>,
    w: f64,
}

impl HintMetric<'_> {
    fn gain(&self, v: &DVector<f64>) -> DVector<f64> {
        self.model.apply_gain(&self.gains, v)
    }
}

impl HintSystem {
    /// Cholesky factor of `I / w + A K A^T`, plus `K A^T`.
    fn factor(
        &self,
        m: &HintMetric,
    ) -> Option<(nalgebra::Cholesky<f64, nalgebra::Dyn>, DMatrix<f64>)> {
        let r = self.a.nrows();
        let mut kat = DMatrix::zeros(self.a.ncols(), r);
        for i in 0..r {
            kat.set_column(i, &m.gain(&self.a.row(i).transpose()));
        }
        let g = &self.a * &kat + DMatrix::identity(r, r) / m.w;
        let g = (&g + g.transpose()) * 0.5;
        let chol = match g.clone().cholesky() {
            Some(c) => c,
            None => {
                log::warn!("hint system not positive definite, adding ridge {RIDGE}");
                let mut g = g;
                for i in 0..r {
                    g[(i, i)] += RIDGE;
                }
                g.cholesky()?
            }
        };
        Some((chol, kat))
    }

    /// `theta_hat + K A^T (I / w + A K A^T)^{-1} (c - A theta_hat)`.
    fn apply(&self, m: &HintMetric, theta_hat: &DVector<f64>) -> DVector<f64> {
        match self.factor(m) {
            Some((chol, kat)) => theta_hat + kat * chol.solve(&(&self.c - &self.a * theta_hat)),
            None => theta_hat.clone(),
        }
    }

    /// Transposed Jacobian of [`Self::apply`] applied to `u`:
    /// `u - A^T (I / w + A K A^T)^{-1} A K u`.
    fn apply_transpose(&self, m: &HintMetric, u: &DVector<f64>) -> DVector<f64> {
        match self.factor(m) {
            Some((chol, kat)) => u - self.a.tr_mul(&chol.solve(&kat.tr_mul(u))),
            None => u.clone(),
        }
    }
}

/// The acceptance-path denoiser.
#[derive(Debug, Clone)]
pub struct ProjectionDenoiser {
    sched: NoiseSchedule,
    skel: Skeleton,
    cfg: ProjectionConfig,
    models: Vec<Option<Arc<ActionModel>>>,
}

impl ProjectionDenoiser {
    pub fn new(
        sched: NoiseSchedule,
        skel: Skeleton,
        bases: &[MotionBasis],
        cfg: ProjectionConfig,
    ) -> Result<Self> {
        if !(cfg.hint_weight >= 0.0 && cfg.hint_weight.is_finite()) {
            return Err(DipError::Validation(format!(
                "hint weight {} must be >= 0",
                cfg.hint_weight
            )));
        }
        let mut models = vec![None; Action::ALL.len()];
        for b in bases {
            models[b.action.tag() as usize] = Some(Arc::new(ActionModel::new(b)?));
        }
        Ok(ProjectionDenoiser {
            sched,
            skel,
            cfg,
            models,
        })
    }

    /// Builds the default basis for every action.
    pub fn with_default_bases(
        sched: NoiseSchedule,
        skel: Skeleton,
        frames: usize,
        cfg: ProjectionConfig,
    ) -> Result<Self> {
        let bases = Action::ALL
            .iter()
            .map(|&a| build_action_basis(a, frames))
            .collect::<Result<Vec<_>>>()?;
        Self::new(sched, skel, &bases, cfg)
    }

    /// Same bases and skeleton, different schedule or settings.
    pub fn reconfigured(&self, sched: NoiseSchedule, cfg: ProjectionConfig) -> Self {
        ProjectionDenoiser {
            sched,
            skel: self.skel.clone(),
            cfg,
            models: self.models.clone(),
        }
    }

    pub fn config(&self) -> &ProjectionConfig {
        &self.cfg
    }

    pub fn model(&self, action: Action) -> Result<&ActionModel> {
        self.models[action.tag() as usize]
            .as_deref()
            .ok_or_else(|| DipError::MissingBasis(action.to_string()))
    }

    fn noise_ratio(&self, t: usize) -> (f64, f64) {
        let ab = self.sched.alpha_bar[t];
        (ab.sqrt(), (1.0 - ab) / ab)
    }

    fn check_input(&self, m: &ActionModel, x: &[f64], hints: &KeyframeHints) -> Result<()> {
        if x.len() != m.q.n {
            return Err(DipError::Shape {
                what: "noisy motion",
                expected: m.q.n,
                actual: x.len(),
            });
        }
        if hints.frames() != m.frames {
            return Err(DipError::Shape {
                what: "hint frames",
                expected: m.frames,
                actual: hints.frames(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(DipError::Validation(
                "noisy motion contains non-finite values".into(),
            ));
        }
        Ok(())
    }

    /// Hint-free coefficient estimate.
    fn theta_hat(&self, m: &ActionModel, x_t: &[f64], t: usize) -> DVector<f64> {
        let (sa, s2) = self.noise_ratio(t);
        let y = m.q.t_mul(x_t) / sa;
        match m.gains(self.cfg.mode, s2) {
            None => y,
            gains => &m.theta_mean + m.apply_gain(&gains, &(y - &m.theta_mean)),
        }
    }

    fn is_linear(hints: &KeyframeHints) -> bool {
        hints.iter().all(|(_, j, _)| j == PELVIS)
    }

    /// Constraint rows for every hint. Pelvis hints are exact linear rows in
    /// the translation; other joints are linearized through FK at the
    /// hint-free estimate.
    fn hint_system(
        &self,
        m: &ActionModel,
        theta_hat: &DVector<f64>,
        hints: &KeyframeHints,
    ) -> HintSystem {
        let d = m.dim();
        let r = 3 * hints.len();
        let mut a = DMatrix::zeros(r, d);
        let mut c = DVector::zeros(r);
        let root = *self.skel.offset(PELVIS);
        let mut frame_cache: Option<(usize, Vec<f64>, crate::kinematics::FrameKinematics)> = None;
        for (h, (s, joint, target)) in hints.iter().enumerate() {
            if joint == PELVIS {
                for ax in 0..3 {
                    let row = s * POSE_DIM + TAU_OFFSET + ax;
                    a.set_row(3 * h + ax, &m.q.row_dense(row).transpose());
                    c[3 * h + ax] = target[ax] - root[ax];
                }
                continue;
            }
            if frame_cache.as_ref().map(|f| f.0) != Some(s) {
                let pose: Vec<f64> = (0..POSE_DIM)
                    .map(|i| m.q.row_dot(s * POSE_DIM + i, theta_hat))
                    .collect();
                let fk = forward(&pose, &self.skel);
                frame_cache = Some((s, pose, fk));
            }
            let (_, pose, fk) = frame_cache.as_ref().unwrap();
            let jac = joint_jacobian(pose, fk, &self.skel, joint);
            for ax in 0..3 {
                let mut row = DVector::zeros(d);
                for (i, &jv) in jac[ax].iter().enumerate() {
                    if jv != 0.0 {
                        for &(col, qv) in &m.q.rows[s * POSE_DIM + i] {
                            row[col as usize] += jv * qv;
                        }
                    }
                }
                c[3 * h + ax] = target[ax] - fk.joints[joint][ax] + row.dot(theta_hat);
                a.set_row(3 * h + ax, &row.transpose());
            }
        }
        HintSystem { a, c }
    }

    /// Hint metric at step `t`. Projection mode solves
    /// `|Q theta - x_t / sqrt(abar)|^2 + w |A theta - c|^2`; Wiener mode adds
    /// the prior term `s2 (theta - theta_m)^T Sigma^{-1} (theta - theta_m)`,
    /// which turns the metric into `K^{-1}`. Hints are then met through
    /// high-variance (smooth) directions instead of local bumps.
    fn metric<'m>(&self, m: &'m ActionModel, t: usize) -> HintMetric<'m> {
        let (_, s2) = self.noise_ratio(t);
        match self.cfg.mode {
            PriorMode::Projection => HintMetric {
                model: m,
                gains: None,
                w: self.cfg.hint_weight,
            },
            PriorMode::Wiener => HintMetric {
                model: m,
                gains: m.gains(PriorMode::Wiener, s2),
                w: self.cfg.hint_weight,
            },
        }
    }

    fn hinted_theta(
        &self,
        m: &ActionModel,
        theta_hat: &DVector<f64>,
        hints: &KeyframeHints,
        t: usize,
    ) -> DVector<f64> {
        let metric = self.metric(m, t);
        if hints.is_empty() || !(metric.w > 0.0) {
            return theta_hat.clone();
        }
        self.hint_system(m, theta_hat, hints)
            .apply(&metric, theta_hat)
    }
}

impl Denoiser for ProjectionDenoiser {
    fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    fn predict_x0(&self, x_t: &[f64], t: usize, c: &Condition) -> Result<Vec<f64>> {
        let m = self.model(c.action)?;
        self.check_input(m, x_t, &c.hints)?;
        let theta_hat = self.theta_hat(m, x_t, t);
        let theta = self.hinted_theta(m, &theta_hat, &c.hints, t);
        Ok(m.q.mul(&theta))
    }

    fn vjp(&self, x_t: &[f64], t: usize, c: &Condition, cot: &[f64]) -> Result<Vec<f64>> {
        let m = self.model(c.action)?;
        self.check_input(m, x_t, &c.hints)?;
        if cot.len() != x_t.len() {
            return Err(DipError::Shape {
                what: "cotangent",
                expected: x_t.len(),
                actual: cot.len(),
            });
        }
        let (sa, s2) = self.noise_ratio(t);
        let u = m.q.t_mul(cot);
        let metric = self.metric(m, t);
        let g = if c.hints.is_empty() || !(metric.w > 0.0) {
            u
        } else if Self::is_linear(&c.hints) {
            let theta_hat = self.theta_hat(m, x_t, t);
            self.hint_system(m, &theta_hat, &c.hints)
                .apply_transpose(&metric, &u)
        } else {
            // the linearization point moves with theta_hat, so differentiate
            // the hint solve numerically in coefficient space
            let theta_hat = self.theta_hat(m, x_t, t);
            let mut g = DVector::zeros(m.dim());
            let mut probe = theta_hat.clone();
            for k in 0..m.dim() {
                let h = 1e-6 * theta_hat[k].abs().max(1.0);
                probe[k] = theta_hat[k] + h;
                let up = self.hinted_theta(m, &probe, &c.hints, t).dot(&u);
                probe[k] = theta_hat[k] - h;
                let down = self.hinted_theta(m, &probe, &c.hints, t).dot(&u);
                probe[k] = theta_hat[k];
                g[k] = (up - down) / (2.0 * h);
            }
            g
        };
        let gains = m.gains(self.cfg.mode, s2);
        Ok(m.q.mul(&(m.apply_gain(&gains, &g) / sa)))
    }
}
