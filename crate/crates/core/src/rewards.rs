//! Interaction rewards on a flattened motion, with analytic gradients
//! through forward kinematics.

use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::kinematics::{
    backward, forward, markers_from, BodyPart, FrameKinematics, MarkerSet, Skeleton,
};
use crate::scene::{Action, GoalSpec, SceneView};
use crate::{DEFAULT_FPS, NUM_JOINTS, POSE_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccForm {
    /// `sum (|a| nu^2 - eps_acc)`, unclamped.
    Printed,
    /// `-sum max(|a| nu^2 - eps_acc, 0)`.
    Clamped,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Lambdas {
    pub his: f64,
    pub acc: f64,
    pub goal: f64,
    pub cont: f64,
    pub pene: f64,
    pub skt: f64,
}

impl Lambdas {
    pub fn get(&self, term: Term) -> f64 {
        match term {
            Term::His => self.his,
            Term::Acc => self.acc,
            Term::Goal => self.goal,
            Term::Cont => self.cont,
            Term::Pene => self.pene,
            Term::Skt => self.skt,
        }
    }

    pub fn set(&mut self, term: Term, v: f64) {
        match term {
            Term::His => self.his = v,
            Term::Acc => self.acc = v,
            Term::Goal => self.goal = v,
            Term::Cont => self.cont = v,
            Term::Pene => self.pene = v,
            Term::Skt => self.skt = v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub action: Action,
    pub lambda: Lambdas,
    pub eps_vel: f64,
    pub eps_pene: f64,
    pub eps_cont: f64,
    pub eps_acc: f64,
    pub acc_form: AccForm,
    pub fps: f64,
}

impl RewardConfig {
    /// Weights and tolerances commonly used for each action.
    pub fn for_action(action: Action) -> Self {
        let mut lambda = Lambdas {
            his: 1.0,
            goal: 1.0,
            cont: 0.1,
            ..Lambdas::default()
        };
        match action {
            Action::Locomotion => lambda.skt = 1e-3,
            Action::Sit => {
                lambda.skt = 3e-4;
                lambda.pene = 0.1;
                lambda.acc = 1e-3;
            }
            Action::Lie => {
                lambda.pene = 3e-2;
                lambda.acc = 1e-3;
            }
        }
        RewardConfig {
            action,
            lambda,
            eps_vel: 0.5,
            eps_pene: 0.03,
            eps_cont: 0.01,
            eps_acc: 50.0,
            acc_form: AccForm::Printed,
            fps: DEFAULT_FPS,
        }
    }

    /// Same tolerances with every weight zero.
    pub fn zeroed(action: Action) -> Self {
        RewardConfig {
            lambda: Lambdas::default(),
            ..Self::for_action(action)
        }
    }

    pub fn contact_parts(&self) -> &'static [BodyPart] {
        match self.action {
            Action::Locomotion => &[BodyPart::Foot],
            Action::Sit | Action::Lie => &[BodyPart::Foot, BodyPart::Gluteus, BodyPart::Back],
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let l = &self.lambda;
        let all = [
            l.his,
            l.acc,
            l.goal,
            l.cont,
            l.pene,
            l.skt,
            self.eps_vel,
            self.eps_pene,
            self.eps_cont,
            self.eps_acc,
        ];
        if all.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(crate::DipError::Validation(
                "reward weights and tolerances must be finite and >= 0".into(),
            ));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(crate::DipError::Validation("fps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Term {
    His,
    Acc,
    Goal,
    Cont,
    Pene,
    Skt,
}

impl Term {
    pub const ALL: [Term; 6] = [
        Term::His,
        Term::Acc,
        Term::Goal,
        Term::Cont,
        Term::Pene,
        Term::Skt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Term::His => "his",
            Term::Acc => "acc",
            Term::Goal => "goal",
            Term::Cont => "cont",
            Term::Pene => "pene",
            Term::Skt => "skt",
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything a reward needs besides the motion.
#[derive(Debug, Clone, Copy)]
pub struct RewardContext<'a> {
    pub skel: &'a Skeleton,
    pub markers: &'a MarkerSet,
    pub scene: SceneView<'a>,
    /// Target joint positions for the first `history.len()` frames.
    pub history: &'a [Vec<Vector3<f64>>],
    /// Goal and the frame it applies to.
    pub goal: Option<(&'a GoalSpec, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardBreakdown {
    /// Unweighted term values in [`Term::ALL`] order.
    pub values: [f64; 6],
    /// Gradient norm of each weighted term; zero unless requested.
    pub grad_norms: [f64; 6],
    pub total: f64,
}

impl RewardBreakdown {
    pub fn value(&self, term: Term) -> f64 {
        self.values[term as usize]
    }
}

/// FK results for every frame of a motion.
pub struct Evaluated {
    fk: Vec<FrameKinematics>,
    mk: Vec<Vec<Vector3<f64>>>,
}

impl Evaluated {
    pub fn new(motion: &[f64], skel: &Skeleton, ms: &MarkerSet) -> Self {
        let fk: Vec<FrameKinematics> = motion
            .chunks_exact(POSE_DIM)
            .map(|p| forward(p, skel))
            .collect();
        let mk = fk.iter().map(|f| markers_from(f, ms)).collect();
        Evaluated { fk, mk }
    }

    pub fn frames(&self) -> usize {
        self.fk.len()
    }

    pub fn joints(&self, s: usize) -> &[Vector3<f64>; NUM_JOINTS] {
        &self.fk[s].joints
    }

    pub fn markers(&self, s: usize) -> &[Vector3<f64>] {
        &self.mk[s]
    }
}

/// Upstream gradients on joints and markers.
struct Upstream {
    dj: Vec<Vec<Vector3<f64>>>,
    dm: Vec<Vec<Vector3<f64>>>,
    scale: f64,
}

impl Upstream {
    fn new(frames: usize, markers: usize) -> Self {
        Upstream {
            dj: vec![vec![Vector3::zeros(); NUM_JOINTS]; frames],
            dm: vec![vec![Vector3::zeros(); markers]; frames],
            scale: 1.0,
        }
    }

    fn clear(&mut self) {
        self.dj
            .iter_mut()
            .flatten()
            .for_each(|v| *v = Vector3::zeros());
        self.dm
            .iter_mut()
            .flatten()
            .for_each(|v| *v = Vector3::zeros());
    }

    fn to_pose_gradient(
        &self,
        motion: &[f64],
        ev: &Evaluated,
        ctx: &RewardContext,
        out: &mut [f64],
    ) {
        for s in 0..ev.frames() {
            let dj = &self.dj[s];
            let dm = &self.dm[s];
            if dj.iter().chain(dm).all(|v| *v == Vector3::zeros()) {
                continue;
            }
            let r = s * POSE_DIM..(s + 1) * POSE_DIM;
            backward(
                &motion[r.clone()],
                &ev.fk[s],
                ctx.skel,
                ctx.markers,
                dj,
                dm,
                &mut out[r],
            );
        }
    }
}

/// Receives discrete branch decisions; used to detect kinks.
type Recorder<'r> = Option<&'r mut Vec<i64>>;

fn record(rec: &mut Recorder, v: i64) {
    if let Some(r) = rec {
        r.push(v);
    }
}

/// Sign with zero at zero; NaN passes through so callers can detect it.
fn sign(x: f64) -> f64 {
    if x.is_nan() {
        x
    } else if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn sdf_at(ctx: &RewardContext, p: &Vector3<f64>, rec: &mut Recorder) -> (f64, Vector3<f64>) {
    if rec.is_some() {
        let (cell, _) = ctx.scene.locate(p);
        for c in cell {
            record(rec, c as i64);
        }
    }
    ctx.scene.sdf(p)
}

/// Index of the smallest key; ties go to the lowest index.
fn argmin(keys: impl Iterator<Item = f64>) -> Option<(usize, f64)> {
    keys.enumerate().fold(None, |best, (i, k)| match best {
        Some((_, b)) if b <= k => best,
        _ => Some((i, k)),
    })
}

fn term_his(
    ev: &Evaluated,
    ctx: &RewardContext,
    up: Option<&mut Upstream>,
    mut rec: Recorder,
) -> f64 {
    let mut val = 0.0;
    let mut up = up;
    for (i, target) in ctx.history.iter().enumerate().take(ev.frames()) {
        let j = ev.joints(i);
        for k in 0..NUM_JOINTS {
            let d = j[k] - target[k];
            val -= d.abs().sum();
            for a in 0..3 {
                record(&mut rec, sign(d[a]) as i64);
            }
            if let Some(u) = up.as_deref_mut() {
                u.dj[i][k] -= d.map(sign) * u.scale;
            }
        }
    }
    val
}

fn term_acc(
    ev: &Evaluated,
    ctx: &RewardContext,
    cfg: &RewardConfig,
    up: Option<&mut Upstream>,
    mut rec: Recorder,
) -> f64 {
    let nu2 = cfg.fps * cfg.fps;
    let mut val = 0.0;
    let mut up = up;
    let s_len = ev.frames();
    for s in 1..s_len.saturating_sub(1) {
        for m in 0..ctx.markers.len() {
            let v = ev.mk[s + 1][m] + ev.mk[s - 1][m] - 2.0 * ev.mk[s][m];
            let n = v.norm();
            let a = n * nu2;
            let g = match cfg.acc_form {
                AccForm::Printed => {
                    val += a - cfg.eps_acc;
                    1.0
                }
                AccForm::Clamped => {
                    let e = a - cfg.eps_acc;
                    record(&mut rec, (e > 0.0) as i64);
                    if e > 0.0 {
                        val -= e;
                        -1.0
                    } else {
                        0.0
                    }
                }
            };
            if let Some(u) = up.as_deref_mut() {
                if g != 0.0 && n > 0.0 {
                    let dv = v * (g * nu2 / n) * u.scale;
                    u.dm[s + 1][m] += dv;
                    u.dm[s - 1][m] += dv;
                    u.dm[s][m] -= 2.0 * dv;
                }
            }
        }
    }
    val
}

fn term_goal(
    ev: &Evaluated,
    ctx: &RewardContext,
    up: Option<&mut Upstream>,
    mut rec: Recorder,
) -> f64 {
    let Some((goal, g)) = ctx.goal else {
        return 0.0;
    };
    if g >= ev.frames() {
        return 0.0;
    }
    let mut up = up;
    let mut val = 0.0;
    for (k, target) in &goal.joints {
        let d = ev.joints(g)[*k] - target;
        val -= d.abs().sum();
        for a in 0..3 {
            record(&mut rec, sign(d[a]) as i64);
        }
        if let Some(u) = up.as_deref_mut() {
            u.dj[g][*k] -= d.map(sign) * u.scale;
        }
    }
    val
}

fn term_cont(
    ev: &Evaluated,
    ctx: &RewardContext,
    cfg: &RewardConfig,
    up: Option<&mut Upstream>,
    mut rec: Recorder,
) -> f64 {
    let idx = ctx.markers.indices_of(cfg.contact_parts());
    if idx.is_empty() {
        return 0.0;
    }
    let mut up = up;
    let mut val = 0.0;
    for s in 0..ev.frames() {
        let mk = &ev.mk[s];
        match cfg.action {
            Action::Locomotion => {
                let floor = ctx.scene.floor_height();
                let (w, z) = argmin(idx.iter().map(|&i| mk[i].z)).unwrap();
                let e = (z - floor).abs() - cfg.eps_cont;
                record(&mut rec, w as i64);
                record(&mut rec, (e > 0.0) as i64);
                record(&mut rec, sign(z - floor) as i64);
                if e > 0.0 {
                    val -= e;
                    if let Some(u) = up.as_deref_mut() {
                        u.dm[s][idx[w]].z -= sign(z - floor) * u.scale;
                    }
                }
            }
            Action::Sit | Action::Lie => {
                let q: Vec<(f64, Vector3<f64>)> =
                    idx.iter().map(|&i| sdf_at(ctx, &mk[i], &mut rec)).collect();
                let (w, v) = argmin(q.iter().map(|x| x.0)).unwrap();
                let e = v.abs() - cfg.eps_cont;
                record(&mut rec, w as i64);
                record(&mut rec, (e > 0.0) as i64);
                record(&mut rec, sign(v) as i64);
                if e > 0.0 {
                    val -= e;
                    if let Some(u) = up.as_deref_mut() {
                        u.dm[s][idx[w]] -= q[w].1 * (sign(v) * u.scale);
                    }
                }
            }
        }
    }
    val
}

fn term_pene(
    ev: &Evaluated,
    ctx: &RewardContext,
    cfg: &RewardConfig,
    up: Option<&mut Upstream>,
    mut rec: Recorder,
) -> f64 {
    let mut up = up;
    let mut val = 0.0;
    for s in 0..ev.frames() {
        for (m, p) in ev.mk[s].iter().enumerate() {
            let (v, g) = sdf_at(ctx, p, &mut rec);
            let e = -v - cfg.eps_pene;
            record(&mut rec, (e > 0.0) as i64);
            if e > 0.0 {
                val -= e;
                if let Some(u) = up.as_deref_mut() {
                    u.dm[s][m] += g * u.scale;
                }
            }
        }
    }
    val
}

fn term_skt(
    ev: &Evaluated,
    ctx: &RewardContext,
    cfg: &RewardConfig,
    up: Option<&mut Upstream>,
    mut rec: Recorder,
) -> f64 {
    let idx = ctx.markers.indices_of(cfg.contact_parts());
    if idx.is_empty() {
        return 0.0;
    }
    let nu = cfg.fps;
    let mut up = up;
    let mut val = 0.0;
    for s in 0..ev.frames().saturating_sub(1) {
        let d: Vec<Vector3<f64>> = idx.iter().map(|&i| ev.mk[s + 1][i] - ev.mk[s][i]).collect();
        let (w, n) = argmin(d.iter().map(|v| v.norm())).unwrap();
        let e = n * nu - cfg.eps_vel;
        record(&mut rec, w as i64);
        record(&mut rec, (e > 0.0) as i64);
        if e > 0.0 {
            val -= e;
            if let Some(u) = up.as_deref_mut() {
                if n > 0.0 {
                    let g = d[w] * (nu / n * u.scale);
                    u.dm[s + 1][idx[w]] -= g;
                    u.dm[s][idx[w]] += g;
                }
            }
        }
    }
    val
}

fn eval_term(
    term: Term,
    ev: &Evaluated,
    ctx: &RewardContext,
    cfg: &RewardConfig,
    up: Option<&mut Upstream>,
    rec: Recorder,
) -> f64 {
    match term {
        Term::His => term_his(ev, ctx, up, rec),
        Term::Acc => term_acc(ev, ctx, cfg, up, rec),
        Term::Goal => term_goal(ev, ctx, up, rec),
        Term::Cont => term_cont(ev, ctx, cfg, up, rec),
        Term::Pene => term_pene(ev, ctx, cfg, up, rec),
        Term::Skt => term_skt(ev, ctx, cfg, up, rec),
    }
}

/// Unweighted value of one term.
pub fn term_value(term: Term, motion: &[f64], ctx: &RewardContext, cfg: &RewardConfig) -> f64 {
    let ev = Evaluated::new(motion, ctx.skel, ctx.markers);
    eval_term(term, &ev, ctx, cfg, None, None)
}

/// Unweighted value and gradient of one term.
pub fn term_gradient(
    term: Term,
    motion: &[f64],
    ctx: &RewardContext,
    cfg: &RewardConfig,
) -> (f64, Vec<f64>) {
    let ev = Evaluated::new(motion, ctx.skel, ctx.markers);
    let mut up = Upstream::new(ev.frames(), ctx.markers.len());
    let v = eval_term(term, &ev, ctx, cfg, Some(&mut up), None);
    let mut g = vec![0.0; motion.len()];
    up.to_pose_gradient(motion, &ev, ctx, &mut g);
    (v, g)
}

/// Discrete branch decisions (argmins, ReLU activity, L1 signs, SDF cells)
/// taken while evaluating `term`. Equal signatures mean the same smooth
/// piece of the reward.
pub fn active_set(term: Term, motion: &[f64], ctx: &RewardContext, cfg: &RewardConfig) -> Vec<i64> {
    let ev = Evaluated::new(motion, ctx.skel, ctx.markers);
    let mut rec = Vec::new();
    eval_term(term, &ev, ctx, cfg, None, Some(&mut rec));
    rec
}

pub fn r_his(motion: &[f64], ctx: &RewardContext, cfg: &RewardConfig) -> (f64, Vec<f64>) {
    term_gradient(Term::His, motion, ctx, cfg)
}

pub fn r_acc(motion: &[f64], ctx: &RewardContext, cfg: &RewardConfig) -> (f64, Vec<f64>) {
    term_gradient(Term::Acc, motion, ctx, cfg)
}

pub fn r_goal(motion: &[f64], ctx: &RewardContext, cfg: &RewardConfig) -> (f64, Vec<f64>) {
    term_gradient(Term::Goal, motion, ctx, cfg)
}

/// Contact term; the floor variant for locomotion, the SDF variant otherwise.
pub fn r_cont(motion: &[f64], ctx: &RewardContext, cfg: &RewardConfig) -> (f64, Vec<f64>) {
    term_gradient(Term::Cont, motion, ctx, cfg)
}

pub fn r_cont_floor(motion: &[f64], ctx: &RewardContext, cfg: &RewardConfig) -> (f64, Vec<f64>) {
    let cfg = RewardConfig {
        action: Action::Locomotion,
        ..*cfg
    };
    term_gradient(Term::Cont, motion, ctx, &cfg)
}

pub fn r_cont_sdf(motion: &[f64], ctx: &RewardContext, cfg: &RewardConfig) -> (f64, Vec<f64>) {
    let cfg = RewardConfig {
        action: if cfg.action == Action::Locomotion {
            Action::Sit
        } else {
            cfg.action
        },
        ..*cfg
    };
    term_gradient(Term::Cont, motion, ctx, &cfg)
}

pub fn r_pene(motion: &[f64], ctx: &RewardContext, cfg: &RewardConfig) -> (f64, Vec<f64>) {
    term_gradient(Term::Pene, motion, ctx, cfg)
}

pub fn r_skt(motion: &[f64], ctx: &RewardContext, cfg: &RewardConfig) -> (f64, Vec<f64>) {
    term_gradient(Term::Skt, motion, ctx, cfg)
}

/// Weighted total. Terms with zero weight are skipped. When
/// `with_norms` is set each weighted term's gradient norm is recorded,
/// which costs one extra backward pass per active term.
pub fn r_total(
    motion: &[f64],
    ctx: &RewardContext,
    cfg: &RewardConfig,
    with_grad: bool,
    with_norms: bool,
) -> (RewardBreakdown, Option<Vec<f64>>) {
    let ev = Evaluated::new(motion, ctx.skel, ctx.markers);
    let mut out = RewardBreakdown::default();
    let mut grad = with_grad.then(|| vec![0.0; motion.len()]);
    let mut up = with_grad.then(|| Upstream::new(ev.frames(), ctx.markers.len()));
    for (i, term) in Term::ALL.into_iter().enumerate() {
        let lam = cfg.lambda.get(term);
        if lam == 0.0 {
            continue;
        }
        let v = match up.as_mut() {
            Some(u) => {
                u.scale = lam;
                let v = eval_term(term, &ev, ctx, cfg, Some(u), None);
                if with_norms {
                    let mut g = vec![0.0; motion.len()];
                    u.to_pose_gradient(motion, &ev, ctx, &mut g);
                    out.grad_norms[i] = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                    for (a, b) in grad.as_mut().unwrap().iter_mut().zip(&g) {
                        *a += b;
                    }
                    u.clear();
                }
                v
            }
            None => eval_term(term, &ev, ctx, cfg, None, None),
        };
        out.values[i] = v;
        out.total += lam * v;
    }
    if let (Some(u), Some(g)) = (up.as_ref(), grad.as_mut()) {
        if !with_norms {
            u.to_pose_gradient(motion, &ev, ctx, g);
        }
    }
    (out, grad)
}

/// Central differences of `f` at `motion`.
pub fn fd_gradient_oracle(f: impl Fn(&[f64]) -> f64, motion: &[f64], step: f64) -> Vec<f64> {
    let mut x = motion.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let v = x[i];
        x[i] = v + step;
        let up = f(&x);
        x[i] = v - step;
        let down = f(&x);
        x[i] = v;
        g[i] = (up - down) / (2.0 * step);
    }
    g
}
