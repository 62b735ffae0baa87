//! Multi-task synthesis: history windows, hints, goal frames, and assembly
//! of consecutive sub-task motions into one long motion.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    build_schedule, default_schedule, Condition, InpaintSpec, KeyframeHints, NoiseSchedule,
};
use crate::diffusion::{DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS};
use crate::dip::{synthesize, GuidanceConfig, SynthesisResult};
use crate::error::{DipError, Result};
use crate::kinematics::{
    apply_transform, blend_overlap, canonical_transform, concat_long_term, default_body,
    forward_kinematics, transform_pose, JointPositions, MarkerSet, MotionClip, Pose, Skeleton,
    PELVIS,
};
use crate::metrics::{evaluate, MetricsReport};
use crate::prior::{ProjectionConfig, ProjectionDenoiser};
use crate::rewards::{AccForm, RewardConfig, RewardContext, Term};
use crate::scene::{bake_spec, load_scene, Action, GoalSpec, SceneField, SceneSpec, SceneView};
use crate::{DEFAULT_FPS, DEFAULT_FRAMES, H_MAX, POSE_DIM};

/// Nominal speed in units/s used to place the goal frame.
pub fn nominal_speed(action: Action) -> f64 {
    match action {
        Action::Locomotion => 1.2,
        Action::Sit | Action::Lie => 0.8,
    }
}

/// Frame (1-based) at which the goal should be reached:
/// `clamp(H + round(d / (v / fps)), H + 1, S)`.
pub fn select_goal_frame(
    distance: f64,
    action: Action,
    h: usize,
    frames: usize,
    fps: f64,
) -> usize {
    let per_frame = nominal_speed(action) / fps;
    let steps = (distance / per_frame).round();
    let g = if steps.is_finite() {
        h as f64 + steps
    } else {
        frames as f64
    };
    (g.max((h + 1) as f64).min(frames as f64)) as usize
}

/// Pelvis hints on the history frames plus goal joints at 1-based frame `g`.
pub fn build_hints(
    history: &[JointPositions],
    goal: Option<&GoalSpec>,
    g: usize,
    frames: usize,
) -> Result<KeyframeHints> {
    let mut h = KeyframeHints::empty(frames);
    for (s, joints) in history.iter().enumerate() {
        h.set(s, PELVIS, joints[PELVIS])?;
    }
    if let Some(goal) = goal {
        if g == 0 || g > frames {
            return Err(DipError::Validation(format!(
                "goal frame {g} outside 1..={frames}"
            )));
        }
        for (k, p) in &goal.joints {
            h.set(g - 1, *k, *p)?;
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalJoint {
    pub joint: usize,
    pub xyz: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub action: Action,
    pub goal_joints: Vec<GoalJoint>,
    /// Full pose held at the goal frame, for sit and lie targets.
    #[serde(default)]
    pub goal_pose: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SubTask {
    pub action: Action,
    pub goal: GoalSpec,
    pub goal_pose: Option<Pose>,
}

impl TaskSpec {
    pub fn to_subtask(&self) -> Result<SubTask> {
        let joints = self
            .goal_joints
            .iter()
            .map(|g| (g.joint, Vector3::from(g.xyz)))
            .collect();
        let goal_pose = self
            .goal_pose
            .as_deref()
            .map(Pose::from_slice)
            .transpose()?;
        Ok(SubTask {
            action: self.action,
            goal: GoalSpec::new(joints, self.action)?,
            goal_pose,
        })
    }
}

/// Partial reward settings applied on top of each action's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardOverride {
    /// Weights keyed by term name (`his`, `acc`, `goal`, `cont`, `pene`, `skt`).
    pub lambda: BTreeMap<String, f64>,
    pub eps_vel: Option<f64>,
    pub eps_pene: Option<f64>,
    pub eps_cont: Option<f64>,
    pub eps_acc: Option<f64>,
    pub acc_form: Option<AccForm>,
}

impl RewardOverride {
    pub fn apply(&self, action: Action, fps: f64) -> Result<RewardConfig> {
        let mut c = RewardConfig::for_action(action);
        c.fps = fps;
        for (k, v) in &self.lambda {
            let term = Term::ALL
                .into_iter()
                .find(|t| t.name() == k)
                .ok_or_else(|| DipError::Validation(format!("unknown reward term `{k}`")))?;
            c.lambda.set(term, *v);
        }
        if let Some(v) = self.eps_vel {
            c.eps_vel = v;
        }
        if let Some(v) = self.eps_pene {
            c.eps_pene = v;
        }
        if let Some(v) = self.eps_cont {
            c.eps_cont = v;
        }
        if let Some(v) = self.eps_acc {
            c.eps_acc = v;
        }
        if let Some(f) = self.acc_form {
            c.acc_form = f;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub frames: usize,
    pub fps: f64,
    pub h_max: usize,
    /// Hold the history frames during early denoising.
    pub inpaint_history: bool,
    /// Hold `goal_pose` at the goal frame when a task gives one.
    pub inpaint_goal_pose: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            frames: DEFAULT_FRAMES,
            fps: DEFAULT_FPS,
            h_max: H_MAX,
            inpaint_history: true,
            inpaint_goal_pose: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            steps: DEFAULT_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
        }
    }
}

impl DiffusionConfig {
    /// Default betas keep the default total noise level at any step count.
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        if self.beta_start == DEFAULT_BETA_START && self.beta_end == DEFAULT_BETA_END {
            default_schedule(self.steps)
        } else {
            build_schedule(self.steps, self.beta_start, self.beta_end)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Overrides {
    pub reward: RewardOverride,
    pub guidance: GuidanceConfig,
    pub planner: PlannerConfig,
    pub diffusion: DiffusionConfig,
    pub denoiser: ProjectionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    /// Baked scene file, or a JSON scene spec baked on load. Relative paths
    /// resolve against the script's directory.
    pub scene: PathBuf,
    #[serde(default)]
    pub seed: u64,
    pub initial_pose: Vec<f64>,
    pub tasks: Vec<TaskSpec>,
    #[serde(default)]
    pub overrides: Overrides,
}

impl ScenarioScript {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: ScenarioScript = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DipError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(DipError::Validation(
                "scenario needs at least one task".into(),
            ));
        }
        Pose::from_slice(&self.initial_pose)?;
        for t in &self.tasks {
            t.to_subtask()?;
        }
        let p = &self.overrides.planner;
        if p.h_max == 0 || p.h_max > H_MAX {
            return Err(DipError::Validation(format!(
                "h_max must be in 1..={H_MAX}"
            )));
        }
        if p.frames <= p.h_max {
            return Err(DipError::Validation(format!(
                "frames {} must exceed h_max {}",
                p.frames, p.h_max
            )));
        }
        if !(p.fps > 0.0 && p.fps.is_finite()) {
            return Err(DipError::Validation("fps must be positive".into()));
        }
        self.overrides.guidance.validate()?;
        for a in Action::ALL {
            self.overrides.reward.apply(a, p.fps)?;
        }
        Ok(())
    }

    pub fn subtasks(&self) -> Result<Vec<SubTask>> {
        self.tasks.iter().map(TaskSpec::to_subtask).collect()
    }

    /// Scene path resolved against `base`.
    pub fn scene_path(&self, base: &Path) -> PathBuf {
        if self.scene.is_absolute() {
            self.scene.clone()
        } else {
            base.join(&self.scene)
        }
    }
}

/// Loads a baked scene, or bakes a `.json` scene spec.
pub fn load_scene_any(path: &Path) -> Result<SceneField> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path).map_err(|e| DipError::io(path, e))?;
        let spec: SceneSpec = serde_json::from_str(&text)?;
        bake_spec(&spec)
    } else {
        load_scene(path)
    }
}

/// Denoiser and body shared across runs.
pub struct Engine {
    pub denoiser: ProjectionDenoiser,
    pub skel: Skeleton,
    pub markers: MarkerSet,
    pub frames: usize,
}

impl Engine {
    pub fn new(
        frames: usize,
        diffusion: &DiffusionConfig,
        denoiser: ProjectionConfig,
    ) -> Result<Self> {
        let (skel, markers) = default_body();
        let sched = diffusion.schedule()?;
        let denoiser =
            ProjectionDenoiser::with_default_bases(sched, skel.clone(), frames, denoiser)?;
        Ok(Engine {
            denoiser,
            skel,
            markers,
            frames,
        })
    }

    pub fn for_script(script: &ScenarioScript) -> Result<Self> {
        let o = &script.overrides;
        Self::new(o.planner.frames, &o.diffusion, o.denoiser)
    }

    /// Same bases with a different schedule or denoiser setting.
    pub fn reconfigured(
        &self,
        diffusion: &DiffusionConfig,
        denoiser: ProjectionConfig,
    ) -> Result<Self> {
        Ok(Engine {
            denoiser: self.denoiser.reconfigured(diffusion.schedule()?, denoiser),
            skel: self.skel.clone(),
            markers: self.markers.clone(),
            frames: self.frames,
        })
    }
}

/// Everything produced for one sub-task.
#[derive(Debug, Clone)]
pub struct TaskOutput {
    pub result: SynthesisResult,
    /// 1-based goal frame within the sub-task clip.
    pub goal_frame: usize,
    pub history_len: usize,
    /// Index of the clip's first frame in the assembled motion.
    pub start: usize,
    /// World goal pelvis (or mean goal joint) used for metrics.
    pub goal_point: Vector3<f64>,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub motion: MotionClip,
    pub tasks: Vec<TaskOutput>,
    pub metrics: MetricsReport,
}

/// Error plus whatever was assembled before it.
#[derive(Debug)]
pub struct ScenarioFailure {
    pub error: DipError,
    pub partial: MotionClip,
}

impl std::fmt::Display for ScenarioFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} ({} frames assembled)",
            self.error,
            self.partial.len()
        )
    }
}

impl std::error::Error for ScenarioFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<ScenarioFailure> for DipError {
    fn from(f: ScenarioFailure) -> Self {
        f.error
    }
}

fn goal_point(goal: &GoalSpec) -> Vector3<f64> {
    match goal.joints.iter().find(|(k, _)| *k == PELVIS) {
        Some((_, p)) => *p,
        None => goal.joints.iter().map(|(_, p)| p).sum::<Vector3<f64>>() / goal.joints.len() as f64,
    }
}

/// Seed of the `i`-th sub-task.
pub fn task_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add(i as u64)
}

/// Settings for one scenario run beyond the script itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub guidance: GuidanceConfig,
    pub planner: PlannerConfig,
    pub seed: u64,
}

impl RunOptions {
    pub fn from_script(script: &ScenarioScript) -> Self {
        RunOptions {
            guidance: script.overrides.guidance,
            planner: script.overrides.planner,
            seed: script.seed,
        }
    }
}

/// Synthesizes every sub-task in order and assembles the result.
pub fn run_tasks(
    engine: &Engine,
    scene: &SceneField,
    initial: &Pose,
    tasks: &[SubTask],
    reward: &RewardOverride,
    opts: &RunOptions,
) -> std::result::Result<ScenarioOutput, ScenarioFailure> {
    let p = &opts.planner;
    let mut prev: Vec<Pose> = vec![*initial];
    let mut outputs = Vec::with_capacity(tasks.len());
    let fail = |error, prev: &[Pose]| ScenarioFailure {
        error,
        partial: MotionClip::new(prev.to_vec(), p.fps),
    };
    if p.frames != engine.frames {
        let e = DipError::Validation(format!(
            "engine built for {} frames, planner wants {}",
            engine.frames, p.frames
        ));
        return Err(fail(e, &prev));
    }
    for (i, task) in tasks.iter().enumerate() {
        match run_one(
            engine,
            scene,
            &prev,
            task,
            reward,
            opts,
            task_seed(opts.seed, i),
        ) {
            Ok((out, assembled)) => {
                info!(
                    "task {i} ({}) done, {} frames",
                    task.action,
                    assembled.len()
                );
                prev = assembled;
                outputs.push(out);
            }
            Err(e) => {
                let error = DipError::SubTask {
                    index: i,
                    source: Box::new(e),
                };
                return Err(fail(error, &prev));
            }
        }
    }
    let motion = MotionClip::new(prev, p.fps);
    let metrics = scenario_metrics(engine, scene, &motion, &outputs);
    Ok(ScenarioOutput {
        motion,
        tasks: outputs,
        metrics,
    })
}

/// Finish times add across sub-tasks and distances average; the other
/// metrics cover the whole assembled motion.
fn scenario_metrics(
    engine: &Engine,
    scene: &SceneField,
    motion: &MotionClip,
    tasks: &[TaskOutput],
) -> MetricsReport {
    let last = tasks.last().expect("at least one task");
    let mut report = evaluate(
        motion,
        &engine.skel,
        &engine.markers,
        scene,
        &last.goal_point,
    );
    let mut finish = 0.0;
    let mut dist = 0.0;
    for (i, t) in tasks.iter().enumerate() {
        let end = tasks
            .get(i + 1)
            .map_or(motion.len(), |n| n.start + n.history_len);
        let seg = MotionClip::new(
            motion.frames[t.start + t.history_len..end].to_vec(),
            motion.fps,
        );
        let (f, d) = crate::metrics::finish_metrics(&seg, &engine.skel, &t.goal_point);
        finish += f;
        dist += d;
    }
    report.finish_time = finish;
    report.avg_goal_distance = dist / tasks.len() as f64;
    report
}

fn run_one(
    engine: &Engine,
    scene: &SceneField,
    prev: &[Pose],
    task: &SubTask,
    reward: &RewardOverride,
    opts: &RunOptions,
    seed: u64,
) -> Result<(TaskOutput, Vec<Pose>)> {
    let p = &opts.planner;
    let s = p.frames;
    let h = prev.len().min(p.h_max);
    let history_world = &prev[prev.len() - h..];
    let to_local = canonical_transform(&history_world[0], &engine.skel)?;
    let to_world = to_local.inverse();
    let history: Vec<Pose> = history_world
        .iter()
        .map(|q| transform_pose(&to_local, q, &engine.skel))
        .collect();
    let history_joints: Vec<JointPositions> = history
        .iter()
        .map(|q| forward_kinematics(&q.0, &engine.skel))
        .collect();

    let goal = task.goal.transformed(&to_local);
    let start = history_joints[h - 1][PELVIS];
    let target = goal_point(&goal);
    let g = select_goal_frame((target - start).xy().norm(), task.action, h, s, p.fps);
    let hints = build_hints(&history_joints, Some(&goal), g, s)?;

    let mut inpaint = InpaintSpec::none(s);
    if p.inpaint_history {
        for (f, q) in history.iter().enumerate() {
            inpaint.hold_frame(f, &q.0);
        }
    }
    if p.inpaint_goal_pose {
        if let Some(gp) = &task.goal_pose {
            inpaint.hold_frame(g - 1, &transform_pose(&to_local, gp, &engine.skel).0);
        }
    }

    let rcfg = reward.apply(task.action, p.fps)?;
    let ctx = RewardContext {
        skel: &engine.skel,
        markers: &engine.markers,
        scene: SceneView::new(scene, to_world),
        history: &history_joints,
        goal: Some((&goal, g - 1)),
    };
    let cond = Condition {
        action: task.action,
        hints,
    };
    let result = synthesize(
        &engine.denoiser,
        &ctx,
        &cond,
        &inpaint,
        &rcfg,
        &opts.guidance,
        seed,
    )?;

    let world = apply_transform(&to_world, &result.motion, &engine.skel);
    let blended = blend_overlap(history_world, &world.frames[..h])?;
    let assembled = concat_long_term(prev, &blended, &world.frames[h..]);
    let out = TaskOutput {
        result,
        goal_frame: g,
        history_len: h,
        start: prev.len() - h,
        goal_point: goal_point(&task.goal),
    };
    Ok((out, assembled))
}

/// Loads the scene and runs a script with its own settings.
pub fn run_scenario(
    script: &ScenarioScript,
    base_dir: &Path,
    engine: &Engine,
) -> std::result::Result<ScenarioOutput, ScenarioFailure> {
    let empty = |error| ScenarioFailure {
        error,
        partial: MotionClip::new(Vec::new(), script.overrides.planner.fps),
    };
    let scene = load_scene_any(&script.scene_path(base_dir)).map_err(empty)?;
    let initial = Pose::from_slice(&script.initial_pose).map_err(empty)?;
    let tasks = script.subtasks().map_err(empty)?;
    run_tasks(
        engine,
        &scene,
        &initial,
        &tasks,
        &script.overrides.reward,
        &RunOptions::from_script(script),
    )
}

/// A standing pose with the pelvis above `(x, y)` on a floor at `floor`,
/// facing `heading` radians counterclockwise from +y.
pub fn standing_pose(x: f64, y: f64, floor: f64, heading: f64) -> Pose {
    let mut p = Pose::rest();
    p.0[2] = heading;
    p.0[66] = x;
    p.0[67] = y;
    p.0[68] = floor;
    debug_assert_eq!(p.0.len(), POSE_DIM);
    p
}
