//! Command-line front end: `dip bake | run | ablate | check`.

use std::ffi::OsString;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::default_schedule;
use crate::dip::GuidanceMode;
use crate::error::{DipError, Result};
use crate::kinematics::{blend_pose, default_body, forward_kinematics, MotionClip, Pose, Skeleton};
use crate::metrics::{max_marker_acceleration, MetricsReport};
use crate::planner::{
    load_scene_any, run_tasks, Engine, RunOptions, ScenarioOutput, ScenarioScript,
};
use crate::rewards::{
    active_set, term_gradient, term_value, AccForm, RewardConfig, RewardContext, Term,
};
use crate::rotmath::aa_to_mat;
use crate::scene::{
    bake_boxes, bake_spec, save_scene, Action, Bounds, GoalSpec, Obstacle, SceneSpec, SceneView,
};
use crate::{NUM_JOINTS, POSE_DIM};

/// Identifies the column layout of `trace.csv`.
pub const TRACE_FORMAT: &str = "dip-trace-v1";

#[derive(Debug, Parser)]
#[command(
    name = "dip",
    version,
    about = "Reward-guided diffusion motion synthesis"
)]
pub struct Cli {
    /// Raise log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bake an obstacle spec into a scene file.
    Bake(BakeArgs),
    /// Synthesize a scenario and write traces and metrics.
    Run(RunArgs),
    /// Compare guidance modes and inpainting over several seeds.
    Ablate(AblateArgs),
    /// Run the numerical self-checks.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct BakeArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(
        long,
        required_unless_present = "manifest",
        conflicts_with = "manifest"
    )]
    pub scenario: Option<PathBuf>,
    /// Re-run from a manifest written by an earlier run.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub mode: Option<GuidanceMode>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of seeds, counted up from the scenario seed.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub grad: bool,
    #[arg(long)]
    pub schedule: bool,
    #[arg(long)]
    pub blend: bool,
    /// Random cases per gradient term.
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
}

/// Everything needed to repeat a run, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub trace_format: String,
    pub scenario_path: PathBuf,
    pub scene_path: PathBuf,
    pub seed: u64,
    pub mode: GuidanceMode,
    pub out_dir: PathBuf,
    pub wall_clock_s: f64,
    /// The script as run, with seed and mode applied and the scene path
    /// made absolute.
    pub script: ScenarioScript,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest: RunManifest,
    pub metrics: MetricsReport,
    pub frames: usize,
}

pub fn main() -> ExitCode {
    main_with(std::env::args_os())
}

/// Parses `args` and runs the command. Exit code 0 on success, 2 for
/// invalid input, 3 for runtime failures.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}

fn dispatch(cmd: &Command) -> Result<ExitCode> {
    match cmd {
        Command::Bake(a) => {
            cmd_bake(&a.spec, &a.out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(a) => {
            let s = cmd_run(a)?;
            print!("{}", s.metrics.to_kv());
            Ok(ExitCode::SUCCESS)
        }
        Command::Ablate(a) => {
            let rows = cmd_ablate(a)?;
            print!("{}", ablation_table(&rows));
            Ok(ExitCode::SUCCESS)
        }
        Command::Check(a) => {
            let results = cmd_check(a)?;
            for r in &results {
                println!(
                    "{} {}: {}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.detail
                );
            }
            Ok(if results.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            })
        }
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| DipError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| DipError::io(path, e))
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(DipError::Validation(format!(
            "{} is not a readable file",
            path.display()
        )))
    }
}

fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).map_err(|e| DipError::io(path, e))
}

pub fn cmd_bake(spec: &Path, out: &Path) -> Result<()> {
    require_file(spec)?;
    let text = fs::read_to_string(spec).map_err(|e| DipError::io(spec, e))?;
    let spec: SceneSpec = serde_json::from_str(&text)?;
    let scene = bake_spec(&spec)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_scene(&scene, out)?;
    info!(
        "baked {} obstacles into {}",
        spec.obstacles.len(),
        out.display()
    );
    Ok(())
}

/// Column names of `trace.csv`.
pub fn trace_header() -> String {
    let mut cols = vec!["frame".to_string()];
    for k in 0..NUM_JOINTS {
        for a in ["x", "y", "z"] {
            cols.push(format!("rot{k}_{a}"));
        }
    }
    for a in ["x", "y", "z"] {
        cols.push(format!("tau_{a}"));
    }
    for k in 0..NUM_JOINTS {
        for a in ["x", "y", "z"] {
            cols.push(format!("joint{k}_{a}"));
        }
    }
    debug_assert_eq!(cols.len(), 1 + POSE_DIM + 3 * NUM_JOINTS);
    cols.join(",")
}

/// One row per frame: the pose followed by the joint positions.
pub fn trace_csv(motion: &MotionClip, skel: &Skeleton) -> String {
    let mut s = trace_header();
    s.push('\n');
    for (f, p) in motion.frames.iter().enumerate() {
        let joints = forward_kinematics(&p.0, skel);
        let mut row = vec![f.to_string()];
        row.extend(p.0.iter().map(|v| v.to_string()));
        row.extend(
            joints
                .iter()
                .flat_map(|j| [j.x, j.y, j.z])
                .map(|v| v.to_string()),
        );
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Per-step reward record of every sub-task.
pub fn rewards_csv(out: &ScenarioOutput) -> String {
    let mut s = String::from("task,t,reward");
    for t in Term::ALL {
        s.push(',');
        s.push_str(t.name());
    }
    s.push_str(",nat_step,guide_step,guided\n");
    for (i, task) in out.tasks.iter().enumerate() {
        for r in &task.result.trace {
            let terms: Vec<String> = r.terms.iter().map(|v| v.to_string()).collect();
            s.push_str(&format!(
                "{i},{},{},{},{},{},{}\n",
                r.t,
                r.reward,
                terms.join(","),
                r.nat_step,
                r.guide_step,
                u8::from(r.guided)
            ));
        }
    }
    s
}

fn append_results(path: &Path, manifest: &RunManifest, metrics: &MetricsReport) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| DipError::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(&format!(
            "scenario,seed,mode,{}\n",
            MetricsReport::csv_header()
        ));
    }
    text.push_str(&format!(
        "{},{},{},{}\n",
        manifest.scenario_path.display(),
        manifest.seed,
        manifest.mode,
        metrics.csv_row()
    ));
    f.write_all(text.as_bytes())
        .map_err(|e| DipError::io(path, e))
}

/// Resolves the script to run, with CLI overrides applied.
fn prepare_run(args: &RunArgs) -> Result<(ScenarioScript, PathBuf)> {
    let (mut script, scenario_path) = match (&args.scenario, &args.manifest) {
        (Some(path), _) => {
            require_file(path)?;
            let mut script = ScenarioScript::load(path)?;
            let base = path.parent().unwrap_or(Path::new("."));
            script.scene = absolute(&script.scene_path(base))?;
            (script, absolute(path)?)
        }
        (None, Some(path)) => {
            require_file(path)?;
            let text = fs::read_to_string(path).map_err(|e| DipError::io(path, e))?;
            let m: RunManifest = serde_json::from_str(&text)?;
            m.script.validate()?;
            (m.script, m.scenario_path)
        }
        (None, None) => return Err(DipError::Validation("need --scenario or --manifest".into())),
    };
    if let Some(seed) = args.seed {
        script.seed = seed;
    }
    if let Some(mode) = args.mode {
        script.overrides.guidance.mode = mode;
    }
    Ok((script, scenario_path))
}

pub fn cmd_run(args: &RunArgs) -> Result<RunSummary> {
    let clock = Instant::now();
    let (script, scenario_path) = prepare_run(args)?;
    create_dir(&args.out)?;
    let engine = Engine::for_script(&script)?;
    let scene = load_scene_any(&script.scene)?;
    let initial = Pose::from_slice(&script.initial_pose)?;
    let tasks = script.subtasks()?;
    let opts = RunOptions::from_script(&script);
    info!(
        "running {} task(s), seed {}, mode {}",
        tasks.len(),
        script.seed,
        script.overrides.guidance.mode
    );
    let out = match run_tasks(
        &engine,
        &scene,
        &initial,
        &tasks,
        &script.overrides.reward,
        &opts,
    ) {
        Ok(o) => o,
        Err(fail) => {
            write_file(
                &args.out.join("partial_trace.csv"),
                trace_csv(&fail.partial, &engine.skel).as_bytes(),
            )?;
            return Err(fail.error);
        }
    };

    write_file(
        &args.out.join("trace.csv"),
        trace_csv(&out.motion, &engine.skel).as_bytes(),
    )?;
    write_file(
        &args.out.join("rewards_trace.csv"),
        rewards_csv(&out).as_bytes(),
    )?;
    write_file(
        &args.out.join("metrics.txt"),
        out.metrics.to_kv().as_bytes(),
    )?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        trace_format: TRACE_FORMAT.to_string(),
        scenario_path,
        scene_path: script.scene.clone(),
        seed: script.seed,
        mode: script.overrides.guidance.mode,
        out_dir: absolute(&args.out)?,
        wall_clock_s: clock.elapsed().as_secs_f64(),
        script,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    write_file(&args.out.join("manifest.json"), json.as_bytes())?;
    append_results(&args.out.join("results.csv"), &manifest, &out.metrics)?;
    Ok(RunSummary {
        manifest,
        metrics: out.metrics,
        frames: out.motion.len(),
    })
}

/// One arm of the ablation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variant {
    pub mode: GuidanceMode,
    pub inpaint_history: bool,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant {
            mode: GuidanceMode::Inversion,
            inpaint_history: true,
        },
        Variant {
            mode: GuidanceMode::Inversion,
            inpaint_history: false,
        },
        Variant {
            mode: GuidanceMode::Direct,
            inpaint_history: true,
        },
        Variant {
            mode: GuidanceMode::Unguided,
            inpaint_history: true,
        },
    ];

    pub fn label(&self) -> String {
        let inp = if self.inpaint_history { "on" } else { "off" };
        format!("{}/inpaint-{inp}", self.mode)
    }
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub metrics: MetricsReport,
    pub max_accel: f64,
    pub final_reward: f64,
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<Vec<AblationRow>> {
    if args.seeds == 0 {
        return Err(DipError::Validation("--seeds must be positive".into()));
    }
    require_file(&args.scenario)?;
    let mut script = ScenarioScript::load(&args.scenario)?;
    let base = args.scenario.parent().unwrap_or(Path::new("."));
    script.scene = absolute(&script.scene_path(base))?;
    create_dir(&args.out)?;
    let engine = Engine::for_script(&script)?;
    let scene = load_scene_any(&script.scene)?;
    let initial = Pose::from_slice(&script.initial_pose)?;
    let tasks = script.subtasks()?;

    let jobs: Vec<(Variant, u64)> = Variant::ALL
        .iter()
        .flat_map(|v| (0..args.seeds).map(move |k| (*v, script.seed + k)))
        .collect();
    let rows: Vec<Result<AblationRow>> = jobs
        .par_iter()
        .map(|&(variant, seed)| {
            let mut opts = RunOptions::from_script(&script);
            opts.seed = seed;
            opts.guidance.mode = variant.mode;
            opts.planner.inpaint_history = variant.inpaint_history;
            let out = run_tasks(
                &engine,
                &scene,
                &initial,
                &tasks,
                &script.overrides.reward,
                &opts,
            )
            .map_err(|f| f.error)?;
            Ok(AblationRow {
                variant,
                seed,
                max_accel: max_marker_acceleration(&out.motion, &engine.skel, &engine.markers),
                final_reward: out.tasks.iter().map(|t| t.result.final_reward()).sum(),
                metrics: out.metrics,
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;

    let mut csv = format!(
        "variant,seed,{},max_accel,final_reward\n",
        MetricsReport::csv_header()
    );
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.variant.label(),
            r.seed,
            r.metrics.csv_row(),
            r.max_accel,
            r.final_reward
        ));
    }
    write_file(&args.out.join("ablation.csv"), csv.as_bytes())?;
    write_file(
        &args.out.join("ablation.txt"),
        ablation_table(&rows).as_bytes(),
    )?;
    Ok(rows)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    match s.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => s[n / 2],
        n => 0.5 * (s[n / 2 - 1] + s[n / 2]),
    }
}

/// Per-variant means, plus the median goal distance.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = format!(
        "{:<26} {:>5} {:>10} {:>10} {:>10} {:>10} {:>10} {:>12} {:>12}\n",
        "variant", "runs", "dist", "dist_med", "finish", "contact", "pene", "max_accel", "reward"
    );
    for v in Variant::ALL {
        let sel: Vec<&AblationRow> = rows.iter().filter(|r| r.variant == v).collect();
        if sel.is_empty() {
            continue;
        }
        let col = |f: &dyn Fn(&AblationRow) -> f64| sel.iter().map(|r| f(r)).collect::<Vec<f64>>();
        let dist = col(&|r| r.metrics.avg_goal_distance);
        s.push_str(&format!(
            "{:<26} {:>5} {:>10.4} {:>10.4} {:>10.3} {:>10.4} {:>10.5} {:>12.3} {:>12.4}\n",
            v.label(),
            sel.len(),
            mean(&dist),
            median(&dist),
            mean(&col(&|r| r.metrics.finish_time)),
            mean(&col(&|r| r.metrics.contact_score)),
            mean(&col(&|r| r.metrics.pene_mean)),
            mean(&col(&|r| r.max_accel)),
            mean(&col(&|r| r.final_reward)),
        ));
    }
    s
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

pub fn cmd_check(args: &CheckArgs) -> Result<Vec<CheckResult>> {
    let all = !(args.grad || args.schedule || args.blend);
    let mut out = Vec::new();
    if all || args.schedule {
        out.extend(check_schedule(10_000, 11)?);
    }
    if all || args.grad {
        out.extend(check_gradients(args.samples, 12)?);
    }
    if all || args.blend {
        out.extend(check_blend(100, 13));
    }
    Ok(out)
}

/// Iterated single-step noising against the closed-form marginal.
pub fn check_schedule(n: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let sched = default_schedule(1000)?;
    let x0 = [0.5, -1.0, 2.0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let checkpoints = [1usize, 10, 100, 1000];
    let mut sums = vec![[0.0f64; 3]; checkpoints.len()];
    let mut sq = vec![[0.0f64; 3]; checkpoints.len()];
    for _ in 0..n {
        let mut x = x0;
        let mut next = 0;
        for t in 1..=sched.steps {
            let b = sched.beta[t];
            for v in x.iter_mut() {
                let e: f64 = rng.sample(StandardNormal);
                *v = (1.0 - b).sqrt() * *v + b.sqrt() * e;
            }
            if t == checkpoints[next] {
                for d in 0..3 {
                    sums[next][d] += x[d];
                    sq[next][d] += x[d] * x[d];
                }
                next += 1;
                if next == checkpoints.len() {
                    break;
                }
            }
        }
    }
    let nf = n as f64;
    Ok(checkpoints
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let ab = sched.alpha_bar[t];
            let sd = (1.0 - ab).sqrt();
            let mut worst_mean: f64 = 0.0;
            let mut worst_var: f64 = 0.0;
            for d in 0..3 {
                let m = sums[i][d] / nf;
                let var = sq[i][d] / nf - m * m;
                worst_mean = worst_mean.max((m - ab.sqrt() * x0[d]).abs() / (sd / nf.sqrt()));
                worst_var = worst_var.max((var / (1.0 - ab) - 1.0).abs());
            }
            CheckResult {
                name: format!("schedule t={t}"),
                passed: worst_mean <= 4.0 && worst_var <= 0.05,
                detail: format!(
                    "mean error {worst_mean:.2} sigma, variance error {:.2}%",
                    100.0 * worst_var
                ),
            }
        })
        .collect())
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let num = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let den = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if num < 1e-9 {
        0.0
    } else {
        num / den.max(1e-12)
    }
}

/// Analytic reward gradients against central differences at random
/// motions whose branch decisions stay fixed within one step.
pub fn check_gradients(samples: usize, seed: u64) -> Result<Vec<CheckResult>> {
    const FRAMES: usize = 4;
    const H: f64 = 1e-5;
    let (skel, ms) = default_body();
    let bounds = Bounds {
        min: [-1.0, -1.0, 0.0],
        max: [1.5, 2.0, 2.0],
    };
    let scene = bake_boxes(
        &[Obstacle::Box {
            center: [0.0, 0.7, 0.3],
            half_extents: [0.4, 0.3, 0.3],
        }],
        0.0,
        &bounds,
        0.05,
    )?;
    let goal = GoalSpec::new(
        vec![
            (0, Vector3::new(0.2, 0.6, 0.9)),
            (20, Vector3::new(0.3, 0.6, 1.0)),
        ],
        Action::Sit,
    )?;
    let hist = vec![forward_kinematics(&[0.0; POSE_DIM], &skel); 2];
    let ctx = RewardContext {
        skel: &skel,
        markers: &ms,
        scene: SceneView::world(&scene),
        history: &hist,
        goal: Some((&goal, FRAMES - 1)),
    };
    let mut cases: Vec<(String, Term, RewardConfig)> = Vec::new();
    for term in Term::ALL {
        cases.push((
            term.name().to_string(),
            term,
            RewardConfig::for_action(Action::Sit),
        ));
    }
    cases.push((
        "cont_floor".into(),
        Term::Cont,
        RewardConfig::for_action(Action::Locomotion),
    ));
    let mut clamped = RewardConfig::for_action(Action::Sit);
    clamped.acc_form = AccForm::Clamped;
    cases.push(("acc_clamped".into(), Term::Acc, clamped));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, term, cfg) in cases {
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        let mut tries = 0;
        while checked < samples && tries < 50 * samples.max(1) {
            tries += 1;
            let mut m: Vec<f64> = (0..FRAMES * POSE_DIM)
                .map(|_| rng.random_range(-0.4..0.4))
                .collect();
            for s in 0..FRAMES {
                m[s * POSE_DIM + 67] += 0.4 + 0.1 * s as f64;
                m[s * POSE_DIM + 68] -= 0.3;
            }
            let sig = active_set(term, &m, &ctx, &cfg);
            let stable = (0..m.len()).all(|i| {
                [H, -H].iter().all(|d| {
                    let mut p = m.clone();
                    p[i] += d;
                    active_set(term, &p, &ctx, &cfg) == sig
                })
            });
            if !stable {
                continue;
            }
            let (_, g) = term_gradient(term, &m, &ctx, &cfg);
            let fd: Vec<f64> = (0..m.len())
                .map(|i| {
                    let mut p = m.clone();
                    p[i] += H;
                    let up = term_value(term, &p, &ctx, &cfg);
                    p[i] -= 2.0 * H;
                    (up - term_value(term, &p, &ctx, &cfg)) / (2.0 * H)
                })
                .collect();
            worst = worst.max(relative_error(&g, &fd));
            checked += 1;
        }
        out.push(CheckResult {
            name: format!("grad {name}"),
            passed: checked == samples && worst <= 1e-3,
            detail: format!("{checked} cases, worst relative error {worst:.2e}"),
        });
    }
    Ok(out)
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let mut p = Pose::rest();
    for v in p.0.iter_mut() {
        *v = rng.random_range(-1.5..1.5);
    }
    p
}

/// Power-space blending: exact endpoints, orthonormal output, monotone
/// geodesic progress.
pub fn check_blend(samples: usize, seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut endpoint: f64 = 0.0;
    let mut ortho: f64 = 0.0;
    let mut monotone = true;
    for _ in 0..samples {
        let (a, b) = (random_pose(&mut rng), random_pose(&mut rng));
        let at0 = blend_pose(&a, &b, 0.0);
        let at1 = blend_pose(&a, &b, 1.0);
        for k in 0..NUM_JOINTS {
            let ra = aa_to_mat(&a.rotation(k));
            let rb = aa_to_mat(&b.rotation(k));
            endpoint = endpoint
                .max((aa_to_mat(&at0.rotation(k)).0 - ra.0).amax())
                .max((aa_to_mat(&at1.rotation(k)).0 - rb.0).amax());
            let mut last = -1.0;
            for i in 0..=10 {
                let g = i as f64 / 10.0;
                let r = aa_to_mat(&blend_pose(&a, &b, g).rotation(k));
                ortho = ortho.max(r.orthonormality_error());
                let d = ra.angle_to(&r);
                if d < last - 1e-9 {
                    monotone = false;
                }
                last = d;
            }
        }
        endpoint = endpoint
            .max((at0.tau() - a.tau()).amax())
            .max((at1.tau() - b.tau()).amax());
    }
    vec![
        CheckResult {
            name: "blend endpoints".into(),
            passed: endpoint <= 1e-12,
            detail: format!("max deviation {endpoint:.2e}"),
        },
        CheckResult {
            name: "blend orthonormality".into(),
            passed: ortho <= 1e-6,
            detail: format!("max error {ortho:.2e}"),
        },
        CheckResult {
            name: "blend monotone angle".into(),
            passed: monotone,
            detail: format!("{samples} pose pairs, 11 steps each"),
        },
    ]
}
