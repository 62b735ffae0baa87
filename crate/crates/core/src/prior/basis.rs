//! Linear motion bases: smooth time functions per pose dimension plus a
//! gait pair and one action template.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use crate::error::{DipError, Result};
use crate::kinematics::TAU_OFFSET;
use crate::scene::Action;
use crate::{DEFAULT_FPS, POSE_DIM};

pub const MAX_COLUMNS: usize = 200;
const MAGIC: &[u8; 5] = b"DIPB1";

/// Translation ramps per axis.
pub const TRANSLATION_RAMPS: usize = 12;
/// Orientation ramps per axis, on top of a constant.
pub const ORIENT_RAMPS: usize = 4;
/// Gait cycle frequency in Hz.
pub const GAIT_HZ: f64 = 1.0;

const LEFT_HIP: usize = 1;
const RIGHT_HIP: usize = 2;
const LEFT_KNEE: usize = 4;
const RIGHT_KNEE: usize = 5;

/// Standing pelvis height above the feet in canonical coordinates.
pub const STAND_DROP: f64 = -0.93;

/// `(S * 69) x D` column basis with a Gaussian prior over raw coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionBasis {
    pub action: Action,
    pub frames: usize,
    /// Columns, each `frames * 69` long.
    pub columns: Vec<Vec<f64>>,
    pub prior_mean: Vec<f64>,
    pub prior_std: Vec<f64>,
}

impl MotionBasis {
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn len(&self) -> usize {
        self.frames * POSE_DIM
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// `B * coefs`.
    pub fn decode(&self, coefs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (c, w) in self.columns.iter().zip(coefs) {
            if *w != 0.0 {
                for (o, v) in out.iter_mut().zip(c) {
                    *o += w * v;
                }
            }
        }
        out
    }

    /// Motion at the prior mean.
    pub fn mean_motion(&self) -> Vec<f64> {
        self.decode(&self.prior_mean)
    }

    pub fn gram(&self) -> nalgebra::DMatrix<f64> {
        let d = self.dim();
        nalgebra::DMatrix::from_fn(d, d, |i, j| dot(&self.columns[i], &self.columns[j]))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn smootherstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (u * (6.0 * u - 15.0) + 10.0)
}

/// Ramp `j` of `n` rises from 0 to 1 over two spacings starting at `j`
/// spacings into the clip.
fn ramp(s: usize, frames: usize, j: usize, n: usize) -> f64 {
    let delta = (frames - 1) as f64 / n as f64;
    smootherstep((s as f64 - j as f64 * delta) / (2.0 * delta))
}

struct Builder {
    frames: usize,
    columns: Vec<Vec<f64>>,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Builder {
    fn push(&mut self, col: Vec<f64>, mean: f64, std: f64) {
        self.columns.push(col);
        self.mean.push(mean);
        self.std.push(std);
    }

    fn single_dim(&self, dim: usize, f: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut c = vec![0.0; self.frames * POSE_DIM];
        for s in 0..self.frames {
            c[s * POSE_DIM + dim] = f(s);
        }
        c
    }
}

/// Prior std of translation ramp `j`: full strength early, shrinking for
/// ramps that start late so the clip tail stays put.
pub fn translation_ramp_std(j: usize) -> f64 {
    let late = j.saturating_sub(TRANSLATION_RAMPS / 2) as f64;
    0.3 * 0.15f64.powf(late)
}

/// Builds the basis for `action` over `frames` frames.
pub fn build_action_basis(action: Action, frames: usize) -> Result<MotionBasis> {
    if frames < 3 {
        return Err(DipError::Validation(format!(
            "basis needs at least 3 frames, got {frames}"
        )));
    }
    let mut b = Builder {
        frames,
        columns: Vec::new(),
        mean: Vec::new(),
        std: Vec::new(),
    };

    for axis in 0..3 {
        for j in 0..TRANSLATION_RAMPS {
            let col = b.single_dim(TAU_OFFSET + axis, |s| ramp(s, frames, j, TRANSLATION_RAMPS));
            let std = if axis == 2 {
                0.05
            } else {
                translation_ramp_std(j)
            };
            b.push(col, 0.0, std);
        }
    }

    for axis in 0..3 {
        let std = if axis == 2 { 0.3 } else { 0.05 };
        b.push(b.single_dim(axis, |_| 1.0), 0.0, std);
        for j in 0..ORIENT_RAMPS {
            let col = b.single_dim(axis, |s| ramp(s, frames, j, ORIENT_RAMPS));
            b.push(col, 0.0, std);
        }
    }

    let last = (frames - 1) as f64;
    for dim in 3..TAU_OFFSET {
        b.push(b.single_dim(dim, |_| 1.0), 0.0, 0.1);
        b.push(b.single_dim(dim, |s| s as f64 / last), 0.0, 0.1);
    }

    for phase in [0.0, FRAC_PI_2] {
        let mut col = vec![0.0; frames * POSE_DIM];
        for s in 0..frames {
            let p = 2.0 * PI * GAIT_HZ * s as f64 / DEFAULT_FPS + phase;
            let base = s * POSE_DIM;
            col[base + 3 * LEFT_HIP] = 0.5 * p.sin();
            col[base + 3 * RIGHT_HIP] = -0.5 * p.sin();
            col[base + 3 * LEFT_KNEE] = -0.25 * p.cos();
            col[base + 3 * RIGHT_KNEE] = 0.25 * p.cos();
        }
        b.push(col, 0.0, 1.0);
    }

    b.push(template(action, frames), 1.0, 0.1);

    let basis = MotionBasis {
        action,
        frames,
        columns: b.columns,
        prior_mean: b.mean,
        prior_std: b.std,
    };
    debug_assert!(basis.dim() <= MAX_COLUMNS);
    Ok(basis)
}

/// Standing at the canonical origin, optionally settling into the action's
/// end pose over the later part of the clip.
fn template(action: Action, frames: usize) -> Vec<f64> {
    let mut col = vec![0.0; frames * POSE_DIM];
    // (dim, end value) pairs reached by the settle ramp
    let settle: Vec<(usize, f64)> = match action {
        Action::Locomotion => vec![],
        Action::Sit => vec![
            (3 * LEFT_HIP, FRAC_PI_2),
            (3 * RIGHT_HIP, FRAC_PI_2),
            (3 * LEFT_KNEE, -FRAC_PI_2),
            (3 * RIGHT_KNEE, -FRAC_PI_2),
            (TAU_OFFSET + 2, -0.38),
        ],
        Action::Lie => vec![
            (0, FRAC_PI_2),
            (3 * LEFT_HIP, 0.2),
            (3 * RIGHT_HIP, 0.2),
            (TAU_OFFSET + 2, -0.33),
        ],
    };
    let (a, z) = (0.55 * (frames - 1) as f64, 0.85 * (frames - 1) as f64);
    for s in 0..frames {
        let base = s * POSE_DIM;
        col[base + TAU_OFFSET + 2] = STAND_DROP;
        let u = smootherstep((s as f64 - a) / (z - a));
        for &(dim, end) in &settle {
            col[base + dim] += u * end;
        }
    }
    col
}

pub fn encode_basis(b: &MotionBasis) -> Vec<u8> {
    let d = b.dim();
    let mut out = Vec::with_capacity(14 + b.len() * d * 4);
    out.extend_from_slice(MAGIC);
    out.push(b.action.tag());
    out.extend_from_slice(&(b.frames as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for row in 0..b.len() {
        for c in &b.columns {
            out.extend_from_slice(&(c[row] as f32).to_le_bytes());
        }
    }
    out
}

/// Reads a DIPB1 container. The prior is taken from the built-in basis of
/// the same action when the column count matches, otherwise it is a unit
/// Gaussian with zero mean.
pub fn decode_basis(bytes: &[u8]) -> Result<MotionBasis> {
    if bytes.len() < 5 || &bytes[..5] != MAGIC {
        return Err(DipError::Parse {
            offset: 0,
            msg: "bad magic, expected DIPB1".into(),
        });
    }
    if bytes.len() < 14 {
        return Err(DipError::Truncated {
            expected: 14,
            actual: bytes.len(),
        });
    }
    let action = Action::from_tag(bytes[5]).ok_or(DipError::Parse {
        offset: 5,
        msg: format!("unknown action tag {}", bytes[5]),
    })?;
    let frames = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    if frames < 3 {
        return Err(DipError::Parse {
            offset: 6,
            msg: format!("frame count {frames} below 3"),
        });
    }
    if d == 0 || d > MAX_COLUMNS {
        return Err(DipError::Parse {
            offset: 10,
            msg: format!("column count {d} outside 1..={MAX_COLUMNS}"),
        });
    }
    let n = frames * POSE_DIM;
    let expected = 14 + n * d * 4;
    if bytes.len() != expected {
        if bytes.len() < expected {
            return Err(DipError::Truncated {
                expected,
                actual: bytes.len(),
            });
        }
        return Err(DipError::Parse {
            offset: expected,
            msg: "trailing bytes after payload".into(),
        });
    }
    let mut columns = vec![vec![0.0; n]; d];
    for (i, chunk) in bytes[14..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(DipError::Parse {
                offset: 14 + 4 * i,
                msg: "non-finite basis value".into(),
            });
        }
        columns[i % d][i / d] = v as f64;
    }
    let (prior_mean, prior_std) = match build_action_basis(action, frames) {
        Ok(built) if built.dim() == d => (built.prior_mean, built.prior_std),
        _ => (vec![0.0; d], vec![1.0; d]),
    };
    Ok(MotionBasis {
        action,
        frames,
        columns,
        prior_mean,
        prior_std,
    })
}

pub fn save_basis(b: &MotionBasis, path: &Path) -> Result<()> {
    std::fs::write(path, encode_basis(b)).map_err(|e| DipError::io(path, e))
}

pub fn load_basis(path: &Path) -> Result<MotionBasis> {
    let bytes = std::fs::read(path).map_err(|e| DipError::io(path, e))?;
    decode_basis(&bytes)
}
