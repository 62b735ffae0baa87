//! DIPS1 scene files: a short text header followed by raw little-endian floats.

use std::path::Path;

use nalgebra::Vector3;

use super::grid::{SceneField, SdfGrid};
use crate::error::{DipError, Result};

const MAGIC: &str = "DIPS1";

pub fn encode_scene(scene: &SceneField) -> Vec<u8> {
    let g = &scene.sdf;
    let mut out = format!(
        "{MAGIC}\ndims {} {} {}\norigin {} {} {}\nspacing {}\nfloor {}\nwalkable {}\n\n",
        g.dims[0],
        g.dims[1],
        g.dims[2],
        g.origin.x,
        g.origin.y,
        g.origin.z,
        g.spacing,
        scene.floor_height,
        u8::from(scene.walkable.is_some()),
    )
    .into_bytes();
    out.reserve(g.values.len() * 4 + g.dims[0] * g.dims[1]);
    for v in &g.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(w) = &scene.walkable {
        out.extend(w.iter().map(|&b| u8::from(b)));
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Result<(usize, &'a str)> {
        let start = self.pos;
        let rest = &self.bytes[start..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or(DipError::Parse {
                offset: start,
                msg: "unterminated header line".into(),
            })?;
        self.pos = start + end + 1;
        let s = std::str::from_utf8(&rest[..end]).map_err(|_| DipError::Parse {
            offset: start,
            msg: "header is not valid UTF-8".into(),
        })?;
        Ok((start, s))
    }

    fn field<const N: usize>(&mut self, key: &str) -> Result<(usize, [&'a str; N])> {
        let (offset, line) = self.line()?;
        let mut parts = line.split(' ');
        if parts.next() != Some(key) {
            return Err(DipError::Parse {
                offset,
                msg: format!("expected `{key}` line, found `{line}`"),
            });
        }
        let vals: Vec<&str> = parts.collect();
        let arr: [&str; N] = vals.try_into().map_err(|v: Vec<&str>| DipError::Parse {
            offset,
            msg: format!("`{key}` takes {N} values, found {}", v.len()),
        })?;
        Ok((offset, arr))
    }
}

fn num<T: std::str::FromStr>(offset: usize, s: &str) -> Result<T> {
    s.parse().map_err(|_| DipError::Parse {
        offset,
        msg: format!("cannot parse `{s}`"),
    })
}

pub fn decode_scene(bytes: &[u8]) -> Result<SceneField> {
    let mut c = Cursor { bytes, pos: 0 };
    if !bytes.starts_with(MAGIC.as_bytes()) {
        return Err(DipError::Parse {
            offset: 0,
            msg: "bad magic, expected DIPS1".into(),
        });
    }
    let (off, line) = c.line()?;
    if line != MAGIC {
        return Err(DipError::Parse {
            offset: off,
            msg: "bad magic, expected DIPS1".into(),
        });
    }
    let (off, d) = c.field::<3>("dims")?;
    let dims = [num(off, d[0])?, num(off, d[1])?, num(off, d[2])?];
    let (off, o) = c.field::<3>("origin")?;
    let origin = Vector3::new(num(off, o[0])?, num(off, o[1])?, num(off, o[2])?);
    let (off, s) = c.field::<1>("spacing")?;
    let spacing: f64 = num(off, s[0])?;
    let (off, f) = c.field::<1>("floor")?;
    let floor: f64 = num(off, f[0])?;
    let (off, w) = c.field::<1>("walkable")?;
    let has_walk = match w[0] {
        "0" => false,
        "1" => true,
        other => {
            return Err(DipError::Parse {
                offset: off,
                msg: format!("walkable flag must be 0 or 1, found `{other}`"),
            })
        }
    };
    let (off, blank) = c.line()?;
    if !blank.is_empty() {
        return Err(DipError::Parse {
            offset: off,
            msg: "expected blank line before payload".into(),
        });
    }
    if dims.iter().any(|&n: &usize| n < 2) {
        return Err(DipError::Parse {
            offset: 0,
            msg: format!("dims {dims:?} must be >= 2 per axis"),
        });
    }
    let n = dims[0]
        .checked_mul(dims[1])
        .and_then(|v| v.checked_mul(dims[2]))
        .ok_or(DipError::Parse {
            offset: 0,
            msg: "dims overflow".into(),
        })?;
    let nw = if has_walk { dims[0] * dims[1] } else { 0 };
    let expected = c.pos + n * 4 + nw;
    if bytes.len() < expected {
        return Err(DipError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(DipError::Parse {
            offset: expected,
            msg: format!("{} trailing bytes after payload", bytes.len() - expected),
        });
    }
    let payload = &bytes[c.pos..c.pos + n * 4];
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(DipError::Parse {
            offset: c.pos + 4 * i,
            msg: "non-finite sdf value".into(),
        });
    }
    let walkable = if has_walk {
        let start = c.pos + n * 4;
        let mut w = Vec::with_capacity(nw);
        for (i, &b) in bytes[start..].iter().enumerate() {
            match b {
                0 => w.push(false),
                1 => w.push(true),
                _ => {
                    return Err(DipError::Parse {
                        offset: start + i,
                        msg: format!("walkable byte must be 0 or 1, found {b}"),
                    })
                }
            }
        }
        Some(w)
    } else {
        None
    };
    SceneField::new(
        SdfGrid::new(dims, origin, spacing, values)?,
        floor,
        walkable,
    )
}

pub fn save_scene(scene: &SceneField, path: &Path) -> Result<()> {
    std::fs::write(path, encode_scene(scene)).map_err(|e| DipError::io(path, e))
}

pub fn load_scene(path: &Path) -> Result<SceneField> {
    let bytes = std::fs::read(path).map_err(|e| DipError::io(path, e))?;
    decode_scene(&bytes)
}
