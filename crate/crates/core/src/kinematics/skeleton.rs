use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;

use crate::error::{DipError, Result};
use crate::NUM_JOINTS;

const DEFAULT_ASSET: &str = include_str!("../../assets/skeleton.txt");

pub const PELVIS: usize = 0;
pub const LEFT_HIP: usize = 1;
pub const RIGHT_HIP: usize = 2;
/// Ankles and feet, used by the foot-contact metric.
pub const FOOT_JOINTS: [usize; 4] = [7, 8, 10, 11];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BodyPart {
    Foot,
    Gluteus,
    Back,
    Hand,
    Other,
}

impl FromStr for BodyPart {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "foot" => Ok(BodyPart::Foot),
            "gluteus" => Ok(BodyPart::Gluteus),
            "back" => Ok(BodyPart::Back),
            "hand" => Ok(BodyPart::Hand),
            "other" => Ok(BodyPart::Other),
            _ => Err(format!("unknown body part tag '{s}'")),
        }
    }
}

impl fmt::Display for BodyPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BodyPart::Foot => "foot",
            BodyPart::Gluteus => "gluteus",
            BodyPart::Back => "back",
            BodyPart::Hand => "hand",
            BodyPart::Other => "other",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Rest-pose offset from the parent, in the parent's frame. For the root
    /// this is the fixed offset from the translation vector.
    pub offset: Vector3<f64>,
}

/// Joint tree with parents always preceding children.
#[derive(Debug, Clone)]
pub struct Skeleton {
    joints: Vec<Joint>,
}

#[derive(Debug, Clone)]
pub struct Marker {
    pub name: String,
    pub joint: usize,
    pub offset: Vector3<f64>,
    pub part: BodyPart,
}

#[derive(Debug, Clone)]
pub struct MarkerSet {
    markers: Vec<Marker>,
}

impl Skeleton {
    pub fn new(joints: Vec<Joint>) -> Result<Self> {
        if joints.len() != NUM_JOINTS {
            return Err(DipError::Shape {
                what: "skeleton joints",
                expected: NUM_JOINTS,
                actual: joints.len(),
            });
        }
        for (i, j) in joints.iter().enumerate() {
            match (i, j.parent) {
                (0, None) => {}
                (0, Some(_)) => {
                    return Err(DipError::Asset {
                        line: 0,
                        msg: "joint 0 must be the root".into(),
                    })
                }
                (_, Some(p)) if p < i => {}
                _ => {
                    return Err(DipError::Asset {
                        line: 0,
                        msg: format!("joint {i} must have a parent with a smaller index"),
                    })
                }
            }
            if !j.offset.iter().all(|v| v.is_finite()) {
                return Err(DipError::Asset {
                    line: 0,
                    msg: format!("joint {i} has a non-finite offset"),
                });
            }
        }
        Ok(Skeleton { joints })
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn parent(&self, k: usize) -> Option<usize> {
        self.joints[k].parent
    }

    pub fn offset(&self, k: usize) -> &Vector3<f64> {
        &self.joints[k].offset
    }

    /// Chain from `k` up to the root, excluding `k`.
    pub fn ancestors(&self, k: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = self.joints[k].parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.joints[p].parent;
        }
        out
    }

    /// Rest-pose joint positions with zero translation.
    pub fn rest_positions(&self) -> Vec<Vector3<f64>> {
        let mut out: Vec<Vector3<f64>> = Vec::with_capacity(self.joints.len());
        for j in &self.joints {
            let p = match j.parent {
                Some(p) => out[p] + j.offset,
                None => j.offset,
            };
            out.push(p);
        }
        out
    }

    /// Which leg a joint belongs to: -1 left, +1 right, 0 neither.
    pub fn side(&self, k: usize) -> i32 {
        let mut chain = self.ancestors(k);
        chain.insert(0, k);
        if chain.contains(&LEFT_HIP) {
            -1
        } else if chain.contains(&RIGHT_HIP) {
            1
        } else {
            0
        }
    }
}

impl MarkerSet {
    pub fn new(markers: Vec<Marker>, skel: &Skeleton) -> Result<Self> {
        for m in &markers {
            if m.joint >= skel.joints().len() {
                return Err(DipError::Asset {
                    line: 0,
                    msg: format!("marker {} references joint {}", m.name, m.joint),
                });
            }
        }
        let count = |side| {
            markers
                .iter()
                .filter(|m| m.part == BodyPart::Foot && skel.side(m.joint) == side)
                .count()
        };
        if count(-1) < 2 || count(1) < 2 {
            return Err(DipError::Asset {
                line: 0,
                msg: "need at least two foot markers per foot".into(),
            });
        }
        Ok(MarkerSet { markers })
    }

    pub fn markers(&self) -> &[Marker] {
        &self.markers
    }

    pub fn len(&self) -> usize {
        self.markers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markers.is_empty()
    }

    /// Indices of markers whose tag is in `parts`.
    pub fn indices_of(&self, parts: &[BodyPart]) -> Vec<usize> {
        self.markers
            .iter()
            .enumerate()
            .filter(|(_, m)| parts.contains(&m.part))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Parses the plain-text body asset: `joint` and `marker` lines, `#` comments.
pub fn parse_body_asset(text: &str) -> Result<(Skeleton, MarkerSet)> {
    let mut joints: Vec<Option<Joint>> = vec![None; NUM_JOINTS];
    let mut markers = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let err = |msg: String| DipError::Asset { line: line_no, msg };
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| err(format!("bad number '{s}'")))
        };
        match fields[0] {
            "joint" => {
                if fields.len() < 6 {
                    return Err(err("joint needs index, parent and offset".into()));
                }
                let idx: usize = fields[1]
                    .parse()
                    .map_err(|_| err(format!("bad joint index '{}'", fields[1])))?;
                let parent: i64 = fields[2]
                    .parse()
                    .map_err(|_| err(format!("bad parent '{}'", fields[2])))?;
                if idx >= NUM_JOINTS {
                    return Err(err(format!("joint index {idx} out of range")));
                }
                if joints[idx].is_some() {
                    return Err(err(format!("joint {idx} defined twice")));
                }
                joints[idx] = Some(Joint {
                    name: fields.get(6).unwrap_or(&"").to_string(),
                    parent: if parent < 0 {
                        None
                    } else {
                        Some(parent as usize)
                    },
                    offset: Vector3::new(num(fields[3])?, num(fields[4])?, num(fields[5])?),
                });
            }
            "marker" => {
                if fields.len() < 6 {
                    return Err(err("marker needs joint, offset and tag".into()));
                }
                let joint: usize = fields[1]
                    .parse()
                    .map_err(|_| err(format!("bad joint index '{}'", fields[1])))?;
                let part: BodyPart = fields[5].parse().map_err(err)?;
                markers.push(Marker {
                    name: fields.get(6).unwrap_or(&"").to_string(),
                    joint,
                    offset: Vector3::new(num(fields[2])?, num(fields[3])?, num(fields[4])?),
                    part,
                });
            }
            other => return Err(err(format!("unknown record '{other}'"))),
        }
    }
    let joints = joints
        .into_iter()
        .enumerate()
        .map(|(i, j)| {
            j.ok_or(DipError::Asset {
                line: 0,
                msg: format!("joint {i} missing"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let skel = Skeleton::new(joints)?;
    let ms = MarkerSet::new(markers, &skel)?;
    Ok((skel, ms))
}

pub fn load_body_asset(path: &Path) -> Result<(Skeleton, MarkerSet)> {
    let text = std::fs::read_to_string(path).map_err(|e| DipError::io(path, e))?;
    parse_body_asset(&text)
}

/// The embedded default skeleton and marker set.
pub fn default_body() -> (Skeleton, MarkerSet) {
    parse_body_asset(DEFAULT_ASSET).expect("embedded body asset is valid")
}
