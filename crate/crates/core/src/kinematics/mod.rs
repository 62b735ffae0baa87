//! Skeleton, forward kinematics, surface markers and motion-frame utilities.

mod blend;
mod fk;
mod pose;
mod skeleton;
mod transform;

pub use blend::{blend_overlap, blend_pose, blend_weights, concat_long_term};
pub use fk::{
    backward, compute_markers, forward, forward_kinematics, joint_jacobian, markers_from,
    FrameKinematics, JointPositions,
};
pub use pose::{flatten, unflatten, MotionClip, Pose, TAU_OFFSET};
pub use skeleton::{
    default_body, load_body_asset, parse_body_asset, BodyPart, Joint, Marker, MarkerSet, Skeleton,
    FOOT_JOINTS, LEFT_HIP, PELVIS, RIGHT_HIP,
};
pub use transform::{
    apply_transform, canonical_transform, canonicalize, transform_pose, RigidTransform,
    MIN_HIP_SPAN,
};
