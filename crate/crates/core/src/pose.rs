//! Rigid-transform helpers shared by cameras, grasps and scene primitives.

use nalgebra::{
    Isometry3, IsometryMatrix3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Camera→world transform. Stored as an explicit rotation matrix so that
/// manifests round-trip without quaternion conversion error.
pub type CameraPose = IsometryMatrix3<f64>;

/// Gripper→world transform.
pub type GraspPose = Isometry3<f64>;

pub const ORTHONORMAL_TOLERANCE: f64 = 1e-6;

/// Checks `R^T R = I` within `tol` and `det R > 0`.
pub fn check_rotation(m: &Matrix3<f64>, tol: f64) -> Result<()> {
    let err = (m.transpose() * m - Matrix3::identity()).abs().max();
    if !err.is_finite() || err > tol {
        return Err(Error::invalid(
            "rotation",
            format!("not orthonormal (max |R^T R - I| = {err:.3e})"),
        ));
    }
    if m.determinant() <= 0.0 {
        return Err(Error::invalid("rotation", "determinant is not positive"));
    }
    Ok(())
}

/// Parses a row-major homogeneous 4×4 matrix.
pub fn camera_pose_from_row_major(values: &[f64; 16]) -> Result<CameraPose> {
    let bottom = [values[12], values[13], values[14], values[15]];
    if bottom != [0.0, 0.0, 0.0, 1.0] {
        return Err(Error::invalid(
            "pose",
            format!("bottom row must be [0, 0, 0, 1], got {bottom:?}"),
        ));
    }
    let r = Matrix3::new(
        values[0], values[1], values[2], values[4], values[5], values[6], values[8], values[9],
        values[10],
    );
    check_rotation(&r, ORTHONORMAL_TOLERANCE)?;
    let t = Translation3::new(values[3], values[7], values[11]);
    Ok(IsometryMatrix3::from_parts(
        t,
        Rotation3::from_matrix_unchecked(r),
    ))
}

pub fn camera_pose_to_row_major(pose: &CameraPose) -> [f64; 16] {
    let r = pose.rotation.matrix();
    let t = pose.translation.vector;
    #[rustfmt::skip]
    let m = [
        r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
        r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
        r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        0.0, 0.0, 0.0, 1.0,
    ];
    m
}

/// Camera at `eye` looking at `target`. The camera frame is x right,
/// y down, z forward; `up` fixes the roll.
pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3]) -> CameraPose {
    let eye = Vector3::from(eye);
    let forward = (Vector3::from(target) - eye).normalize();
    let mut right = forward.cross(&Vector3::from(up));
    if right.norm() < 1e-9 {
        right = forward.cross(&Vector3::x());
    }
    let right = right.normalize();
    let down = forward.cross(&right);
    let r = Matrix3::from_columns(&[right, down, forward]);
    IsometryMatrix3::from_parts(Translation3::from(eye), Rotation3::from_matrix_unchecked(r))
}

/// Builds a grasp frame from its approach (x) and closing (z) directions.
/// The closing direction is orthogonalized against the approach direction
/// and y completes a right-handed frame.
pub fn grasp_frame(position: [f64; 3], approach: [f64; 3], closing: [f64; 3]) -> GraspPose {
    let x = Vector3::from(approach).normalize();
    let z = Vector3::from(closing);
    let z = (z - x * x.dot(&z)).normalize();
    let y = z.cross(&x);
    let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
    Isometry3::from_parts(
        Translation3::from(Vector3::from(position)),
        UnitQuaternion::from_rotation_matrix(&rot),
    )
}

/// Serializable form of a grasp pose: position plus unit quaternion
/// `[w, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub position: [f64; 3],
    pub quaternion: [f64; 4],
}

impl From<&GraspPose> for PoseRecord {
    fn from(p: &GraspPose) -> Self {
        let q = p.rotation.quaternion();
        PoseRecord {
            position: p.translation.vector.into(),
            quaternion: [q.w, q.i, q.j, q.k],
        }
    }
}

impl PoseRecord {
    pub fn to_pose(&self) -> Result<GraspPose> {
        let [w, i, j, k] = self.quaternion;
        let q = nalgebra::Quaternion::new(w, i, j, k);
        let n = q.norm();
        if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(
                "pose",
                format!("quaternion norm {n} is not 1"),
            ));
        }
        Ok(Isometry3::from_parts(
            Translation3::from(Vector3::from(self.position)),
            UnitQuaternion::new_normalize(q),
        ))
    }
}

/// Angle of the relative rotation between two poses.
pub fn rotation_distance(a: &GraspPose, b: &GraspPose) -> f64 {
    a.rotation.angle_to(&b.rotation)
}
