//! Grasp candidates, the graspable cuboid and its nine-channel
//! likelihood feature tensor.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Point3, Quaternion, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dlv::{DepthLikelihoodVolume, VolumeSpec};
use crate::error::{Error, Result};
use crate::pose::{GraspPose, PoseRecord};

/// Parallel-jaw gripper geometry in the gripper frame (x approach,
/// z closing, y = z × x). The cuboid `L × W × H` is centered on the pose
/// origin; the finger inner faces sit at `z = ±H/2`, the palm against the
/// `-x` face of the cuboid and the finger pads span `|x| ≤ finger_length/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GripperParams {
    pub cuboid_extent: [f64; 3],
    /// Finger breadth along y.
    pub finger_width: f64,
    pub palm_depth: f64,
    /// Length of the contact pads along x.
    pub finger_length: f64,
    /// Finger thickness along z.
    pub finger_thickness: f64,
}

impl Default for GripperParams {
    fn default() -> Self {
        Self {
            cuboid_extent: [0.10, 0.10, 0.06],
            finger_width: 0.02,
            palm_depth: 0.02,
            finger_length: 0.05,
            finger_thickness: 0.01,
        }
    }
}

/// Axis-aligned box in the gripper frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl GripperParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.cuboid_extent[0],
            self.cuboid_extent[1],
            self.cuboid_extent[2],
            self.finger_width,
            self.palm_depth,
            self.finger_length,
            self.finger_thickness,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("gripper", "all dimensions must be positive"));
        }
        if self.finger_length > self.cuboid_extent[0] {
            return Err(Error::invalid(
                "gripper",
                "finger pads longer than the cuboid",
            ));
        }
        if self.finger_width > self.cuboid_extent[1] {
            return Err(Error::invalid("gripper", "fingers wider than the cuboid"));
        }
        Ok(())
    }

    /// Distance between the finger inner faces.
    pub fn opening(&self) -> f64 {
        self.cuboid_extent[2]
    }

    pub fn palm(&self) -> LocalBox {
        let [l, _, h] = self.cuboid_extent;
        let hw = self.finger_width / 2.0;
        LocalBox {
            min: [
                -l / 2.0 - self.palm_depth,
                -hw,
                -h / 2.0 - self.finger_thickness,
            ],
            max: [-l / 2.0, hw, h / 2.0 + self.finger_thickness],
        }
    }

    /// Fingers at `+z` and `-z`.
    pub fn fingers(&self) -> [LocalBox; 2] {
        let [l, _, h] = self.cuboid_extent;
        let hw = self.finger_width / 2.0;
        let x = [-l / 2.0, self.finger_length / 2.0];
        [
            LocalBox {
                min: [x[0], -hw, h / 2.0],
                max: [x[1], hw, h / 2.0 + self.finger_thickness],
            },
            LocalBox {
                min: [x[0], -hw, -h / 2.0 - self.finger_thickness],
                max: [x[1], hw, -h / 2.0],
            },
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspCandidate {
    pub pose: GraspPose,
    pub confidence: f64,
    pub label: Option<bool>,
}

impl GraspCandidate {
    pub fn new(pose: GraspPose) -> Self {
        Self {
            pose,
            confidence: 0.0,
            label: None,
        }
    }

    pub fn position(&self) -> Point3<f64> {
        Point3::from(self.pose.translation.vector)
    }

    pub fn approach(&self) -> Vector3<f64> {
        self.pose.rotation * Vector3::x()
    }

    pub fn closing(&self) -> Vector3<f64> {
        self.pose.rotation * Vector3::z()
    }
}

/// JSON form of a [`GraspCandidate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    #[serde(flatten)]
    pub pose: PoseRecord,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<bool>,
}

impl From<&GraspCandidate> for CandidateRecord {
    fn from(c: &GraspCandidate) -> Self {
        Self {
            pose: PoseRecord::from(&c.pose),
            confidence: c.confidence,
            label: c.label,
        }
    }
}

impl CandidateRecord {
    pub fn to_candidate(&self) -> Result<GraspCandidate> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::invalid("candidate", "confidence outside [0, 1]"));
        }
        Ok(GraspCandidate {
            pose: self.pose.to_pose()?,
            confidence: self.confidence,
            label: self.label,
        })
    }
}

/// Uniform rotation from three uniform variates (Shoemake).
pub fn uniform_rotation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<f64> {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    UnitQuaternion::new_normalize(Quaternion::new(
        b * (tau * u3).cos(),
        a * (tau * u2).sin(),
        a * (tau * u2).cos(),
        b * (tau * u3).sin(),
    ))
}

pub fn uniform_position<R: Rng + ?Sized>(rng: &mut R, box_: &VolumeSpec) -> Point3<f64> {
    Point3::from([0, 1, 2].map(|a| box_.origin[a] + rng.random::<f64>() * box_.extent[a]))
}

pub fn sample_candidates(workspace: &VolumeSpec, n: usize, seed: u64) -> Vec<GraspCandidate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let p = uniform_position(&mut rng, workspace);
            let q = uniform_rotation(&mut rng);
            GraspCandidate::new(GraspPose::from_parts(Translation3::from(p.coords), q))
        })
        .collect()
}

/// Likelihood sampled on the cell-centered `l × w × h` lattice of a
/// grasp cuboid, index `a + l * (b + w * c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraspVolume {
    pub grid: Vec<f64>,
    pub dims: [usize; 3],
    pub candidate: GraspCandidate,
    pub source_spec: VolumeSpec,
    /// Fraction of lattice points outside the source volume.
    pub outside_fraction: f64,
}

impl GraspVolume {
    pub fn from_grid(grid: Vec<f64>, dims: [usize; 3]) -> Result<Self> {
        if grid.len() != dims.iter().product::<usize>() {
            return Err(Error::DimensionMismatch {
                expected: dims.to_vec(),
                found: vec![grid.len()],
            });
        }
        if grid.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(
                "grasp volume",
                "values must be finite and non-negative",
            ));
        }
        Ok(Self {
            grid,
            dims,
            candidate: GraspCandidate::new(GraspPose::identity()),
            source_spec: VolumeSpec {
                origin: [0.0; 3],
                extent: [1.0; 3],
                resolution: [2; 3],
            },
            outside_fraction: 0.0,
        })
    }

    #[inline]
    pub fn at(&self, a: usize, b: usize, c: usize) -> f64 {
        self.grid[a + self.dims[0] * (b + self.dims[1] * c)]
    }
}

/// Gripper-frame position of lattice point `(a, b, c)`.
pub fn lattice_point(gripper: &GripperParams, density: [usize; 3], idx: [usize; 3]) -> Point3<f64> {
    Point3::from([0, 1, 2].map(|k| {
        let e = gripper.cuboid_extent[k];
        -e / 2.0 + (idx[k] as f64 + 0.5) * e / density[k] as f64
    }))
}

fn check_density(density: [usize; 3]) -> Result<()> {
    if density.contains(&0) {
        return Err(Error::invalid(
            "grid density",
            "every axis needs at least one cell",
        ));
    }
    Ok(())
}

pub fn voxelize_grasp(
    dlv: &DepthLikelihoodVolume,
    candidate: &GraspCandidate,
    gripper: &GripperParams,
    density: [usize; 3],
) -> Result<GraspVolume> {
    check_density(density)?;
    let [l, w, h] = density;
    let mut grid = Vec::with_capacity(l * w * h);
    let mut outside = 0usize;
    for c in 0..h {
        for b in 0..w {
            for a in 0..l {
                let p = candidate.pose * lattice_point(gripper, density, [a, b, c]);
                match dlv.query(&p) {
                    Some(v) => grid.push(v),
                    None => {
                        outside += 1;
                        grid.push(0.0);
                    }
                }
            }
        }
    }
    if outside == grid.len() {
        return Err(Error::GraspOutsideWorkspace);
    }
    Ok(GraspVolume {
        outside_fraction: outside as f64 / grid.len() as f64,
        grid,
        dims: density,
        candidate: *candidate,
        source_spec: *dlv.spec(),
    })
}

/// Fraction of the cuboid outside `spec`, estimated on a coarse lattice.
pub fn outside_fraction(
    spec: &VolumeSpec,
    candidate: &GraspCandidate,
    gripper: &GripperParams,
) -> f64 {
    const COARSE: [usize; 3] = [8, 8, 6];
    let mut outside = 0;
    for c in 0..COARSE[2] {
        for b in 0..COARSE[1] {
            for a in 0..COARSE[0] {
                let p = candidate.pose * lattice_point(gripper, COARSE, [a, b, c]);
                if !spec.contains(&p) {
                    outside += 1;
                }
            }
        }
    }
    outside as f64 / COARSE.iter().product::<usize>() as f64
}

/// Drops candidates whose cuboid lies more than half outside the volume.
pub fn prune_candidates(
    spec: &VolumeSpec,
    candidates: Vec<GraspCandidate>,
    gripper: &GripperParams,
) -> Vec<GraspCandidate> {
    candidates
        .into_iter()
        .filter(|c| outside_fraction(spec, c, gripper) <= 0.5)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Row-major 2-D map.
#[derive(Debug, Clone, PartialEq)]
pub struct Map2 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Map2 {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    pub center: Map2,
    pub average: Map2,
    pub difference: Map2,
}

/// Center-slice, mean and mean-absolute-adjacent-difference maps of the
/// volume sliced along `axis`. Map x/y run over the two remaining axes in
/// increasing order.
pub fn feature_maps(volume: &GraspVolume, axis: Axis) -> Result<FeatureMaps> {
    let ax = axis.index();
    let slices = volume.dims[ax];
    if slices < 2 {
        return Err(Error::invalid(
            "feature maps",
            format!("axis {axis:?} has {slices} slice; difference map needs at least 2"),
        ));
    }
    let (u_ax, v_ax) = match axis {
        Axis::X => (1, 2),
        Axis::Y => (0, 2),
        Axis::Z => (0, 1),
    };
    let (width, height) = (volume.dims[u_ax], volume.dims[v_ax]);
    let n = width * height;
    let mut center = vec![0.0; n];
    let mut average = vec![0.0; n];
    let mut difference = vec![0.0; n];
    let mid = slices / 2;
    let hf = slices as f64;
    let mut idx = [0usize; 3];
    for v in 0..height {
        for u in 0..width {
            idx[u_ax] = u;
            idx[v_ax] = v;
            let mut sum = 0.0;
            let mut diff = 0.0;
            let mut prev = 0.0;
            for s in 0..slices {
                idx[ax] = s;
                let val = volume.at(idx[0], idx[1], idx[2]);
                sum += val;
                if s > 0 {
                    diff += (prev - val).abs();
                }
                prev = val;
            }
            idx[ax] = mid;
            let o = v * width + u;
            center[o] = volume.at(idx[0], idx[1], idx[2]);
            average[o] = sum / hf;
            difference[o] = diff / hf;
        }
    }
    let map = |data| Map2 {
        width,
        height,
        data,
    };
    Ok(FeatureMaps {
        center: map(center),
        average: map(average),
        difference: map(difference),
    })
}

/// Bilinear resize with half-pixel centers and edge clamping; a copy when
/// the size already matches.
pub fn resize_bilinear(src: &Map2, width: usize, height: usize) -> Map2 {
    if src.width == width && src.height == height {
        return src.clone();
    }
    let coord = |dst: usize, n_dst: usize, n_src: usize| {
        let t =
            ((dst as f64 + 0.5) * n_src as f64 / n_dst as f64 - 0.5).clamp(0.0, (n_src - 1) as f64);
        let i = (t.floor() as usize).min(n_src.saturating_sub(2));
        (i, (i + 1).min(n_src - 1), t - i as f64)
    };
    let cols: Vec<_> = (0..width).map(|x| coord(x, width, src.width)).collect();
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        let (y0, y1, fy) = coord(y, height, src.height);
        for &(x0, x1, fx) in &cols {
            let top = src.at(x0, y0) + (src.at(x1, y0) - src.at(x0, y0)) * fx;
            let bot = src.at(x0, y1) + (src.at(x1, y1) - src.at(x0, y1)) * fx;
            data.push(top + (bot - top) * fy);
        }
    }
    Map2 {
        width,
        height,
        data,
    }
}

pub const CHANNELS: usize = 9;

pub const CHANNEL_NAMES: [&str; CHANNELS] = [
    "center_x",
    "center_y",
    "center_z",
    "average_x",
    "average_y",
    "average_z",
    "difference_x",
    "difference_y",
    "difference_z",
];

/// Nine square maps, channel-major, ordered as [`CHANNEL_NAMES`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub size: usize,
    pub data: Vec<f64>,
}

impl FeatureTensor {
    pub fn new(size: usize, data: Vec<f64>) -> Result<Self> {
        if size == 0 || data.len() != CHANNELS * size * size {
            return Err(Error::DimensionMismatch {
                expected: vec![CHANNELS, size, size],
                found: vec![data.len()],
            });
        }
        Ok(Self { size, data })
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.size * self.size;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn dims(&self) -> [usize; 3] {
        [CHANNELS, self.size, self.size]
    }
}

pub fn assemble_tensor(volume: &GraspVolume, target_size: usize) -> Result<FeatureTensor> {
    if target_size == 0 {
        return Err(Error::invalid(
            "feature tensor",
            "target size must be positive",
        ));
    }
    let maps = Axis::ALL
        .iter()
        .map(|&a| feature_maps(volume, a))
        .collect::<Result<Vec<_>>>()?;
    let mut data = Vec::with_capacity(CHANNELS * target_size * target_size);
    for kind in 0..3 {
        for m in &maps {
            let src = match kind {
                0 => &m.center,
                1 => &m.average,
                _ => &m.difference,
            };
            data.extend(resize_bilinear(src, target_size, target_size).data);
        }
    }
    FeatureTensor::new(target_size, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub grid_density: [usize; 3],
    pub target_size: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            grid_density: [100, 100, 60],
            target_size: 100,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        check_density(self.grid_density)?;
        if self.grid_density.contains(&1) {
            return Err(Error::invalid(
                "grid density",
                "every axis needs at least two cells",
            ));
        }
        if self.target_size == 0 {
            return Err(Error::invalid(
                "feature tensor",
                "target size must be positive",
            ));
        }
        Ok(())
    }
}

/// Voxelize and assemble in one step.
pub fn candidate_tensor(
    dlv: &DepthLikelihoodVolume,
    candidate: &GraspCandidate,
    gripper: &GripperParams,
    cfg: &FeatureConfig,
) -> Result<FeatureTensor> {
    assemble_tensor(
        &voxelize_grasp(dlv, candidate, gripper, cfg.grid_density)?,
        cfg.target_size,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSidecar {
    pub dims: [usize; 3],
    pub dtype: String,
    pub channel_order: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<CandidateRecord>,
}

fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

/// Writes `path` as little-endian `f32` and a JSON sidecar next to it.
pub fn write_tensor(
    path: impl AsRef<Path>,
    tensor: &FeatureTensor,
    candidate: Option<&GraspCandidate>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = tensor
        .data
        .iter()
        .flat_map(|v| (*v as f32).to_le_bytes())
        .collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side = TensorSidecar {
        dims: tensor.dims(),
        dtype: "f32le".into(),
        channel_order: CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
        candidate: candidate.map(CandidateRecord::from),
    };
    let sp = sidecar_path(path);
    let json = serde_json::to_string_pretty(&side).expect("sidecar serializes");
    fs::write(&sp, json).map_err(|e| Error::io(sp, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<(FeatureTensor, TensorSidecar)> {
    let path = path.as_ref();
    let sp = sidecar_path(path);
    let text = fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
    let side: TensorSidecar = serde_json::from_str(&text).map_err(|e| Error::Document {
        path: sp.clone(),
        message: e.to_string(),
    })?;
    if side.dtype != "f32le" || side.dims[0] != CHANNELS || side.dims[1] != side.dims[2] {
        return Err(Error::Document {
            path: sp,
            message: format!("unsupported tensor layout {:?} {}", side.dims, side.dtype),
        });
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let n = side.dims.iter().product::<usize>();
    if bytes.len() != 4 * n {
        return Err(Error::DimensionMismatch {
            expected: vec![4 * n],
            found: vec![bytes.len()],
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((FeatureTensor::new(side.dims[1], data)?, side))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn volume(dims: [usize; 3], f: impl Fn(usize, usize, usize) -> f64) -> GraspVolume {
        let mut g = Vec::new();
        for c in 0..dims[2] {
            for b in 0..dims[1] {
                for a in 0..dims[0] {
                    g.push(f(a, b, c));
                }
            }
        }
        GraspVolume::from_grid(g, dims).unwrap()
    }

    #[test]
    fn candidates_are_reproducible_and_bounded() {
        let ws = VolumeSpec::new([-0.1, 0.2, 0.0], [0.3, 0.2, 0.1], [2, 2, 2]).unwrap();
        let a = sample_candidates(&ws, 1000, 5);
        let b = sample_candidates(&ws, 1000, 5);
        let c = sample_candidates(&ws, 1000, 6);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|g| ws.contains(&g.position())));
    }

    #[test]
    fn rotations_are_uniform_on_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mut acc = nalgebra::Matrix3::<f64>::zeros();
        for _ in 0..n {
            acc += uniform_rotation(&mut rng).to_rotation_matrix().matrix();
        }
        acc /= n as f64;
        assert!(acc.abs().max() < 0.02, "{acc}");
    }

    #[test]
    fn default_lattice_pitch_is_one_millimeter() {
        let g = GripperParams::default();
        let d = FeatureConfig::default().grid_density;
        let p0 = lattice_point(&g, d, [0, 0, 0]);
        let p1 = lattice_point(&g, d, [1, 1, 1]);
        for k in 0..3 {
            assert!((p1[k] - p0[k] - 0.001).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_pose_reads_the_dlv_sub_block() {
        let spec = VolumeSpec::new([0.0; 3], [0.09, 0.09, 0.09], [10, 10, 10]).unwrap();
        let vals: Vec<f64> = (0..spec.len()).map(|i| (i % 37) as f64 * 0.1).collect();
        let dlv = DepthLikelihoodVolume::from_values(spec, vals, 1).unwrap();
        let step = 0.01;
        let dims = [4, 3, 5];
        let gripper = GripperParams {
            cuboid_extent: dims.map(|d| d as f64 * step),
            finger_width: 0.01,
            finger_length: 0.01,
            ..GripperParams::default()
        };
        let start = [2usize, 5, 1];
        let center: [f64; 3] =
            [0, 1, 2].map(|k| (start[k] as f64 + (dims[k] as f64 - 1.0) / 2.0) * step);
        let cand = GraspCandidate::new(GraspPose::translation(center[0], center[1], center[2]));
        let gv = voxelize_grasp(&dlv, &cand, &gripper, dims).unwrap();
        for c in 0..dims[2] {
            for b in 0..dims[1] {
                for a in 0..dims[0] {
                    let want = dlv.get(start[0] + a, start[1] + b, start[2] + c);
                    assert!((gv.at(a, b, c) - want).abs() < 1e-12);
                }
            }
        }
        assert_eq!(gv.outside_fraction, 0.0);
    }

    #[test]
    fn far_away_cuboid_is_rejected() {
        let spec = VolumeSpec::new([0.0; 3], [0.1; 3], [3, 3, 3]).unwrap();
        let dlv = DepthLikelihoodVolume::from_values(spec, vec![1.0; 27], 1).unwrap();
        let cand = GraspCandidate::new(GraspPose::translation(5.0, 0.0, 0.0));
        assert!(matches!(
            voxelize_grasp(&dlv, &cand, &GripperParams::default(), [4, 4, 4]),
            Err(Error::GraspOutsideWorkspace)
        ));
        assert!(prune_candidates(&spec, vec![cand], &GripperParams::default()).is_empty());
    }

    #[test]
    fn single_nonzero_slice() {
        let h = 6;
        let v = volume([4, 5, h], |_, _, c| if c == 0 { 1.0 } else { 0.0 });
        let m = feature_maps(&v, Axis::Z).unwrap();
        assert_eq!((m.center.width, m.center.height), (4, 5));
        assert!(m.average.data.iter().all(|x| *x == 1.0 / h as f64));
        assert!(m.difference.data.iter().all(|x| *x == 1.0 / h as f64));
        assert!(m.center.data.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn single_slice_axis_is_an_error() {
        let v = volume([4, 1, 3], |_, _, _| 1.0);
        assert!(feature_maps(&v, Axis::Y).is_err());
        assert!(feature_maps(&v, Axis::X).is_ok());
    }

    #[test]
    fn uniform_volume_tensor() {
        let v = volume([6, 6, 4], |_, _, _| 0.7);
        let t = assemble_tensor(&v, 10).unwrap();
        assert_eq!(t.dims(), [9, 10, 10]);
        for c in 0..6 {
            assert!(t.channel(c).iter().all(|x| (*x - 0.7).abs() < 1e-15));
        }
        for c in 6..9 {
            assert!(t.channel(c).iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn resize_keeps_linear_ramps_and_copies_identity() {
        let src = Map2 {
            width: 4,
            height: 3,
            data: (0..12).map(|i| (i % 4) as f64).collect(),
        };
        assert_eq!(resize_bilinear(&src, 4, 3), src);
        let up = resize_bilinear(&src, 8, 3);
        assert_eq!(up.at(0, 0), 0.0);
        assert_eq!(up.at(7, 2), 3.0);
        assert!((up.at(3, 1) - 1.25).abs() < 1e-12);
    }

    #[test]
    fn gripper_geometry_is_consistent() {
        let g = GripperParams::default();
        let [top, bottom] = g.fingers();
        assert_eq!(top.min[2], 0.03);
        assert_eq!(bottom.max[2], -0.03);
        assert_eq!(g.palm().max[0], top.min[0]);
        assert!(g.validate().is_ok());
    }

    #[test]
    fn tensor_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = volume([3, 4, 5], |a, b, c| (a + 2 * b + 3 * c) as f64 * 0.25);
        let t = assemble_tensor(&v, 4).unwrap();
        let path = dir.path().join("t.bin");
        write_tensor(&path, &t, None).unwrap();
        let (back, side) = read_tensor(&path).unwrap();
        assert_eq!(side.dims, [9, 4, 4]);
        for (a, b) in back.data.iter().zip(&t.data) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }
}
