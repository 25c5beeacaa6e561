//! Synthetic ground truth: a straight-ray plenoptic renderer for scenes of
//! opaque, transparent and specular surfaces, a direct per-point likelihood
//! evaluator, and an analytic grasp labeler.

use std::fs;
use std::path::Path;

use image::RgbImage;
use nalgebra::{Isometry3, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dlv::{DepthSampling, VolumeSpec};
use crate::error::{Error, Result};
use crate::features::{
    uniform_position, uniform_rotation, GraspCandidate, GripperParams, LocalBox,
};
use crate::lf_geometry::{
    correspondence, project_with_pose, ray_cost, DepthHypothesisSet, FeatureImage, PatchSpec,
};
use crate::plenoptic_io::{CameraIntrinsics, Observation, ObservationSet, SubApertureGrid};
use crate::pose::{grasp_frame, look_at, CameraPose, GraspPose, PoseRecord};

/// Seeded value noise, colored per channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub seed: u64,
    /// Noise lattice cells per meter.
    pub frequency: f64,
    pub base: [f64; 3],
    pub contrast: f64,
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lattice_value(ix: i64, iy: i64, seed: u64) -> f64 {
    let h = mix64(
        seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
            ^ mix64(ix as u64).wrapping_add(mix64((iy as u64) ^ 0x5851_f42d_4c95_7f2d)),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(u: f64, v: f64, seed: u64) -> f64 {
    let (x0, y0) = (u.floor(), v.floor());
    let s = |t: f64| t * t * (3.0 - 2.0 * t);
    let (tx, ty) = (s(u - x0), s(v - y0));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = lattice_value(ix, iy, seed);
    let b = lattice_value(ix + 1, iy, seed);
    let c = lattice_value(ix, iy + 1, seed);
    let d = lattice_value(ix + 1, iy + 1, seed);
    let top = a + (b - a) * tx;
    let bot = c + (d - c) * tx;
    top + (bot - top) * ty
}

impl Texture {
    pub fn color(&self, uv: [f64; 2]) -> [f64; 3] {
        let (u, v) = (uv[0] * self.frequency, uv[1] * self.frequency);
        std::array::from_fn(|c| {
            let seed = self.seed.wrapping_add(c as u64 * 7919);
            let n = 0.65 * value_noise(u, v, seed) + 0.35 * value_noise(2.3 * u, 2.3 * v, !seed);
            (self.base[c] + self.contrast * (n - 0.5)).clamp(0.0, 1.0)
        })
    }
}

/// Primitive geometry in its local frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Rectangle `|x| ≤ hx, |y| ≤ hy` at `z = 0`, normal `+z`; solid for
    /// contact down to `z = -thickness`.
    Plane {
        half_size: [f64; 2],
        thickness: f64,
    },
    Box {
        half_extents: [f64; 3],
    },
    /// Axis `+z` from `z = 0` to `z = height`.
    Cylinder {
        radius: f64,
        height: f64,
        #[serde(default)]
        open_top: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Material {
    Lambertian {
        texture: Texture,
    },
    Transparent {
        alpha: f64,
        tint: [f64; 3],
        #[serde(default)]
        texture: Option<Texture>,
    },
    /// Additive Gaussian highlight painted on the surface geometry. It
    /// never occludes and is not solid. Intensity is scaled by
    /// `max(0, to_camera · light_direction)^shininess`, then per channel by
    /// `color` and the optional texture.
    SpecularBlob {
        center: [f64; 3],
        radius: f64,
        intensity: f64,
        #[serde(default = "white")]
        color: [f64; 3],
        #[serde(default)]
        texture: Option<Texture>,
        light_direction: [f64; 3],
        shininess: f64,
    },
}

fn white() -> [f64; 3] {
    [1.0; 3]
}

impl Material {
    pub fn is_solid(&self) -> bool {
        !matches!(self, Material::SpecularBlob { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    #[serde(default)]
    pub name: String,
    pub shape: Shape,
    pub pose: PoseRecord,
    pub material: Material,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDescription {
    pub surfaces: Vec<Surface>,
    /// Everything below this height is solid for collision.
    pub table_height: f64,
    #[serde(default)]
    pub background: [f64; 3],
}

/// Ray-surface intersection. `t` is the ray parameter; with the camera-ray
/// convention used by the renderer it equals camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub surface: usize,
    /// Outward unit normal, world frame.
    pub normal: Vector3<f64>,
    pub point: Point3<f64>,
    uv: [f64; 2],
}

struct Prepared {
    pose: Isometry3<f64>,
    shape: Shape,
    material: Material,
}

/// Scene with precomputed surface transforms.
pub struct PreparedScene {
    surfaces: Vec<Prepared>,
    background: [f64; 3],
    table_height: f64,
}

const T_MIN: f64 = 1e-9;

fn local_hits(
    shape: &Shape,
    o: &Point3<f64>,
    d: &Vector3<f64>,
    out: &mut Vec<(f64, Vector3<f64>, [f64; 2], Point3<f64>)>,
) {
    match *shape {
        Shape::Plane { half_size, .. } => {
            if d.z != 0.0 {
                let t = -o.z / d.z;
                let p = o + d * t;
                if p.x.abs() <= half_size[0] && p.y.abs() <= half_size[1] {
                    out.push((t, Vector3::z(), [p.x, p.y], p));
                }
            }
        }
        Shape::Box { half_extents: h } => {
            let mut t0 = f64::NEG_INFINITY;
            let mut t1 = f64::INFINITY;
            let mut a0 = 0usize;
            let mut a1 = 0usize;
            for a in 0..3 {
                if d[a] == 0.0 {
                    if o[a].abs() > h[a] {
                        return;
                    }
                    continue;
                }
                let ta = (-h[a] - o[a]) / d[a];
                let tb = (h[a] - o[a]) / d[a];
                let (lo, hi) = if ta < tb { (ta, tb) } else { (tb, ta) };
                if lo > t0 {
                    t0 = lo;
                    a0 = a;
                }
                if hi < t1 {
                    t1 = hi;
                    a1 = a;
                }
            }
            if t0 > t1 {
                return;
            }
            for (t, a) in [(t0, a0), (t1, a1)] {
                let p = o + d * t;
                let mut n = Vector3::zeros();
                n[a] = p[a].signum();
                let (u, v) = ((a + 1) % 3, (a + 2) % 3);
                out.push((t, n, [p[u], p[v]], p));
            }
        }
        Shape::Cylinder {
            radius,
            height,
            open_top,
        } => {
            let a = d.x * d.x + d.y * d.y;
            if a > 0.0 {
                let b = 2.0 * (o.x * d.x + o.y * d.y);
                let c = o.x * o.x + o.y * o.y - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc >= 0.0 {
                    let sq = disc.sqrt();
                    for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                        let p = o + d * t;
                        if p.z >= 0.0 && p.z <= height {
                            let n = Vector3::new(p.x, p.y, 0.0) / radius;
                            out.push((t, n, [radius * p.y.atan2(p.x), p.z], p));
                        }
                    }
                }
            }
            if d.z != 0.0 {
                let caps: &[(f64, f64)] = if open_top {
                    &[(0.0, -1.0)]
                } else {
                    &[(0.0, -1.0), (height, 1.0)]
                };
                for &(z, nz) in caps {
                    let t = (z - o.z) / d.z;
                    let p = o + d * t;
                    if p.x * p.x + p.y * p.y <= radius * radius {
                        out.push((t, Vector3::new(0.0, 0.0, nz), [p.x, p.y], p));
                    }
                }
            }
        }
    }
}

fn local_inside(shape: &Shape, p: &Point3<f64>) -> bool {
    match *shape {
        Shape::Plane {
            half_size,
            thickness,
        } => {
            p.x.abs() <= half_size[0]
                && p.y.abs() <= half_size[1]
                && p.z <= 0.0
                && p.z >= -thickness
        }
        Shape::Box { half_extents: h } => (0..3).all(|a| p[a].abs() <= h[a]),
        Shape::Cylinder { radius, height, .. } => {
            p.z >= 0.0 && p.z <= height && p.x * p.x + p.y * p.y <= radius * radius
        }
    }
}

impl SceneDescription {
    pub fn validate(&self) -> Result<()> {
        let mut opaque = false;
        for s in &self.surfaces {
            s.pose.to_pose()?;
            let ok = match s.shape {
                Shape::Plane {
                    half_size,
                    thickness,
                } => half_size.iter().all(|v| *v > 0.0) && thickness >= 0.0,
                Shape::Box { half_extents } => half_extents.iter().all(|v| *v > 0.0),
                Shape::Cylinder { radius, height, .. } => radius > 0.0 && height > 0.0,
            };
            if !ok {
                return Err(Error::invalid(
                    "scene",
                    format!("surface '{}' has non-positive dimensions", s.name),
                ));
            }
            match s.material {
                Material::Lambertian { .. } => opaque = true,
                Material::Transparent { alpha, .. } => {
                    if !(0.0..=1.0).contains(&alpha) {
                        return Err(Error::invalid(
                            "scene",
                            format!("surface '{}' alpha {alpha} outside [0, 1]", s.name),
                        ));
                    }
                }
                Material::SpecularBlob { radius, .. } => {
                    if !(radius > 0.0) {
                        return Err(Error::invalid("scene", "specular blob radius must be > 0"));
                    }
                }
            }
        }
        if !opaque {
            return Err(Error::invalid("scene", "needs at least one opaque surface"));
        }
        Ok(())
    }

    pub fn prepare(&self) -> Result<PreparedScene> {
        self.validate()?;
        Ok(PreparedScene {
            surfaces: self
                .surfaces
                .iter()
                .map(|s| {
                    Ok(Prepared {
                        pose: s.pose.to_pose()?,
                        shape: s.shape,
                        material: s.material,
                    })
                })
                .collect::<Result<_>>()?,
            background: self.background,
            table_height: self.table_height,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let scene: Self = serde_json::from_str(&text).map_err(|e| Error::Document {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("scene serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

impl PreparedScene {
    /// Intersections with solid and transparent surfaces, nearest first.
    /// Specular blobs are skipped.
    pub fn trace(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Vec<Hit> {
        let mut hits = Vec::new();
        let mut local = Vec::new();
        for (i, s) in self.surfaces.iter().enumerate() {
            if !s.material.is_solid() {
                continue;
            }
            local.clear();
            let o = s.pose.inverse_transform_point(origin);
            let d = s.pose.inverse_transform_vector(dir);
            local_hits(&s.shape, &o, &d, &mut local);
            for &(t, n, uv, p) in &local {
                if t > T_MIN {
                    hits.push(Hit {
                        t,
                        surface: i,
                        normal: s.pose.rotation * n,
                        point: s.pose * p,
                        uv,
                    });
                }
            }
        }
        hits.sort_by(|a, b| a.t.total_cmp(&b.t));
        hits
    }

    fn highlight(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> [f64; 3] {
        let mut total = [0.0; 3];
        let mut local = Vec::new();
        for s in &self.surfaces {
            let Material::SpecularBlob {
                center,
                radius,
                intensity,
                color,
                texture,
                light_direction,
                shininess,
            } = s.material
            else {
                continue;
            };
            local.clear();
            let o = s.pose.inverse_transform_point(origin);
            let d = s.pose.inverse_transform_vector(dir);
            local_hits(&s.shape, &o, &d, &mut local);
            let Some(&(_, _, uv, p)) = local
                .iter()
                .filter(|h| h.0 > T_MIN)
                .min_by(|a, b| a.0.total_cmp(&b.0))
            else {
                continue;
            };
            let p = s.pose * p;
            let r2 = (p - Point3::from(center)).norm_squared();
            let to_cam = (origin - p).normalize();
            let align = to_cam
                .dot(&Vector3::from(light_direction).normalize())
                .max(0.0);
            let g = intensity * (-r2 / (2.0 * radius * radius)).exp() * align.powf(shininess);
            let tex = texture.map_or([1.0; 3], |t| t.color(uv));
            for k in 0..3 {
                total[k] += g * color[k] * tex[k];
            }
        }
        total
    }

    /// Front-to-back alpha compositing along one ray plus additive
    /// highlights, clamped to `[0, 1]`.
    pub fn shade(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> [f64; 3] {
        let mut color = [0.0; 3];
        let mut transmit = 1.0;
        let mut opaque = false;
        for h in self.trace(origin, dir) {
            match self.surfaces[h.surface].material {
                Material::Lambertian { texture } => {
                    let c = texture.color(h.uv);
                    for k in 0..3 {
                        color[k] += transmit * c[k];
                    }
                    opaque = true;
                    break;
                }
                Material::Transparent {
                    alpha,
                    tint,
                    texture,
                } => {
                    let c = match texture {
                        Some(t) => {
                            let tc = t.color(h.uv);
                            [0, 1, 2].map(|k| tint[k] * tc[k])
                        }
                        None => tint,
                    };
                    for k in 0..3 {
                        color[k] += transmit * alpha * c[k];
                    }
                    transmit *= 1.0 - alpha;
                }
                Material::SpecularBlob { .. } => unreachable!("trace skips blobs"),
            }
        }
        if !opaque {
            for k in 0..3 {
                color[k] += transmit * self.background[k];
            }
        }
        let hl = self.highlight(origin, dir);
        [0, 1, 2].map(|k| (color[k] + hl[k]).clamp(0.0, 1.0))
    }

    /// True when `p` is inside a solid surface or below the table.
    pub fn occupied(&self, p: &Point3<f64>) -> bool {
        if p.z < self.table_height {
            return true;
        }
        self.surfaces.iter().any(|s| {
            s.material.is_solid() && local_inside(&s.shape, &s.pose.inverse_transform_point(p))
        })
    }
}

/// Camera-frame ray of center-view pixel `(i, j)` seen through the
/// aperture at `offset`: the pinhole shifts to `-offset * baseline / f`,
/// the direction has unit z so the ray parameter is depth.
pub fn aperture_ray(
    pose: &CameraPose,
    intr: &CameraIntrinsics,
    offset: [f64; 2],
    pixel: [f64; 2],
) -> (Point3<f64>, Vector3<f64>) {
    let f = intr.focal_length_px;
    let s = intr.aperture_baseline / f;
    let o = Point3::new(-offset[0] * s, -offset[1] * s, 0.0);
    let d = Vector3::new(
        (pixel[0] - intr.principal_point[0]) / f,
        (pixel[1] - intr.principal_point[1]) / f,
        1.0,
    );
    (pose * o, pose.rotation * d)
}

fn quantize(c: f64) -> u8 {
    (c * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn render_observation(
    scene: &PreparedScene,
    id: impl Into<String>,
    pose: &CameraPose,
    intr: &CameraIntrinsics,
    grid_extent: [usize; 2],
) -> Result<Observation> {
    intr.validate()?;
    if grid_extent.iter().any(|e| e % 2 == 0) {
        return Err(Error::invalid(
            "aperture grid",
            "even aperture grid has no center view",
        ));
    }
    let [rows, cols] = grid_extent;
    let (cr, cc) = (rows / 2, cols / 2);
    let (w, h) = (intr.image_size[0], intr.image_size[1]);
    let images: Vec<RgbImage> = (0..rows * cols)
        .into_par_iter()
        .map(|a| {
            let offset = [(a % cols) as f64 - cc as f64, (a / cols) as f64 - cr as f64];
            let mut buf = vec![0u8; (w * h * 3) as usize];
            buf.par_chunks_mut((w * 3) as usize)
                .enumerate()
                .for_each(|(j, row)| {
                    for i in 0..w as usize {
                        let (o, d) = aperture_ray(pose, intr, offset, [i as f64, j as f64]);
                        let c = scene.shade(&o, &d);
                        row[3 * i..3 * i + 3].copy_from_slice(&c.map(quantize));
                    }
                });
            RgbImage::from_raw(w, h, buf).expect("buffer sized to image")
        })
        .collect();
    Ok(Observation {
        id: id.into(),
        pose: *pose,
        grid: SubApertureGrid::new(images, grid_extent)?,
    })
}

/// Camera placement for one rendered view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewPlacement {
    pub id: String,
    pub eye: [f64; 3],
    pub target: [f64; 3],
    #[serde(default = "default_up")]
    pub up: [f64; 3],
}

fn default_up() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub intrinsics: CameraIntrinsics,
    pub grid_extent: [usize; 2],
    pub views: Vec<ViewPlacement>,
}

pub fn render_rig(scene: &SceneDescription, rig: &CameraRig) -> Result<ObservationSet> {
    let prepared = scene.prepare()?;
    let obs = rig
        .views
        .iter()
        .map(|v| {
            render_observation(
                &prepared,
                v.id.clone(),
                &look_at(v.eye, v.target, v.up),
                &rig.intrinsics,
                rig.grid_extent,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    ObservationSet::new(obs, rig.intrinsics)
}

/// Straight-line evaluation of the summed per-view normalized likelihood
/// at single points.
pub struct BruteForceOracle<'a> {
    obs_set: &'a ObservationSet,
    hyps: &'a DepthHypothesisSet,
    patch: PatchSpec,
    sampling: DepthSampling,
    views: Vec<(FeatureImage, Vec<([f64; 2], FeatureImage)>)>,
}

impl<'a> BruteForceOracle<'a> {
    pub fn new(
        obs_set: &'a ObservationSet,
        hyps: &'a DepthHypothesisSet,
        patch: &PatchSpec,
    ) -> Self {
        let views = obs_set
            .observations()
            .iter()
            .map(|o| {
                let g = &o.grid;
                let [rows, cols] = g.extent();
                let [cr, cc] = g.center_index();
                let mut sides = Vec::new();
                for r in 0..rows {
                    for c in 0..cols {
                        if (r, c) != (cr, cc) {
                            let off = [c as f64 - cc as f64, r as f64 - cr as f64];
                            sides.push((off, FeatureImage::from_rgb(g.image(r, c))));
                        }
                    }
                }
                (FeatureImage::from_rgb(g.center_view()), sides)
            })
            .collect();
        Self {
            obs_set,
            hyps,
            patch: *patch,
            sampling: DepthSampling::default(),
            views,
        }
    }

    pub fn with_sampling(mut self, sampling: DepthSampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn likelihood(&self, p: &Point3<f64>) -> f64 {
        let intr = self.obs_set.intrinsics();
        let depths = self.hyps.depths();
        let mut total = 0.0;
        for (obs, (center, sides)) in self.obs_set.observations().iter().zip(&self.views) {
            let Ok(s) = project_with_pose(p, &obs.pose, intr) else {
                continue;
            };
            let px = [s.pixel[0].round(), s.pixel[1].round()];
            let mut nearest = 0;
            for k in 1..depths.len() {
                if (depths[k] - s.depth).abs() < (depths[nearest] - s.depth).abs() {
                    nearest = k;
                }
            }
            let cost_at = |d: f64| {
                let sample = crate::lf_geometry::RaySample {
                    pixel: px,
                    depth: d,
                    view_index: 0,
                };
                let mut sum = 0.0;
                let mut valid = 0;
                for (off, img) in sides {
                    let q = correspondence(&sample, *off, intr);
                    if let Some(c) = ray_cost(center, img, px, q, &self.patch) {
                        sum += c;
                        valid += 1;
                    }
                }
                (valid > 0).then(|| sum * (sides.len() as f64 / valid as f64))
            };
            let costs: Vec<Option<f64>> = depths.iter().map(|&d| cost_at(d)).collect();
            let sel = match self.sampling {
                DepthSampling::NearestHypothesis => costs[nearest],
                DepthSampling::Exact => cost_at(s.depth),
            };
            let Some(sel) = sel else {
                continue;
            };
            let valid: Vec<f64> = costs.iter().flatten().copied().collect();
            let max = valid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = valid.iter().sum();
            if sum > 0.0 {
                total += ((max - sel) / sum).max(0.0);
            }
        }
        total
    }
}

pub fn brute_force_likelihood(
    p: &Point3<f64>,
    obs_set: &ObservationSet,
    hyps: &DepthHypothesisSet,
    patch: &PatchSpec,
) -> f64 {
    BruteForceOracle::new(obs_set, hyps, patch).likelihood(p)
}

/// Brute-force values on every node of `spec`, x fastest.
pub fn brute_force_volume(
    spec: &VolumeSpec,
    obs_set: &ObservationSet,
    hyps: &DepthHypothesisSet,
    patch: &PatchSpec,
    sampling: DepthSampling,
) -> Vec<f64> {
    let oracle = BruteForceOracle::new(obs_set, hyps, patch).with_sampling(sampling);
    let [nx, ny, nz] = spec.resolution;
    let mut out = Vec::with_capacity(spec.len());
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                out.push(oracle.likelihood(&spec.point(x, y, z)));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraspOutcome {
    ForceClosureOk,
    NoContact,
    NonAntipodal,
    Collision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleGraspReport {
    pub graspable: bool,
    pub reason: GraspOutcome,
}

impl OracleGraspReport {
    fn with(reason: GraspOutcome) -> Self {
        Self {
            graspable: reason == GraspOutcome::ForceClosureOk,
            reason,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Collision-free approach plus antipodal contacts inside the friction
    /// cone.
    #[default]
    ForceClosure,
    /// Collision-free approach with both pads touching the same surface.
    CollisionOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub friction_cone_deg: f64,
    /// Distance the gripper travels along its approach axis before
    /// reaching the pose.
    pub approach_distance: f64,
    /// Spacing of the collision sample lattice.
    pub collision_step: f64,
    pub mode: LabelMode,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            friction_cone_deg: 10.0,
            approach_distance: 0.10,
            collision_step: 0.0025,
            mode: LabelMode::ForceClosure,
        }
    }
}

fn box_collides(scene: &PreparedScene, pose: &GraspPose, b: &LocalBox, step: f64) -> bool {
    let n: [usize; 3] = [0, 1, 2].map(|a| (((b.max[a] - b.min[a]) / step).ceil() as usize).max(1));
    for k in 0..=n[2] {
        for j in 0..=n[1] {
            for i in 0..=n[0] {
                let idx = [i, j, k];
                let local = Point3::from(
                    [0, 1, 2]
                        .map(|a| b.min[a] + (b.max[a] - b.min[a]) * idx[a] as f64 / n[a] as f64),
                );
                if scene.occupied(&(pose * local)) {
                    return true;
                }
            }
        }
    }
    false
}

/// Collision of the approach sweep, then antipodal pad contact.
pub fn oracle_grasp_label(
    candidate: &GraspCandidate,
    gripper: &GripperParams,
    scene: &PreparedScene,
    cfg: &OracleConfig,
) -> OracleGraspReport {
    let pose = &candidate.pose;
    let sweep = |mut b: LocalBox| {
        b.min[0] -= cfg.approach_distance;
        b
    };
    let [f1, f2] = gripper.fingers();
    for b in [gripper.palm(), f1, f2] {
        if box_collides(scene, pose, &sweep(b), cfg.collision_step) {
            return OracleGraspReport::with(GraspOutcome::Collision);
        }
    }

    let half = gripper.opening() / 2.0;
    let closing = pose.rotation * Vector3::z();
    let contact = |from: f64, dir: Vector3<f64>| {
        let o = pose * Point3::new(0.0, 0.0, from);
        scene
            .trace(&o, &dir)
            .into_iter()
            .find(|h| h.t <= gripper.opening())
    };
    let (Some(top), Some(bottom)) = (contact(half, -closing), contact(-half, closing)) else {
        return OracleGraspReport::with(GraspOutcome::NoContact);
    };
    if top.surface != bottom.surface || top.t + bottom.t > gripper.opening() + 1e-9 {
        return OracleGraspReport::with(GraspOutcome::NonAntipodal);
    }
    if cfg.mode == LabelMode::CollisionOnly {
        return OracleGraspReport::with(GraspOutcome::ForceClosureOk);
    }
    let cone = cfg.friction_cone_deg.to_radians().cos();
    if top.normal.dot(&closing) >= cone && bottom.normal.dot(&-closing) >= cone {
        OracleGraspReport::with(GraspOutcome::ForceClosureOk)
    } else {
        OracleGraspReport::with(GraspOutcome::NonAntipodal)
    }
}

/// Vertical cylinders of the scene as (base center, radius, height).
pub fn upright_cylinders(scene: &SceneDescription) -> Vec<(Point3<f64>, f64, f64)> {
    scene
        .surfaces
        .iter()
        .filter_map(|s| match s.shape {
            Shape::Cylinder { radius, height, .. } if s.material.is_solid() => {
                let pose = s.pose.to_pose().ok()?;
                let axis = pose.rotation * Vector3::z();
                (axis.z > 0.999).then(|| (Point3::from(pose.translation.vector), radius, height))
            }
            _ => None,
        })
        .collect()
}

/// Horizontal side grasp of an upright cylinder: approach toward the axis
/// along azimuth `phi`, closing horizontally across it.
pub fn side_grasp(base: &Point3<f64>, height_above_base: f64, phi: f64) -> GraspPose {
    let approach = [phi.cos(), phi.sin(), 0.0];
    let closing = [-phi.sin(), phi.cos(), 0.0];
    grasp_frame(
        [base.x, base.y, base.z + height_above_base],
        approach,
        closing,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingDraw {
    /// Perturbed side grasps drawn per upright cylinder.
    pub object_centric_per_object: usize,
    /// Poses with uniform orientation whose position lies within
    /// `near_margin` of an upright cylinder's bounding box.
    pub near_object_per_object: usize,
    pub near_margin: f64,
    pub uniform: usize,
    pub position_sigma: f64,
    pub angle_sigma: f64,
}

impl Default for TrainingDraw {
    fn default() -> Self {
        Self {
            object_centric_per_object: 300,
            near_object_per_object: 150,
            near_margin: 0.03,
            uniform: 200,
            position_sigma: 0.004,
            angle_sigma: 0.06,
        }
    }
}

/// Candidates for classifier training: perturbed side grasps around every
/// upright cylinder, arbitrary poses next to each cylinder and uniform
/// poses in the workspace, each labeled by the oracle.
pub fn training_candidates(
    scene: &SceneDescription,
    workspace: &VolumeSpec,
    gripper: &GripperParams,
    oracle: &OracleConfig,
    draw: &TrainingDraw,
    seed: u64,
) -> Result<Vec<GraspCandidate>> {
    let prepared = scene.prepare()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = Normal::new(0.0, draw.position_sigma.max(0.0))
        .map_err(|e| Error::invalid("training draw", e.to_string()))?;
    let ang = Normal::new(0.0, draw.angle_sigma.max(0.0))
        .map_err(|e| Error::invalid("training draw", e.to_string()))?;
    let mut poses = Vec::new();
    for (base, _, height) in upright_cylinders(scene) {
        for _ in 0..draw.object_centric_per_object {
            let z = height * rng.random_range(0.25..0.75);
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let mut g = side_grasp(&base, z, phi);
            g.translation.vector += Vector3::new(
                pos.sample(&mut rng),
                pos.sample(&mut rng),
                pos.sample(&mut rng),
            );
            let tilt = nalgebra::UnitQuaternion::from_euler_angles(
                ang.sample(&mut rng),
                ang.sample(&mut rng),
                ang.sample(&mut rng),
            );
            g.rotation *= tilt;
            poses.push(g);
        }
    }
    for (base, radius, height) in upright_cylinders(scene) {
        let m = draw.near_margin.max(0.0) + radius;
        for _ in 0..draw.near_object_per_object {
            let offset = Vector3::new(
                rng.random_range(-m..=m),
                rng.random_range(-m..=m),
                rng.random_range(0.0..=height + draw.near_margin.max(0.0)),
            );
            poses.push(GraspPose::from_parts(
                (base.coords + offset).into(),
                uniform_rotation(&mut rng),
            ));
        }
    }
    for _ in 0..draw.uniform {
        let p = uniform_position(&mut rng, workspace);
        poses.push(GraspPose::from_parts(
            p.coords.into(),
            uniform_rotation(&mut rng),
        ));
    }
    Ok(poses
        .into_par_iter()
        .map(|pose| {
            let mut c = GraspCandidate::new(pose);
            c.label = Some(oracle_grasp_label(&c, gripper, &prepared, oracle).graspable);
            c
        })
        .collect())
}

/// Scene builders used by the demo pipeline and the tests.
pub mod scenes {
    use super::*;
    use crate::pose::PoseRecord;

    pub fn at(position: [f64; 3]) -> PoseRecord {
        PoseRecord {
            position,
            quaternion: [1.0, 0.0, 0.0, 0.0],
        }
    }

    pub fn pose_record(p: &GraspPose) -> PoseRecord {
        PoseRecord::from(p)
    }

    pub fn texture(seed: u64, frequency: f64) -> Texture {
        Texture {
            seed,
            frequency,
            base: [0.5, 0.45, 0.4],
            contrast: 0.8,
        }
    }

    pub fn table(seed: u64, half: f64) -> Surface {
        Surface {
            name: "table".into(),
            shape: Shape::Plane {
                half_size: [half, half],
                thickness: 0.05,
            },
            pose: at([0.0, 0.0, 0.0]),
            material: Material::Lambertian {
                texture: texture(seed, 60.0),
            },
        }
    }

    pub fn glass_cylinder(
        name: &str,
        base: [f64; 3],
        radius: f64,
        height: f64,
        seed: u64,
    ) -> Surface {
        Surface {
            name: name.into(),
            shape: Shape::Cylinder {
                radius,
                height,
                open_top: true,
            },
            pose: at(base),
            material: Material::Transparent {
                alpha: 0.3,
                tint: [0.9, 0.95, 1.0],
                texture: Some(Texture {
                    seed,
                    frequency: 80.0,
                    base: [0.75, 0.75, 0.75],
                    contrast: 0.5,
                }),
            },
        }
    }

    /// Textured table with two transparent cups.
    pub fn two_cylinders(seed: u64) -> SceneDescription {
        SceneDescription {
            surfaces: vec![
                table(seed, 0.4),
                glass_cylinder("cup_a", [-0.06, 0.0, 0.0], 0.022, 0.12, seed + 1),
                glass_cylinder("cup_b", [0.07, 0.03, 0.0], 0.02, 0.10, seed + 2),
            ],
            table_height: 0.0,
            background: [0.2, 0.2, 0.2],
        }
    }

    /// Two cameras looking down at `target` from opposite sides.
    pub fn stereo_rig(
        intrinsics: CameraIntrinsics,
        grid_extent: [usize; 2],
        target: [f64; 3],
        distance: f64,
        elevation_deg: f64,
    ) -> CameraRig {
        ring_rig(intrinsics, grid_extent, target, distance, elevation_deg, 2)
    }

    /// `count` cameras evenly spaced in azimuth, all at `distance` from
    /// `target` and looking down at it.
    pub fn ring_rig(
        intrinsics: CameraIntrinsics,
        grid_extent: [usize; 2],
        target: [f64; 3],
        distance: f64,
        elevation_deg: f64,
        count: usize,
    ) -> CameraRig {
        let el = elevation_deg.to_radians();
        let views = (0..count)
            .map(|i| {
                let az = std::f64::consts::TAU * i as f64 / count as f64 + 0.3;
                ViewPlacement {
                    id: format!("view{i}"),
                    eye: [
                        target[0] + distance * el.cos() * az.cos(),
                        target[1] + distance * el.cos() * az.sin(),
                        target[2] + distance * el.sin(),
                    ],
                    target,
                    up: [0.0, 0.0, 1.0],
                }
            })
            .collect();
        CameraRig {
            intrinsics,
            grid_extent,
            views,
        }
    }
}
