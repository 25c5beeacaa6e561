//! Ray and pixel geometry for sub-aperture grids: projection into the
//! center view, depth hypotheses, the linear-disparity correspondence
//! between apertures and the photometric ray cost.

use image::RgbImage;
use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plenoptic_io::{CameraIntrinsics, Observation};
use crate::pose::CameraPose;

/// Ordered set of candidate depths (meters) shared by every pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DepthHypothesisSet {
    depths: Vec<f64>,
}

impl TryFrom<Vec<f64>> for DepthHypothesisSet {
    type Error = Error;
    fn try_from(depths: Vec<f64>) -> Result<Self> {
        Self::new(depths)
    }
}

impl From<DepthHypothesisSet> for Vec<f64> {
    fn from(h: DepthHypothesisSet) -> Self {
        h.depths
    }
}

impl DepthHypothesisSet {
    pub fn new(depths: Vec<f64>) -> Result<Self> {
        if depths.len() < 2 {
            return Err(Error::invalid(
                "depth hypotheses",
                format!("need at least 2 depths, got {}", depths.len()),
            ));
        }
        if depths.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::invalid(
                "depth hypotheses",
                "depths must be positive",
            ));
        }
        if depths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "depth hypotheses",
                "depths must be strictly increasing",
            ));
        }
        Ok(Self { depths })
    }

    /// `count` depths between `near` and `far`, uniformly spaced in inverse
    /// depth.
    pub fn uniform_inverse_depth(near: f64, far: f64, count: usize) -> Result<Self> {
        if !(near > 0.0 && far > near) {
            return Err(Error::invalid(
                "depth hypotheses",
                format!("need 0 < near < far, got near={near}, far={far}"),
            ));
        }
        if count < 2 {
            return Err(Error::invalid(
                "depth hypotheses",
                "count must be at least 2",
            ));
        }
        let (inv_near, inv_far) = (1.0 / near, 1.0 / far);
        let last = (count - 1) as f64;
        let mut depths: Vec<f64> = (0..count)
            .map(|i| 1.0 / (inv_near + (inv_far - inv_near) * i as f64 / last))
            .collect();
        depths[0] = near;
        depths[count - 1] = far;
        Self::new(depths)
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }

    pub fn get(&self, k: usize) -> f64 {
        self.depths[k]
    }

    /// Index of the hypothesis closest to `depth`; ties go to the nearer one.
    pub fn nearest_index(&self, depth: f64) -> usize {
        let d = &self.depths;
        let i = d.partition_point(|&x| x < depth);
        if i == 0 {
            0
        } else if i == d.len() {
            d.len() - 1
        } else if depth - d[i - 1] <= d[i] - depth {
            i - 1
        } else {
            i
        }
    }
}

/// Patch window and weights of the color / color-gradient ray difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchSpec {
    pub radius: usize,
    pub color_weight: f64,
    pub gradient_weight: f64,
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self {
            radius: 1,
            color_weight: 0.7,
            gradient_weight: 0.3,
        }
    }
}

impl PatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.color_weight < 0.0 || self.gradient_weight < 0.0 {
            return Err(Error::invalid("patch spec", "weights must be non-negative"));
        }
        if !(self.color_weight + self.gradient_weight > 0.0) {
            return Err(Error::invalid(
                "patch spec",
                "weights must not both be zero",
            ));
        }
        Ok(())
    }

    fn side(&self) -> usize {
        2 * self.radius + 1
    }
}

/// A light ray received by the center view at `pixel` from depth `depth`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySample {
    /// Sub-pixel `(i, j)` = (column, row).
    pub pixel: [f64; 2],
    /// Camera-frame z in meters.
    pub depth: f64,
    pub view_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionFailure {
    /// At or behind the camera plane.
    NotVisible,
    OutOfFrame,
}

/// Pinhole projection of a world point into the center view of a camera.
pub fn project_with_pose(
    p: &Point3<f64>,
    pose: &CameraPose,
    intr: &CameraIntrinsics,
) -> std::result::Result<RaySample, ProjectionFailure> {
    let pc = pose.inverse_transform_point(p);
    if !(pc.z > 0.0) {
        return Err(ProjectionFailure::NotVisible);
    }
    let f = intr.focal_length_px;
    let i = f * pc.x / pc.z + intr.principal_point[0];
    let j = f * pc.y / pc.z + intr.principal_point[1];
    let (w, h) = (intr.width() as f64, intr.height() as f64);
    if !(i >= 0.0 && i <= w - 1.0 && j >= 0.0 && j <= h - 1.0) {
        return Err(ProjectionFailure::OutOfFrame);
    }
    Ok(RaySample {
        pixel: [i, j],
        depth: pc.z,
        view_index: 0,
    })
}

pub fn project_point(
    p: &Point3<f64>,
    obs: &Observation,
    intr: &CameraIntrinsics,
) -> std::result::Result<RaySample, ProjectionFailure> {
    project_with_pose(p, &obs.pose, intr)
}

/// Where the ray of `sample` lands in the sub-aperture at
/// `aperture_offset`: linear disparity `offset * baseline / depth`.
#[inline]
pub fn correspondence(
    sample: &RaySample,
    aperture_offset: [f64; 2],
    intr: &CameraIntrinsics,
) -> [f64; 2] {
    let shift = intr.aperture_baseline / sample.depth;
    [
        sample.pixel[0] + aperture_offset[0] * shift,
        sample.pixel[1] + aperture_offset[1] * shift,
    ]
}

/// Rec. 709 luma weights on linear RGB.
pub const LUMA: [f64; 3] = [0.2126, 0.7152, 0.0722];

/// Float view of an 8-bit image: per pixel `[r, g, b, dL/dx, dL/dy]`, with
/// colors in `[0, 1]` and luminance gradients by central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    width: usize,
    height: usize,
    px: Vec<[f64; 5]>,
}

impl FeatureImage {
    pub fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut px = vec![[0.0; 5]; w * h];
        let mut lum = vec![0.0; w * h];
        for (x, y, p) in img.enumerate_pixels() {
            let i = y as usize * w + x as usize;
            let c = [
                p[0] as f64 / 255.0,
                p[1] as f64 / 255.0,
                p[2] as f64 / 255.0,
            ];
            px[i][..3].copy_from_slice(&c);
            lum[i] = LUMA[0] * c[0] + LUMA[1] * c[1] + LUMA[2] * c[2];
        }
        for y in 0..h {
            for x in 0..w {
                let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
                let i = y * w + x;
                px[i][3] = 0.5 * (lum[y * w + xr] - lum[y * w + xl]);
                px[i][4] = 0.5 * (lum[yd * w + x] - lum[yu * w + x]);
            }
        }
        Self {
            width: w,
            height: h,
            px,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64; 5] {
        &self.px[y * self.width + x]
    }

    fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= 0.0
            && p[1] >= 0.0
            && p[0] <= (self.width - 1) as f64
            && p[1] <= (self.height - 1) as f64
    }

    /// Bilinear patch around `p`. The fractional part of `p` is shared by
    /// every patch sample; lattice indices clamp to the image border.
    fn sample_patch(&self, p: [f64; 2], radius: usize, out: &mut Vec<[f64; 5]>) {
        out.clear();
        let (fx0, fy0) = (p[0].floor(), p[1].floor());
        let (tx, ty) = (p[0] - fx0, p[1] - fy0);
        let (bx, by) = (fx0 as isize, fy0 as isize);
        let r = radius as isize;
        let (wmax, hmax) = (self.width as isize - 1, self.height as isize - 1);
        for dy in -r..=r {
            let y0 = (by + dy).clamp(0, hmax) as usize;
            let y1 = (by + dy + 1).clamp(0, hmax) as usize;
            for dx in -r..=r {
                let x0 = (bx + dx).clamp(0, wmax) as usize;
                let x1 = (bx + dx + 1).clamp(0, wmax) as usize;
                let a = &self.px[y0 * self.width + x0];
                let b = &self.px[y0 * self.width + x1];
                let c = &self.px[y1 * self.width + x0];
                let d = &self.px[y1 * self.width + x1];
                let mut v = [0.0; 5];
                for ch in 0..5 {
                    let top = a[ch] + (b[ch] - a[ch]) * tx;
                    let bot = c[ch] + (d[ch] - c[ch]) * tx;
                    v[ch] = top + (bot - top) * ty;
                }
                out.push(v);
            }
        }
    }
}

/// Weighted L1 distance between two sampled patches.
fn patch_distance(a: &[[f64; 5]], b: &[[f64; 5]], spec: &PatchSpec) -> f64 {
    let mut color = 0.0;
    let mut grad = 0.0;
    for (p, q) in a.iter().zip(b) {
        color += (p[0] - q[0]).abs() + (p[1] - q[1]).abs() + (p[2] - q[2]).abs();
        grad += (p[3] - q[3]).abs() + (p[4] - q[4]).abs();
    }
    let n = a.len() as f64;
    spec.color_weight * color / (3.0 * n) + spec.gradient_weight * grad / (2.0 * n)
}

/// Photometric difference between the center-view patch at `center_px`
/// and the sub-aperture patch at `sub_px`. `None` marks an invalid ray
/// (either location outside its image).
pub fn ray_cost(
    center_view: &FeatureImage,
    sub_view: &FeatureImage,
    center_px: [f64; 2],
    sub_px: [f64; 2],
    spec: &PatchSpec,
) -> Option<f64> {
    if !center_view.contains(center_px) {
        return None;
    }
    let mut center = Vec::with_capacity(spec.side() * spec.side());
    center_view.sample_patch(center_px, spec.radius, &mut center);
    let mut scratch = Vec::with_capacity(center.len());
    ray_cost_against(&center, sub_view, sub_px, spec, &mut scratch)
}

fn ray_cost_against(
    center_patch: &[[f64; 5]],
    sub_view: &FeatureImage,
    sub_px: [f64; 2],
    spec: &PatchSpec,
    scratch: &mut Vec<[f64; 5]>,
) -> Option<f64> {
    if !sub_view.contains(sub_px) {
        return None;
    }
    sub_view.sample_patch(sub_px, spec.radius, scratch);
    Some(patch_distance(center_patch, scratch, spec))
}

/// Float images of one observation: the center view and every side
/// aperture with its offset.
#[derive(Debug, Clone)]
pub struct ViewFeatures {
    center: FeatureImage,
    sides: Vec<([f64; 2], FeatureImage)>,
}

impl ViewFeatures {
    pub fn from_observation(obs: &Observation) -> Self {
        let center = FeatureImage::from_rgb(obs.grid.center_view());
        let sides = obs
            .grid
            .side_apertures()
            .map(|(o, img)| ([o[0] as f64, o[1] as f64], FeatureImage::from_rgb(img)))
            .collect();
        Self { center, sides }
    }

    pub fn center(&self) -> &FeatureImage {
        &self.center
    }

    pub fn sides(&self) -> &[([f64; 2], FeatureImage)] {
        &self.sides
    }

    /// Number of side apertures, `N(A) - 1`.
    pub fn side_count(&self) -> usize {
        self.sides.len()
    }
}

/// Scratch buffers for repeated profile evaluation.
#[derive(Debug, Default)]
pub struct CostScratch {
    center: Vec<[f64; 5]>,
    sub: Vec<[f64; 5]>,
}

/// Aggregated side-aperture cost at every hypothesis for the ray received
/// at `pixel`. Invalid rays are dropped and the sum rescaled by
/// `total / valid`; a depth with no valid ray yields `None`.
pub fn depth_cost_profile(
    view: &ViewFeatures,
    intr: &CameraIntrinsics,
    pixel: [f64; 2],
    hyps: &DepthHypothesisSet,
    spec: &PatchSpec,
    scratch: &mut CostScratch,
) -> Result<Vec<Option<f64>>> {
    let mut out = vec![None; hyps.len()];
    depth_cost_profile_into(view, intr, pixel, hyps, spec, scratch, &mut out)?;
    Ok(out)
}

pub(crate) fn depth_cost_profile_into(
    view: &ViewFeatures,
    intr: &CameraIntrinsics,
    pixel: [f64; 2],
    hyps: &DepthHypothesisSet,
    spec: &PatchSpec,
    scratch: &mut CostScratch,
    out: &mut [Option<f64>],
) -> Result<()> {
    if view.sides.is_empty() {
        return Err(Error::EmptyApertureSet);
    }
    if !view.center.contains(pixel) {
        out.iter_mut().for_each(|o| *o = None);
        return Ok(());
    }
    view.center
        .sample_patch(pixel, spec.radius, &mut scratch.center);
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = aggregate_at(view, intr, pixel, hyps.get(k), spec, scratch);
    }
    Ok(())
}

/// Aggregated side-aperture cost of the ray received at `pixel`, at a
/// single depth, with the same invalid-ray rescaling as
/// [`depth_cost_profile`].
pub fn aggregated_cost(
    view: &ViewFeatures,
    intr: &CameraIntrinsics,
    pixel: [f64; 2],
    depth: f64,
    spec: &PatchSpec,
    scratch: &mut CostScratch,
) -> Result<Option<f64>> {
    if view.sides.is_empty() {
        return Err(Error::EmptyApertureSet);
    }
    if !view.center.contains(pixel) {
        return Ok(None);
    }
    view.center
        .sample_patch(pixel, spec.radius, &mut scratch.center);
    Ok(aggregate_at(view, intr, pixel, depth, spec, scratch))
}

/// Expects `scratch.center` to hold the center patch at `pixel`.
fn aggregate_at(
    view: &ViewFeatures,
    intr: &CameraIntrinsics,
    pixel: [f64; 2],
    depth: f64,
    spec: &PatchSpec,
    scratch: &mut CostScratch,
) -> Option<f64> {
    let sample = RaySample {
        pixel,
        depth,
        view_index: 0,
    };
    let total = view.sides.len();
    let mut sum = 0.0;
    let mut valid = 0usize;
    for (offset, img) in &view.sides {
        let sub_px = correspondence(&sample, *offset, intr);
        if let Some(c) = ray_cost_against(&scratch.center, img, sub_px, spec, &mut scratch.sub) {
            sum += c;
            valid += 1;
        }
    }
    (valid > 0).then(|| sum * (total as f64 / valid as f64))
}

/// Individual side-aperture costs `T_{a,d}` of one ray at one depth.
pub fn aperture_costs(
    view: &ViewFeatures,
    intr: &CameraIntrinsics,
    pixel: [f64; 2],
    depth: f64,
    spec: &PatchSpec,
) -> Vec<Option<f64>> {
    let sample = RaySample {
        pixel,
        depth,
        view_index: 0,
    };
    view.sides
        .iter()
        .map(|(offset, img)| {
            ray_cost(
                &view.center,
                img,
                pixel,
                correspondence(&sample, *offset, intr),
                spec,
            )
        })
        .collect()
}

/// Cost profile over all depth hypotheses for the ray through `p`, fixed
/// at the pixel where `p` projects in the center view.
pub fn cost_over_depths(
    p: &Point3<f64>,
    obs: &Observation,
    intr: &CameraIntrinsics,
    hyps: &DepthHypothesisSet,
    spec: &PatchSpec,
) -> Result<Vec<Option<f64>>> {
    let sample = project_point(p, obs, intr).map_err(|f| Error::Observation {
        id: obs.id.clone(),
        reason: format!("point does not project into the view ({f:?})"),
    })?;
    let view = ViewFeatures::from_observation(obs);
    depth_cost_profile(
        &view,
        intr,
        sample.pixel,
        hyps,
        spec,
        &mut CostScratch::default(),
    )
}
