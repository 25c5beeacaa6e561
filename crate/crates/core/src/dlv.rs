//! Depth Likelihood Volume: construction from multi-view sub-aperture
//! observations, reflection suppression, trilinear queries and the binary
//! `.dlv` file format.
//!
//! For a workspace point `p` and each view `i` in which `p` is visible, the
//! ray received at the (rounded) center-view pixel of `p` is scored at every
//! depth hypothesis `k` by the aggregated side-aperture cost `S_k`. The
//! view's term is `(max_k S_k - S(d)) / sum_k S_k`, where `d` is the
//! camera-frame depth of `p` (or the hypothesis nearest to it, see
//! [`DepthSampling`]). The volume stores the sum of these terms over views.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::GrayImage;
use log::debug;
use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lf_geometry::{
    aggregated_cost, aperture_costs, depth_cost_profile_into, project_with_pose, CostScratch,
    DepthHypothesisSet, PatchSpec, ViewFeatures,
};
use crate::plenoptic_io::{CameraIntrinsics, ObservationSet};

/// Axis-aligned workspace box sampled on a node lattice: node `(ix, iy, iz)`
/// sits at `origin + (ix, iy, iz) * extent / (resolution - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeSpec {
    pub origin: [f64; 3],
    pub extent: [f64; 3],
    pub resolution: [usize; 3],
}

impl VolumeSpec {
    pub fn new(origin: [f64; 3], extent: [f64; 3], resolution: [usize; 3]) -> Result<Self> {
        let s = Self {
            origin,
            extent,
            resolution,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.origin.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("volume spec", "origin must be finite"));
        }
        if self.extent.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::invalid("volume spec", "extent must be positive"));
        }
        if self.resolution.iter().any(|&r| r < 2) {
            return Err(Error::invalid(
                "volume spec",
                "resolution must be at least 2 per axis",
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn step(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.extent[a] / (self.resolution[a] - 1) as f64)
    }

    pub fn max(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.origin[a] + self.extent[a])
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::from([0, 1, 2].map(|a| self.origin[a] + 0.5 * self.extent[a]))
    }

    /// Linear index, x fastest.
    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.resolution[0] * (iy + self.resolution[1] * iz)
    }

    #[inline]
    pub fn unravel(&self, i: usize) -> [usize; 3] {
        let [nx, ny, _] = self.resolution;
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    #[inline]
    pub fn point(&self, ix: usize, iy: usize, iz: usize) -> Point3<f64> {
        let s = self.step();
        Point3::new(
            self.origin[0] + ix as f64 * s[0],
            self.origin[1] + iy as f64 * s[1],
            self.origin[2] + iz as f64 * s[2],
        )
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.origin[a] && p[a] <= self.origin[a] + self.extent[a])
    }

    pub fn corners(&self) -> [Point3<f64>; 8] {
        let m = self.max();
        std::array::from_fn(|i| {
            Point3::new(
                if i & 1 == 0 { self.origin[0] } else { m[0] },
                if i & 2 == 0 { self.origin[1] } else { m[1] },
                if i & 4 == 0 { self.origin[2] } else { m[2] },
            )
        })
    }
}

/// Hypotheses uniform in inverse depth over the range of camera-frame
/// depths the workspace corners take across all views.
pub fn hypotheses_spanning(
    spec: &VolumeSpec,
    obs_set: &ObservationSet,
    count: usize,
) -> Result<DepthHypothesisSet> {
    let mut near = f64::INFINITY;
    let mut far = f64::NEG_INFINITY;
    for obs in obs_set.observations() {
        for c in spec.corners() {
            let z = obs.pose.inverse_transform_point(&c).z;
            near = near.min(z);
            far = far.max(z);
        }
    }
    if !(far > 0.0) {
        return Err(Error::OutsideVisualHull(
            "workspace lies behind every camera".into(),
        ));
    }
    let near = near.max(far * 1e-3);
    DepthHypothesisSet::uniform_inverse_depth(near, far, count)
}

/// Depth at which a voxel's own ray cost is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DepthSampling {
    /// The voxel's camera-frame depth; the term is clamped at 0 when the
    /// cost there exceeds the profile maximum.
    #[default]
    Exact,
    /// The hypothesis nearest to the voxel's depth.
    NearestHypothesis,
}

impl DepthSampling {
    fn code(self) -> u32 {
        match self {
            DepthSampling::Exact => 0,
            DepthSampling::NearestHypothesis => 1,
        }
    }

    fn from_code(c: u32) -> Option<Self> {
        match c {
            0 => Some(DepthSampling::Exact),
            1 => Some(DepthSampling::NearestHypothesis),
            _ => None,
        }
    }
}

/// Likelihood from a cost profile, with a flag for profiles carrying no
/// usable evidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedLikelihood {
    pub value: f64,
    pub no_evidence: bool,
}

/// `(max_k c_k - c_selected) / sum_k c_k` over the valid entries.
pub fn normalize_costs(costs: &[Option<f64>], selected: usize) -> NormalizedLikelihood {
    let none = NormalizedLikelihood {
        value: 0.0,
        no_evidence: true,
    };
    let Some(Some(s)) = costs.get(selected).copied() else {
        return none;
    };
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for c in costs.iter().flatten() {
        max = max.max(*c);
        sum += c;
    }
    if !(sum > 0.0) {
        return NormalizedLikelihood {
            value: 0.0,
            no_evidence: false,
        };
    }
    NormalizedLikelihood {
        value: (max - s) / sum,
        no_evidence: false,
    }
}

/// Per-view table of cost profiles and normalized likelihoods, filled for
/// the pixels some voxel projects to.
struct ViewTable {
    hyp_count: usize,
    present: Vec<bool>,
    costs: Vec<Option<f64>>,
    likelihood: Vec<f64>,
    /// Profile maximum and sum over valid entries.
    stats: Vec<Option<(f64, f64)>>,
}

impl ViewTable {
    fn compute(
        view: &ViewFeatures,
        intr: &CameraIntrinsics,
        hyps: &DepthHypothesisSet,
        patch: &PatchSpec,
        needed: &[bool],
    ) -> Result<Self> {
        let k = hyps.len();
        let width = intr.width();
        let pixels: Vec<usize> = (0..needed.len()).filter(|&i| needed[i]).collect();
        let rows: Vec<(usize, Vec<Option<f64>>)> = pixels
            .par_iter()
            .map_init(CostScratch::default, |scratch, &pix| {
                let mut row = vec![None; k];
                let px = [(pix % width) as f64, (pix / width) as f64];
                depth_cost_profile_into(view, intr, px, hyps, patch, scratch, &mut row)
                    .map(|_| (pix, row))
            })
            .collect::<Result<_>>()?;
        let mut costs = vec![None; needed.len() * k];
        let mut likelihood = vec![0.0; needed.len() * k];
        let mut stats = vec![None; needed.len()];
        for (pix, row) in rows {
            for sel in 0..k {
                likelihood[pix * k + sel] = normalize_costs(&row, sel).value;
            }
            let mut max = f64::NEG_INFINITY;
            let mut sum = 0.0;
            for c in row.iter().flatten() {
                max = max.max(*c);
                sum += c;
            }
            if max.is_finite() {
                stats[pix] = Some((max, sum));
            }
            costs[pix * k..(pix + 1) * k].copy_from_slice(&row);
        }
        Ok(Self {
            hyp_count: k,
            present: needed.to_vec(),
            costs,
            likelihood,
            stats,
        })
    }

    /// Normalized term of the voxel ray `r` under `sampling`.
    fn term(
        &self,
        view: &ViewFeatures,
        intr: &CameraIntrinsics,
        r: &VoxelRay,
        patch: &PatchSpec,
        sampling: DepthSampling,
        scratch: &mut CostScratch,
    ) -> f64 {
        match sampling {
            DepthSampling::NearestHypothesis => self.likelihood(r.pixel, r.hyp),
            DepthSampling::Exact => {
                let Some((max, sum)) = self.stats[r.pixel] else {
                    return 0.0;
                };
                if !(sum > 0.0) {
                    return 0.0;
                }
                let px = pixel_coords(r.pixel, intr);
                match aggregated_cost(view, intr, px, r.depth, patch, scratch) {
                    Ok(Some(s)) => ((max - s) / sum).max(0.0),
                    _ => 0.0,
                }
            }
        }
    }

    fn likelihood(&self, pix: usize, k: usize) -> f64 {
        self.likelihood[pix * self.hyp_count + k]
    }

    fn profile(&self, pix: usize) -> &[Option<f64>] {
        debug_assert!(self.present[pix]);
        &self.costs[pix * self.hyp_count..(pix + 1) * self.hyp_count]
    }
}

/// Where a workspace point lands in one view: rounded center-view pixel
/// (linear index), camera-frame depth and nearest depth hypothesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct VoxelRay {
    pub pixel: usize,
    pub depth: f64,
    pub hyp: usize,
}

fn pixel_coords(pixel: usize, intr: &CameraIntrinsics) -> [f64; 2] {
    [(pixel % intr.width()) as f64, (pixel / intr.width()) as f64]
}

pub(crate) fn voxel_ray(
    p: &Point3<f64>,
    pose: &crate::pose::CameraPose,
    intr: &CameraIntrinsics,
    hyps: &DepthHypothesisSet,
) -> Option<VoxelRay> {
    let s = project_with_pose(p, pose, intr).ok()?;
    let (i, j) = (s.pixel[0].round() as usize, s.pixel[1].round() as usize);
    Some(VoxelRay {
        pixel: j * intr.width() + i,
        depth: s.depth,
        hyp: hyps.nearest_index(s.depth),
    })
}

/// Dense likelihood grid over a [`VolumeSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct DepthLikelihoodVolume {
    spec: VolumeSpec,
    values: Vec<f64>,
    view_count: usize,
    sampling: DepthSampling,
}

impl DepthLikelihoodVolume {
    pub fn from_values(spec: VolumeSpec, values: Vec<f64>, view_count: usize) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.len() {
            return Err(Error::DimensionMismatch {
                expected: vec![spec.len()],
                found: vec![values.len()],
            });
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(
                "likelihood volume",
                format!("values must be finite and non-negative, found {v}"),
            ));
        }
        Ok(Self {
            spec,
            values,
            view_count,
            sampling: DepthSampling::default(),
        })
    }

    pub fn with_sampling(mut self, sampling: DepthSampling) -> Self {
        self.sampling = sampling;
        self
    }

    /// How the per-view terms were evaluated.
    pub fn sampling(&self) -> DepthSampling {
        self.sampling
    }

    pub fn spec(&self) -> &VolumeSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn view_count(&self) -> usize {
        self.view_count
    }

    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.values[self.spec.index(ix, iy, iz)]
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Divides every value by the number of views, mapping into `[0, 1]`.
    pub fn normalized_by_views(&self) -> Self {
        let n = self.view_count.max(1) as f64;
        Self {
            spec: self.spec,
            values: self.values.iter().map(|v| v / n).collect(),
            view_count: self.view_count,
            sampling: self.sampling,
        }
    }

    /// Trilinear interpolation over the eight surrounding nodes; `None`
    /// outside the volume.
    pub fn query(&self, p: &Point3<f64>) -> Option<f64> {
        if !self.spec.contains(p) {
            return None;
        }
        let step = self.spec.step();
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let t = (p[a] - self.spec.origin[a]) / step[a];
            let i = (t.floor() as usize).min(self.spec.resolution[a] - 2);
            base[a] = i;
            frac[a] = (t - i as f64).clamp(0.0, 1.0);
        }
        let [x, y, z] = base;
        let [tx, ty, tz] = frac;
        let v = |dx, dy, dz| self.get(x + dx, y + dy, z + dz);
        let c00 = v(0, 0, 0) + (v(1, 0, 0) - v(0, 0, 0)) * tx;
        let c10 = v(0, 1, 0) + (v(1, 1, 0) - v(0, 1, 0)) * tx;
        let c01 = v(0, 0, 1) + (v(1, 0, 1) - v(0, 0, 1)) * tx;
        let c11 = v(0, 1, 1) + (v(1, 1, 1) - v(0, 1, 1)) * tx;
        let c0 = c00 + (c10 - c00) * ty;
        let c1 = c01 + (c11 - c01) * ty;
        Some(c0 + (c1 - c0) * tz)
    }

    /// [`query`](Self::query) with zero outside the volume.
    pub fn value_at(&self, p: &Point3<f64>) -> f64 {
        self.query(p).unwrap_or(0.0)
    }

    /// Grayscale slice at node index `iz` (constant z), likelihood mapped
    /// linearly from `[0, max over the volume]` to `[0, 255]`. Image x runs
    /// along volume x, image y along volume y.
    pub fn slice_z_image(&self, iz: usize) -> Result<GrayImage> {
        let [nx, ny, nz] = self.spec.resolution;
        if iz >= nz {
            return Err(Error::invalid(
                "slice",
                format!("index {iz} outside 0..{nz}"),
            ));
        }
        let max = self.max_value();
        let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
        Ok(GrayImage::from_fn(nx as u32, ny as u32, |x, y| {
            let v = self.get(x as usize, y as usize, iz) * scale;
            image::Luma([v.round().clamp(0.0, 255.0) as u8])
        }))
    }

    /// Nearest slice index for world height `z`.
    pub fn slice_index_for_z(&self, z: f64) -> Result<usize> {
        let t = (z - self.spec.origin[2]) / self.spec.step()[2];
        if !(t > -0.5 && t < self.spec.resolution[2] as f64 - 0.5) {
            return Err(Error::invalid(
                "slice",
                format!("z = {z} outside the volume"),
            ));
        }
        Ok(t.round() as usize)
    }
}

/// Builds the volume with [`DepthSampling::Exact`]. Parallel work runs on
/// the current rayon pool; the result does not depend on its size.
pub fn build_dlv(
    obs_set: &ObservationSet,
    spec: &VolumeSpec,
    hyps: &DepthHypothesisSet,
    patch: &PatchSpec,
) -> Result<DepthLikelihoodVolume> {
    build_dlv_with(obs_set, spec, hyps, patch, DepthSampling::default())
}

pub fn build_dlv_with(
    obs_set: &ObservationSet,
    spec: &VolumeSpec,
    hyps: &DepthHypothesisSet,
    patch: &PatchSpec,
    sampling: DepthSampling,
) -> Result<DepthLikelihoodVolume> {
    spec.validate()?;
    patch.validate()?;
    let intr = obs_set.intrinsics();
    let npix = intr.width() * intr.height();
    let mut tables = Vec::with_capacity(obs_set.len());
    let mut views = Vec::with_capacity(obs_set.len());
    for obs in obs_set.observations() {
        let mut needed = vec![false; npix];
        let mut seen = 0usize;
        for i in 0..spec.len() {
            let [x, y, z] = spec.unravel(i);
            if let Some(r) = voxel_ray(&spec.point(x, y, z), &obs.pose, intr, hyps) {
                needed[r.pixel] = true;
                seen += 1;
            }
        }
        if seen == 0 {
            return Err(Error::OutsideVisualHull(format!(
                "no workspace voxel projects into view '{}'",
                obs.id
            )));
        }
        let view = ViewFeatures::from_observation(obs);
        debug!(
            "view {}: {} voxels visible, {} distinct pixels",
            obs.id,
            seen,
            needed.iter().filter(|n| **n).count()
        );
        tables.push(ViewTable::compute(&view, intr, hyps, patch, &needed)?);
        views.push(view);
    }

    let slab = spec.resolution[0] * spec.resolution[1];
    let mut values = vec![0.0; spec.len()];
    values.par_chunks_mut(slab).enumerate().for_each_init(
        CostScratch::default,
        |scratch, (iz, out)| {
            for (j, v) in out.iter_mut().enumerate() {
                let p = spec.point(j % spec.resolution[0], j / spec.resolution[0], iz);
                let mut sum = 0.0;
                for ((obs, table), view) in obs_set.observations().iter().zip(&tables).zip(&views) {
                    if let Some(r) = voxel_ray(&p, &obs.pose, intr, hyps) {
                        sum += table.term(view, intr, &r, patch, sampling, scratch);
                    }
                }
                *v = sum;
            }
        },
    );
    Ok(DepthLikelihoodVolume::from_values(*spec, values, obs_set.len())?.with_sampling(sampling))
}

/// Which hypotheses along the pixel's ray the peak test compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PeakRange {
    /// Depths `<= d`.
    #[default]
    UpToInclusive,
    /// Depths `< d` only.
    StrictlyCloser,
}

/// What "peak" means in the reflection test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PeakCriterion {
    /// The view's likelihood at `d` is the largest over the range
    /// (equivalently its aggregated cost is the smallest).
    #[default]
    MaxLikelihood,
    /// The aggregated cost at `d` is the largest over the range.
    MaxCost,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuppressionConfig {
    /// Fixed variance threshold; `None` selects the adaptive threshold
    /// `adaptive_multiplier * median voxel variance`.
    pub variance_threshold: Option<f64>,
    pub adaptive_multiplier: f64,
    /// Max-channel intensity in `[0, 1]` at or above which a center-view
    /// pixel counts as saturated.
    pub saturation_threshold: f64,
    pub likelihood_floor: f64,
    pub peak_range: PeakRange,
    pub peak_criterion: PeakCriterion,
}

impl Default for SuppressionConfig {
    fn default() -> Self {
        Self {
            variance_threshold: None,
            adaptive_multiplier: 4.0,
            saturation_threshold: 0.98,
            likelihood_floor: 0.0,
            peak_range: PeakRange::UpToInclusive,
            peak_criterion: PeakCriterion::MaxLikelihood,
        }
    }
}

impl SuppressionConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.variance_threshold {
            if !(t > 0.0) {
                return Err(Error::invalid(
                    "suppression",
                    "variance threshold must be > 0",
                ));
            }
        }
        if !(self.adaptive_multiplier > 0.0) {
            return Err(Error::invalid(
                "suppression",
                "adaptive multiplier must be > 0",
            ));
        }
        if !(self.saturation_threshold > 0.0 && self.saturation_threshold <= 1.0) {
            return Err(Error::invalid(
                "suppression",
                "saturation threshold must lie in (0, 1]",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuppressionReport {
    pub variance_threshold: f64,
    pub candidate_voxels: usize,
    pub high_variance_voxels: usize,
    pub excluded_rays: usize,
    pub changed_voxels: usize,
}

/// Cross-view, cross-aperture spread `sum (T - E)^2` of the side-aperture
/// costs of `p` at each view's own depth, with `E` the mean over valid rays.
pub fn ray_difference_variance(
    p: &Point3<f64>,
    obs_set: &ObservationSet,
    views: &[ViewFeatures],
    hyps: &DepthHypothesisSet,
    patch: &PatchSpec,
    sampling: DepthSampling,
) -> Option<f64> {
    let intr = obs_set.intrinsics();
    let mut all = Vec::new();
    for (obs, view) in obs_set.observations().iter().zip(views) {
        if let Some(r) = voxel_ray(p, &obs.pose, intr, hyps) {
            let depth = match sampling {
                DepthSampling::Exact => r.depth,
                DepthSampling::NearestHypothesis => hyps.get(r.hyp),
            };
            all.extend(
                aperture_costs(view, intr, pixel_coords(r.pixel, intr), depth, patch)
                    .into_iter()
                    .flatten(),
            );
        }
    }
    if all.is_empty() {
        return None;
    }
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    Some(all.iter().map(|t| (t - mean) * (t - mean)).sum())
}

/// Compares the cost `at` of the voxel's own depth with the first `end`
/// entries of the pixel's profile.
fn peak_holds(at: f64, profile: &[Option<f64>], end: usize, criterion: PeakCriterion) -> bool {
    let mut others = profile[..end].iter().flatten();
    match criterion {
        PeakCriterion::MaxLikelihood => others.all(|c| at <= *c),
        PeakCriterion::MaxCost => others.all(|c| at >= *c),
    }
}

/// The peak test for one view's ray through a voxel; `None` when the ray
/// has no cost at the voxel depth.
#[allow(clippy::too_many_arguments)]
fn view_peak(
    table: &ViewTable,
    view: &ViewFeatures,
    intr: &CameraIntrinsics,
    r: &VoxelRay,
    hyps: &DepthHypothesisSet,
    patch: &PatchSpec,
    sampling: DepthSampling,
    cfg: &SuppressionConfig,
    scratch: &mut CostScratch,
) -> Option<bool> {
    let profile = table.profile(r.pixel);
    let (at, end) = match sampling {
        DepthSampling::NearestHypothesis => {
            let end = match cfg.peak_range {
                PeakRange::UpToInclusive => r.hyp + 1,
                PeakRange::StrictlyCloser => r.hyp,
            };
            (profile[r.hyp]?, end)
        }
        DepthSampling::Exact => {
            let at = aggregated_cost(
                view,
                intr,
                pixel_coords(r.pixel, intr),
                r.depth,
                patch,
                scratch,
            )
            .ok()??;
            let end = match cfg.peak_range {
                PeakRange::UpToInclusive => hyps.depths().partition_point(|&d| d <= r.depth),
                PeakRange::StrictlyCloser => hyps.depths().partition_point(|&d| d < r.depth),
            };
            (at, end)
        }
    };
    Some(peak_holds(at, profile, end, cfg.peak_criterion))
}

const ADAPTIVE_SAMPLE: usize = 4096;

/// Removes ray evidence that looks like a specular highlight: for voxels
/// with a saturated center-view pixel, likelihood above the floor and a
/// ray-difference variance above the threshold, every view whose ray peaks
/// at the voxel depth (see [`PeakCriterion`]) is dropped from the voxel's
/// sum.
pub fn suppress_reflections(
    dlv: &DepthLikelihoodVolume,
    obs_set: &ObservationSet,
    hyps: &DepthHypothesisSet,
    patch: &PatchSpec,
    cfg: &SuppressionConfig,
) -> Result<(DepthLikelihoodVolume, SuppressionReport)> {
    cfg.validate()?;
    if dlv.view_count() != obs_set.len() {
        return Err(Error::invalid(
            "suppression",
            format!(
                "volume was built from {} views, observation set has {}",
                dlv.view_count(),
                obs_set.len()
            ),
        ));
    }
    let spec = *dlv.spec();
    let intr = obs_set.intrinsics();
    let npix = intr.width() * intr.height();
    let views: Vec<ViewFeatures> = obs_set
        .observations()
        .iter()
        .map(ViewFeatures::from_observation)
        .collect();
    let saturated: Vec<Vec<bool>> = obs_set
        .observations()
        .iter()
        .map(|o| {
            let thr = cfg.saturation_threshold * 255.0;
            o.grid
                .center_view()
                .pixels()
                .map(|p| p.0.iter().any(|&c| c as f64 >= thr))
                .collect()
        })
        .collect();

    let rays_of = |p: &Point3<f64>| -> Vec<Option<VoxelRay>> {
        obs_set
            .observations()
            .iter()
            .map(|o| voxel_ray(p, &o.pose, intr, hyps))
            .collect()
    };

    let candidates: Vec<usize> = (0..spec.len())
        .filter(|&i| {
            if !(dlv.values[i] > cfg.likelihood_floor) {
                return false;
            }
            let [x, y, z] = spec.unravel(i);
            rays_of(&spec.point(x, y, z))
                .iter()
                .enumerate()
                .any(|(v, r)| r.is_some_and(|r| saturated[v][r.pixel]))
        })
        .collect();

    let tau = match cfg.variance_threshold {
        Some(t) => t,
        None => {
            let visible: Vec<usize> = (0..spec.len())
                .filter(|&i| {
                    let [x, y, z] = spec.unravel(i);
                    rays_of(&spec.point(x, y, z)).iter().any(Option::is_some)
                })
                .collect();
            let stride = visible.len().div_ceil(ADAPTIVE_SAMPLE).max(1);
            let mut vars: Vec<f64> = visible
                .par_iter()
                .step_by(stride)
                .filter_map(|&i| {
                    let [x, y, z] = spec.unravel(i);
                    ray_difference_variance(
                        &spec.point(x, y, z),
                        obs_set,
                        &views,
                        hyps,
                        patch,
                        dlv.sampling,
                    )
                })
                .collect();
            if vars.is_empty() {
                f64::INFINITY
            } else {
                vars.sort_by(f64::total_cmp);
                cfg.adaptive_multiplier * vars[vars.len() / 2]
            }
        }
    };

    let mut report = SuppressionReport {
        variance_threshold: tau,
        candidate_voxels: candidates.len(),
        ..Default::default()
    };
    if candidates.is_empty() || !tau.is_finite() {
        return Ok((dlv.clone(), report));
    }

    let high: Vec<(usize, f64)> = candidates
        .par_iter()
        .filter_map(|&i| {
            let [x, y, z] = spec.unravel(i);
            let var = ray_difference_variance(
                &spec.point(x, y, z),
                obs_set,
                &views,
                hyps,
                patch,
                dlv.sampling,
            )?;
            (var > tau).then_some((i, var))
        })
        .collect();
    report.high_variance_voxels = high.len();

    let mut tables = Vec::with_capacity(views.len());
    for (v, (obs, view)) in obs_set.observations().iter().zip(&views).enumerate() {
        let mut needed = vec![false; npix];
        for &(i, _) in &high {
            let [x, y, z] = spec.unravel(i);
            if let Some(r) = voxel_ray(&spec.point(x, y, z), &obs.pose, intr, hyps) {
                needed[r.pixel] = true;
            }
        }
        debug!(
            "suppression view {v}: {} pixels",
            needed.iter().filter(|n| **n).count()
        );
        tables.push(ViewTable::compute(view, intr, hyps, patch, &needed)?);
    }

    let sampling = dlv.sampling;
    let updates: Vec<(usize, f64, usize)> = high
        .par_iter()
        .map_init(CostScratch::default, |scratch, &(i, _)| {
            let [x, y, z] = spec.unravel(i);
            let rays = rays_of(&spec.point(x, y, z));
            let mut kept = 0.0;
            let mut excluded = 0;
            for ((table, view), r) in tables.iter().zip(&views).zip(&rays) {
                let Some(r) = r else { continue };
                let peak = view_peak(table, view, intr, r, hyps, patch, sampling, cfg, scratch);
                if peak == Some(true) {
                    excluded += 1;
                } else {
                    kept += table.term(view, intr, r, patch, sampling, scratch);
                }
            }
            (excluded > 0).then(|| (i, kept.min(dlv.values[i]), excluded))
        })
        .flatten()
        .collect();

    let mut values = dlv.values.clone();
    for (i, v, excluded) in updates {
        if v != values[i] {
            report.changed_voxels += 1;
        }
        report.excluded_rays += excluded;
        values[i] = v;
    }
    debug!("suppression: {report:?}");
    Ok((
        DepthLikelihoodVolume::from_values(spec, values, dlv.view_count)?,
        report,
    ))
}

pub const DLV_MAGIC: &[u8; 4] = b"DLV1";
pub const DLV_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 24 + 24 + 12 + 4 + 4;

/// Serializes to the `.dlv` layout: magic, version, origin, extent,
/// resolution, view count, depth-sampling code, then little-endian `f64`
/// values (x fastest).
pub fn encode_dlv(dlv: &DepthLikelihoodVolume) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * dlv.values.len());
    buf.extend_from_slice(DLV_MAGIC);
    buf.extend_from_slice(&DLV_VERSION.to_le_bytes());
    for v in dlv.spec.origin.iter().chain(&dlv.spec.extent) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for r in dlv.spec.resolution {
        buf.extend_from_slice(&(r as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(dlv.view_count as u32).to_le_bytes());
    buf.extend_from_slice(&dlv.sampling.code().to_le_bytes());
    for v in &dlv.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_dlv(bytes: &[u8]) -> Result<DepthLikelihoodVolume> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::CorruptVolume(format!(
            "file is {} bytes, header needs {HEADER_LEN}",
            bytes.len()
        )));
    }
    if &bytes[0..4] != DLV_MAGIC {
        return Err(Error::CorruptVolume("magic mismatch".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != DLV_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: DLV_VERSION,
        });
    }
    let origin = [f64_at(8), f64_at(16), f64_at(24)];
    let extent = [f64_at(32), f64_at(40), f64_at(48)];
    let resolution = [
        u32_at(56) as usize,
        u32_at(60) as usize,
        u32_at(64) as usize,
    ];
    let view_count = u32_at(68) as usize;
    let sampling = DepthSampling::from_code(u32_at(72))
        .ok_or_else(|| Error::CorruptVolume(format!("unknown sampling code {}", u32_at(72))))?;
    let spec = VolumeSpec::new(origin, extent, resolution)
        .map_err(|e| Error::CorruptVolume(format!("bad header: {e}")))?;
    let expected = HEADER_LEN + 8 * spec.len();
    if bytes.len() != expected {
        return Err(Error::CorruptVolume(format!(
            "payload is {} bytes, expected {}",
            bytes.len() - HEADER_LEN,
            expected - HEADER_LEN
        )));
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DepthLikelihoodVolume::from_values(spec, values, view_count)
        .map(|d| d.with_sampling(sampling))
        .map_err(|e| Error::CorruptVolume(e.to_string()))
}

pub fn save_dlv(dlv: &DepthLikelihoodVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_dlv(dlv))
        .map_err(|e| Error::io(path, e))
}

pub fn load_dlv(path: impl AsRef<Path>) -> Result<DepthLikelihoodVolume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dlv(&bytes)
}

/// Unit vector of the ray through the center-view pixel `(i, j)`, world
/// frame.
pub fn pixel_ray(
    pose: &crate::pose::CameraPose,
    intr: &CameraIntrinsics,
    pixel: [f64; 2],
) -> (Point3<f64>, Vector3<f64>) {
    let f = intr.focal_length_px;
    let d = Vector3::new(
        (pixel[0] - intr.principal_point[0]) / f,
        (pixel[1] - intr.principal_point[1]) / f,
        1.0,
    );
    (
        Point3::from(pose.translation.vector),
        (pose.rotation * d).normalize(),
    )
}
