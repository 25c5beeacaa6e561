//! Particle refinement of grasp poses: score, resample, diffuse.

use log::{debug, warn};
use nalgebra::{Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::GraspClassifier;
use crate::dlv::{DepthLikelihoodVolume, VolumeSpec};
use crate::error::{Error, Result};
use crate::features::{
    candidate_tensor, uniform_position, uniform_rotation, FeatureConfig, GraspCandidate,
    GripperParams,
};
use crate::pose::{rotation_distance, GraspPose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    /// Per-axis position variance, m².
    pub translation_variance: f64,
    /// Per-angle roll/pitch/yaw variance, rad².
    pub rotation_variance: f64,
    pub iterations: usize,
    pub particle_count: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            translation_variance: 1e-4,
            rotation_variance: 0.03,
            iterations: 100,
            particle_count: 100,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        let var_ok = |v: f64| v >= 0.0 && v.is_finite();
        if !var_ok(self.translation_variance) || !var_ok(self.rotation_variance) {
            return Err(Error::invalid(
                "diffusion config",
                "variances must be finite and non-negative",
            ));
        }
        if self.iterations == 0 {
            return Err(Error::invalid(
                "diffusion config",
                "at least one iteration is required",
            ));
        }
        if self.particle_count < 2 {
            return Err(Error::invalid(
                "diffusion config",
                "at least two particles are required",
            ));
        }
        Ok(())
    }
}

/// Deduplication radii for the reported grasp list.
pub const DEDUP_DISTANCE: f64 = 0.005;
pub const DEDUP_ANGLE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub candidate: GraspCandidate,
    pub weight: f64,
}

/// Particles with their own seeded random stream; scoring never draws
/// from it.
#[derive(Debug, Clone)]
pub struct ParticleSet {
    pub particles: Vec<Particle>,
    pub iteration: usize,
    pub rng_seed: u64,
    workspace: VolumeSpec,
    rng: ChaCha8Rng,
}

fn uniform_particles(workspace: &VolumeSpec, n: usize, rng: &mut ChaCha8Rng) -> Vec<Particle> {
    (0..n)
        .map(|_| {
            let p = uniform_position(rng, workspace);
            let q = uniform_rotation(rng);
            Particle {
                candidate: GraspCandidate::new(GraspPose::from_parts(
                    Translation3::from(p.coords),
                    q,
                )),
                weight: 1.0 / n as f64,
            }
        })
        .collect()
}

/// Folds `x` into `[lo, hi]` by mirroring at the faces.
fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    if w <= 0.0 {
        return lo;
    }
    let mut t = (x - lo).rem_euclid(2.0 * w);
    if t > w {
        t = 2.0 * w - t;
    }
    lo + t
}

impl ParticleSet {
    pub fn init(workspace: &VolumeSpec, cfg: &DiffusionConfig, seed: u64) -> Result<Self> {
        workspace.validate()?;
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let particles = uniform_particles(workspace, cfg.particle_count, &mut rng);
        Ok(Self {
            particles,
            iteration: 0,
            rng_seed: seed,
            workspace: *workspace,
            rng,
        })
    }

    pub fn workspace(&self) -> &VolumeSpec {
        &self.workspace
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Weights proportional to `scores`, then systematic resampling back to
    /// uniform weights. All-zero scores restart from a uniform draw.
    pub fn weight_and_resample(&mut self, scores: &[f64]) -> Result<()> {
        let n = self.particles.len();
        if scores.len() != n {
            return Err(Error::DimensionMismatch {
                expected: vec![n],
                found: vec![scores.len()],
            });
        }
        if let Some(bad) = scores.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::invalid(
                "particle score",
                format!("scores must be finite and non-negative, got {bad}"),
            ));
        }
        let total: f64 = scores.iter().sum();
        if total <= 0.0 {
            warn!(
                "iteration {}: every particle scored zero, reinitializing",
                self.iteration
            );
            self.particles = uniform_particles(&self.workspace, n, &mut self.rng);
            self.iteration += 1;
            return Ok(());
        }
        for (p, s) in self.particles.iter_mut().zip(scores) {
            p.weight = s / total;
            p.candidate.confidence = *s;
        }
        let step = 1.0 / n as f64;
        let start = self.rng.random::<f64>() * step;
        let mut out = Vec::with_capacity(n);
        let mut cum = self.particles[0].weight;
        let mut j = 0;
        for k in 0..n {
            let u = start + k as f64 * step;
            while u > cum && j + 1 < n {
                j += 1;
                cum += self.particles[j].weight;
            }
            out.push(Particle {
                candidate: self.particles[j].candidate,
                weight: step,
            });
        }
        self.particles = out;
        self.iteration += 1;
        Ok(())
    }

    /// Independent Gaussian steps: per-axis translation, then a local
    /// roll/pitch/yaw rotation composed on the right. Positions mirror
    /// back into the workspace.
    pub fn diffuse(&mut self, cfg: &DiffusionConfig) -> Result<()> {
        cfg.validate()?;
        let dt = Normal::new(0.0, cfg.translation_variance.sqrt()).expect("valid deviation");
        let dr = Normal::new(0.0, cfg.rotation_variance.sqrt()).expect("valid deviation");
        let ws = self.workspace;
        for p in &mut self.particles {
            let pose = &mut p.candidate.pose;
            if cfg.translation_variance > 0.0 {
                let v = pose.translation.vector;
                let moved = Vector3::from([0, 1, 2].map(|a| {
                    let x = v[a] + dt.sample(&mut self.rng);
                    reflect(x, ws.origin[a], ws.origin[a] + ws.extent[a])
                }));
                pose.translation = Translation3::from(moved);
            }
            if cfg.rotation_variance > 0.0 {
                let (r, pi, y) = (
                    dr.sample(&mut self.rng),
                    dr.sample(&mut self.rng),
                    dr.sample(&mut self.rng),
                );
                let q = pose.rotation * UnitQuaternion::from_euler_angles(r, pi, y);
                pose.rotation = UnitQuaternion::new_normalize(q.into_inner());
            }
        }
        Ok(())
    }
}

/// Best-first order (stable on ties) with later poses within
/// [`DEDUP_DISTANCE`] and [`DEDUP_ANGLE`] of a kept one dropped.
pub fn rank_and_dedup(mut candidates: Vec<GraspCandidate>) -> Vec<GraspCandidate> {
    candidates.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut kept: Vec<GraspCandidate> = Vec::new();
    for c in candidates {
        let dup = kept.iter().any(|k| {
            (k.position() - c.position()).norm() <= DEDUP_DISTANCE
                && rotation_distance(&k.pose, &c.pose) <= DEDUP_ANGLE
        });
        if !dup {
            kept.push(c);
        }
    }
    kept
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    /// Final particles with their last scores.
    pub particles: Vec<GraspCandidate>,
    /// Scored particles ranked best first, deduplicated.
    pub ranked: Vec<GraspCandidate>,
}

/// `cfg.iterations` rounds of score → resample → diffuse followed by a
/// final scoring pass. `score` returns `None` for a pose it cannot
/// evaluate, which weighs as zero.
pub fn particle_search<F>(
    workspace: &VolumeSpec,
    cfg: &DiffusionConfig,
    seed: u64,
    score: F,
) -> Result<SearchOutcome>
where
    F: Fn(&GraspCandidate) -> Result<Option<f64>> + Sync,
{
    let mut set = ParticleSet::init(workspace, cfg, seed)?;
    let score_all = |set: &ParticleSet| -> Result<Vec<Option<f64>>> {
        set.particles
            .par_iter()
            .map(|p| score(&p.candidate))
            .collect()
    };
    for it in 0..cfg.iterations {
        let scores = score_all(&set)?;
        let valid = scores.iter().flatten().count();
        debug!("iteration {it}: {valid}/{} particles scored", set.len());
        let s: Vec<f64> = scores.iter().map(|s| s.unwrap_or(0.0)).collect();
        set.weight_and_resample(&s)?;
        set.diffuse(cfg)?;
    }
    let scores = score_all(&set)?;
    let particles: Vec<GraspCandidate> = set
        .particles
        .iter()
        .zip(&scores)
        .map(|(p, s)| GraspCandidate {
            confidence: s.unwrap_or(0.0),
            ..p.candidate
        })
        .collect();
    let valid: Vec<GraspCandidate> = particles
        .iter()
        .zip(&scores)
        .filter(|(_, s)| s.is_some())
        .map(|(c, _)| *c)
        .collect();
    if valid.is_empty() {
        return Err(Error::NoValidCandidates(
            "no final particle overlaps the likelihood volume".into(),
        ));
    }
    Ok(SearchOutcome {
        particles,
        ranked: rank_and_dedup(valid),
    })
}

/// Classifier-driven search over a likelihood volume. Poses whose grasp
/// cuboid lies entirely outside the volume score zero.
pub fn run_search(
    dlv: &DepthLikelihoodVolume,
    gripper: &GripperParams,
    model: &dyn GraspClassifier,
    features: &FeatureConfig,
    workspace: &VolumeSpec,
    cfg: &DiffusionConfig,
    seed: u64,
) -> Result<SearchOutcome> {
    gripper.validate()?;
    features.validate()?;
    if model.input_size() != features.target_size {
        return Err(Error::DimensionMismatch {
            expected: vec![model.input_size()],
            found: vec![features.target_size],
        });
    }
    particle_search(workspace, cfg, seed, |c| {
        match candidate_tensor(dlv, c, gripper, features) {
            Ok(t) => Ok(Some(model.classify(&t)?.confidence)),
            Err(Error::GraspOutsideWorkspace) => Ok(None),
            Err(e) => Err(e),
        }
    })
}
