//! Command-line driver: one subcommand per pipeline stage, all sharing a
//! TOML config. Results go to files and stdout; logs and error records go
//! to stderr.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use dlvgrasp::classifier::{
    load_dataset, load_model, save_dataset, save_model, train, write_training_log, GraspClassifier,
    LabelSource, LabeledExample,
};
use dlvgrasp::dlv::{
    build_dlv_with, hypotheses_spanning, load_dlv, save_dlv, suppress_reflections,
    DepthLikelihoodVolume,
};
use dlvgrasp::features::{
    candidate_tensor, prune_candidates, sample_candidates, write_tensor, CandidateRecord,
    GraspCandidate,
};
use dlvgrasp::lf_geometry::DepthHypothesisSet;
use dlvgrasp::plenoptic_io::{load_observation_set, save_observation_set, ObservationSet};
use dlvgrasp::search::run_search;
use dlvgrasp::synth::{
    oracle_grasp_label, render_rig, scenes, training_candidates, BruteForceOracle, SceneDescription,
};
use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;

const MANIFEST_NAME: &str = "manifest.json";
const SCENE_NAME: &str = "scene.json";

#[derive(Parser)]
#[command(
    name = "dlvgrasp",
    version,
    about = "Grasp detection for transparent objects from plenoptic views"
)]
struct Cli {
    /// Pipeline config (TOML); built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `workers` from the config.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides `seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene through the configured camera rig.
    SynthScene {
        /// Preset name (`two-cylinders`) or path to a scene JSON document.
        #[arg(long, default_value = "two-cylinders")]
        scene: String,
        /// Output directory for the scene, images and manifest.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a depth likelihood volume from an observation set.
    BuildDlv {
        #[arg(long)]
        observations: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Suppress reflection-induced likelihood in a volume.
    Suppress {
        #[arg(long)]
        dlv: PathBuf,
        #[arg(long)]
        observations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON report of the suppression statistics.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write a constant-z slice of a volume as a grayscale PNG.
    RenderSlice {
        #[arg(long)]
        dlv: PathBuf,
        /// World height of the slice in meters.
        #[arg(long, allow_hyphen_values = true)]
        z: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw grasp candidates: uniform in the volume, or labeled training
    /// candidates around the objects of a scene.
    SampleGrasps {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        count: usize,
        /// Drop candidates more than half outside this volume.
        #[arg(long)]
        dlv: Option<PathBuf>,
        /// Draw oracle-labeled training candidates for this scene instead.
        #[arg(long, conflicts_with = "dlv")]
        training_scene: Option<PathBuf>,
    },
    /// Voxelize candidates and write their feature tensors. Labeled
    /// candidates produce a training dataset directory.
    ExtractFeatures {
        #[arg(long)]
        dlv: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier on a dataset directory.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Line-delimited training log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score candidates with a trained classifier.
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dlv: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Particle search for grasps; prints the top-k poses.
    Search {
        #[arg(long)]
        dlv: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Label candidates with the geometric grasp oracle.
    OracleLabel {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a volume against the brute-force evaluation.
    Verify {
        #[arg(long)]
        observations: PathBuf,
        #[arg(long)]
        dlv: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        /// Voxels compared; the whole grid when it is smaller.
        #[arg(long, default_value_t = 512)]
        samples: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SynthScene { .. } => "synth-scene",
            Command::BuildDlv { .. } => "build-dlv",
            Command::Suppress { .. } => "suppress",
            Command::RenderSlice { .. } => "render-slice",
            Command::SampleGrasps { .. } => "sample-grasps",
            Command::ExtractFeatures { .. } => "extract-features",
            Command::Train { .. } => "train",
            Command::Classify { .. } => "classify",
            Command::Search { .. } => "search",
            Command::OracleLabel { .. } => "oracle-label",
            Command::Verify { .. } => "verify",
        }
    }
}

/// Raised when a computation finished but its result is wrong.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct ComputationFailure(String);

/// Sidecar written next to binary artifacts.
#[derive(Serialize, Deserialize)]
struct Provenance {
    command: String,
    config_hash: String,
}

/// Candidate list document shared by sampling, labeling, classification
/// and search.
#[derive(Serialize, Deserialize)]
struct CandidateDocument {
    config_hash: String,
    candidates: Vec<CandidateRecord>,
}

struct Ctx {
    cfg: PipelineConfig,
    hash: String,
    command: &'static str,
}

impl Ctx {
    fn provenance(&self, artifact: &Path) -> Result<()> {
        let mut name = artifact.as_os_str().to_owned();
        name.push(".provenance.json");
        write_json(
            Path::new(&name),
            &Provenance {
                command: self.command.into(),
                config_hash: self.hash.clone(),
            },
        )
    }

    fn write_candidates(&self, path: &Path, candidates: &[GraspCandidate]) -> Result<()> {
        write_json(
            path,
            &CandidateDocument {
                config_hash: self.hash.clone(),
                candidates: candidates.iter().map(CandidateRecord::from).collect(),
            },
        )
    }

    fn hypotheses(&self, obs: &ObservationSet) -> Result<DepthHypothesisSet> {
        Ok(hypotheses_spanning(
            &self.cfg.volume,
            obs,
            self.cfg.hypothesis_count,
        )?)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_candidates(path: &Path) -> Result<Vec<GraspCandidate>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let doc: CandidateDocument =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    doc.candidates
        .iter()
        .map(|r| Ok(r.to_candidate()?))
        .collect()
}

fn load_scene(spec: &str, seed: u64) -> Result<SceneDescription> {
    let scene = match spec {
        "two-cylinders" => scenes::two_cylinders(seed),
        path => SceneDescription::load(path)?,
    };
    scene.validate()?;
    Ok(scene)
}

fn load_volume(path: &Path) -> Result<DepthLikelihoodVolume> {
    Ok(load_dlv(path)?)
}

fn run(ctx: &Ctx, command: Command) -> Result<()> {
    let cfg = &ctx.cfg;
    match command {
        Command::SynthScene { scene, out } => {
            let scene = load_scene(&scene, cfg.seed)?;
            let obs = render_rig(&scene, &cfg.rig.rig())?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            scene.save(out.join(SCENE_NAME))?;
            let manifest = save_observation_set(&obs, &out, MANIFEST_NAME)?;
            ctx.provenance(&manifest)?;
            println!("{}", manifest.display());
        }
        Command::BuildDlv { observations, out } => {
            let obs = load_observation_set(&observations)?;
            let hyps = ctx.hypotheses(&obs)?;
            let dlv = build_dlv_with(&obs, &cfg.volume, &hyps, &cfg.patch, cfg.sampling)?;
            save_dlv(&dlv, &out)?;
            ctx.provenance(&out)?;
            info!("volume max likelihood {:.4}", dlv.max_value());
        }
        Command::Suppress {
            dlv,
            observations,
            out,
            report,
        } => {
            let volume = load_volume(&dlv)?;
            let obs = load_observation_set(&observations)?;
            let hyps = ctx.hypotheses(&obs)?;
            let (suppressed, rep) =
                suppress_reflections(&volume, &obs, &hyps, &cfg.patch, &cfg.suppression)?;
            save_dlv(&suppressed, &out)?;
            ctx.provenance(&out)?;
            info!(
                "threshold {:.3e}; {} candidate voxels, {} changed",
                rep.variance_threshold, rep.candidate_voxels, rep.changed_voxels
            );
            if let Some(path) = report {
                write_json(&path, &rep)?;
            }
        }
        Command::RenderSlice { dlv, z, out } => {
            let volume = load_volume(&dlv)?;
            let iz = volume.slice_index_for_z(z)?;
            let img = volume.slice_z_image(iz)?;
            img.save(&out)
                .with_context(|| format!("writing {}", out.display()))?;
            ctx.provenance(&out)?;
        }
        Command::SampleGrasps {
            out,
            count,
            dlv,
            training_scene,
        } => {
            let candidates = if let Some(scene_path) = training_scene {
                let scene = SceneDescription::load(&scene_path)?;
                training_candidates(
                    &scene,
                    &cfg.volume,
                    &cfg.gripper,
                    &cfg.oracle,
                    &cfg.training_draw,
                    cfg.seed,
                )?
            } else {
                let workspace = match &dlv {
                    Some(p) => *load_volume(p)?.spec(),
                    None => cfg.volume,
                };
                let drawn = sample_candidates(&workspace, count, cfg.seed);
                prune_candidates(&workspace, drawn, &cfg.gripper)
            };
            info!("{} candidates", candidates.len());
            ctx.write_candidates(&out, &candidates)?;
        }
        Command::ExtractFeatures {
            dlv,
            candidates,
            out,
        } => {
            let volume = load_volume(&dlv)?;
            let candidates = read_candidates(&candidates)?;
            let mut tensors = Vec::new();
            let mut skipped = 0;
            for c in &candidates {
                match candidate_tensor(&volume, c, &cfg.gripper, &cfg.features) {
                    Ok(t) => tensors.push((c, t)),
                    Err(dlvgrasp::error::Error::GraspOutsideWorkspace) => skipped += 1,
                    Err(e) => return Err(e.into()),
                }
            }
            if skipped > 0 {
                warn!("{skipped} candidates lie outside the volume and were skipped");
            }
            if tensors.iter().all(|(c, _)| c.label.is_some()) && !tensors.is_empty() {
                let dataset: Vec<LabeledExample> = tensors
                    .into_iter()
                    .map(|(c, tensor)| LabeledExample {
                        tensor,
                        label: c.label.expect("checked above"),
                        source: LabelSource::OracleForceClosure,
                    })
                    .collect();
                save_dataset(&out, &dataset)?;
                info!("dataset of {} examples", dataset.len());
            } else {
                fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
                for (i, (c, t)) in tensors.iter().enumerate() {
                    write_tensor(out.join(format!("tensor_{i:05}.f32")), t, Some(c))?;
                }
                info!("{} tensors", tensors.len());
            }
            ctx.provenance(&out.join("features"))?;
        }
        Command::Train { dataset, out, log } => {
            let data = load_dataset(&dataset)?;
            let (model, records) = train(ctx.cfg.architecture(), &data, &cfg.classifier.train)?;
            save_model(&out, &model)?;
            ctx.provenance(&out)?;
            if let Some(path) = log {
                write_training_log(path, &records)?;
            }
            info!(
                "final loss {:.4}, accuracy {:.4}",
                model.meta.final_loss, model.meta.final_accuracy
            );
        }
        Command::Classify {
            model,
            dlv,
            candidates,
            out,
        } => {
            let model = load_model(&model)?;
            let volume = load_volume(&dlv)?;
            let mut scored = Vec::new();
            for mut c in read_candidates(&candidates)? {
                let t = match candidate_tensor(&volume, &c, &cfg.gripper, &cfg.features) {
                    Ok(t) => t,
                    Err(dlvgrasp::error::Error::GraspOutsideWorkspace) => continue,
                    Err(e) => return Err(e.into()),
                };
                let p = model.classify(&t)?;
                c.confidence = p.confidence;
                c.label = Some(p.graspable);
                scored.push(c);
            }
            ctx.write_candidates(&out, &scored)?;
        }
        Command::Search {
            dlv,
            model,
            out,
            top_k,
        } => {
            let model = load_model(&model)?;
            let volume = load_volume(&dlv)?;
            let result = run_search(
                &volume,
                &cfg.gripper,
                &model,
                &cfg.features,
                volume.spec(),
                &cfg.search.diffusion,
                cfg.seed,
            )?;
            let k = top_k.unwrap_or(cfg.search.top_k);
            let top: Vec<GraspCandidate> = result.ranked.into_iter().take(k).collect();
            for c in &top {
                println!("{}", serde_json::to_string(&CandidateRecord::from(c))?);
            }
            if let Some(path) = out {
                ctx.write_candidates(&path, &top)?;
            }
        }
        Command::OracleLabel {
            scene,
            candidates,
            out,
        } => {
            let scene = SceneDescription::load(&scene)?;
            let prepared = scene.prepare()?;
            let mut labeled = read_candidates(&candidates)?;
            let mut graspable = 0;
            for c in &mut labeled {
                let report = oracle_grasp_label(c, &cfg.gripper, &prepared, &cfg.oracle);
                c.label = Some(report.graspable);
                graspable += usize::from(report.graspable);
            }
            info!("{graspable}/{} graspable", labeled.len());
            ctx.write_candidates(&out, &labeled)?;
        }
        Command::Verify {
            observations,
            dlv,
            tolerance,
            samples,
        } => {
            let obs = load_observation_set(&observations)?;
            let volume = load_volume(&dlv)?;
            let hyps = ctx.hypotheses(&obs)?;
            let spec = *volume.spec();
            let oracle =
                BruteForceOracle::new(&obs, &hyps, &cfg.patch).with_sampling(volume.sampling());
            let indices: Vec<usize> = if spec.len() <= samples {
                (0..spec.len()).collect()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                (0..samples)
                    .map(|_| rng.random_range(0..spec.len()))
                    .collect()
            };
            let max_abs_diff = indices
                .par_iter()
                .map(|&i| {
                    let [x, y, z] = spec.unravel(i);
                    (volume.values()[i] - oracle.likelihood(&spec.point(x, y, z))).abs()
                })
                .reduce(|| 0.0, f64::max);
            let pass = max_abs_diff <= tolerance;
            println!(
                "max_abs_diff={max_abs_diff:.3e} voxels={} tolerance={tolerance:e} {}",
                indices.len(),
                if pass { "PASS" } else { "FAIL" }
            );
            if !pass {
                return Err(ComputationFailure(format!(
                    "volume differs from the brute-force evaluation by {max_abs_diff:.3e}"
                ))
                .into());
            }
        }
    }
    Ok(())
}

/// 1 for bad inputs, 2 for failed computations.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<dlvgrasp::error::Error>() {
            return if e.is_validation() { 1 } else { 2 };
        }
        if cause.downcast_ref::<ComputationFailure>().is_some() {
            return 2;
        }
    }
    1
}

fn error_record(code: u8, message: &str) -> String {
    serde_json::json!({
        "error": {
            "kind": if code == 1 { "validation" } else { "computation" },
            "code": code,
            "message": message,
        }
    })
    .to_string()
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_record(1, e.to_string().trim()));
            return ExitCode::from(1);
        }
    };
    let outcome = load_config(&cli).and_then(|cfg| {
        let workers = cfg
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .context("starting worker pool")?;
        let ctx = Ctx {
            hash: cfg.hash(),
            cfg,
            command: cli.command.name(),
        };
        let started = Instant::now();
        let name = ctx.command;
        pool.install(|| run(&ctx, cli.command))?;
        info!(
            "{name} finished in {:.2}s ({workers} workers, config {})",
            started.elapsed().as_secs_f64(),
            &ctx.hash[..12]
        );
        Ok(())
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("{}", error_record(code, &format!("{e:#}")));
            ExitCode::from(code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_class() {
        let v: anyhow::Error = dlvgrasp::error::Error::EmptyApertureSet.into();
        assert_eq!(exit_code(&v), 1);
        let c: anyhow::Error = dlvgrasp::error::Error::Diverged { epoch: 3 }.into();
        assert_eq!(exit_code(&c), 2);
        let wrapped =
            anyhow::Error::from(dlvgrasp::error::Error::Diverged { epoch: 1 }).context("training");
        assert_eq!(exit_code(&wrapped), 2);
        assert_eq!(exit_code(&ComputationFailure("x".into()).into()), 2);
    }

    #[test]
    fn error_record_is_one_json_line() {
        let line = error_record(2, "boom");
        assert!(!line.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["error"]["code"], 2);
        assert_eq!(v["error"]["kind"], "computation");
    }
}
