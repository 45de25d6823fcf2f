use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use coperc_core::collab::{MessageRecord, Phase, RoundOutput};
use coperc_core::eval::{average_precision, recall};
use coperc_core::{
    generate_scene, run_round, CollabStrategy, DepthProjection, Detection, FusionStrategy, GridSpec, Models,
    PipelineConfig, ScenarioConfig, Scene,
};
use coperc_core::scene::{Dropout, Sensor};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentSpec, Mode};
use crate::render::{render_agent, RenderError};

pub const METRICS_HEADER: &str = "trial,seed,variant,noise_sigma,robust,ap50,ap70,recall,total_volume,\
total_volume_log2,feature_volume,depth_volume,mean_edge_volume,pose_err_before,pose_err_after";

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub scenario: ScenarioConfig,
    pub pipeline: PipelineConfig,
}

fn fusion_name(f: FusionStrategy) -> &'static str {
    match f {
        FusionStrategy::LidarOnly => "none",
        FusionStrategy::Equal => "equal",
        FusionStrategy::Biased => "biased",
    }
}

fn depth_name(d: DepthProjection) -> &'static str {
    match d {
        DepthProjection::NoProj => "no_proj",
        DepthProjection::EgoProj => "ego_proj",
        DepthProjection::AllProj => "all_proj",
    }
}

fn collab_name(c: CollabStrategy) -> &'static str {
    match c {
        CollabStrategy::Max => "max",
        CollabStrategy::Concat => "concat",
        CollabStrategy::Attention => "attention",
    }
}

fn with_dropout(base: &ScenarioConfig, agents: &[usize], sensor: Sensor) -> ScenarioConfig {
    let mut sc = base.clone();
    sc.dropout.extend(agents.iter().map(|&agent| Dropout {
        agent,
        absent: vec![sensor],
    }));
    sc
}

/// The configurations one trial runs, in output order.
pub fn variants(spec: &ExperimentSpec) -> Vec<Variant> {
    let ex = &spec.experiment;
    let make = |name: String, scenario: ScenarioConfig, pipeline: PipelineConfig| Variant {
        name,
        scenario,
        pipeline,
    };
    let (sc, pl) = (&spec.scenario, &spec.pipeline);
    let noisy = |sigma: f64| ScenarioConfig {
        pose_noise_sigma_xy: sigma,
        ..sc.clone()
    };
    match ex.mode {
        Mode::Full => vec![make("full".into(), sc.clone(), pl.clone())],
        Mode::CameraMissing => vec![
            make("camera_missing".into(), with_dropout(sc, &ex.missing_agents, Sensor::Camera), pl.clone()),
            make(
                "lidar_only".into(),
                sc.clone(),
                PipelineConfig {
                    fusion: FusionStrategy::LidarOnly,
                    ..pl.clone()
                },
            ),
        ],
        Mode::LidarMissing => vec![make(
            "lidar_missing".into(),
            with_dropout(sc, &ex.missing_agents, Sensor::Lidar),
            pl.clone(),
        )],
        Mode::NoiseSweep => ex
            .noise_sigmas
            .iter()
            .map(|&s| make(format!("sigma_{s:.2}"), noisy(s), pl.clone()))
            .collect(),
        Mode::Robust => ex
            .noise_sigmas
            .iter()
            .flat_map(|&s| {
                [false, true].map(|robust| {
                    let tag = if robust { "robust" } else { "plain" };
                    make(format!("sigma_{s:.2}_{tag}"), noisy(s), PipelineConfig { robust, ..pl.clone() })
                })
            })
            .collect(),
        Mode::FusionAblation => ex
            .fusion
            .iter()
            .map(|&f| make(format!("fusion_{}", fusion_name(f)), sc.clone(), PipelineConfig { fusion: f, ..pl.clone() }))
            .collect(),
        Mode::DepthAblation => ex
            .depth
            .iter()
            .map(|&d| make(format!("depth_{}", depth_name(d)), sc.clone(), PipelineConfig { depth: d, ..pl.clone() }))
            .collect(),
        Mode::CollabAblation => ex
            .collab
            .iter()
            .map(|&c| make(format!("collab_{}", collab_name(c)), sc.clone(), PipelineConfig { collab: c, ..pl.clone() }))
            .collect(),
    }
}

/// Ground-truth boxes in an agent's true body frame whose centers fall in
/// the grid.
pub fn truth_in_frame(scene: &Scene, agent: usize, grid: &GridSpec) -> Vec<Detection> {
    let pose = scene.agents[agent].true_pose;
    scene
        .objects
        .iter()
        .map(|o| Detection::from_box(&o.in_frame(&pose)))
        .filter(|d| grid.column_of(d.center[0], d.center[1]).is_some())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub trial: usize,
    pub seed: u64,
    pub variant: String,
    pub noise_sigma: f64,
    pub robust: bool,
    pub ap50: f64,
    pub ap70: f64,
    pub recall: f64,
    pub total_volume: usize,
    pub total_volume_log2: f64,
    pub feature_volume: usize,
    pub depth_volume: usize,
    pub mean_edge_volume: f64,
    pub pose_err_before: f64,
    pub pose_err_after: f64,
}

impl MetricsRow {
    /// Scores the ego (agent 0) against ground truth.
    pub fn from_round(trial: usize, variant: &Variant, scene: &Scene, round: &RoundOutput) -> Self {
        let gts = truth_in_frame(scene, 0, &variant.pipeline.grid);
        let dets = &round.agents[0].detections;
        let (before, after) = round.mean_pose_error();
        Self {
            trial,
            seed: variant.scenario.seed,
            variant: variant.name.clone(),
            noise_sigma: variant.scenario.pose_noise_sigma_xy,
            robust: variant.pipeline.robust,
            ap50: average_precision(dets, &gts, 0.5),
            ap70: average_precision(dets, &gts, 0.7),
            recall: recall(dets, &gts, 0.5),
            total_volume: round.ledger.total_elements(),
            total_volume_log2: round.ledger.total_log2(),
            feature_volume: round.ledger.feature_elements(),
            depth_volume: round.ledger.depth_elements(),
            mean_edge_volume: round.ledger.mean_edge_elements(),
            pose_err_before: before,
            pose_err_after: after,
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:.6},{},{:.6},{:.6},{:.6},{},{:.6},{},{},{:.6},{:.6},{:.6}",
            self.trial,
            self.seed,
            self.variant,
            self.noise_sigma,
            self.robust,
            self.ap50,
            self.ap70,
            self.recall,
            self.total_volume,
            self.total_volume_log2,
            self.feature_volume,
            self.depth_volume,
            self.mean_edge_volume,
            self.pose_err_before,
            self.pose_err_after
        )
    }
}

#[derive(Serialize)]
struct LogLine<'a> {
    trial: usize,
    variant: &'a str,
    phase: Phase,
    sender: usize,
    receiver: usize,
    elements: usize,
    log_volume: f64,
}

fn log_lines(trial: usize, variant: &str, messages: &[MessageRecord]) -> String {
    let mut out = String::new();
    for m in messages {
        let line = LogLine {
            trial,
            variant,
            phase: m.phase,
            sender: m.sender,
            receiver: m.receiver,
            elements: m.elements,
            log_volume: m.log_volume,
        };
        out.push_str(&serde_json::to_string(&line).expect("log line serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, thiserror::Error)]
pub enum TrialError {
    #[error("scene generation: {0}")]
    Scene(#[from] coperc_core::Error),
    #[error("render: {0}")]
    Render(#[from] RenderError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrialError + '_ {
    move |source| TrialError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutput {
    pub rows: Vec<MetricsRow>,
    pub log: String,
    pub images: Vec<PathBuf>,
}

/// Runs every variant of one trial. Artifacts go to `staging`, which the
/// caller renames into place.
pub fn run_trial(spec: &ExperimentSpec, trial: usize, staging: Option<&Path>) -> Result<TrialOutput, TrialError> {
    let seed = spec.scenario.seed.wrapping_add(trial as u64);
    let mut rows = Vec::new();
    let mut log = String::new();
    let mut images = Vec::new();
    for mut variant in variants(spec) {
        variant.scenario.seed = seed;
        let scene = generate_scene(&variant.scenario)?;
        let models = Models::new(&variant.pipeline);
        let round = run_round(&scene, &variant.scenario, &variant.pipeline, &models);
        for a in round.agents.iter().filter(|a| !a.degraded.is_empty()) {
            log::debug!("trial {trial} {}: agent {} degraded: {}", variant.name, a.id, a.degraded.join("; "));
        }
        rows.push(MetricsRow::from_round(trial, &variant, &scene, &round));
        log.push_str(&log_lines(trial, &variant.name, &round.messages));
        if let Some(dir) = staging.filter(|_| spec.experiment.render) {
            let vdir = dir.join(&variant.name);
            fs::create_dir_all(&vdir).map_err(io_err(&vdir))?;
            for (i, agent) in round.agents.iter().enumerate() {
                let truth = truth_in_frame(&scene, i, &variant.pipeline.grid);
                images.extend(render_agent(&vdir, agent, &truth, variant.pipeline.bins.n_bins)?);
            }
        }
    }
    Ok(TrialOutput { rows, log, images })
}

fn csv_body(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.to_csv());
    }
    s
}

/// Writes via a sibling temporary file and a rename.
fn write_atomic(path: &Path, body: &str) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, body)?;
    fs::rename(&tmp, path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub metrics_path: PathBuf,
    pub rows: Vec<MetricsRow>,
    pub failures: Vec<(usize, String)>,
}

/// Runs all trials on a worker pool and writes `metrics.csv`,
/// `messages.jsonl` and one `trial_NNNN` directory per trial.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<RunSummary, TrialError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let staging_root = out_dir.join(".staging");
    fs::create_dir_all(&staging_root).map_err(io_err(&staging_root))?;

    let one = |trial: usize| -> Result<TrialOutput, TrialError> {
        let name = format!("trial_{trial:04}");
        let staging = staging_root.join(&name);
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
        }
        fs::create_dir_all(&staging).map_err(io_err(&staging))?;
        let out = run_trial(spec, trial, Some(&staging))?;
        let metrics = staging.join("metrics.csv");
        fs::write(&metrics, csv_body(&out.rows)).map_err(io_err(&metrics))?;
        let messages = staging.join("messages.jsonl");
        fs::write(&messages, &out.log).map_err(io_err(&messages))?;
        let dest = out_dir.join(&name);
        if dest.exists() {
            fs::remove_dir_all(&dest).map_err(io_err(&dest))?;
        }
        fs::rename(&staging, &dest).map_err(io_err(&dest))?;
        Ok(out)
    };
    let trials: Vec<usize> = (0..spec.experiment.trials).collect();
    let results: Vec<Result<TrialOutput, TrialError>> = match spec.experiment.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
            .install(|| trials.par_iter().map(|&t| one(t)).collect()),
        None => trials.par_iter().map(|&t| one(t)).collect(),
    };

    let mut rows = Vec::new();
    let mut log = String::new();
    let mut failures = Vec::new();
    for (trial, res) in results.into_iter().enumerate() {
        match res {
            Ok(out) => {
                rows.extend(out.rows);
                log.push_str(&out.log);
            }
            Err(e) => {
                log::error!("trial {trial} failed: {e}");
                failures.push((trial, e.to_string()));
            }
        }
    }
    let _ = fs::remove_dir(&staging_root);
    let metrics_path = out_dir.join("metrics.csv");
    write_atomic(&metrics_path, &csv_body(&rows)).map_err(io_err(&metrics_path))?;
    let log_path = out_dir.join("messages.jsonl");
    write_atomic(&log_path, &log).map_err(io_err(&log_path))?;
    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        metrics_path,
        rows,
        failures,
    })
}
