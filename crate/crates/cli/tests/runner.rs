use std::path::Path;
use std::process::Command;

use coperc_cli::render::{bev_canvas, render_agent, BACKGROUND};
use coperc_cli::{parse_spec, run_experiment, run_trial, ExperimentSpec, Mode, METRICS_HEADER};
use coperc_core::depth::{gray_level, DepthSource};
use coperc_core::{generate_scene, run_round, Category, FusionStrategy, Models, PipelineConfig, ScenarioConfig};

fn runner() -> Command {
    Command::new(env!("CARGO_BIN_EXE_runner"))
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn small_spec(mode: Mode, trials: usize) -> ExperimentSpec {
    let mut spec = ExperimentSpec::default();
    spec.scenario.seed = 11;
    spec.scenario.n_objects = 6;
    spec.experiment.mode = mode;
    spec.experiment.trials = trials;
    spec.experiment.render = false;
    spec
}

/// Reads a binary 16-bit graymap written by the renderer.
fn read_pgm16(path: &Path) -> (usize, usize, Vec<u16>) {
    let bytes = std::fs::read(path).unwrap();
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        let start = pos;
        while !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(String::from_utf8(bytes[start..pos].to_vec()).unwrap());
        pos += 1;
    }
    assert_eq!(fields[0], "P5");
    assert_eq!(fields[3], "65535");
    let (w, h): (usize, usize) = (fields[1].parse().unwrap(), fields[2].parse().unwrap());
    let data: Vec<u16> = bytes[pos..].chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    assert_eq!(data.len(), w * h);
    (w, h, data)
}

#[test]
fn trial_writes_at_least_three_images() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = small_spec(Mode::Full, 1);
    spec.experiment.render = true;
    let out = run_trial(&spec, 0, Some(dir.path())).unwrap();
    assert!(out.images.len() >= 3, "{:?}", out.images);
    for img in &out.images {
        assert!(std::fs::metadata(img).unwrap().len() > 0, "{}", img.display());
    }
}

#[test]
fn depth_graymap_pixel_probe() {
    let sc = ScenarioConfig { seed: 5, n_objects: 8, ..ScenarioConfig::default() };
    let cfg = PipelineConfig::default();
    let out = run_round(&generate_scene(&sc).unwrap(), &sc, &cfg, &Models::new(&cfg));
    let agent = &out.agents[0];
    let map = agent.depth_map.as_ref().unwrap();
    let idx = map
        .pixels
        .iter()
        .position(|p| p.is_some_and(|p| p.source == DepthSource::EgoProjected))
        .expect("ego LiDAR projects into the image");
    let bin = map.pixels[idx].unwrap().bin;

    let dir = tempfile::tempdir().unwrap();
    render_agent(dir.path(), agent, &[], cfg.bins.n_bins).unwrap();
    let (w, h, data) = read_pgm16(&dir.path().join("agent0_depth.pgm"));
    assert_eq!((w, h), (map.width as usize, map.height as usize));
    let step = 65_535 / cfg.bins.n_bins as u16;
    assert_eq!(data[idx], (bin as u16 + 1) * step);
    assert_eq!(data[idx], gray_level(Some(bin), cfg.bins.n_bins));
    // pixels without a depth stay black
    if let Some(empty) = map.pixels.iter().position(Option::is_none) {
        assert_eq!(data[empty], 0);
    }
}

#[test]
fn all_normal_scene_renders_blank_bev() {
    // ground returns sit below the grid floor, so an empty scene seen by LiDAR alone is all Normal
    let sc = ScenarioConfig { seed: 3, n_agents: 1, n_objects: 0, ..ScenarioConfig::default() };
    let cfg = PipelineConfig { fusion: FusionStrategy::LidarOnly, ..PipelineConfig::default() };
    let out = run_round(&generate_scene(&sc).unwrap(), &sc, &cfg, &Models::new(&cfg));
    let agent = &out.agents[0];
    assert_eq!(agent.fused.count(Category::Normal), cfg.grid.n_cells());
    assert!(agent.detections.is_empty());
    let canvas = bev_canvas(agent, &[]);
    assert!(canvas.pixels.iter().all(|&p| p == BACKGROUND));
}

#[test]
fn camera_missing_everywhere_matches_lidar_only_rows() {
    let mut spec = small_spec(Mode::CameraMissing, 2);
    spec.experiment.missing_agents = vec![0, 1];
    let dir = tempfile::tempdir().unwrap();
    let summary = run_experiment(&spec, dir.path()).unwrap();
    assert!(summary.failures.is_empty());
    for pair in summary.rows.chunks(2) {
        let (missing, reference) = (&pair[0], &pair[1]);
        assert_eq!((missing.variant.as_str(), reference.variant.as_str()), ("camera_missing", "lidar_only"));
        assert_eq!((missing.ap50, missing.ap70, missing.recall), (reference.ap50, reference.ap70, reference.recall));
    }
}

#[test]
fn collab_ablation_rows_are_complete() {
    let spec = small_spec(Mode::CollabAblation, 2);
    let dir = tempfile::tempdir().unwrap();
    let summary = run_experiment(&spec, dir.path()).unwrap();
    assert_eq!(summary.rows.len(), 6);
    let text = std::fs::read_to_string(&summary.metrics_path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert_eq!(header, METRICS_HEADER);
    let width = header.split(',').count();
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), width, "{line}");
        assert!(cells.iter().all(|c| !c.is_empty() && *c != "NaN"), "{line}");
    }
    for trial in 0..2 {
        assert!(dir.path().join(format!("trial_{trial:04}/metrics.csv")).is_file());
        assert!(dir.path().join(format!("trial_{trial:04}/messages.jsonl")).is_file());
    }
    assert!(!dir.path().join(".staging").join("trial_0000").exists());
}

#[test]
fn message_log_is_line_delimited_json() {
    let spec = small_spec(Mode::Full, 1);
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&spec, dir.path()).unwrap();
    let log = std::fs::read_to_string(dir.path().join("messages.jsonl")).unwrap();
    assert!(log.lines().count() > 0);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["elements"].is_u64() && v["phase"].is_string(), "{line}");
    }
}

#[test]
fn worker_pool_matches_sequential_run() {
    let seq = small_spec(Mode::Full, 3);
    let par = ExperimentSpec {
        experiment: coperc_cli::ExperimentSection { workers: Some(3), ..seq.experiment.clone() },
        ..seq.clone()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_experiment(&seq, a.path()).unwrap();
    let rb = run_experiment(&par, b.path()).unwrap();
    assert_eq!(std::fs::read(ra.metrics_path).unwrap(), std::fs::read(rb.metrics_path).unwrap());
}

#[test]
fn config_errors_name_the_field() {
    let err = parse_spec("[experiment]\ntrials = 0\n", Path::new("x.toml")).unwrap_err().to_string();
    assert!(err.contains("x.toml") && err.contains("experiment.trials"), "{err}");
    let err = parse_spec("[scenario]\nn_agents = \"two\"\n", Path::new("x.toml")).unwrap_err().to_string();
    assert!(err.contains("scenario.n_agents"), "{err}");
}

#[test]
fn binary_runs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[scenario]\nn_objects = 6\n[experiment]\nrender = false\n");
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = runner()
            .arg(&cfg)
            .args(["--seed", "21", "--trials", "2", "--mode", "full", "--out"])
            .arg(&out)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
        outputs.push(std::fs::read(out.join("metrics.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs.pop().unwrap()).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(1).unwrap().starts_with("0,21,full,"));
}

#[test]
fn binary_output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[scenario]\nn_objects = 2\n[experiment]\nrender = false\n");
    let env_out = dir.path().join("from_env");
    let status = runner().arg(&cfg).env("COPERC_OUT", &env_out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(env_out.join("metrics.csv").is_file());
}

#[test]
fn binary_exit_code_one_on_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[experiment]\ntrials = 1\nbogus = 3\n");
    let out = runner().arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    let missing = runner().arg(dir.path().join("absent.toml")).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));

    let cfg = write_config(dir.path(), "[experiment]\nrender = false\n");
    let zero = runner().arg(&cfg).args(["--trials", "0"]).output().unwrap();
    assert_eq!(zero.status.code(), Some(1));
}

#[test]
fn binary_exit_code_two_on_trial_failure() {
    let dir = tempfile::tempdir().unwrap();
    // far more objects than the area can hold, so scene generation gives up
    let cfg = write_config(
        dir.path(),
        "[scenario]\nn_objects = 400\narea = [-6.0, 6.0, -6.0, 6.0]\n[experiment]\nrender = false\n",
    );
    let out = runner().arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            coperc_cli::load_spec(&path).unwrap_or_else(|e| panic!("{e}"));
            n += 1;
        }
    }
    assert!(n >= 4);
}
