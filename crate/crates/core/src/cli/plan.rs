//! Fully resolved commands. A plan carries every setting and seed, so executing it twice gives
//! the same artifacts; manifests store plans and `replay` executes them again.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{make_synthetic_texture_set, scan_category, TextureSpec};
use crate::error::{Error, Result};
use crate::evaluation::{
    calibrate_threshold, evaluate_category, threshold_is_feasible, validation_heatmaps, MetricsReport,
};
use crate::image::{load_rgb, save_png};
use crate::inference::{predict, Connectivity, PostprocessConfig};
use crate::model::{ModelConfig, Network};
use crate::trainer::{train, TrainConfig};

pub const RUN_CONFIG_FILE: &str = "run_config.toml";
pub const THRESHOLD_FILE: &str = "threshold.json";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Model and training settings of a run, as written next to its checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(RUN_CONFIG_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Config(format!("{} is not a training run ({e})", run_dir.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostSettings {
    pub sigma: f64,
    pub min_area: usize,
    pub connectivity: Connectivity,
}

impl PostSettings {
    /// Smoothing scaled with the side; minimum area 16 px at side 128, scaled with the area.
    pub fn defaults(side: usize) -> Self {
        let min_area = ((16.0 * (side as f64 / 128.0).powi(2)).round() as usize).max(1);
        Self { sigma: PostprocessConfig::default_sigma(side), min_area, connectivity: Connectivity::Eight }
    }

    pub fn with_threshold(self, threshold: f32) -> PostprocessConfig {
        PostprocessConfig { sigma: self.sigma, threshold, min_area: self.min_area, connectivity: self.connectivity }
    }
}

/// Calibration result stored beside the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFile {
    pub threshold: f32,
    pub sigma: f64,
    pub min_area: usize,
    pub connectivity: Connectivity,
    pub validation_images: usize,
}

impl ThresholdFile {
    pub fn load(run_dir: &Path) -> Result<Option<Self>> {
        let path = run_dir.join(THRESHOLD_FILE);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_slice(&fs::read(path)?)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthPlan {
    pub spec: TextureSpec,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub data: PathBuf,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratePlan {
    pub data: PathBuf,
    pub post: PostSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferPlan {
    pub inputs: Vec<PathBuf>,
    pub post: PostSettings,
    /// Explicit threshold; otherwise the calibrated one is read from the run directory.
    pub threshold: Option<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPlan {
    pub data: PathBuf,
    pub post: PostSettings,
    pub threshold: Option<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Plan {
    Synth(SynthPlan),
    Train(TrainPlan),
    Calibrate(CalibratePlan),
    Infer(InferPlan),
    Eval(EvalPlan),
}

fn load_model(run_dir: &Path) -> Result<Network> {
    let path = run_dir.join(FINAL_CHECKPOINT);
    if !path.exists() {
        return Err(Error::Config(format!("no checkpoint at {}; run `ssae train` first", path.display())));
    }
    Network::load(&path)
}

fn relative(run_dir: &Path, path: &Path) -> String {
    path.strip_prefix(run_dir).unwrap_or(path).display().to_string()
}

/// Image files named on the command line, with directories expanded to their PNG files.
pub fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

/// File stem for an input's outputs, prefixed with its parent directories when the plain
/// stem was already taken (e.g. `good/003.png` and `scratch/003.png`).
fn output_stem(input: &Path, used: &mut std::collections::HashSet<String>) -> String {
    let name = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut stem = name(input);
    let mut parent = input.parent();
    while used.contains(&stem) {
        match parent.filter(|p| p.file_name().is_some()) {
            Some(dir) => {
                stem = format!("{}_{stem}", dir.file_name().unwrap().to_string_lossy());
                parent = dir.parent();
            }
            None => stem = format!("{stem}_"),
        }
    }
    used.insert(stem.clone());
    stem
}

impl Plan {
    pub fn name(&self) -> &'static str {
        match self {
            Plan::Synth(_) => "synth",
            Plan::Train(_) => "train",
            Plan::Calibrate(_) => "calibrate",
            Plan::Infer(_) => "infer",
            Plan::Eval(_) => "eval",
        }
    }

    /// Run the plan with `run_dir` as the output directory. Returns written artifacts
    /// relative to it.
    pub fn execute(&self, run_dir: &Path) -> Result<Vec<String>> {
        fs::create_dir_all(run_dir)?;
        match self {
            Plan::Synth(p) => {
                let index = make_synthetic_texture_set(&p.spec, p.n_train, p.n_test, p.seed, run_dir)?;
                println!(
                    "wrote {} training and {} test images to {}",
                    index.train.len(),
                    index.test.len(),
                    run_dir.display()
                );
                Ok(vec!["train".into(), "test".into(), "ground_truth".into()])
            }
            Plan::Train(p) => {
                let index = scan_category(&p.data)?;
                fs::write(
                    run_dir.join(RUN_CONFIG_FILE),
                    toml::to_string(&p.config).map_err(|e| Error::Config(e.to_string()))?,
                )?;
                let (_, state) = train(&index, &p.config.model, &p.config.train, Some(run_dir))?;
                println!(
                    "trained {} steps (best validation {:?} at step {:?}){}",
                    state.step,
                    state.best_criterion,
                    state.best_step,
                    if state.stopped_early { ", stopped early" } else { "" }
                );
                let mut artifacts = vec![RUN_CONFIG_FILE.to_string(), "loss.csv".into(), "audit.csv".into()];
                artifacts.extend(state.checkpoints.iter().map(|c| relative(run_dir, c)));
                Ok(artifacts)
            }
            Plan::Calibrate(p) => {
                let net = load_model(run_dir)?;
                let run = RunConfig::load(run_dir)?;
                let index = run.train.holdout(&scan_category(&p.data)?)?;
                let val = validation_heatmaps(&net, &index, p.post.sigma)?;
                let threshold = calibrate_threshold(&val, p.post.min_area, p.post.connectivity)?;
                if !threshold_is_feasible(&val, threshold, p.post.min_area, p.post.connectivity) {
                    return Err(Error::Metric("calibrated threshold violates the area condition".into()));
                }
                let file = ThresholdFile {
                    threshold,
                    sigma: p.post.sigma,
                    min_area: p.post.min_area,
                    connectivity: p.post.connectivity,
                    validation_images: val.len(),
                };
                fs::write(run_dir.join(THRESHOLD_FILE), serde_json::to_vec_pretty(&file)?)?;
                println!("threshold {threshold} from {} validation images", val.len());
                Ok(vec![THRESHOLD_FILE.into()])
            }
            Plan::Infer(p) => {
                let net = load_model(run_dir)?;
                let threshold = match p.threshold {
                    Some(t) => t,
                    None => ThresholdFile::load(run_dir)?
                        .ok_or_else(|| {
                            Error::Config("no calibrated threshold: run `ssae calibrate` first or pass --threshold".into())
                        })?
                        .threshold,
                };
                let post = p.post.with_threshold(threshold);
                let dir = run_dir.join("infer");
                fs::create_dir_all(&dir)?;
                let side = net.config().input_side;
                let mut artifacts = Vec::new();
                let mut used = std::collections::HashSet::new();
                for input in expand_inputs(&p.inputs)? {
                    let img = load_rgb(&input)?;
                    let x = if img.height() == side && img.width() == side { img } else { img.resize(side, side) };
                    let pred = predict(&net, &x, &post)?;
                    let stem = output_stem(&input, &mut used);
                    let outs = [
                        format!("{stem}_reconstruction.png"),
                        format!("{stem}_heatmap.png"),
                        format!("{stem}_heatmap.npy"),
                        format!("{stem}_segmentation.png"),
                        format!("{stem}_components.json"),
                    ];
                    save_png(&pred.reconstruction, &dir.join(&outs[0]))?;
                    pred.heatmap.save_viridis(&dir.join(&outs[1]))?;
                    pred.heatmap.save_npy(&dir.join(&outs[2]))?;
                    pred.detection.mask.save_png(&dir.join(&outs[3]))?;
                    fs::write(dir.join(&outs[4]), serde_json::to_vec_pretty(&pred.detection)?)?;
                    println!(
                        "{}: {} (score {:.4}, {} component(s))",
                        input.display(),
                        if pred.detection.anomalous { "anomalous" } else { "normal" },
                        pred.detection.score,
                        pred.detection.components.len()
                    );
                    artifacts.extend(outs.iter().map(|o| format!("infer/{o}")));
                }
                Ok(artifacts)
            }
            Plan::Eval(p) => {
                let net = load_model(run_dir)?;
                let run = RunConfig::load(run_dir)?;
                let index = run.train.holdout(&scan_category(&p.data)?)?;
                let threshold = match p.threshold {
                    Some(t) => Some(t),
                    None => ThresholdFile::load(run_dir)?.map(|f| f.threshold),
                };
                let row = evaluate_category(&net, &index, p.post.sigma, p.post.min_area, threshold, p.post.connectivity)?;
                let report = MetricsReport { rows: vec![row] };
                report.write_csv(&run_dir.join("metrics.csv"))?;
                let json = serde_json::json!({ "rows": report.rows, "mean": report.averages() });
                fs::write(run_dir.join("metrics.json"), serde_json::to_vec_pretty(&json)?)?;
                print!("{report}");
                Ok(vec!["metrics.csv".into(), "metrics.json".into()])
            }
        }
    }
}
