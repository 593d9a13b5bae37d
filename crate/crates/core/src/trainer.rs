//! Self-supervised optimisation: sample clean images, distort them on the fly, minimise the
//! configured objective over a progressive schedule of input sides.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{augment, AugmentationPolicy, DatasetIndex, Split};
use crate::distortion::{generate_training_pair, DistortionConfig, DistortionSample};
use crate::error::{Error, Result};
use crate::image::{load_rgb, ImageTensor};
use crate::model::{ModelConfig, Network};
use crate::nn::{Adam, AdamConfig, Tensor};
use crate::objectives::{self, batch_loss, ObjectiveConfig, ObjectiveSample, Variant};
use crate::seed;

pub const CONFIG_VERSION: u32 = 1;

const STREAM_BATCH: u64 = 1;
const STREAM_ORDER: u64 = 2;
const STREAM_HOLDOUT: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub side: usize,
    pub steps: u64,
}

/// Parse `64:500,128:500`.
pub fn parse_schedule(text: &str) -> Result<Vec<Stage>> {
    text.split(',')
        .map(|part| {
            let (side, steps) = part
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("schedule entry '{part}' is not side:steps")))?;
            let parse = |s: &str| s.trim().parse::<u64>().map_err(|_| Error::Config(format!("bad number '{s}' in schedule")));
            Ok(Stage { side: parse(side)? as usize, steps: parse(steps)? })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStopping {
    /// Consecutive non-improving validations tolerated before stopping.
    pub patience: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub version: u32,
    pub objective: ObjectiveConfig,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub schedule: Vec<Stage>,
    /// Fixed distortion settings; when absent the defaults are scaled to each stage's side.
    pub distortion: Option<DistortionConfig>,
    pub augmentation: AugmentationPolicy,
    pub validation_fraction: f64,
    /// Steps between validations (validation also runs at the end of every stage).
    pub eval_every: u64,
    pub early_stopping: Option<EarlyStopping>,
    /// Return the best-validation weights instead of the last ones.
    pub keep_best: bool,
    pub seed: u64,
    pub validation_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            objective: ObjectiveConfig::default(),
            optimizer: AdamConfig::default(),
            batch_size: 8,
            schedule: vec![Stage { side: 128, steps: 1000 }, Stage { side: 256, steps: 1000 }, Stage { side: 512, steps: 1000 }],
            distortion: None,
            augmentation: AugmentationPolicy::identity(),
            validation_fraction: 0.1,
            eval_every: 100,
            early_stopping: None,
            keep_best: false,
            seed: 0,
            validation_seed: 1,
        }
    }
}

impl TrainConfig {
    /// Defaults for an objective; V3 keeps the best checkpoint and stops early.
    pub fn for_objective(objective: ObjectiveConfig) -> Self {
        let v3 = objective.variant == Variant::V3;
        Self {
            objective,
            early_stopping: v3.then_some(EarlyStopping { patience: 5 }),
            keep_best: v3,
            ..Self::default()
        }
    }

    pub fn total_steps(&self) -> u64 {
        self.schedule.iter().map(|s| s.steps).sum()
    }

    pub fn final_side(&self) -> usize {
        self.schedule.last().map(|s| s.side).unwrap_or(0)
    }

    /// Side in effect at a (zero-based) step.
    pub fn side_at(&self, step: u64) -> usize {
        let mut end = 0;
        for s in &self.schedule {
            end += s.steps;
            if step < end {
                return s.side;
            }
        }
        self.final_side()
    }

    /// The index with this run's validation images held out of the training split. Indices that
    /// already carry a validation split are returned unchanged.
    pub fn holdout(&self, index: &DatasetIndex) -> Result<DatasetIndex> {
        if index.validation.is_empty() && self.validation_fraction > 0.0 {
            index.clone().with_holdout(self.validation_fraction, seed::derive(self.seed, &[STREAM_HOLDOUT]))
        } else {
            Ok(index.clone())
        }
    }

    pub fn distortion_for(&self, side: usize) -> DistortionConfig {
        self.distortion.clone().unwrap_or_else(|| DistortionConfig::for_side(side))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!("unsupported config version {}", self.version)));
        }
        self.objective.validate()?;
        self.augmentation.validate()?;
        if self.schedule.is_empty() {
            return Err(Error::Config("schedule must have at least one stage".into()));
        }
        for (i, s) in self.schedule.iter().enumerate() {
            if s.side == 0 || s.side % 8 != 0 || s.steps == 0 {
                return Err(Error::Config(format!(
                    "stage {i}: side {} must be a positive multiple of 8 and steps positive",
                    s.side
                )));
            }
            if i > 0 && s.side < self.schedule[i - 1].side {
                return Err(Error::Config("schedule sides must be non-decreasing".into()));
            }
            self.distortion_for(s.side).validate((s.side, s.side))?;
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("batch size and eval interval must be positive".into()));
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!("validation fraction {} outside [0, 1)", self.validation_fraction)));
        }
        if self.seed > seed::MAX || self.validation_seed > seed::MAX {
            return Err(Error::Config(format!("seeds must not exceed {}", seed::MAX)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub side: usize,
    pub train_loss: f64,
    pub val_criterion: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Number of completed optimisation steps.
    pub step: u64,
    pub side: usize,
    pub best_criterion: Option<f64>,
    pub best_step: Option<u64>,
    pub stale_evaluations: u32,
    pub stopped_early: bool,
    pub checkpoints: Vec<PathBuf>,
    pub history: Vec<LogRow>,
    /// Training batches whose provenance was checked.
    pub audited_batches: u64,
}

impl TrainState {
    pub fn write_loss_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["step", "side", "train_loss", "val_criterion"])?;
        for row in &self.history {
            w.write_record([
                row.step.to_string(),
                row.side.to_string(),
                row.train_loss.to_string(),
                row.val_criterion.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One optimisation step on prepared samples. Returns the mean loss before the update.
pub fn train_step(
    net: &mut Network,
    adam: &mut Adam,
    objective: &ObjectiveConfig,
    samples: &[DistortionSample],
) -> Result<f64> {
    let inputs: Vec<&ImageTensor> = samples.iter().map(|s| &s.distorted).collect();
    let batch = Tensor::from_images(&inputs)?;
    let recon = net.forward_train(&batch)?;
    let targets: Vec<ObjectiveSample> = samples
        .iter()
        .map(|s| ObjectiveSample { target: &s.original, distorted: &s.distorted, mask: &s.mask })
        .collect();
    let (loss, grad) = batch_loss(objective, &recon, &targets)?;
    if !loss.is_finite() {
        return Ok(loss);
    }
    net.zero_grad();
    net.backward(&grad);
    adam.update(&mut net.params_mut());
    Ok(loss)
}

fn resized(images: &[ImageTensor], side: usize) -> Vec<ImageTensor> {
    images
        .iter()
        .map(|img| if img.height() == side && img.width() == side { img.clone() } else { img.resize(side, side) })
        .collect()
}

/// Validation measure, lower is better. V1 and V2 use the RMS reconstruction error of clean
/// images; V3 uses its own loss on distorted validation images drawn from `validation_seed`.
pub fn validation_criterion(net: &Network, val: &[ImageTensor], cfg: &TrainConfig) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let mut total = 0.0;
    for (i, x) in val.iter().enumerate() {
        total += match cfg.objective.variant {
            Variant::V1 | Variant::V2 => {
                let r = net.forward_any_side(&Tensor::from_images(&[x])?)?.to_image(0);
                let sq: f64 = r.as_slice().iter().zip(x.as_slice()).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
                (sq / x.as_slice().len() as f64).sqrt()
            }
            Variant::V3 => {
                let dcfg = cfg.distortion_for(x.height());
                let s = generate_training_pair(x, &dcfg, seed::derive(cfg.validation_seed, &[i as u64]))?;
                let r = net.forward_any_side(&Tensor::from_images(&[&s.distorted])?)?.to_image(0);
                objectives::evaluate(&cfg.objective, &r, &s.original, &s.distorted, &s.mask)?.loss
            }
        };
    }
    Ok(total / val.len() as f64)
}

/// Resumable training loop.
pub struct Trainer {
    pub net: Network,
    pub adam: Adam,
    pub cfg: TrainConfig,
    pub state: TrainState,
    index: DatasetIndex,
    train_images: Vec<ImageTensor>,
    val_images: Vec<ImageTensor>,
    best: Option<Network>,
}

impl Trainer {
    pub fn new(index: &DatasetIndex, model: &ModelConfig, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        model.validate()?;
        if model.input_side != cfg.final_side() {
            return Err(Error::Config(format!(
                "model input side {} differs from the final schedule side {}",
                model.input_side,
                cfg.final_side()
            )));
        }
        let net = Network::build(model)?;
        let adam = Adam::new(cfg.optimizer);
        Self::assemble(index, net, adam, cfg, TrainState::default())
    }

    fn assemble(index: &DatasetIndex, net: Network, adam: Adam, cfg: TrainConfig, state: TrainState) -> Result<Self> {
        let index = cfg.holdout(index)?;
        if index.train.is_empty() {
            return Err(Error::Precondition("training split is empty".into()));
        }
        let load = |split: Split| index.records(split).iter().map(|r| load_rgb(&r.image)).collect::<Result<Vec<_>>>();
        let train_images = load(Split::Train)?;
        let val_images = load(Split::Validation)?;
        Ok(Self { net, adam, cfg, state, index, train_images, val_images, best: None })
    }

    pub fn index(&self) -> &DatasetIndex {
        &self.index
    }

    /// Image indices of the batch at `step`: epoch-wise seeded permutations, so the order
    /// depends only on `(seed, step)`.
    fn batch_indices(&self, step: u64) -> Vec<usize> {
        let n = self.train_images.len() as u64;
        let b = self.cfg.batch_size as u64;
        let mut cached: Option<(u64, Vec<usize>)> = None;
        (0..b)
            .map(|j| {
                let pos = step * b + j;
                let epoch = pos / n;
                if cached.as_ref().map(|c| c.0) != Some(epoch) {
                    let mut order: Vec<usize> = (0..n as usize).collect();
                    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(self.cfg.seed, &[STREAM_ORDER, epoch])));
                    cached = Some((epoch, order));
                }
                cached.as_ref().unwrap().1[(pos % n) as usize]
            })
            .collect()
    }

    fn audit(&mut self, indices: &[usize], step: u64, log: Option<&mut csv::Writer<fs::File>>) -> Result<()> {
        let mut log = log;
        for &i in indices {
            let rec = &self.index.train[i];
            if rec.split != Split::Train {
                return Err(Error::Precondition(format!(
                    "step {step}: {} from the {:?} split reached a training batch",
                    rec.image.display(),
                    rec.split
                )));
            }
            if let Some(w) = log.as_deref_mut() {
                w.write_record([step.to_string(), rec.image.display().to_string(), "train".into()])?;
            }
        }
        self.state.audited_batches += 1;
        Ok(())
    }

    fn evaluate(&mut self, side: usize) -> Result<Option<f64>> {
        if self.val_images.is_empty() {
            return Ok(None);
        }
        let val = resized(&self.val_images, side);
        let c = validation_criterion(&self.net, &val, &self.cfg)?;
        // the best checkpoint only competes within the final input side
        let comparable = side == self.cfg.final_side();
        if comparable {
            if self.state.best_criterion.is_none_or(|b| c < b) {
                self.state.best_criterion = Some(c);
                self.state.best_step = Some(self.state.step);
                self.state.stale_evaluations = 0;
                self.best = Some(self.net.clone());
            } else {
                self.state.stale_evaluations += 1;
            }
        }
        Ok(Some(c))
    }

    /// Run until the schedule ends, early stopping triggers, or `stop_at` steps are done.
    /// Artifacts go to `out` when given.
    pub fn run(&mut self, out: Option<&Path>, stop_at: Option<u64>) -> Result<()> {
        let total = self.cfg.total_steps();
        let stop_at = stop_at.unwrap_or(total).min(total);
        let mut audit_log = match out {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                let path = dir.join("audit.csv");
                let fresh = !path.exists() || self.state.step == 0;
                let file = fs::OpenOptions::new().create(true).append(!fresh).write(true).truncate(fresh).open(&path)?;
                let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
                if fresh {
                    w.write_record(["step", "image", "split"])?;
                }
                Some(w)
            }
            None => None,
        };
        let mut images_side = 0;
        let mut stage_images = Vec::new();
        while self.state.step < stop_at && !self.state.stopped_early {
            let step = self.state.step;
            let side = self.cfg.side_at(step);
            if side != images_side {
                stage_images = resized(&self.train_images, side);
                images_side = side;
                log::info!("step {step}: input side {side}");
            }
            self.state.side = side;
            let batch_seed = seed::derive(self.cfg.seed, &[STREAM_BATCH, step]);
            let indices = self.batch_indices(step);
            self.audit(&indices, step, audit_log.as_mut())?;
            let dcfg = self.cfg.distortion_for(side);
            let samples = indices
                .iter()
                .enumerate()
                .map(|(j, &i)| {
                    let x = augment(&stage_images[i], &self.cfg.augmentation, seed::derive(batch_seed, &[j as u64, 0]))?;
                    generate_training_pair(&x, &dcfg, seed::derive(batch_seed, &[j as u64, 1]))
                })
                .collect::<Result<Vec<_>>>()?;
            let loss = train_step(&mut self.net, &mut self.adam, &self.cfg.objective, &samples)?;
            if !loss.is_finite() {
                if let Some(dir) = out {
                    let snapshot = serde_json::json!({ "step": step, "batch_seed": batch_seed, "loss": loss.to_string(), "side": side });
                    fs::write(dir.join("nonfinite.json"), serde_json::to_vec_pretty(&snapshot)?)?;
                    if let Some(s) = samples.first() {
                        s.save_triptych(&dir.join("nonfinite_sample.png"))?;
                    }
                }
                return Err(Error::NonFinite { step, batch_seed });
            }
            self.state.step += 1;
            let stage_end = self.cfg.side_at(self.state.step) != side || self.state.step == total;
            let val = if self.state.step.is_multiple_of(self.cfg.eval_every) || stage_end { self.evaluate(side)? } else { None };
            self.state.history.push(LogRow { step, side, train_loss: loss, val_criterion: val });
            if step.is_multiple_of(50) || val.is_some() {
                log::info!("step {step} side {side} loss {loss:.6} val {val:?}");
            }
            if stage_end {
                if let Some(dir) = out {
                    let path = dir.join(format!("stage{}_side{side}.ckpt", self.stage_number(step)));
                    self.net.save(&path)?;
                    self.state.checkpoints.push(path);
                }
            }
            if let Some(es) = self.cfg.early_stopping {
                if self.state.stale_evaluations >= es.patience {
                    log::info!("early stop at step {} (best {:?} at {:?})", self.state.step, self.state.best_criterion, self.state.best_step);
                    self.state.stopped_early = true;
                }
            }
        }
        if let Some(w) = audit_log.as_mut() {
            w.flush()?;
        }
        Ok(())
    }

    fn stage_number(&self, step: u64) -> usize {
        let mut end = 0;
        for (i, s) in self.cfg.schedule.iter().enumerate() {
            end += s.steps;
            if step < end {
                return i;
            }
        }
        self.cfg.schedule.len() - 1
    }

    /// Everything needed to continue training bit-for-bit.
    pub fn to_resume_checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = self.net.to_checkpoint();
        ckpt.kind = "training".into();
        for (i, (m, v)) in self.adam.first.iter().zip(&self.adam.second).enumerate() {
            ckpt.tensors.push((format!("adam.first.{i}"), m.clone()));
            ckpt.tensors.push((format!("adam.second.{i}"), v.clone()));
        }
        if let Some(best) = &self.best {
            for (k, v) in best.state_dict() {
                ckpt.tensors.push((format!("best.{k}"), v));
            }
        }
        ckpt.extra = serde_json::json!({
            "config": self.cfg,
            "state": self.state,
            "adam_step": self.adam.step,
        });
        Ok(ckpt)
    }

    pub fn save_resume(&self, path: &Path) -> Result<()> {
        self.to_resume_checkpoint()?.write(path)
    }

    /// Continue from a resume checkpoint. The stored training config is used.
    pub fn resume(index: &DatasetIndex, path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::read(path)?;
        if ckpt.kind != "training" {
            return Err(Error::Checkpoint(format!("{} holds '{}' data, not training state", path.display(), ckpt.kind)));
        }
        let cfg: TrainConfig = serde_json::from_value(ckpt.extra["config"].clone())?;
        let state: TrainState = serde_json::from_value(ckpt.extra["state"].clone())?;
        let net = Network::from_checkpoint(&ckpt)?;
        let mut adam = Adam::new(cfg.optimizer);
        adam.step = ckpt.extra["adam_step"].as_u64().unwrap_or(0);
        let mut i = 0;
        while let (Some(m), Some(v)) = (ckpt.tensor(&format!("adam.first.{i}")), ckpt.tensor(&format!("adam.second.{i}"))) {
            adam.first.push(m.to_vec());
            adam.second.push(v.to_vec());
            i += 1;
        }
        let best_tensors: Vec<(String, Vec<f32>)> = ckpt
            .tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("best.").map(|k| (k.to_string(), v.clone())))
            .collect();
        let best = if best_tensors.is_empty() {
            None
        } else {
            let mut b = Network::build(&ckpt.model)?;
            b.load_state_dict(&best_tensors)?;
            Some(b)
        };
        let mut t = Self::assemble(index, net, adam, cfg, state)?;
        t.best = best;
        Ok(t)
    }

    /// Final network: best-validation weights when `keep_best` is set and a best exists.
    pub fn finish(self, out: Option<&Path>) -> Result<(Network, TrainState)> {
        let Trainer { net, cfg, mut state, best, .. } = self;
        let chosen = match (cfg.keep_best, best.as_ref()) {
            (true, Some(b)) => b.clone(),
            _ => net,
        };
        if let Some(dir) = out {
            if let Some(b) = &best {
                let path = dir.join("best.ckpt");
                b.save(&path)?;
                state.checkpoints.push(path);
            }
            let path = dir.join("final.ckpt");
            chosen.save(&path)?;
            state.checkpoints.push(path);
            state.write_loss_csv(&dir.join("loss.csv"))?;
        }
        Ok((chosen, state))
    }
}

/// Train from scratch over the whole schedule.
pub fn train(index: &DatasetIndex, model: &ModelConfig, cfg: &TrainConfig, out: Option<&Path>) -> Result<(Network, TrainState)> {
    let mut t = Trainer::new(index, model, cfg.clone())?;
    t.run(out, None)?;
    t.finish(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic_texture_set, TextureSpec};

    #[test]
    fn schedule_parsing_and_sides() {
        let s = parse_schedule("64:3, 128:2").unwrap();
        assert_eq!(s, vec![Stage { side: 64, steps: 3 }, Stage { side: 128, steps: 2 }]);
        let cfg = TrainConfig { schedule: s, ..TrainConfig::default() };
        let sides: Vec<usize> = (0..5).map(|i| cfg.side_at(i)).collect();
        assert_eq!(sides, vec![64, 64, 64, 128, 128]);
        assert!(parse_schedule("64").is_err());
        assert!(parse_schedule("64:x").is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let ok = TrainConfig { schedule: parse_schedule("16:1,32:1").unwrap(), ..TrainConfig::default() };
        assert!(ok.validate().is_ok());
        for bad in ["12:1", "32:1,16:1", "16:0"] {
            let cfg = TrainConfig { schedule: parse_schedule(bad).unwrap(), ..ok.clone() };
            assert!(cfg.validate().is_err(), "{bad}");
        }
        let cfg = TrainConfig { objective: ObjectiveConfig::default().with_lambda(1.5), ..ok.clone() };
        assert!(cfg.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..ok }.validate().is_err());
    }

    #[test]
    fn v3_defaults_enable_early_stopping() {
        let v3 = TrainConfig::for_objective(ObjectiveConfig::new(Variant::V3));
        assert!(v3.early_stopping.is_some() && v3.keep_best);
        let v1 = TrainConfig::for_objective(ObjectiveConfig::new(Variant::V1));
        assert!(v1.early_stopping.is_none() && !v1.keep_best);
    }

    #[test]
    fn config_toml_round_trip() {
        let cfg = TrainConfig::for_objective(ObjectiveConfig::new(Variant::V3));
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<TrainConfig>(&text).unwrap(), cfg);
        assert!(toml::from_str::<TrainConfig>("batch_sise = 3").is_err());
    }

    #[test]
    fn one_step_reduces_the_sample_loss() {
        let x = crate::data::synth::render_texture(&TextureSpec::stripes(32), 1);
        let sample = generate_training_pair(&x, &DistortionConfig::for_side(32), 5).unwrap();
        let mut net = Network::build(&ModelConfig { base_width: 4, sdc_stacks: 1, ..ModelConfig::desk(32) }).unwrap();
        let mut adam = Adam::new(AdamConfig { learning_rate: 1e-3, ..AdamConfig::default() });
        let obj = ObjectiveConfig::default();
        let before = train_step(&mut net, &mut adam, &obj, std::slice::from_ref(&sample)).unwrap();
        let after = train_step(&mut net, &mut adam, &obj, std::slice::from_ref(&sample)).unwrap();
        assert!(after < before, "{after} >= {before}");
    }

    #[test]
    fn validation_requires_images() {
        let net = Network::build(&ModelConfig { base_width: 4, sdc_stacks: 1, ..ModelConfig::desk(16) }).unwrap();
        assert!(matches!(validation_criterion(&net, &[], &TrainConfig::default()), Err(Error::EmptyValidation)));
        let x = crate::data::synth::render_texture(&TextureSpec::stripes(16), 2);
        let cfg = TrainConfig::for_objective(ObjectiveConfig::new(Variant::V3));
        let val = [x.clone(), x];
        assert_eq!(validation_criterion(&net, &val, &cfg).unwrap(), validation_criterion(&net, &val, &cfg).unwrap());
    }

    #[test]
    fn training_is_deterministic_and_resumable() {
        let tmp = tempfile::tempdir().unwrap();
        let index = make_synthetic_texture_set(&TextureSpec::stripes(32), 6, 0, 3, &tmp.path().join("stripes")).unwrap();
        let model = ModelConfig { base_width: 4, sdc_stacks: 1, ..ModelConfig::desk(32) };
        let cfg = TrainConfig {
            batch_size: 2,
            schedule: parse_schedule("16:3,32:3").unwrap(),
            eval_every: 2,
            validation_fraction: 0.2,
            ..TrainConfig::default()
        };
        let out = tmp.path().join("run");
        let (_, full) = train(&index, &model, &cfg, Some(&out)).unwrap();
        assert_eq!(full.history.len(), 6);
        assert_eq!(full.audited_batches, 6);
        let sides: Vec<usize> = full.history.iter().map(|r| r.side).collect();
        assert_eq!(sides, vec![16, 16, 16, 32, 32, 32]);
        assert!(out.join("stage0_side16.ckpt").exists() && out.join("final.ckpt").exists());
        let csv = fs::read_to_string(out.join("loss.csv")).unwrap();
        assert_eq!(csv.lines().count(), 7);

        let (_, again) = train(&index, &model, &cfg, None).unwrap();
        assert_eq!(again.history, full.history);

        let mut first = Trainer::new(&index, &model, cfg.clone()).unwrap();
        first.run(None, Some(4)).unwrap();
        let ckpt = tmp.path().join("resume.ckpt");
        first.save_resume(&ckpt).unwrap();
        let mut second = Trainer::resume(&index, &ckpt).unwrap();
        second.run(None, None).unwrap();
        let (_, resumed) = second.finish(None).unwrap();
        assert_eq!(resumed.history, full.history);
    }

    #[test]
    fn mismatched_model_side_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let index = make_synthetic_texture_set(&TextureSpec::stripes(32), 2, 0, 3, &tmp.path().join("s")).unwrap();
        let cfg = TrainConfig { schedule: parse_schedule("32:1").unwrap(), ..TrainConfig::default() };
        assert!(Trainer::new(&index, &ModelConfig::desk(64), cfg).is_err());
    }
}
