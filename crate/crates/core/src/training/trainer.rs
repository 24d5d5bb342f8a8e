use std::collections::BTreeMap;
use std::io::Write;
use std::ops::Range;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, OptimizerState, DEFAULT_CLIP, DEFAULT_LR};
use super::loss::{joint_loss, LossKind};
use super::windows::{build_window, window_starts, WindowSample};
use crate::graphs::{sample_mask_with, MaskMode, MaskPlan};
use crate::ingest::DemandTensor;
use crate::model::checkpoint::{self, parse_pairs, state_from_tensors, state_tensors, NamedTensor};
use crate::model::{backward, forward, ForwardConfig, ModelState, Scene};
use crate::{Error, Result};

/// Optimizer, schedule and masking settings around a [`ForwardConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ForwardConfig,
    pub epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub mask: MaskMode,
    pub loss: LossKind,
    pub seed: u64,
    /// Windows per optimizer step, evaluated on this many threads.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ForwardConfig::default(),
            epochs: 50,
            patience: 15,
            lr: DEFAULT_LR,
            clip_norm: DEFAULT_CLIP,
            mask: MaskMode::Count(6),
            loss: LossKind::L1,
            seed: 0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.epochs == 0 || self.workers == 0 || self.patience == 0 {
            return Err(Error::Config("epochs, patience and workers must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("learning rate and clip norm must be positive".into()));
        }
        Ok(())
    }
}

/// Everything the trainer reads: one node set over the full time axis.
#[derive(Debug, Clone)]
pub struct TrainSet<'a> {
    pub demand: &'a DemandTensor,
    /// `T × d_u`.
    pub covariates: &'a Array2<f64>,
    /// `N × D_llm`.
    pub encodings: &'a Array2<f64>,
    pub adjacency: &'a Array2<f64>,
    pub train: Range<usize>,
    pub val: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: f64,
    pub val_rmse: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    Completed,
    EarlyStopped,
    /// A non-finite loss or gradient; parameters are the last good ones.
    Diverged { epoch: usize, message: String },
}

/// Resumable training progress.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub params: ModelState<f32>,
    pub opt: OptimizerState<f32>,
    pub best: ModelState<f32>,
    pub best_val: f64,
    pub since_best: usize,
    /// Epochs completed.
    pub epoch: usize,
    pub log: Vec<EpochRecord>,
}

impl TrainerState {
    pub fn new(cfg: &TrainConfig, llm_dim: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let params = ModelState::<f32>::init(&cfg.model, llm_dim, &mut rng)?;
        let mut opt = OptimizerState::new(&params, cfg.lr);
        opt.clip_norm = cfg.clip_norm;
        Ok(Self { best: params.clone(), params, opt, best_val: f64::INFINITY, since_best: 0, epoch: 0, log: Vec::new() })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation parameters.
    pub model: ModelState<f32>,
    pub stop: StopReason,
    pub state: TrainerState,
}

impl TrainOutcome {
    pub fn log(&self) -> &[EpochRecord] {
        &self.state.log
    }
}

const VAL_STREAM_SALT: u64 = 0x7a11_da7e_5eed_0001;

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

struct StepResult {
    loss: f64,
    grads: ModelState<f32>,
}

fn window_step(
    params: &ModelState<f32>,
    cfg: &TrainConfig,
    scene: &Scene<f32>,
    sample: &WindowSample<f32>,
    plan: &MaskPlan,
) -> Result<StepResult> {
    let out = forward(params, &cfg.model, scene, &sample.input)?;
    let (report, drecon, dpred) = joint_loss(cfg.loss, &out.recon, &out.pred, &sample.targets.view(), plan)?;
    if !report.total.is_finite() {
        return Err(Error::Numerical("non-finite training loss".into()));
    }
    let grads = backward(params, &cfg.model, scene, &out.tape, &dpred, &drecon)?;
    Ok(StepResult { loss: report.total, grads })
}

fn draw_sample(
    set: &TrainSet<'_>,
    cfg: &TrainConfig,
    start: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(WindowSample<f32>, MaskPlan)> {
    let m = &cfg.model;
    let plan = sample_mask_with(set.demand.n_nodes(), cfg.mask, (start, start + m.window), rng)?;
    let sample = build_window(set.demand, set.covariates, start, m.window, m.horizon, |i| plan.is_masked(i))?;
    Ok((sample, plan))
}

/// Forecast MAE and RMSE over the validation windows, each with a mask drawn
/// from a generator that restarts identically every call.
pub fn validate(params: &ModelState<f32>, cfg: &TrainConfig, set: &TrainSet<'_>, scene: &Scene<f32>) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ VAL_STREAM_SALT);
    let (mut abs, mut sq, mut count) = (0.0, 0.0, 0usize);
    for start in window_starts(set.val.clone(), cfg.model.window, cfg.model.horizon) {
        let (sample, _) = draw_sample(set, cfg, start, &mut rng)?;
        let out = forward(params, &cfg.model, scene, &sample.input)?;
        let t = &sample.targets;
        let dx = cfg.model.d_x;
        for ((i, c), &p) in out.pred.indexed_iter() {
            if t.future_observed[[i, c / dx]] {
                let e = p as f64 - t.future[[i, c]] as f64;
                abs += e.abs();
                sq += e * e;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Data("validation split has no complete window with observed targets".into()));
    }
    let (mae, rmse) = (abs / count as f64, (sq / count as f64).sqrt());
    if !mae.is_finite() {
        return Err(Error::Numerical("non-finite validation error".into()));
    }
    Ok((mae, rmse))
}

/// Trains from `resume` (or a fresh seeded state) until `cfg.epochs` epochs
/// have completed, patience runs out, or the loss diverges. `on_epoch` sees
/// the state after every epoch.
pub fn train(
    set: &TrainSet<'_>,
    cfg: &TrainConfig,
    resume: Option<TrainerState>,
    mut on_epoch: impl FnMut(&TrainerState) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = set.demand.n_nodes();
    if set.encodings.nrows() != n || set.adjacency.dim() != (n, n) {
        return Err(Error::Shape("demand, encodings and graph disagree on node count".into()));
    }
    if set.demand.n_features() != cfg.model.d_x || set.covariates.ncols() != cfg.model.d_u {
        return Err(Error::Shape("demand or covariate width does not match the model configuration".into()));
    }
    let span = cfg.model.window + cfg.model.horizon;
    if set.train.len() <= span {
        return Err(Error::Data(format!(
            "training split has {} steps; need more than window + horizon = {span}",
            set.train.len()
        )));
    }
    if let MaskMode::Count(k) = cfg.mask {
        if k > 0 && k >= n {
            return Err(Error::Config(format!("cannot mask {k} of {n} training nodes")));
        }
    }
    let scene = Scene::<f32>::new(set.encodings, set.adjacency, cfg.model.neighbor_order)?;
    let mut state = match resume {
        Some(s) => {
            s.params.check_shapes(&cfg.model, set.encodings.ncols())?;
            s
        }
        None => TrainerState::new(cfg, set.encodings.ncols())?,
    };
    let train_starts = window_starts(set.train.clone(), cfg.model.window, cfg.model.horizon);

    while state.epoch < cfg.epochs {
        if state.since_best >= cfg.patience {
            return Ok(finish(state, StopReason::EarlyStopped));
        }
        let epoch = state.epoch;
        let clock = Instant::now();
        let mut rng = epoch_rng(cfg.seed, epoch);
        let mut order = train_starts.clone();
        order.shuffle(&mut rng);
        let before = state.params.clone();
        let mut loss_sum = 0.0;
        let mut failure = None;
        for batch in order.chunks(cfg.workers) {
            let drawn = batch.iter().map(|&s| draw_sample(set, cfg, s, &mut rng)).collect::<Result<Vec<_>>>()?;
            let results: Vec<Result<StepResult>> = if drawn.len() == 1 {
                vec![window_step(&state.params, cfg, &scene, &drawn[0].0, &drawn[0].1)]
            } else {
                let params = &state.params;
                let scene = &scene;
                std::thread::scope(|s| {
                    let handles: Vec<_> = drawn
                        .iter()
                        .map(|(sample, plan)| s.spawn(move || window_step(params, cfg, scene, sample, plan)))
                        .collect();
                    handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
                })
            };
            let mut grads: Option<ModelState<f32>> = None;
            for r in results {
                match r {
                    Ok(r) => {
                        loss_sum += r.loss;
                        match grads.as_mut() {
                            None => grads = Some(r.grads),
                            Some(g) => g.add_scaled(&r.grads, 1.0),
                        }
                    }
                    Err(Error::Numerical(msg)) => failure = Some(msg),
                    Err(e) => return Err(e),
                }
            }
            if failure.is_some() {
                break;
            }
            let mut grads = grads.expect("non-empty batch");
            if batch.len() > 1 {
                let inv = 1.0 / batch.len() as f32;
                for t in grads.tensors_mut() {
                    t.data.iter_mut().for_each(|g| *g *= inv);
                }
            }
            if let Err(e) = adam_step(&mut state.opt, &mut state.params, &grads)
                .and_then(|_| state.params.check_finite("parameter"))
            {
                failure = Some(e.to_string());
                break;
            }
        }
        let val = match failure {
            Some(msg) => Err(msg),
            None => validate(&state.params, cfg, set, &scene).map_err(|e| e.to_string()),
        };
        let (val_mae, val_rmse) = match val {
            Ok(v) => v,
            Err(message) => {
                state.params = before;
                return Ok(finish(state, StopReason::Diverged { epoch, message }));
            }
        };
        state.log.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / order.len() as f64,
            val_mae,
            val_rmse,
            seconds: clock.elapsed().as_secs_f64(),
        });
        if val_mae < state.best_val {
            state.best_val = val_mae;
            state.best = state.params.clone();
            state.since_best = 0;
        } else {
            state.since_best += 1;
        }
        state.epoch = epoch + 1;
        on_epoch(&state)?;
    }
    let stop = if state.since_best >= cfg.patience { StopReason::EarlyStopped } else { StopReason::Completed };
    Ok(finish(state, stop))
}

fn finish(state: TrainerState, stop: StopReason) -> TrainOutcome {
    let model = if state.best_val.is_finite() { state.best.clone() } else { state.params.clone() };
    TrainOutcome { model, stop, state }
}

pub fn write_metric_log<W: Write>(mut w: W, log: &[EpochRecord]) -> Result<()> {
    writeln!(w, "epoch,train_loss,val_mae,val_rmse,seconds")?;
    for r in log {
        writeln!(w, "{},{},{},{},{:.3}", r.epoch, r.train_loss, r.val_mae, r.val_rmse, r.seconds)?;
    }
    Ok(())
}

fn prefixed(prefix: &str, state: &ModelState<f32>) -> Vec<NamedTensor> {
    state_tensors(state)
        .into_iter()
        .map(|mut t| {
            t.name = format!("{prefix}{}", t.name);
            t
        })
        .collect()
}

fn unprefixed(prefix: &str, tensors: &[NamedTensor]) -> Vec<NamedTensor> {
    tensors
        .iter()
        .filter_map(|t| t.name.strip_prefix(prefix).map(|n| NamedTensor { name: n.to_string(), ..t.clone() }))
        .collect()
}

/// Saves everything needed to resume: an `ICKP` file holding parameters,
/// Adam moments and the best parameters, the model `.cfg` sidecar, and a
/// `.progress` text file with counters and the metric log.
pub fn save_trainer(path: impl AsRef<Path>, state: &TrainerState, cfg: &TrainConfig) -> Result<()> {
    let path = path.as_ref();
    let mut tensors = prefixed("param.", &state.params);
    tensors.extend(prefixed("adam.m.", &state.opt.m));
    tensors.extend(prefixed("adam.v.", &state.opt.v));
    tensors.extend(prefixed("best.", &state.best));
    checkpoint::write_tensors(std::io::BufWriter::new(std::fs::File::create(path)?), &tensors)?;
    checkpoint::write_config(std::fs::File::create(checkpoint::sidecar_path(path))?, &cfg.model)?;
    let mut p = std::io::BufWriter::new(std::fs::File::create(progress_path(path))?);
    writeln!(p, "epoch={}", state.epoch)?;
    writeln!(p, "step={}", state.opt.step)?;
    writeln!(p, "best_val={}", state.best_val)?;
    writeln!(p, "since_best={}", state.since_best)?;
    writeln!(p, "lr={}", state.opt.lr)?;
    writeln!(p, "clip_norm={}", state.opt.clip_norm)?;
    for (k, r) in state.log.iter().enumerate() {
        writeln!(p, "log.{k:06}={},{},{},{},{}", r.epoch, r.train_loss, r.val_mae, r.val_rmse, r.seconds)?;
    }
    p.flush()?;
    Ok(())
}

fn progress_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".progress");
    s.into()
}

pub fn load_trainer(path: impl AsRef<Path>) -> Result<(TrainerState, ForwardConfig)> {
    let path = path.as_ref();
    let model_cfg = checkpoint::read_config(&std::fs::read_to_string(checkpoint::sidecar_path(path))?)?;
    let tensors = checkpoint::read_tensors(std::io::BufReader::new(std::fs::File::open(path)?))?;
    let part = |prefix: &str| state_from_tensors::<f32>(&model_cfg, &unprefixed(prefix, &tensors));
    let (params, m, v, best) = (part("param.")?, part("adam.m.")?, part("adam.v.")?, part("best.")?);
    let kv: BTreeMap<String, String> = parse_pairs(&std::fs::read_to_string(progress_path(path))?)?;
    let get = |k: &str| kv.get(k).ok_or_else(|| Error::Format(format!("progress file lacks {k}")));
    let bad = |k: &str| Error::Format(format!("malformed {k} in progress file"));
    let num = |k: &str| get(k)?.parse::<f64>().map_err(|_| bad(k));
    let int = |k: &str| get(k)?.parse::<u64>().map_err(|_| bad(k));
    let mut log = Vec::new();
    for (k, v) in kv.iter().filter(|(k, _)| k.starts_with("log.")) {
        let f: Vec<&str> = v.split(',').collect();
        if f.len() != 5 {
            return Err(bad(k));
        }
        let p = |s: &str| s.parse::<f64>().map_err(|_| bad(k));
        log.push(EpochRecord {
            epoch: f[0].parse().map_err(|_| bad(k))?,
            train_loss: p(f[1])?,
            val_mae: p(f[2])?,
            val_rmse: p(f[3])?,
            seconds: p(f[4])?,
        });
    }
    let mut opt = OptimizerState::new(&params, num("lr")?);
    opt.m = m;
    opt.v = v;
    opt.step = int("step")?;
    opt.clip_norm = num("clip_norm")?;
    let state = TrainerState {
        params,
        opt,
        best,
        best_val: num("best_val")?,
        since_best: int("since_best")? as usize,
        epoch: int("epoch")? as usize,
        log,
    };
    Ok((state, model_cfg))
}
