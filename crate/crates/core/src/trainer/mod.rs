//! Minibatch training with Adam, checkpoints and per-epoch logging.

mod adam;
mod batches;
mod checkpoint;

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use batches::{make_batches, Batch, Segment};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, TrainingMeta,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use voxface_autograd::{Graph, Tensor};

use crate::dataset::{fit_normalizer, AnimTrack, ClipData};
use crate::error::{Error, Result};
use crate::frontend::{FeatureConfig, Normalizer, WINDOW_FRAMES};
use crate::network::{forward_batch, time_major_batch, BlendshapeFrame, ModelConfig, ModelParams, ModelVars, OUTPUT_DIM};
use crate::objectives::{graph_loss, rmse, total_loss, LossConfig};

pub const BEST_CHECKPOINT: &str = "best.a2fm";
pub const FINAL_CHECKPOINT: &str = "final.a2fm";
pub const TRAIN_LOG: &str = "train_log.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub loss: LossConfig,
    pub model: ModelConfig,
    pub features: FeatureConfig,
    pub sequence_chunk: usize,
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 100,
            learning_rate: 1e-4,
            adam: AdamConfig::default(),
            seed: 0,
            loss: LossConfig::default(),
            model: ModelConfig::default(),
            features: FeatureConfig::default(),
            sequence_chunk: 8,
            grad_clip: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.sequence_chunk < 2 {
            return Err(Error::Config(format!(
                "need epochs >= 1, batch_size >= 1, sequence_chunk >= 2 (got {}, {}, {})",
                self.epochs, self.batch_size, self.sequence_chunk
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        self.loss.validate()?;
        self.model.validate()?;
        self.features.validate()?;
        if self.model.input_cols != self.features.coeff_count() || self.model.input_rows != WINDOW_FRAMES {
            return Err(Error::Config(format!(
                "model input {}x{} does not match {WINDOW_FRAMES}x{} feature windows",
                self.model.input_rows,
                self.model.input_cols,
                self.features.coeff_count()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// `NaN` without a validation set.
    pub val_loss: f64,
    pub val_rmse: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_checkpoint: Checkpoint,
    pub best_checkpoint: Checkpoint,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
    pub final_path: PathBuf,
    pub best_path: PathBuf,
    pub log_path: PathBuf,
}

/// Normalized analysis rows and targets of one clip in `f32`.
pub(crate) struct PreparedClip {
    rows: Vec<f32>,
    targets: Vec<f32>,
    len: usize,
}

fn prepare(clips: &[ClipData], normalizer: &Normalizer) -> Result<Vec<PreparedClip>> {
    let mut scratch = Vec::new();
    clips
        .iter()
        .map(|c| {
            normalizer.apply_slice(c.features.rows(), &mut scratch);
            let targets = c
                .track
                .frames()
                .iter()
                .flat_map(|f| f.params().iter().map(|&v| v as f32))
                .collect();
            Ok(PreparedClip {
                rows: scratch.iter().map(|&v| v as f32).collect(),
                targets,
                len: c.len(),
            })
        })
        .collect()
}

struct BatchData {
    input: Tensor<f32>,
    target: Tensor<f32>,
}

fn assemble(clips: &[PreparedClip], batch: &Batch, cols: usize) -> BatchData {
    let mut windows = Vec::with_capacity(batch.frames());
    let mut target = Vec::with_capacity(batch.frames() * OUTPUT_DIM);
    for s in &batch.segments {
        let c = &clips[s.clip];
        for k in s.start..s.start + s.len {
            windows.push(&c.rows[k * cols..(k + WINDOW_FRAMES) * cols]);
            target.extend_from_slice(&c.targets[k * OUTPUT_DIM..(k + 1) * OUTPUT_DIM]);
        }
    }
    let n = windows.len();
    BatchData {
        input: time_major_batch(&windows, WINDOW_FRAMES, cols),
        target: Tensor::matrix(n, OUTPUT_DIM, target).expect("target layout"),
    }
}

/// Runs the model over `segments`, returning `N×51` predictions.
fn predict(params: &ModelParams<f32>, clips: &[PreparedClip], batch: &Batch, cols: usize) -> Result<Tensor<f32>> {
    let data = assemble(clips, batch, cols);
    let mut g = Graph::new();
    let vars = ModelVars::attach(&mut g, params);
    let input = g.constant(data.input);
    let out = forward_batch(&mut g, &vars, input, batch.frames())?;
    Ok(g.value(out.output).clone())
}

/// Predicted tracks for whole clips, evaluated `batch_size` frames at a time.
fn predict_tracks(params: &ModelParams<f32>, clips: &[PreparedClip], batch_size: usize, cols: usize) -> Result<Vec<AnimTrack>> {
    let mut tracks = Vec::with_capacity(clips.len());
    for (ci, c) in clips.iter().enumerate() {
        let mut frames = Vec::with_capacity(c.len);
        let mut start = 0;
        while start < c.len {
            let len = batch_size.min(c.len - start);
            let batch = Batch {
                segments: vec![Segment { clip: ci, start, len }],
            };
            let pred = predict(params, clips, &batch, cols)?;
            for r in 0..len {
                let v = pred.row_slice(r).iter().map(|&x| f64::from(x)).collect();
                frames.push(BlendshapeFrame::new(v)?);
            }
            start += len;
        }
        tracks.push(AnimTrack::new(frames));
    }
    Ok(tracks)
}

/// Predicted tracks for `clips` under `ckpt`, batching `batch_size` frames
/// per forward pass. Agrees with per-window inference up to float rounding.
pub fn batch_predict(ckpt: &Checkpoint, clips: &[ClipData], batch_size: usize) -> Result<Vec<AnimTrack>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let cols = ckpt.features.coeff_count();
    if clips.iter().any(|c| c.features.cols() != cols) {
        return Err(Error::Config("clip features do not match the checkpoint".into()));
    }
    let prepared = prepare(clips, &ckpt.normalizer)?;
    predict_tracks(&ckpt.params, &prepared, batch_size, cols)
}

/// Frame-weighted sequence loss and pooled RMSE over validation clips.
fn evaluate(
    params: &ModelParams<f32>,
    clips: &[PreparedClip],
    refs: &[ClipData],
    cfg: &TrainConfig,
    cols: usize,
) -> Result<(f64, f64)> {
    let nonempty: Vec<usize> = (0..clips.len()).filter(|&i| clips[i].len > 0).collect();
    if nonempty.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let preds = predict_tracks(params, clips, cfg.batch_size, cols)?;
    let mut loss_sum = 0.0;
    let mut frames = 0usize;
    let mut pooled_pred = Vec::new();
    let mut pooled_ref = Vec::new();
    for i in nonempty {
        let report = total_loss(preds[i].frames(), refs[i].track.frames(), &cfg.loss)?;
        loss_sum += report.total * preds[i].len() as f64;
        frames += preds[i].len();
        pooled_pred.extend_from_slice(preds[i].frames());
        pooled_ref.extend_from_slice(refs[i].track.frames());
    }
    let r = rmse(&AnimTrack::new(pooled_pred), &AnimTrack::new(pooled_ref))?;
    Ok((loss_sum / frames as f64, r))
}

/// Statistics rounded to `f32` so checkpoints reproduce them exactly.
fn f32_exact(n: Normalizer) -> Normalizer {
    let r = |v: Vec<f64>| v.into_iter().map(|x| f64::from(x as f32)).collect();
    Normalizer {
        mean: r(n.mean),
        std: r(n.std),
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// One optimization step on `batch`. Returns the batch loss.
fn train_step(
    params: &mut ModelParams<f32>,
    adam: &mut AdamState<f32>,
    clips: &[PreparedClip],
    batch: &Batch,
    cfg: &TrainConfig,
    cols: usize,
) -> Result<f64> {
    let data = assemble(clips, batch, cols);
    let mut g = Graph::new();
    let vars = ModelVars::attach(&mut g, params);
    let input = g.constant(data.input);
    let target = g.constant(data.target);
    let out = forward_batch(&mut g, &vars, input, batch.frames())?;
    let loss = graph_loss(&mut g, out.output, target, &batch.segment_lengths(), &cfg.loss)?;
    let value = f64::from(g.value(loss.total).data()[0]);
    if !value.is_finite() {
        return Ok(value);
    }
    let mut grads = g.backward(loss.total)?;
    let mut grads: Vec<Tensor<f32>> = vars
        .all
        .iter()
        .map(|&v| grads.take(v).unwrap_or_else(|| Tensor::zeros(g.value(v).shape().to_vec())))
        .collect();
    clip_global_norm(&mut grads, cfg.grad_clip);
    let mut slots = params.tensors_mut();
    adam_step(&mut slots, &grads, adam, cfg.learning_rate, &cfg.adam)?;
    Ok(value)
}

/// Trains on `train`, validating on `val` after every epoch. Writes the
/// best-validation and final checkpoints plus the CSV log into `out_dir`.
pub fn train(train: &[ClipData], val: &[ClipData], cfg: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome> {
    train_with_progress(train, val, cfg, out_dir, |_| {})
}

pub fn train_with_progress(
    train: &[ClipData],
    val: &[ClipData],
    cfg: &TrainConfig,
    out_dir: &Path,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let lens: Vec<usize> = train.iter().map(ClipData::len).collect();
    if lens.iter().sum::<usize>() == 0 {
        return Err(Error::Empty("training set"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let cols = cfg.features.coeff_count();
    let normalizer = f32_exact(fit_normalizer(train)?);
    let train_data = prepare(train, &normalizer)?;
    let val_data = prepare(val, &normalizer)?;

    let mut params: ModelParams<f32> = ModelParams::init(&cfg.model, cfg.seed)?;
    let mut adam = AdamState::new(params.tensors());
    let mut history: Vec<EpochStats> = Vec::with_capacity(cfg.epochs);
    let mut log = String::from("epoch,train_loss,val_loss,val_rmse\n");
    let log_path = out_dir.join(TRAIN_LOG);
    let best_path = out_dir.join(BEST_CHECKPOINT);
    let final_path = out_dir.join(FINAL_CHECKPOINT);
    let snapshot = |params: &ModelParams<f32>, history: &[EpochStats]| Checkpoint {
        params: params.clone(),
        features: cfg.features.clone(),
        normalizer: normalizer.clone(),
        meta: TrainingMeta {
            epoch: history.len(),
            loss_history: history.iter().map(|h| h.train_loss as f32).collect(),
        },
    };
    let mut best: Option<(f64, usize, Checkpoint)> = None;

    for epoch in 1..=cfg.epochs {
        let batches = make_batches(&lens, cfg.batch_size, cfg.sequence_chunk, epoch_seed(cfg.seed, epoch));
        let mut loss_sum = 0.0;
        let mut frames = 0usize;
        for (bi, batch) in batches.iter().enumerate() {
            let loss = train_step(&mut params, &mut adam, &train_data, batch, cfg, cols)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            loss_sum += loss * batch.frames() as f64;
            frames += batch.frames();
        }
        let (val_loss, val_rmse) = evaluate(&params, &val_data, val, cfg, cols)?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / frames as f64,
            val_loss,
            val_rmse,
        };
        history.push(stats);
        let _ = writeln!(log, "{epoch},{:.6},{:.6},{:.6}", stats.train_loss, val_loss, val_rmse);
        std::fs::write(&log_path, &log).map_err(|e| Error::io(&log_path, e))?;
        on_epoch(&stats);

        let score = if val_loss.is_nan() { stats.train_loss } else { val_loss };
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            let ckpt = snapshot(&params, &history);
            save_checkpoint(&ckpt, &best_path)?;
            best = Some((score, epoch, ckpt));
        }
    }
    let final_checkpoint = snapshot(&params, &history);
    save_checkpoint(&final_checkpoint, &final_path)?;
    let (_, best_epoch, best_checkpoint) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        final_checkpoint,
        best_checkpoint,
        best_epoch,
        history,
        final_path,
        best_path,
        log_path,
    })
}
