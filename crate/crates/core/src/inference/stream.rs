use std::collections::VecDeque;
use std::time::{Duration, Instant};

use super::{InferenceModel, LatencyReport};
use crate::dataset::AnimTrack;
use crate::error::{Error, Result};
use crate::frontend::{LEAD_FRAMES, SAMPLES_PER_FRAME, WINDOW_FRAMES};
use crate::network::BlendshapeFrame;
use crate::trainer::Checkpoint;

/// Samples kept behind the oldest still-needed one before compacting.
const COMPACT_SLACK: usize = 1 << 16;

/// Incremental inference over audio arriving in arbitrary-sized blocks.
///
/// Analysis frames are computed as soon as their samples exist, and video
/// frame `k` is emitted once samples through `(k + 1)·1470 + 47040` have
/// arrived. Frames near the end of the audio wait for [`finish`](Self::finish),
/// which zero-pads like offline inference.
pub struct StreamInfer {
    model: InferenceModel,
    buf: Vec<f32>,
    /// Absolute index of `buf[0]`.
    base: usize,
    received: usize,
    finished: bool,
    next_row: i64,
    rows: VecDeque<Vec<f64>>,
    next_frame: usize,
    pending_feat: Duration,
    report: LatencyReport,
}

impl StreamInfer {
    pub fn new(ckpt: &Checkpoint) -> Result<Self> {
        Ok(Self {
            model: InferenceModel::new(ckpt)?,
            buf: Vec::new(),
            base: 0,
            received: 0,
            finished: false,
            next_row: -(LEAD_FRAMES as i64),
            rows: VecDeque::with_capacity(WINDOW_FRAMES + 1),
            next_frame: 0,
            pending_feat: Duration::ZERO,
            report: LatencyReport::default(),
        })
    }

    pub fn frames_emitted(&self) -> usize {
        self.next_frame
    }

    pub fn samples_received(&self) -> usize {
        self.received
    }

    pub fn report(&self) -> &LatencyReport {
        &self.report
    }

    /// Feeds samples and returns every frame that became computable.
    pub fn push(&mut self, samples: &[f32]) -> Result<Vec<BlendshapeFrame>> {
        if self.finished {
            return Err(Error::Config("stream already finished".into()));
        }
        if let Some((i, s)) = samples.iter().enumerate().find(|(_, s)| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::Config(format!("sample {} = {s} outside [-1, 1]", self.received + i)));
        }
        self.buf.extend_from_slice(samples);
        self.received += samples.len();
        self.drain(usize::MAX)
    }

    /// Ends the stream, emitting the remaining frames of the complete video
    /// frames received. Returns them with the latency report.
    pub fn finish(mut self) -> Result<(Vec<BlendshapeFrame>, LatencyReport)> {
        self.finished = true;
        let total = self.received / SAMPLES_PER_FRAME;
        let frames = self.drain(total)?;
        Ok((frames, self.report))
    }

    fn frame_len(&self) -> usize {
        self.model.extractor().config().frame_len_samples
    }

    fn row_ready(&self) -> bool {
        let end = self.next_row * SAMPLES_PER_FRAME as i64 + self.frame_len() as i64;
        self.finished || end <= self.received as i64
    }

    fn compute_row(&mut self) -> Result<()> {
        let t0 = Instant::now();
        let start = self.next_row * SAMPLES_PER_FRAME as i64;
        let frame: Vec<f32> = (start..start + self.frame_len() as i64)
            .map(|i| {
                if i < 0 || i as usize >= self.received {
                    0.0
                } else {
                    self.buf[i as usize - self.base]
                }
            })
            .collect();
        let row = self.model.extractor().frame(&frame)?;
        self.rows.push_back(row);
        if self.rows.len() > WINDOW_FRAMES {
            self.rows.pop_front();
        }
        self.next_row += 1;
        let keep_from = (self.next_row.max(0) as usize * SAMPLES_PER_FRAME).min(self.received);
        if keep_from > self.base + COMPACT_SLACK {
            self.buf.drain(..keep_from - self.base);
            self.base = keep_from;
        }
        self.pending_feat += t0.elapsed();
        Ok(())
    }

    /// Index of the newest row frame `k` needs.
    fn last_row_for(k: usize) -> i64 {
        k as i64 + (WINDOW_FRAMES - LEAD_FRAMES) as i64 - 1
    }

    fn drain(&mut self, limit: usize) -> Result<Vec<BlendshapeFrame>> {
        let mut out = Vec::new();
        while self.next_frame < limit {
            if self.next_row > Self::last_row_for(self.next_frame) {
                let window: Vec<f64> = self.rows.iter().flatten().copied().collect();
                let t0 = Instant::now();
                let frame = self.model.forward_window(&window)?;
                self.report.record(std::mem::take(&mut self.pending_feat), t0.elapsed());
                out.push(frame);
                self.next_frame += 1;
            } else if self.row_ready() {
                self.compute_row()?;
            } else {
                break;
            }
        }
        Ok(out)
    }
}

/// Runs a [`StreamInfer`] over `blocks`, calling `on_frame` with each frame
/// index as soon as it is produced.
pub fn stream_infer<I>(
    blocks: I,
    ckpt: &Checkpoint,
    mut on_frame: impl FnMut(usize, &BlendshapeFrame),
) -> Result<(AnimTrack, LatencyReport)>
where
    I: IntoIterator,
    I::Item: AsRef<[f32]>,
{
    let mut stream = StreamInfer::new(ckpt)?;
    let mut frames = Vec::new();
    for block in blocks {
        for f in stream.push(block.as_ref())? {
            on_frame(frames.len(), &f);
            frames.push(f);
        }
    }
    let (rest, report) = stream.finish()?;
    for f in rest {
        on_frame(frames.len(), &f);
        frames.push(f);
    }
    Ok((AnimTrack::new(frames), report))
}
