use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Consecutive frames `start..start + len` of clip `clip`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub clip: usize,
    pub start: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub segments: Vec<Segment>,
}

impl Batch {
    pub fn frames(&self) -> usize {
        self.segments.iter().map(|s| s.len).sum()
    }

    pub fn segment_lengths(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.len).collect()
    }
}

/// Epoch schedule: every clip is cut into chunks of `chunk` consecutive
/// frames, the chunks are shuffled with `seed`, and the resulting frame
/// stream is cut into batches of `batch_size` frames. A chunk that straddles
/// a batch boundary is split into two segments.
pub fn make_batches(clip_lens: &[usize], batch_size: usize, chunk: usize, seed: u64) -> Vec<Batch> {
    let batch_size = batch_size.max(1);
    let chunk = chunk.max(1);
    let mut chunks: Vec<Segment> = Vec::new();
    for (clip, &n) in clip_lens.iter().enumerate() {
        let mut start = 0;
        while start < n {
            let len = chunk.min(n - start);
            chunks.push(Segment { clip, start, len });
            start += len;
        }
    }
    chunks.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut room = batch_size;
    for mut seg in chunks {
        while seg.len > 0 {
            let take = seg.len.min(room);
            current.push(Segment { len: take, ..seg });
            seg.start += take;
            seg.len -= take;
            room -= take;
            if room == 0 {
                batches.push(Batch {
                    segments: std::mem::take(&mut current),
                });
                room = batch_size;
            }
        }
    }
    if !current.is_empty() {
        batches.push(Batch { segments: current });
    }
    batches
}
