use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::frontend::VIDEO_FPS;
use crate::network::{BlendshapeFrame, NATIVE_SCALE, OUTPUT_DIM};

/// Blendshape frames at 30 FPS, stored on the `[0, 1]` scale.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnimTrack {
    frames: Vec<BlendshapeFrame>,
}

impl AnimTrack {
    pub fn new(frames: Vec<BlendshapeFrame>) -> Self {
        Self { frames }
    }

    pub fn fps(&self) -> u32 {
        VIDEO_FPS
    }

    pub fn frames(&self) -> &[BlendshapeFrame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<BlendshapeFrame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn truncated(&self, len: usize) -> Self {
        Self::new(self.frames[..len.min(self.frames.len())].to_vec())
    }
}

fn header() -> Vec<String> {
    std::iter::once("frame".to_string())
        .chain((1..=OUTPUT_DIM).map(|j| format!("p{j:02}")))
        .collect()
}

/// Parses track CSV text. `source` names the input in error messages.
pub fn parse_track(input: impl Read, source: &Path) -> Result<AnimTrack> {
    let csv_err = |row: usize, msg: String| Error::Csv {
        path: source.display().to_string(),
        row,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let head = reader.headers().map_err(|e| csv_err(1, e.to_string()))?.clone();
    if head.iter().ne(header().iter().map(String::as_str)) {
        return Err(csv_err(1, "expected header frame,p01,...,p51".into()));
    }
    let mut frames = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| csv_err(row, e.to_string()))?;
        if record.len() != OUTPUT_DIM + 1 {
            return Err(csv_err(row, format!("expected {} columns, found {}", OUTPUT_DIM + 1, record.len())));
        }
        let frame: usize = record[0]
            .parse()
            .map_err(|_| csv_err(row, format!("bad frame index {:?}", &record[0])))?;
        if frame != frames.len() {
            return Err(csv_err(row, format!("frame index {frame}, expected {}", frames.len())));
        }
        let mut params = Vec::with_capacity(OUTPUT_DIM);
        for (j, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| csv_err(row, format!("bad value {field:?} in p{:02}", j + 1)))?;
            if !(0.0..=NATIVE_SCALE).contains(&v) {
                return Err(csv_err(row, format!("value {v} in p{:02} outside [0, 100]", j + 1)));
            }
            params.push(v / NATIVE_SCALE);
        }
        frames.push(BlendshapeFrame::new(params)?);
    }
    Ok(AnimTrack::new(frames))
}

pub fn load_track(path: &Path) -> Result<AnimTrack> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_track(std::io::BufReader::new(file), path)
}

/// Writes native-scale values with four decimals.
pub fn write_track(out: impl Write, track: &AnimTrack) -> std::io::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(header())?;
    let mut record = Vec::with_capacity(OUTPUT_DIM + 1);
    for (i, frame) in track.frames().iter().enumerate() {
        record.clear();
        record.push(i.to_string());
        record.extend(frame.to_native().iter().map(|v| format!("{v:.4}")));
        writer.write_record(&record)?;
    }
    writer.flush()
}

pub fn save_track(path: &Path, track: &AnimTrack) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_track(std::io::BufWriter::new(file), track).map_err(|e| Error::io(path, e))
}
