use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::dataset::AnimTrack;
use crate::error::{Error, Result};
use crate::network::{NATIVE_SCALE, OUTPUT_DIM};

/// Linear map from the 51 source parameters to another rig, on the native
/// `[0, 100]` scale.
#[derive(Clone, Debug, PartialEq)]
pub struct RigMap {
    /// `target_dim` rows of 51 coefficients.
    pub matrix: Vec<[f64; OUTPUT_DIM]>,
    pub offset: Vec<f64>,
}

/// Retargeted frames of `target_dim` native-scale values.
#[derive(Clone, Debug, PartialEq)]
pub struct RigTrack {
    pub frames: Vec<Vec<f64>>,
}

impl RigMap {
    pub fn new(matrix: Vec<[f64; OUTPUT_DIM]>, offset: Vec<f64>) -> Result<Self> {
        if matrix.is_empty() || matrix.len() != offset.len() {
            return Err(Error::Config(format!(
                "rig map needs target_dim >= 1 rows and one offset per row (got {} rows, {} offsets)",
                matrix.len(),
                offset.len()
            )));
        }
        if !matrix.iter().flatten().chain(&offset).all(|v| v.is_finite()) {
            return Err(Error::Config("rig map has non-finite entries".into()));
        }
        Ok(Self { matrix, offset })
    }

    pub fn identity() -> Self {
        let matrix = (0..OUTPUT_DIM)
            .map(|i| std::array::from_fn(|j| if i == j { 1.0 } else { 0.0 }))
            .collect();
        Self {
            matrix,
            offset: vec![0.0; OUTPUT_DIM],
        }
    }

    pub fn target_dim(&self) -> usize {
        self.matrix.len()
    }

    /// First line `target_dim`, then that many rows of 51 coefficients and
    /// an offset.
    pub fn parse(input: impl Read, source: &Path) -> Result<Self> {
        let err = |row: usize, msg: String| Error::Csv {
            path: source.display().to_string(),
            row,
            msg,
        };
        let mut lines = BufReader::new(input).lines().enumerate().filter(|(_, l)| match l {
            Ok(l) => !l.trim().is_empty(),
            Err(_) => true,
        });
        let (_, first) = lines.next().ok_or_else(|| err(1, "missing target_dim line".into()))?;
        let first = first.map_err(|e| err(1, e.to_string()))?;
        let dim: usize = first
            .trim()
            .parse()
            .map_err(|_| err(1, format!("bad target_dim {:?}", first.trim())))?;
        let mut matrix = Vec::with_capacity(dim);
        let mut offset = Vec::with_capacity(dim);
        for (i, line) in lines {
            let row = i + 1;
            let line = line.map_err(|e| err(row, e.to_string()))?;
            let vals: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>().map_err(|_| err(row, format!("bad value {:?}", f.trim()))))
                .collect::<Result<_>>()?;
            if vals.len() != OUTPUT_DIM + 1 {
                return Err(err(row, format!("expected {} values, found {}", OUTPUT_DIM + 1, vals.len())));
            }
            matrix.push(std::array::from_fn(|j| vals[j]));
            offset.push(vals[OUTPUT_DIM]);
        }
        if matrix.len() != dim {
            return Err(err(1, format!("target_dim {dim} but {} rows follow", matrix.len())));
        }
        Self::new(matrix, offset)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(file, path)
    }
}

/// `clamp(M·p + offset, 0, 100)` per frame, with `p` on the native scale.
pub fn retarget(track: &AnimTrack, map: &RigMap) -> RigTrack {
    let frames = track
        .frames()
        .iter()
        .map(|f| {
            let p = f.to_native();
            map.matrix
                .iter()
                .zip(&map.offset)
                .map(|(row, b)| {
                    let v = row.iter().zip(&p).map(|(m, x)| m * x).sum::<f64>() + b;
                    v.clamp(0.0, NATIVE_SCALE)
                })
                .collect()
        })
        .collect();
    RigTrack { frames }
}

/// Same CSV layout as animation tracks, with one `pNN` column per target
/// parameter.
pub fn write_rig_track(out: impl Write, track: &RigTrack) -> std::io::Result<()> {
    let dim = track.frames.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(out);
    let header = std::iter::once("frame".to_string()).chain((1..=dim).map(|j| format!("p{j:02}")));
    w.write_record(header)?;
    for (i, frame) in track.frames.iter().enumerate() {
        let rec = std::iter::once(i.to_string()).chain(frame.iter().map(|v| format!("{v:.4}")));
        w.write_record(rec)?;
    }
    w.flush()
}
