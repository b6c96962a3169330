//! Binary feature dump: `"A2FF"`, then u32 version, window count, rows and
//! columns, then every window's coefficients as row-major little-endian f32.

use std::io::{Read, Write};

use super::{FeatureWindow, WINDOW_FRAMES};
use crate::error::{Error, Result};

pub const DUMP_MAGIC: &[u8; 4] = b"A2FF";
pub const DUMP_VERSION: u32 = 1;

pub fn write_feature_dump<W: Write>(mut out: W, windows: &[FeatureWindow], cols: usize) -> std::io::Result<()> {
    out.write_all(DUMP_MAGIC)?;
    for v in [DUMP_VERSION, windows.len() as u32, WINDOW_FRAMES as u32, cols as u32] {
        out.write_all(&v.to_le_bytes())?;
    }
    for w in windows {
        for &c in w.coeffs() {
            out.write_all(&(c as f32).to_le_bytes())?;
        }
    }
    out.flush()
}

/// Reads a dump back as `(rows, cols, windows)` with f32 values.
pub fn read_feature_dump<R: Read>(mut input: R) -> Result<(usize, usize, Vec<Vec<f32>>)> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Corrupt(e.to_string()))?;
    if bytes.len() < 20 || &bytes[..4] != DUMP_MAGIC {
        return Err(Error::Corrupt("not a feature dump".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    if word(0) != DUMP_VERSION as usize {
        return Err(Error::UnsupportedVersion(word(0) as u32));
    }
    let (n, rows, cols) = (word(1), word(2), word(3));
    let per = rows * cols;
    let body = &bytes[20..];
    if body.len() != n * per * 4 {
        return Err(Error::Corrupt(format!(
            "feature dump body is {} bytes, expected {}",
            body.len(),
            n * per * 4
        )));
    }
    let values: Vec<f32> = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((rows, cols, values.chunks(per.max(1)).take(n).map(<[f32]>::to_vec).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let w = FeatureWindow::new(0, 39, (0..2496).map(|i| i as f64 * 0.5).collect()).unwrap();
        let mut buf = Vec::new();
        write_feature_dump(&mut buf, &[w.clone(), w], 39).unwrap();
        assert_eq!(&buf[..4], b"A2FF");
        assert_eq!(&buf[4..20], &[1, 0, 0, 0, 2, 0, 0, 0, 64, 0, 0, 0, 39, 0, 0, 0]);
        assert_eq!(buf.len(), 20 + 2 * 2496 * 4);
        let (rows, cols, windows) = read_feature_dump(&buf[..]).unwrap();
        assert_eq!((rows, cols, windows.len()), (64, 39, 2));
        assert_eq!(windows[1][3], 1.5);
    }
}
