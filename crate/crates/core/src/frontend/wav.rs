use std::path::Path;

use super::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Reads a 16-bit PCM mono 44.1 kHz RIFF/WAVE file.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(source)
            if matches!(
                source.kind(),
                std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied
            ) =>
        {
            Error::io(path, source)
        }
        other => Error::WavParse(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedChannelCount(spec.channels));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedSampleRate(spec.sample_rate));
    }
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::UnsupportedBitDepth(spec.bits_per_sample));
    }
    let expected = reader.len() as usize;
    let mut samples = Vec::with_capacity(expected);
    for s in reader.into_samples::<i16>() {
        let s = s.map_err(|e| Error::WavParse(format!("{}: {e}", path.display())))?;
        samples.push(f32::from(s) / 32768.0);
    }
    if samples.len() != expected {
        return Err(Error::WavParse(format!(
            "{}: truncated data chunk ({} of {expected} samples)",
            path.display(),
            samples.len()
        )));
    }
    AudioClip::new(samples)
}

/// Converts a sample in [-1, 1] to the nearest 16-bit PCM code.
pub fn quantize_sample(x: f32) -> i16 {
    (f64::from(x) * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn save_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::WavParse(other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in clip.samples() {
        writer.write_sample(quantize_sample(s)).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(path: &Path, channels: u16, rate: u32, bits: u16, n: usize) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: bits,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for i in 0..n * channels as usize {
            match bits {
                16 => w.write_sample((i % 200) as i16 - 100).unwrap(),
                _ => w.write_sample((i % 200) as i32 - 100).unwrap(),
            }
        }
        w.finalize().unwrap();
    }

    #[test]
    fn one_second_file_has_44100_samples() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_raw(&p, 1, 44100, 16, 44100);
        let clip = load_wav(&p).unwrap();
        assert_eq!(clip.len(), 44100);
        assert_eq!(clip.samples()[0], -100.0 / 32768.0);
    }

    #[test]
    fn rejects_stereo() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        write_raw(&p, 2, 44100, 16, 100);
        let err = load_wav(&p).unwrap_err();
        assert!(matches!(err, Error::UnsupportedChannelCount(2)));
        assert!(err.to_string().contains("unsupported channel count"));
    }

    #[test]
    fn rejects_other_sample_rates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.wav");
        write_raw(&p, 1, 22050, 16, 100);
        let err = load_wav(&p).unwrap_err();
        assert!(err.to_string().contains("unsupported sample rate"));
    }

    #[test]
    fn rejects_24_bit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.wav");
        write_raw(&p, 1, 44100, 24, 100);
        assert!(matches!(load_wav(&p).unwrap_err(), Error::UnsupportedBitDepth(24)));
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.wav");
        write_raw(&p, 1, 44100, 16, 1000);
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 501]).unwrap();
        assert!(matches!(load_wav(&p).unwrap_err(), Error::WavParse(_)));
        std::fs::write(&p, &bytes[..20]).unwrap();
        let e = load_wav(&p).unwrap_err();
        assert!(matches!(e, Error::WavParse(_)), "{e:?}");
    }

    #[test]
    fn save_then_load_is_exact_for_pcm_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.wav");
        let clip = AudioClip::new((0..500).map(|i| (i as f32 - 250.0) / 32768.0).collect()).unwrap();
        save_wav(&clip, &p).unwrap();
        assert_eq!(load_wav(&p).unwrap(), clip);
    }
}
