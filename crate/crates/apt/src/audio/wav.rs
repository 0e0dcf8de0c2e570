//! Mono PCM16 WAV read/write for rendered clips.

use std::path::Path;

use crate::error::{Error, Result};

/// Write float samples in [-1, 1] as 16-bit PCM. Out-of-range samples clamp.
pub fn write_wav(path: &Path, sample_rate: u32, samples: &[f32]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::contract(format!("wav create {}: {e}", path.display())))?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16;
        writer
            .write_sample(v)
            .map_err(|e| Error::contract(format!("wav write {}: {e}", path.display())))?;
    }
    writer
        .finalize()
        .map_err(|e| Error::contract(format!("wav finalize {}: {e}", path.display())))?;
    Ok(())
}

/// Read a mono PCM16 WAV back to floats in [-1, 1].
pub fn read_wav(path: &Path) -> Result<(u32, Vec<f32>)> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::contract(format!("wav open {}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 {
        return Err(Error::contract(format!(
            "wav {}: expected mono 16-bit PCM, got {} channels at {} bits",
            path.display(),
            spec.channels,
            spec.bits_per_sample
        )));
    }
    let samples: std::result::Result<Vec<i16>, _> = reader.samples::<i16>().collect();
    let samples =
        samples.map_err(|e| Error::contract(format!("wav read {}: {e}", path.display())))?;
    let scale = 1.0 / i16::MAX as f32;
    Ok((
        spec.sample_rate,
        samples.into_iter().map(|v| v as f32 * scale).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_samples_to_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let samples: Vec<f32> = (0..512)
            .map(|i| (i as f32 * 0.05).sin() * 0.8)
            .collect();
        write_wav(&path, 16_000, &samples).unwrap();
        let (sr, back) = read_wav(&path).unwrap();
        assert_eq!(sr, 16_000);
        assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(&back) {
            assert!((a - b).abs() < 1.0 / 16_384.0);
        }
    }

    #[test]
    fn out_of_range_samples_clamp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.wav");
        write_wav(&path, 8_000, &[2.0, -2.0]).unwrap();
        let (_, back) = read_wav(&path).unwrap();
        assert!((back[0] - 1.0).abs() < 1e-4);
        assert!((back[1] + 1.0).abs() < 1e-4);
    }
}
