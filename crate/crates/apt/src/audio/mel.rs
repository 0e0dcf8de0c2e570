//! Log-mel spectrogram front end.
//!
//! Hann-windowed frames, power spectrum via FFT, triangular mel filters,
//! natural log with an additive floor. Frame count over a segment is
//! `1 + floor((len - window) / hop)`.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct MelConfig {
    pub sample_rate: u32,
    /// Analysis window length in samples.
    pub window: usize,
    /// Hop between frame starts in samples.
    pub hop: usize,
    pub n_mels: usize,
    /// Additive floor inside the log; an all-zero input maps to ln(floor).
    pub floor: f64,
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.hop == 0 {
            return Err(Error::config("mel: window and hop must be positive"));
        }
        if self.n_mels < 2 {
            return Err(Error::config("mel: need at least 2 mel bins"));
        }
        if self.hop > self.window {
            return Err(Error::config(format!(
                "mel: hop {} exceeds window {}",
                self.hop, self.window
            )));
        }
        if !(self.floor > 0.0) {
            return Err(Error::config("mel: floor must be positive"));
        }
        Ok(())
    }

    pub fn fft_size(&self) -> usize {
        self.window.next_power_of_two()
    }

    /// Frames produced for an input of `len` samples.
    pub fn frames_for(&self, len: usize) -> Result<usize> {
        if len < self.window {
            return Err(Error::config(format!(
                "mel: input of {len} samples is shorter than the {} sample window",
                self.window
            )));
        }
        Ok(1 + (len - self.window) / self.hop)
    }
}

/// Dense time-frequency map, row-major `frames x mels`, natural-log power.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub mels: usize,
    pub data: Vec<f64>,
}

impl Spectrogram {
    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.mels..(i + 1) * self.mels]
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters stored sparsely as (first bin, weights).
pub struct MelFilterbank {
    pub n_mels: usize,
    filters: Vec<(usize, Vec<f64>)>,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(cfg: &MelConfig) -> Result<Self> {
        cfg.validate()?;
        let nfft = cfg.fft_size();
        let n_bins = nfft / 2 + 1;
        let nyquist = cfg.sample_rate as f64 / 2.0;
        let mel_max = hz_to_mel(nyquist);
        let points: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = cfg.sample_rate as f64 / nfft as f64;
        let mut filters = Vec::with_capacity(cfg.n_mels);
        for m in 0..cfg.n_mels {
            let (lo, mid, hi) = (points[m], points[m + 1], points[m + 2]);
            let first = (lo / bin_hz).ceil() as usize;
            let last = ((hi / bin_hz).floor() as usize).min(n_bins - 1);
            let mut w = Vec::new();
            for b in first..=last {
                let f = b as f64 * bin_hz;
                let v = if f <= mid {
                    (f - lo) / (mid - lo)
                } else {
                    (hi - f) / (hi - mid)
                };
                w.push(v.max(0.0));
            }
            filters.push((first, w));
        }
        Ok(MelFilterbank {
            n_mels: cfg.n_mels,
            filters,
            centers_hz: points[1..=cfg.n_mels].to_vec(),
        })
    }

    /// Center frequency of mel filter `m` in Hz.
    pub fn center_hz(&self, m: usize) -> f64 {
        self.centers_hz[m]
    }

    fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (m, (first, w)) in self.filters.iter().enumerate() {
            let mut s = 0.0;
            for (k, &wv) in w.iter().enumerate() {
                s += wv * power[first + k];
            }
            out[m] = s;
        }
    }
}

/// Compute the log-mel spectrogram of one segment.
pub fn log_mel(samples: &[f32], cfg: &MelConfig) -> Result<Spectrogram> {
    let bank = MelFilterbank::new(cfg)?;
    log_mel_with(samples, cfg, &bank)
}

/// Same as [`log_mel`] with a reused filterbank.
pub fn log_mel_with(samples: &[f32], cfg: &MelConfig, bank: &MelFilterbank) -> Result<Spectrogram> {
    let frames = cfg.frames_for(samples.len())?;
    let nfft = cfg.fft_size();
    let n_bins = nfft / 2 + 1;
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(nfft);
    let hann: Vec<f64> = (0..cfg.window)
        .map(|i| {
            let x = std::f64::consts::TAU * i as f64 / cfg.window as f64;
            0.5 * (1.0 - x.cos())
        })
        .collect();
    let mut data = vec![0.0f64; frames * cfg.n_mels];
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    let mut power = vec![0.0f64; n_bins];
    for fi in 0..frames {
        let start = fi * cfg.hop;
        for (i, c) in buf.iter_mut().enumerate() {
            *c = if i < cfg.window {
                Complex::new(samples[start + i] as f64 * hann[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (b, p) in power.iter_mut().enumerate() {
            *p = buf[b].norm_sqr();
        }
        bank.apply(&power, &mut data[fi * cfg.n_mels..(fi + 1) * cfg.n_mels]);
    }
    for v in data.iter_mut() {
        *v = (*v + cfg.floor).ln();
    }
    Ok(Spectrogram {
        frames,
        mels: cfg.n_mels,
        data,
    })
}
