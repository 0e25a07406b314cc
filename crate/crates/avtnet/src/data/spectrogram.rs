//! Log-Mel spectrogram extraction.

use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{AvtError, Result};

/// What to do with input whose sample rate differs from the configured one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ResamplePolicy {
    Reject,
    /// Linear-interpolation resampling to the configured rate.
    Resample,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SpectrogramConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub n_frames: usize,
    pub log_eps: f64,
    pub resample: ResamplePolicy,
}

impl SpectrogramConfig {
    /// 128 bands × 589 frames at 44 kHz, window 2048, hop 512.
    pub fn full() -> Self {
        Self {
            sample_rate: 44_000,
            n_fft: 2048,
            hop: 512,
            n_mels: 128,
            n_frames: 589,
            log_eps: 1e-6,
            resample: ResamplePolicy::Reject,
        }
    }

    /// Shorter spectrograms for toy-scale runs: 64 bands × 128 frames.
    pub fn toy() -> Self {
        Self {
            sample_rate: 44_000,
            n_fft: 1024,
            hop: 256,
            n_mels: 64,
            n_frames: 128,
            log_eps: 1e-6,
            resample: ResamplePolicy::Reject,
        }
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank, (n_mels, n_fft/2 + 1), HTK-style mel scale,
/// 0 Hz to Nyquist.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> Array2<f64> {
    let n_bins = n_fft / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    // n_mels + 2 equally spaced mel points
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = |b: usize| b as f64 * sample_rate as f64 / n_fft as f64;
    let mut fb = Array2::<f64>::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (lo, center, hi) = (points[m], points[m + 1], points[m + 2]);
        for b in 0..n_bins {
            let f = bin_hz(b);
            if f > lo && f < hi {
                fb[[m, b]] = if f <= center {
                    (f - lo) / (center - lo)
                } else {
                    (hi - f) / (hi - center)
                };
            }
        }
    }
    fb
}

/// Center frequency (Hz) of mel band `m`, for test tones.
pub fn mel_band_center(m: usize, n_mels: usize, sample_rate: u32) -> f64 {
    let mel_max = hz_to_mel(sample_rate as f64 / 2.0);
    mel_to_hz(mel_max * (m + 1) as f64 / (n_mels + 1) as f64)
}

/// Log-Mel spectrogram without the final standardization: Hann-windowed STFT
/// power, mel filterbank, `log(power + eps)`, zero-padded or truncated on the
/// time axis to exactly `n_frames`.
pub fn compute_log_mel_unstandardized(
    waveform: &[f64],
    sample_rate: u32,
    cfg: &SpectrogramConfig,
) -> Result<Array2<f64>> {
    if waveform.is_empty() {
        return Err(AvtError::invalid("empty waveform"));
    }
    let owned;
    let wave: &[f64] = if sample_rate == cfg.sample_rate {
        waveform
    } else {
        match cfg.resample {
            ResamplePolicy::Reject => {
                return Err(AvtError::invalid(format!(
                    "sample rate {sample_rate} != configured {} and resampling is disabled",
                    cfg.sample_rate
                )))
            }
            ResamplePolicy::Resample => {
                owned = resample_linear(waveform, sample_rate, cfg.sample_rate);
                &owned
            }
        }
    };

    let n_fft = cfg.n_fft;
    let n_bins = n_fft / 2 + 1;
    let n_stft_frames = if wave.len() >= n_fft {
        1 + (wave.len() - n_fft) / cfg.hop
    } else {
        1
    };
    let hann: Vec<f64> = (0..n_fft)
        .map(|i| {
            0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / (n_fft - 1) as f64).cos())
        })
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n_fft);

    let mut power = Array2::<f64>::zeros((n_bins, n_stft_frames));
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for t in 0..n_stft_frames {
        let start = t * cfg.hop;
        for i in 0..n_fft {
            let s = wave.get(start + i).copied().unwrap_or(0.0);
            buf[i] = Complex::new(s * hann[i], 0.0);
        }
        fft.process(&mut buf);
        for b in 0..n_bins {
            power[[b, t]] = buf[b].norm_sqr();
        }
    }

    let fb = mel_filterbank(cfg.n_mels, n_fft, cfg.sample_rate);
    let mel = fb.dot(&power); // (n_mels, n_stft_frames)
    let mut out = Array2::<f64>::from_elem((cfg.n_mels, cfg.n_frames), cfg.log_eps.ln());
    for m in 0..cfg.n_mels {
        for t in 0..n_stft_frames.min(cfg.n_frames) {
            out[[m, t]] = (mel[[m, t]] + cfg.log_eps).ln();
        }
    }
    Ok(out)
}

/// Zero-mean / unit-variance standardization over the whole matrix. A
/// constant input (zero variance) standardizes to all zeros.
pub fn standardize(m: &Array2<f64>) -> Array2<f64> {
    let n = m.len() as f64;
    let mean = m.sum() / n;
    let var = m.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var < 1e-20 {
        return Array2::zeros(m.raw_dim());
    }
    let std = var.sqrt();
    m.mapv(|v| (v - mean) / std)
}

/// The full extraction used by the data pipeline: log-Mel then per-sample
/// standardization. Shape is exactly (n_mels, n_frames).
pub fn compute_log_mel_spectrogram(
    waveform: &[f64],
    sample_rate: u32,
    cfg: &SpectrogramConfig,
) -> Result<Array2<f64>> {
    Ok(standardize(&compute_log_mel_unstandardized(
        waveform,
        sample_rate,
        cfg,
    )?))
}

fn resample_linear(wave: &[f64], from: u32, to: u32) -> Vec<f64> {
    let ratio = from as f64 / to as f64;
    let n_out = ((wave.len() as f64) / ratio).floor() as usize;
    (0..n_out)
        .map(|i| {
            let pos = i as f64 * ratio;
            let lo = pos.floor() as usize;
            let frac = pos - lo as f64;
            let a = wave[lo.min(wave.len() - 1)];
            let b = wave[(lo + 1).min(wave.len() - 1)];
            a + frac * (b - a)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn empty_waveform_is_rejected() {
        assert!(compute_log_mel_spectrogram(&[], 44_000, &SpectrogramConfig::full()).is_err());
    }

    #[test]
    fn wrong_rate_rejected_unless_resampling() {
        let wave = vec![0.1; 8000];
        let mut cfg = SpectrogramConfig::toy();
        assert!(compute_log_mel_spectrogram(&wave, 22_050, &cfg).is_err());
        cfg.resample = ResamplePolicy::Resample;
        let out = compute_log_mel_spectrogram(&wave, 22_050, &cfg).unwrap();
        assert_eq!(out.dim(), (cfg.n_mels, cfg.n_frames));
    }

    #[test]
    fn zero_waveform_gives_constant_log_eps_then_zero() {
        let cfg = SpectrogramConfig::full();
        let wave = vec![0.0; 6 * 44_000];
        let raw = compute_log_mel_unstandardized(&wave, 44_000, &cfg).unwrap();
        let expect = cfg.log_eps.ln();
        assert!(raw.iter().all(|&v| (v - expect).abs() < 1e-12));
        let std = compute_log_mel_spectrogram(&wave, 44_000, &cfg).unwrap();
        assert!(std.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_contract_holds_with_padding_and_truncation() {
        let cfg = SpectrogramConfig::toy();
        for secs in [0.2, 3.0] {
            let n = (secs * 44_000.0) as usize;
            let wave: Vec<f64> = (0..n).map(|i| (i as f64 * 0.01).sin()).collect();
            let out = compute_log_mel_spectrogram(&wave, 44_000, &cfg).unwrap();
            assert_eq!(out.dim(), (cfg.n_mels, cfg.n_frames));
        }
    }

    #[test]
    fn pure_tone_dominates_its_mel_band() {
        let cfg = SpectrogramConfig::toy();
        let band = 20;
        let f = mel_band_center(band, cfg.n_mels, cfg.sample_rate);
        let wave: Vec<f64> = (0..44_000)
            .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / 44_000.0).sin())
            .collect();
        let raw = compute_log_mel_unstandardized(&wave, 44_000, &cfg).unwrap();
        // band energies over the active frames
        let active = 1 + (wave.len() - cfg.n_fft) / cfg.hop;
        let energies: Vec<f64> = (0..cfg.n_mels)
            .map(|m| (0..active.min(cfg.n_frames)).map(|t| raw[[m, t]]).sum())
            .collect();
        let argmax = energies
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, band);
    }

    #[test]
    fn fft_path_matches_direct_dft_oracle() {
        // one Hann-windowed frame of a 1 s tone, naive DFT as the oracle
        let cfg = SpectrogramConfig::toy();
        let f = mel_band_center(10, cfg.n_mels, cfg.sample_rate);
        let wave: Vec<f64> = (0..cfg.n_fft)
            .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / 44_000.0).sin())
            .collect();
        let raw = compute_log_mel_unstandardized(&wave, 44_000, &cfg).unwrap();

        let n = cfg.n_fft;
        let hann: Vec<f64> = (0..n)
            .map(|i| {
                0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
            })
            .collect();
        let mut power = vec![0.0f64; n / 2 + 1];
        for (b, p) in power.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for i in 0..n {
                let ang = -2.0 * std::f64::consts::PI * (b * i) as f64 / n as f64;
                let s = wave[i] * hann[i];
                re += s * ang.cos();
                im += s * ang.sin();
            }
            *p = re * re + im * im;
        }
        let fb = mel_filterbank(cfg.n_mels, n, cfg.sample_rate);
        for m in 0..cfg.n_mels {
            let mel: f64 = (0..n / 2 + 1).map(|b| fb[[m, b]] * power[b]).sum();
            let expect = (mel + cfg.log_eps).ln();
            assert_abs_diff_eq!(raw[[m, 0]], expect, epsilon = 1e-6);
        }
    }

    #[test]
    fn filterbank_rows_are_nonempty_and_nonnegative() {
        let fb = mel_filterbank(64, 1024, 44_000);
        for m in 0..64 {
            let row = fb.row(m);
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!(row.sum() > 0.0, "mel band {m} has no support");
        }
    }
}
