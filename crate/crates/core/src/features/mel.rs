use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::dsp::Waveform;
use crate::error::{Error, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Windowed analysis frames, row-major `n_frames x frame_len`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    pub n_frames: usize,
    pub frame_len: usize,
    pub data: Vec<f64>,
}

impl Frames {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.frame_len..(t + 1) * self.frame_len]
    }
}

pub fn samples_per_ms(rate: u32, ms: f64) -> usize {
    (rate as f64 * ms / 1000.0).round() as usize
}

/// Number of frames a signal of `len` samples yields.
pub fn frame_count(len: usize, frame_len: usize, hop: usize) -> usize {
    if len < frame_len {
        0
    } else {
        1 + (len - frame_len) / hop
    }
}

/// Slices a waveform into overlapping frames, applies per-frame
/// pre-emphasis (the first sample of each frame is kept as is) and a Hamming
/// window.
pub fn frame_signal(w: &Waveform, frame_ms: f64, hop_ms: f64, preemphasis: f64) -> Result<Frames> {
    let frame_len = samples_per_ms(w.rate, frame_ms);
    let hop = samples_per_ms(w.rate, hop_ms);
    if frame_len == 0 || hop == 0 {
        return Err(Error::Config(format!(
            "frame {frame_ms} ms / hop {hop_ms} ms too short at {} Hz",
            w.rate
        )));
    }
    let n_frames = frame_count(w.len(), frame_len, hop);
    if n_frames == 0 {
        return Err(Error::EmptyFeature {
            samples: w.len(),
            frame_len,
        });
    }
    let window: Vec<f64> = (0..frame_len)
        .map(|i| {
            if frame_len == 1 {
                1.0
            } else {
                0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (frame_len - 1) as f64).cos()
            }
        })
        .collect();
    let mut data = Vec::with_capacity(n_frames * frame_len);
    for t in 0..n_frames {
        let x = &w.samples[t * hop..t * hop + frame_len];
        data.push(x[0] * window[0]);
        for i in 1..frame_len {
            data.push((x[i] - preemphasis * x[i - 1]) * window[i]);
        }
    }
    Ok(Frames {
        n_frames,
        frame_len,
        data,
    })
}

/// Triangular filters with centers uniformly spaced on the mel scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MelBank {
    /// Row-major `n_filters x n_bins`, with `n_bins = n_fft / 2 + 1`.
    pub weights: Vec<f64>,
    pub n_fft: usize,
    pub n_bins: usize,
    pub rate: u32,
    pub fmin: f64,
    pub fmax: f64,
    pub n_filters: usize,
    pub centers_hz: Vec<f64>,
}

impl MelBank {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n_bins..(i + 1) * self.n_bins]
    }

    pub fn bin_hz(&self, k: usize) -> f64 {
        k as f64 * self.rate as f64 / self.n_fft as f64
    }

    /// Projects a power spectrum (`n_bins` values) onto the filters.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).iter().zip(power).map(|(w, p)| w * p).sum();
        }
    }
}

pub fn mel_filterbank(n_fft: usize, rate: u32, n_filters: usize, fmin: f64, fmax: f64) -> Result<MelBank> {
    let nyquist = rate as f64 / 2.0;
    if n_filters == 0 {
        return Err(Error::Config("mel bank needs at least one filter".into()));
    }
    if !(fmin >= 0.0 && fmin < fmax) {
        return Err(Error::Config(format!("mel range [{fmin}, {fmax}] Hz is empty")));
    }
    if fmax > nyquist {
        return Err(Error::Config(format!(
            "mel fmax {fmax} Hz exceeds Nyquist {nyquist} Hz"
        )));
    }
    if n_fft < 2 {
        return Err(Error::Config(format!("n_fft {n_fft} too small")));
    }
    let n_bins = n_fft / 2 + 1;
    let (mel_lo, mel_hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_filters + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_filters + 1) as f64))
        .collect();
    let bin_hz = rate as f64 / n_fft as f64;
    let mut weights = vec![0.0; n_filters * n_bins];
    for i in 0..n_filters {
        let (lo, center, hi) = (edges[i], edges[i + 1], edges[i + 2]);
        let row = &mut weights[i * n_bins..(i + 1) * n_bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let rising = (f - lo) / (center - lo);
            let falling = (hi - f) / (hi - center);
            *w = rising.min(falling).max(0.0);
        }
        if row.iter().all(|&w| w == 0.0) {
            return Err(Error::Config(format!(
                "mel filter {i} ({lo:.1}-{hi:.1} Hz) covers no FFT bin at n_fft={n_fft}"
            )));
        }
    }
    Ok(MelBank {
        weights,
        n_fft,
        n_bins,
        rate,
        fmin,
        fmax,
        n_filters,
        centers_hz: edges[1..=n_filters].to_vec(),
    })
}

/// Log mel energies before normalization, row-major `T x n_filters`.
pub struct LogMelAnalyzer {
    bank: MelBank,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LogMelAnalyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogMelAnalyzer").field("bank", &self.bank).finish()
    }
}

impl LogMelAnalyzer {
    pub fn new(bank: MelBank) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(bank.n_fft);
        LogMelAnalyzer { bank, fft }
    }

    pub fn bank(&self) -> &MelBank {
        &self.bank
    }

    pub fn analyze(&self, frames: &Frames, log_floor: f64) -> Result<Vec<f64>> {
        let n_fft = self.bank.n_fft;
        if frames.frame_len > n_fft {
            return Err(Error::Config(format!(
                "frame of {} samples exceeds n_fft {n_fft}",
                frames.frame_len
            )));
        }
        let d = self.bank.n_filters;
        let mut out = vec![0.0; frames.n_frames * d];
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; self.bank.n_bins];
        for t in 0..frames.n_frames {
            for (b, &x) in buf.iter_mut().zip(frames.frame(t)) {
                *b = Complex::new(x, 0.0);
            }
            buf[frames.frame_len..].fill(Complex::new(0.0, 0.0));
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            let row = &mut out[t * d..(t + 1) * d];
            self.bank.apply(&power, row);
            for v in row.iter_mut() {
                *v = v.max(log_floor).ln();
            }
        }
        Ok(out)
    }
}

/// Per-utterance mean and variance normalization of each column of a
/// row-major `n_rows x dim` matrix. Columns with zero variance are only
/// centered.
pub fn cmvn(data: &mut [f64], dim: usize) {
    let n = data.len() / dim;
    if n == 0 {
        return;
    }
    for j in 0..dim {
        let mean = (0..n).map(|t| data[t * dim + j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|t| (data[t * dim + j] - mean).powi(2)).sum::<f64>() / n as f64;
        let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
        for t in 0..n {
            let v = &mut data[t * dim + j];
            *v = (*v - mean) * scale;
        }
    }
}
