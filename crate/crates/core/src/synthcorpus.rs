//! Synthetic two-bandwidth corpus.
//!
//! Every class is a spectral envelope (a sum of Gaussian peaks over a small
//! floor). Segments are white noise shaped by the envelope of their class,
//! normalized to a fixed level and mixed with white noise. Confusable pairs
//! share their low-band peaks and differ only in a peak above 4 kHz, so they
//! can be told apart in wideband audio but not after narrowband capture.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, Waveform, NARROWBAND_RATE, WIDEBAND_RATE};
use crate::error::{Error, Result};
use crate::features::{write_labels, write_manifest, Bandwidth, ManifestEntry};
use crate::rng;

/// Cutoff of the simulated telephone channel.
pub const TELEPHONE_CUTOFF_HZ: f64 = 3400.0;
/// Generation hop; one label per hop.
pub const HOP_SAMPLES: usize = 160;
/// Analysis frame length at the generation rate (25 ms).
pub const FRAME_SAMPLES: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Peak {
    pub center_hz: f64,
    pub bandwidth_hz: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhoneClass {
    pub id: u32,
    pub envelope: Vec<Peak>,
    pub needs_highband: bool,
}

impl PhoneClass {
    /// Envelope amplitude at `f`, including the floor.
    pub fn amplitude(&self, f: f64, floor: f64) -> f64 {
        floor
            + self
                .envelope
                .iter()
                .map(|p| p.gain * (-0.5 * ((f - p.center_hz) / p.bandwidth_hz).powi(2)).exp())
                .sum::<f64>()
    }
}

// Low-band peak pairs; each class takes one, confusable pairs share one.
const LOW_PATTERNS: [[(f64, f64, f64); 2]; 12] = [
    [(400.0, 150.0, 1.0), (2200.0, 300.0, 0.5)],
    [(900.0, 200.0, 1.0), (1600.0, 200.0, 0.7)],
    [(300.0, 120.0, 0.8), (2900.0, 300.0, 0.8)],
    [(1300.0, 250.0, 1.0), (3100.0, 250.0, 0.6)],
    [(650.0, 180.0, 1.0), (1900.0, 250.0, 0.6)],
    [(1100.0, 150.0, 0.7), (2600.0, 250.0, 0.9)],
    [(500.0, 150.0, 0.6), (1250.0, 200.0, 1.0)],
    [(1700.0, 250.0, 1.0), (2500.0, 200.0, 0.5)],
    [(250.0, 100.0, 1.0), (1000.0, 250.0, 0.4)],
    [(800.0, 200.0, 0.5), (3000.0, 300.0, 1.0)],
    [(2000.0, 300.0, 1.0), (600.0, 150.0, 0.3)],
    [(1500.0, 200.0, 0.8), (3300.0, 200.0, 0.8)],
];

// High-band peak pairs for the confusable pairs.
const HIGH_PEAKS: [(f64, f64); 2] = [(5200.0, 6800.0), (5600.0, 7200.0)];

/// The default class inventory: `n_classes - 2 * pairs` plain classes, then
/// the confusable pairs.
pub fn default_classes(n_classes: usize, confusable_pairs: usize) -> Result<Vec<PhoneClass>> {
    let plain = n_classes
        .checked_sub(2 * confusable_pairs)
        .ok_or_else(|| Error::Config(format!("{confusable_pairs} confusable pairs need at least {} classes", 2 * confusable_pairs)))?;
    if plain + confusable_pairs > LOW_PATTERNS.len() {
        return Err(Error::Config(format!(
            "at most {} distinct low-band patterns are available",
            LOW_PATTERNS.len()
        )));
    }
    let low = |i: usize| -> Vec<Peak> {
        LOW_PATTERNS[i]
            .iter()
            .map(|&(center_hz, bandwidth_hz, gain)| Peak { center_hz, bandwidth_hz, gain })
            .collect()
    };
    let mut classes: Vec<PhoneClass> = (0..plain)
        .map(|i| PhoneClass { id: i as u32, envelope: low(i), needs_highband: false })
        .collect();
    for p in 0..confusable_pairs {
        let (a, b) = HIGH_PEAKS[p % HIGH_PEAKS.len()];
        for high in [a, b] {
            let mut envelope = low(plain + p);
            envelope.push(Peak { center_hz: high, bandwidth_hz: 300.0, gain: 0.8 });
            classes.push(PhoneClass { id: classes.len() as u32, envelope, needs_highband: true });
        }
    }
    Ok(classes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub n_classes: usize,
    pub confusable_pairs: usize,
    /// Explicit class inventory; replaces the default one when present.
    pub classes: Option<Vec<PhoneClass>>,
    pub train_utterances: usize,
    pub test_utterances: usize,
    /// Fraction of wideband utterances in the training partition.
    pub wideband_ratio: f64,
    /// Fraction of wideband utterances in the test partition.
    pub test_wideband_ratio: f64,
    pub utterance_secs: [f64; 2],
    pub segment_ms: [f64; 2],
    pub snr_db: f64,
    /// Segment RMS before noise is added.
    pub level_rms: f64,
    /// Envelope floor relative to unit peak gain.
    pub envelope_floor: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            n_classes: 8,
            confusable_pairs: 2,
            classes: None,
            train_utterances: 600,
            test_utterances: 200,
            wideband_ratio: 0.85,
            test_wideband_ratio: 0.5,
            utterance_secs: [1.0, 3.0],
            segment_ms: [80.0, 300.0],
            snr_db: 20.0,
            level_rms: 0.1,
            envelope_floor: 0.02,
            seed: 1,
        }
    }
}

impl CorpusSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: CorpusSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("corpus spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("wideband_ratio", self.wideband_ratio), ("test_wideband_ratio", self.test_wideband_ratio)] {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {r}")));
            }
        }
        let [lo, hi] = self.utterance_secs;
        if !(lo > 0.05 && lo <= hi) {
            return Err(Error::Config(format!("bad utterance length range {lo}..{hi} s")));
        }
        let [lo, hi] = self.segment_ms;
        if !(lo >= 10.0 && lo <= hi) {
            return Err(Error::Config(format!("bad segment length range {lo}..{hi} ms")));
        }
        if !(self.level_rms > 0.0 && self.level_rms < 0.5) {
            return Err(Error::Config("level_rms must lie in (0, 0.5)".into()));
        }
        let classes = self.classes()?;
        if classes.len() < 2 {
            return Err(Error::Config("a corpus needs at least 2 classes".into()));
        }
        for (i, c) in classes.iter().enumerate() {
            if c.id as usize != i {
                return Err(Error::Config(format!("class {i} has id {}", c.id)));
            }
            if c.envelope.iter().any(|p| !(p.bandwidth_hz > 0.0 && p.gain >= 0.0)) {
                return Err(Error::Config(format!("class {i} has an invalid peak")));
            }
        }
        if self.envelope_floor <= 0.0 && classes.iter().any(|c| c.envelope.is_empty()) {
            return Err(Error::Config("an empty envelope needs a positive floor".into()));
        }
        Ok(())
    }

    pub fn classes(&self) -> Result<Vec<PhoneClass>> {
        match &self.classes {
            Some(c) => Ok(c.clone()),
            None => default_classes(self.n_classes, self.confusable_pairs),
        }
    }

    /// (wideband, narrowband) utterance counts of a partition.
    pub fn split(&self, total: usize, ratio: f64) -> (usize, usize) {
        let wb = ((total as f64) * ratio).round() as usize;
        (wb, total - wb)
    }

    pub fn train_counts(&self) -> (usize, usize) {
        self.split(self.train_utterances, self.wideband_ratio)
    }

    pub fn test_counts(&self) -> (usize, usize) {
        self.split(self.test_utterances, self.test_wideband_ratio)
    }

    fn noise_rms(&self) -> f64 {
        self.level_rms * 10f64.powf(-self.snr_db / 20.0)
    }

    /// Per-sample gain that brings a unit-variance white process shaped by
    /// the class envelope to `level_rms`.
    fn class_gain(&self, class: &PhoneClass, n_bins: usize) -> f64 {
        let nyq = WIDEBAND_RATE as f64 / 2.0;
        let mean_power = (0..n_bins)
            .map(|k| class.amplitude(k as f64 * nyq / (n_bins - 1) as f64, self.envelope_floor).powi(2))
            .sum::<f64>()
            / n_bins as f64;
        self.level_rms / mean_power.sqrt()
    }
}

/// A run of one class, in samples at 16 kHz.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub class: u32,
    pub samples: usize,
}

/// Random class sequence for one utterance. The length is a whole number of
/// hops, consecutive segments have different classes.
pub fn random_segments(spec: &CorpusSpec, n_classes: usize, rng: &mut impl Rng) -> Vec<Segment> {
    let rate = WIDEBAND_RATE as f64;
    let secs = rng.random_range(spec.utterance_secs[0]..=spec.utterance_secs[1]);
    let total = ((secs * rate / HOP_SAMPLES as f64).round() as usize).max(3) * HOP_SAMPLES;
    let mut out: Vec<Segment> = Vec::new();
    let mut used = 0;
    while used < total {
        let ms = rng.random_range(spec.segment_ms[0]..=spec.segment_ms[1]);
        let len = ((ms / 1000.0 * rate) as usize).clamp(1, total - used);
        let class = loop {
            let c = rng.random_range(0..n_classes) as u32;
            if out.last().is_none_or(|s| s.class != c) || n_classes == 1 {
                break c;
            }
        };
        out.push(Segment { class, samples: len });
        used += len;
    }
    out
}

/// Frame labels at a 10 ms hop for a 16 kHz signal of `len` samples: the
/// class of the segment holding each frame's centre sample.
pub fn frame_labels(segments: &[Segment], len: usize) -> Vec<u32> {
    let n_frames = if len < FRAME_SAMPLES { 0 } else { (len - FRAME_SAMPLES) / HOP_SAMPLES + 1 };
    let mut bounds = Vec::with_capacity(segments.len());
    let mut end = 0;
    for s in segments {
        end += s.samples;
        bounds.push((end, s.class));
    }
    (0..n_frames)
        .map(|t| {
            let centre = t * HOP_SAMPLES + FRAME_SAMPLES / 2;
            bounds.iter().find(|(e, _)| centre < *e).map_or(bounds.last().unwrap().1, |b| b.1)
        })
        .collect()
}

fn shaped_noise(
    class: &PhoneClass,
    n: usize,
    spec: &CorpusSpec,
    planner: &mut FftPlanner<f64>,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(rng.sample(StandardNormal), 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let rate = WIDEBAND_RATE as f64;
    let gain = spec.class_gain(class, 257);
    for (k, b) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * rate / n as f64;
        *b *= class.amplitude(f, spec.envelope_floor) * gain / n as f64;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.into_iter().map(|c| c.re).collect()
}

/// Renders one utterance at 16 kHz and returns it at `rate` with one label
/// per 10 ms frame. Narrowband utterances pass through a 3.4 kHz band limit
/// before decimation to 8 kHz.
pub fn synth_utterance(
    segments: &[Segment],
    rate: u32,
    spec: &CorpusSpec,
    rng: &mut impl Rng,
) -> Result<(Waveform, Vec<u32>)> {
    if rate != NARROWBAND_RATE && rate != WIDEBAND_RATE {
        return Err(Error::Config(format!("unsupported synthesis rate {rate} Hz")));
    }
    let classes = spec.classes()?;
    let mut planner = FftPlanner::new();
    let mut samples = Vec::with_capacity(segments.iter().map(|s| s.samples).sum());
    for seg in segments {
        let class = classes
            .get(seg.class as usize)
            .ok_or_else(|| Error::Config(format!("class {} not in a {}-class inventory", seg.class, classes.len())))?;
        samples.extend(shaped_noise(class, seg.samples, spec, &mut planner, rng));
    }
    let noise = spec.noise_rms();
    for s in samples.iter_mut() {
        *s += noise * rng.sample::<f64, _>(StandardNormal);
    }
    let labels = frame_labels(segments, samples.len());
    let wb = Waveform::new(samples, WIDEBAND_RATE)?;
    let w = if rate == NARROWBAND_RATE {
        let limited = dsp::band_limit(&wb, TELEPHONE_CUTOFF_HZ)?;
        dsp::resample(&limited, NARROWBAND_RATE)?
    } else {
        wb
    };
    Ok((w, labels))
}

/// Paths written by [`synth_corpus`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusPaths {
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
}

#[derive(Debug, Clone, Copy)]
enum Partition {
    Train,
    Test,
}

impl Partition {
    fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Test => "test",
        }
    }

    fn label(self) -> u64 {
        match self {
            Partition::Train => rng::label::CORPUS_TRAIN,
            Partition::Test => rng::label::CORPUS_TEST,
        }
    }
}

fn write_partition(spec: &CorpusSpec, out_dir: &Path, part: Partition, n_classes: usize) -> Result<PathBuf> {
    let (n_wb, n_nb) = match part {
        Partition::Train => spec.train_counts(),
        Partition::Test => spec.test_counts(),
    };
    let jobs: Vec<(usize, Bandwidth)> = (0..n_wb)
        .map(|i| (i, Bandwidth::Wideband))
        .chain((0..n_nb).map(|i| (n_wb + i, Bandwidth::Narrowband)))
        .collect();
    let entries: Vec<ManifestEntry> = jobs
        .par_iter()
        .map(|&(index, bandwidth)| {
            let mut r = rng::stream(spec.seed, &[part.label(), index as u64]);
            let segments = random_segments(spec, n_classes, &mut r);
            let (w, labels) = synth_utterance(&segments, bandwidth.rate(), spec, &mut r)?;
            let id = format!("{}_{}_{index:05}", part.name(), bandwidth.short_name());
            let wav_path = out_dir.join("wav").join(format!("{id}.wav"));
            let label_path = out_dir.join("labels").join(format!("{id}.lab"));
            dsp::write_wav(&w, &wav_path)?;
            write_labels(&label_path, &labels)?;
            Ok(ManifestEntry { wav_path, bandwidth, label_path })
        })
        .collect::<Result<_>>()?;
    let manifest = out_dir.join(format!("{}.manifest", part.name()));
    write_manifest(&manifest, &entries)?;
    info!("wrote {} {} utterances ({n_wb} WB, {n_nb} NB)", entries.len(), part.name());
    Ok(manifest)
}

/// Writes WAVs, label files, train/test manifests and a copy of the spec.
pub fn synth_corpus(spec: &CorpusSpec, out_dir: &Path) -> Result<CorpusPaths> {
    spec.validate()?;
    let n_classes = spec.classes()?.len();
    for sub in ["wav", "labels"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let spec_path = out_dir.join("corpus.toml");
    fs::write(&spec_path, spec.to_toml()).map_err(|e| Error::io(&spec_path, e))?;
    Ok(CorpusPaths {
        train_manifest: write_partition(spec, out_dir, Partition::Train, n_classes)?,
        test_manifest: write_partition(spec, out_dir, Partition::Test, n_classes)?,
    })
}

/// Monte-Carlo estimate of the best achievable single-frame accuracy.
///
/// Each trial draws a class, renders a short segment at 16 kHz and takes the
/// periodogram of one Hamming-windowed 25 ms frame. The oracle picks the
/// class with the highest Whittle likelihood under the true class spectra,
/// restricted to bins up to 3.4 kHz for narrowband. Exact ties are credited
/// `1/k`.
pub fn bayes_frame_accuracy(spec: &CorpusSpec, bandwidth: Bandwidth, trials: usize) -> Result<f64> {
    spec.validate()?;
    let classes = spec.classes()?;
    let n_fft = 512;
    let rate = WIDEBAND_RATE as f64;
    let max_bin = match bandwidth {
        Bandwidth::Wideband => n_fft / 2,
        Bandwidth::Narrowband => (TELEPHONE_CUTOFF_HZ / rate * n_fft as f64).floor() as usize,
    };
    let window: Vec<f64> = (0..FRAME_SAMPLES)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (FRAME_SAMPLES - 1) as f64).cos())
        .collect();
    let w2: f64 = window.iter().map(|w| w * w).sum();
    let noise_var = spec.noise_rms().powi(2);
    let expected: Vec<Vec<f64>> = classes
        .iter()
        .map(|c| {
            let g = spec.class_gain(c, 257);
            (0..=max_bin)
                .map(|k| {
                    let f = k as f64 * rate / n_fft as f64;
                    ((g * c.amplitude(f, spec.envelope_floor)).powi(2) + noise_var) * w2
                })
                .collect()
        })
        .collect();

    let chunk = 64;
    let n_chunks = trials.div_ceil(chunk);
    let credit: f64 = (0..n_chunks)
        .into_par_iter()
        .map(|ci| -> Result<f64> {
            let mut r = rng::stream(spec.seed, &[rng::label::BAYES, bandwidth.flag() as u64, ci as u64]);
            let mut planner = FftPlanner::new();
            let fft = planner.plan_fft_forward(n_fft);
            let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
            let mut sum = 0.0;
            let span = FRAME_SAMPLES * 2;
            for _ in 0..chunk.min(trials - ci * chunk) {
                let class = r.random_range(0..classes.len());
                let seg = [Segment { class: class as u32, samples: span }];
                let mut x = Vec::with_capacity(span);
                x.extend(shaped_noise(&classes[class], span, spec, &mut planner, &mut r));
                let noise = spec.noise_rms();
                for s in x.iter_mut() {
                    *s += noise * r.sample::<f64, _>(StandardNormal);
                }
                debug_assert_eq!(frame_labels(&seg, span)[0], class as u32);
                let start = (span - FRAME_SAMPLES) / 2;
                buf.fill(Complex::new(0.0, 0.0));
                for (i, b) in buf.iter_mut().take(FRAME_SAMPLES).enumerate() {
                    *b = Complex::new(x[start + i] * window[i], 0.0);
                }
                fft.process(&mut buf);
                let scores: Vec<f64> = expected
                    .iter()
                    .map(|s| -(0..=max_bin).map(|k| s[k].ln() + buf[k].norm_sqr() / s[k]).sum::<f64>())
                    .collect();
                let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let tol = 1e-9 * best.abs().max(1.0);
                let tied: Vec<usize> = (0..scores.len()).filter(|&c| best - scores[c] <= tol).collect();
                if tied.contains(&class) {
                    sum += 1.0 / tied.len() as f64;
                }
            }
            Ok(sum)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .sum();
    Ok(credit / trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{read_labels, read_manifest, FeatureScenario, Frontend, FrontendConfig};

    fn one_class_utterance(class: u32, secs: f64) -> Vec<Segment> {
        vec![Segment { class, samples: (secs * 16000.0) as usize }]
    }

    #[test]
    fn default_inventory() {
        let classes = default_classes(8, 2).unwrap();
        assert_eq!(classes.len(), 8);
        assert_eq!(classes.iter().filter(|c| c.needs_highband).count(), 4);
        for c in classes.iter().filter(|c| c.needs_highband) {
            assert!(c.envelope.iter().any(|p| (4000.0..=8000.0).contains(&p.center_hz)));
        }
        // confusable pairs agree below 4 kHz within 1 dB
        for pair in [(4, 5), (6, 7)] {
            for f in (0..=4000).step_by(20) {
                let a = classes[pair.0].amplitude(f as f64, 0.02);
                let b = classes[pair.1].amplitude(f as f64, 0.02);
                assert!((20.0 * (a / b).log10()).abs() <= 1.0, "{pair:?} at {f} Hz");
            }
        }
        assert!(default_classes(3, 2).is_err());
    }

    #[test]
    fn one_second_single_class() {
        let spec = CorpusSpec::default();
        let mut r = rng::stream(1, &[42]);
        let (w, labels) = synth_utterance(&one_class_utterance(3, 1.0), 16000, &spec, &mut r).unwrap();
        assert_eq!(w.len(), 16000);
        assert_eq!(labels.len(), 98);
        assert!(labels.iter().all(|&l| l == 3));
    }

    #[test]
    fn deterministic_and_class_checked() {
        let spec = CorpusSpec::default();
        let segs = random_segments(&spec, 8, &mut rng::stream(5, &[1]));
        let a = synth_utterance(&segs, 8000, &spec, &mut rng::stream(5, &[2])).unwrap();
        let b = synth_utterance(&segs, 8000, &spec, &mut rng::stream(5, &[2])).unwrap();
        assert_eq!(a, b);
        let bad = [Segment { class: 8, samples: 1600 }];
        assert!(matches!(synth_utterance(&bad, 16000, &spec, &mut rng::stream(5, &[2])), Err(Error::Config(_))));
        assert!(synth_utterance(&segs, 11025, &spec, &mut rng::stream(5, &[2])).is_err());
    }

    #[test]
    fn segments_tile_the_utterance() {
        let spec = CorpusSpec::default();
        let mut r = rng::stream(9, &[]);
        for _ in 0..50 {
            let segs = random_segments(&spec, 8, &mut r);
            let total: usize = segs.iter().map(|s| s.samples).sum();
            assert_eq!(total % HOP_SAMPLES, 0);
            assert!((16000..=48000).contains(&total));
            assert!(segs.windows(2).all(|w| w[0].class != w[1].class));
        }
    }

    #[test]
    fn narrowband_has_no_energy_above_cutoff() {
        let spec = CorpusSpec::default();
        let segs = one_class_utterance(5, 1.0);
        let (w, _) = synth_utterance(&segs, 8000, &spec, &mut rng::stream(3, &[])).unwrap();
        let n = 4096;
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let (mut total, mut high) = (0.0, 0.0);
        let start = 2000;
        let mut buf: Vec<Complex<f64>> = (0..n)
            .map(|i| {
                let win = 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
                Complex::new(w.samples[start + i] * win, 0.0)
            })
            .collect();
        fft.process(&mut buf);
        for k in 0..=n / 2 {
            let p = buf[k].norm_sqr();
            total += p;
            if k as f64 * 8000.0 / n as f64 > 3500.0 {
                high += p;
            }
        }
        assert!(10.0 * (high / total).log10() <= -40.0, "{}", 10.0 * (high / total).log10());
    }

    #[test]
    fn confusable_pairs_match_in_narrowband_mel_spectra() {
        let spec = CorpusSpec::default();
        let frontend = Frontend::new(FrontendConfig::default()).unwrap();
        let long_term = |class: u32| {
            let mut acc = vec![0.0; 40];
            let mut frames = 0;
            for u in 0..100u64 {
                let segs = one_class_utterance(class, 0.5);
                let (w, _) = synth_utterance(&segs, 8000, &spec, &mut rng::stream(77, &[class as u64, u])).unwrap();
                let lm = frontend.log_mel_raw(&w).unwrap();
                for row in lm.chunks(40) {
                    for (a, v) in acc.iter_mut().zip(row) {
                        *a += v.exp();
                    }
                    frames += 1;
                }
            }
            acc.iter().map(|a| 10.0 * (a / frames as f64).log10()).collect::<Vec<_>>()
        };
        for (a, b) in [(4, 5), (6, 7)] {
            let (sa, sb) = (long_term(a), long_term(b));
            let worst = sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(worst <= 1.0, "pair ({a},{b}) differs by {worst} dB");
        }
    }

    #[test]
    fn bayes_ceilings() {
        let spec = CorpusSpec::default();
        let wb = bayes_frame_accuracy(&spec, Bandwidth::Wideband, 3000).unwrap();
        let nb = bayes_frame_accuracy(&spec, Bandwidth::Narrowband, 3000).unwrap();
        // confusable pairs hold half the prior mass
        assert!(wb >= 0.95, "wb {wb}");
        assert!(nb <= wb - 0.25 + 0.02, "nb {nb} wb {wb}");

        let plain = CorpusSpec { confusable_pairs: 0, ..CorpusSpec::default() };
        let wb = bayes_frame_accuracy(&plain, Bandwidth::Wideband, 3000).unwrap();
        let nb = bayes_frame_accuracy(&plain, Bandwidth::Narrowband, 3000).unwrap();
        assert!((wb - nb).abs() <= 0.01, "wb {wb} nb {nb}");

        let flat: Vec<PhoneClass> = (0..4).map(|id| PhoneClass { id, envelope: vec![], needs_highband: false }).collect();
        let noise = CorpusSpec { classes: Some(flat), ..CorpusSpec::default() };
        let acc = bayes_frame_accuracy(&noise, Bandwidth::Wideband, 500).unwrap();
        assert!((acc - 0.25).abs() < 1e-12, "{acc}");
    }

    #[test]
    fn corpus_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CorpusSpec {
            train_utterances: 118,
            test_utterances: 6,
            utterance_secs: [0.5, 0.8],
            ..CorpusSpec::default()
        };
        let paths = synth_corpus(&spec, dir.path()).unwrap();
        let train = read_manifest(&paths.train_manifest).unwrap();
        assert_eq!(train.len(), 118);
        assert_eq!(train.iter().filter(|e| e.bandwidth == Bandwidth::Wideband).count(), 100);
        assert_eq!(train.iter().filter(|e| e.bandwidth == Bandwidth::Narrowband).count(), 18);
        let test = read_manifest(&paths.test_manifest).unwrap();
        let ids: std::collections::HashSet<_> = train.iter().map(|e| e.wav_path.clone()).collect();
        assert!(test.iter().all(|e| !ids.contains(&e.wav_path)));

        let frontend = Frontend::new(FrontendConfig::default()).unwrap();
        for e in train.iter().chain(&test) {
            let w = dsp::read_wav(&e.wav_path).unwrap();
            assert_eq!(w.rate, e.bandwidth.rate());
            let labels = read_labels(&e.label_path).unwrap();
            for scenario in [FeatureScenario::Native, FeatureScenario::Upsample16k] {
                let f = frontend.featurize_utterance(&w, "u", e.bandwidth, scenario).unwrap();
                assert_eq!(f.n_frames, labels.len());
            }
        }

        let again = tempfile::tempdir().unwrap();
        synth_corpus(&spec, again.path()).unwrap();
        for name in ["train.manifest", "test.manifest"] {
            assert_eq!(
                fs::read(dir.path().join(name)).unwrap(),
                fs::read(again.path().join(name)).unwrap()
            );
        }
        for e in &train {
            let rel = e.wav_path.strip_prefix(dir.path()).unwrap();
            assert_eq!(fs::read(&e.wav_path).unwrap(), fs::read(again.path().join(rel)).unwrap());
        }
    }
}
