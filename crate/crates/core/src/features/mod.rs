//! Log-mel filterbank front end with context stacking.
//!
//! Both bandwidths produce the same feature dimension. Under the native-rate
//! scenario an 8 kHz signal is analyzed with a bank spanning 0-4 kHz and a
//! 16 kHz signal with one spanning 0-8 kHz, so a given mel index covers a
//! different physical band for each. Under the upsampling scenario
//! narrowband audio is first converted to 16 kHz and shares the wideband
//! bank.

mod io;
mod mel;

pub use io::{
    read_feature_file, read_labels, read_manifest, write_feature_file, write_labels,
    write_manifest, FeatureFile, ManifestEntry,
};
pub use mel::{
    cmvn, frame_count, frame_signal, hz_to_mel, mel_filterbank, mel_to_hz, samples_per_ms,
    Frames, LogMelAnalyzer, MelBank,
};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, Waveform, NARROWBAND_RATE, WIDEBAND_RATE};
use crate::error::{Error, Result};

/// Bandwidth flag `c`: 0 for wideband, 1 for narrowband.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    Wideband,
    Narrowband,
}

impl Bandwidth {
    pub const ALL: [Bandwidth; 2] = [Bandwidth::Wideband, Bandwidth::Narrowband];

    pub fn flag(self) -> u8 {
        match self {
            Bandwidth::Wideband => 0,
            Bandwidth::Narrowband => 1,
        }
    }

    pub fn from_flag(flag: u32) -> Result<Self> {
        match flag {
            0 => Ok(Bandwidth::Wideband),
            1 => Ok(Bandwidth::Narrowband),
            other => Err(Error::Flag(other)),
        }
    }

    /// Native capture rate for this bandwidth.
    pub fn rate(self) -> u32 {
        match self {
            Bandwidth::Wideband => WIDEBAND_RATE,
            Bandwidth::Narrowband => NARROWBAND_RATE,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Bandwidth::Wideband => "WB",
            Bandwidth::Narrowband => "NB",
        }
    }
}

/// How waveforms are brought to the analysis rate before feature
/// extraction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureScenario {
    /// Analyze every signal at its own rate.
    #[default]
    Native,
    /// Upsample 8 kHz audio to 16 kHz first.
    Upsample16k,
    /// Downsample 16 kHz audio to 8 kHz first (narrowband-only models).
    Downsample8k,
}

impl FeatureScenario {
    pub const ALL: [FeatureScenario; 3] = [
        FeatureScenario::Native,
        FeatureScenario::Upsample16k,
        FeatureScenario::Downsample8k,
    ];

    pub fn code(self) -> u8 {
        match self {
            FeatureScenario::Native => 0,
            FeatureScenario::Upsample16k => 1,
            FeatureScenario::Downsample8k => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.code() == code)
            .ok_or_else(|| Error::Format(format!("unknown feature scenario code {code}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureScenario::Native => "native",
            FeatureScenario::Upsample16k => "upsample-16k",
            FeatureScenario::Downsample8k => "downsample-8k",
        }
    }

    fn analysis_rate(self, rate: u32) -> u32 {
        match self {
            FeatureScenario::Native => rate,
            FeatureScenario::Upsample16k => WIDEBAND_RATE,
            FeatureScenario::Downsample8k => NARROWBAND_RATE,
        }
    }
}

impl fmt::Display for FeatureScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureScenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown feature scenario {s:?} (expected one of: native, upsample-16k, downsample-8k)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendConfig {
    pub n_mels: usize,
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub preemphasis: f64,
    pub fmin_hz: f64,
    pub log_floor: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            n_mels: 40,
            frame_ms: 25.0,
            hop_ms: 10.0,
            preemphasis: 0.97,
            fmin_hz: 0.0,
            log_floor: 1e-10,
        }
    }
}

/// Per-utterance log-mel features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub utterance_id: String,
    pub bandwidth: Bandwidth,
    pub n_frames: usize,
    pub dim: usize,
    /// Row-major `n_frames x dim`.
    pub frames: Vec<f64>,
}

impl FeatureTensor {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t * self.dim..(t + 1) * self.dim]
    }
}

/// One classifier input: `2k + 1` stacked frames centred on a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextWindow {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`.
    pub patch: Vec<f64>,
    pub bandwidth: Bandwidth,
    pub label: Option<u32>,
}

/// Writes the context patch for frame `t` into `out` (`(2k+1) * dim`
/// values). Frames beyond either end replicate the first/last frame.
pub fn fill_context(f: &FeatureTensor, t: usize, k: usize, out: &mut [f64]) {
    let d = f.dim;
    let last = f.n_frames - 1;
    for r in 0..2 * k + 1 {
        let src = (t + r).saturating_sub(k).min(last);
        out[r * d..(r + 1) * d].copy_from_slice(f.frame(src));
    }
}

/// One window per frame.
pub fn stack_context(f: &FeatureTensor, k: usize) -> Vec<ContextWindow> {
    (0..f.n_frames)
        .map(|t| {
            let mut patch = vec![0.0; (2 * k + 1) * f.dim];
            fill_context(f, t, k, &mut patch);
            ContextWindow {
                rows: 2 * k + 1,
                cols: f.dim,
                patch,
                bandwidth: f.bandwidth,
                label: None,
            }
        })
        .collect()
}

/// Feature extractor holding one mel bank per analysis rate.
#[derive(Debug)]
pub struct Frontend {
    config: FrontendConfig,
    narrowband: LogMelAnalyzer,
    wideband: LogMelAnalyzer,
}

fn n_fft_for(rate: u32, frame_ms: f64) -> usize {
    samples_per_ms(rate, frame_ms).next_power_of_two()
}

impl Frontend {
    pub fn new(config: FrontendConfig) -> Result<Self> {
        let analyzer = |rate: u32| -> Result<LogMelAnalyzer> {
            let bank = mel_filterbank(
                n_fft_for(rate, config.frame_ms),
                rate,
                config.n_mels,
                config.fmin_hz,
                rate as f64 / 2.0,
            )?;
            Ok(LogMelAnalyzer::new(bank))
        };
        Ok(Frontend {
            narrowband: analyzer(NARROWBAND_RATE)?,
            wideband: analyzer(WIDEBAND_RATE)?,
            config,
        })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.config
    }

    pub fn bank(&self, rate: u32) -> Result<&MelBank> {
        Ok(self.analyzer(rate)?.bank())
    }

    fn analyzer(&self, rate: u32) -> Result<&LogMelAnalyzer> {
        match rate {
            NARROWBAND_RATE => Ok(&self.narrowband),
            WIDEBAND_RATE => Ok(&self.wideband),
            other => Err(Error::Config(format!("no mel bank for {other} Hz"))),
        }
    }

    /// Log mel energies without normalization.
    pub fn log_mel_raw(&self, w: &Waveform) -> Result<Vec<f64>> {
        let analyzer = self.analyzer(w.rate)?;
        let frames = frame_signal(w, self.config.frame_ms, self.config.hop_ms, self.config.preemphasis)?;
        analyzer.analyze(&frames, self.config.log_floor)
    }

    /// Normalized log-mel features of a waveform at its own rate.
    pub fn log_mel(&self, w: &Waveform, id: &str, bandwidth: Bandwidth) -> Result<FeatureTensor> {
        let mut frames = self.log_mel_raw(w)?;
        let dim = self.config.n_mels;
        cmvn(&mut frames, dim);
        Ok(FeatureTensor {
            utterance_id: id.to_string(),
            bandwidth,
            n_frames: frames.len() / dim,
            dim,
            frames,
        })
    }

    /// Resamples as the scenario dictates, then extracts features. The
    /// bandwidth flag must agree with the waveform's native rate.
    pub fn featurize_utterance(
        &self,
        w: &Waveform,
        id: &str,
        bandwidth: Bandwidth,
        scenario: FeatureScenario,
    ) -> Result<FeatureTensor> {
        if w.rate != bandwidth.rate() {
            return Err(Error::Data(format!(
                "utterance {id}: flagged {} but sampled at {} Hz",
                bandwidth.short_name(),
                w.rate
            )));
        }
        let target = scenario.analysis_rate(w.rate);
        if target != w.rate {
            debug!("{id}: resampling {} Hz -> {target} Hz ({scenario})", w.rate);
            let converted = dsp::resample(w, target)?;
            self.log_mel(&converted, id, bandwidth)
        } else {
            self.log_mel(w, id, bandwidth)
        }
    }
}

/// Featurized utterance with optional frame labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub features: FeatureTensor,
    pub labels: Option<Vec<u32>>,
}

impl Utterance {
    pub fn id(&self) -> &str {
        &self.features.utterance_id
    }

    pub fn bandwidth(&self) -> Bandwidth {
        self.features.bandwidth
    }

    pub fn n_frames(&self) -> usize {
        self.features.n_frames
    }
}

pub fn utterance_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Featurizes every manifest entry (in parallel; output order follows the
/// manifest). Errors name the offending utterance.
pub fn featurize_manifest(
    entries: &[ManifestEntry],
    frontend: &Frontend,
    scenario: FeatureScenario,
) -> Result<Vec<Utterance>> {
    entries
        .par_iter()
        .map(|e| {
            let id = utterance_id(&e.wav_path);
            let wrap = |err: Error| match err {
                Error::Data(msg) => Error::Data(msg),
                other => Error::Data(format!("utterance {id}: {other}")),
            };
            let w = dsp::read_wav(&e.wav_path).map_err(wrap)?;
            let features = frontend
                .featurize_utterance(&w, &id, e.bandwidth, scenario)
                .map_err(wrap)?;
            let labels = read_labels(&e.label_path).map_err(wrap)?;
            if labels.len() != features.n_frames {
                return Err(Error::Data(format!(
                    "utterance {id}: {} labels for {} frames",
                    labels.len(),
                    features.n_frames
                )));
            }
            Ok(Utterance {
                features,
                labels: Some(labels),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn tensor(n_frames: usize, dim: usize) -> FeatureTensor {
        FeatureTensor {
            utterance_id: "u".into(),
            bandwidth: Bandwidth::Narrowband,
            n_frames,
            dim,
            frames: (0..n_frames * dim).map(|i| i as f64).collect(),
        }
    }

    fn tone(freq: f64, rate: u32, n: usize) -> Waveform {
        let s = (0..n)
            .map(|i| 0.3 * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin())
            .collect();
        Waveform::new(s, rate).unwrap()
    }

    #[test]
    fn single_frame_context_replicates() {
        let f = tensor(1, 4);
        let w = stack_context(&f, 10);
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].rows, 21);
        for r in 0..21 {
            assert_eq!(&w[0].patch[r * 4..(r + 1) * 4], f.frame(0));
        }
        assert_eq!(w[0].bandwidth, Bandwidth::Narrowband);
    }

    #[test]
    fn interior_context_rows() {
        let f = tensor(100, 3);
        let w = stack_context(&f, 10);
        assert_eq!(w.len(), 100);
        for r in 0..21 {
            assert_eq!(&w[50].patch[r * 3..(r + 1) * 3], f.frame(40 + r));
        }
        // consecutive interior windows share 20 of 21 rows
        assert_eq!(w[30].patch[3..], w[31].patch[..20 * 3]);
    }

    #[test]
    fn bandwidth_flags() {
        assert_eq!(Bandwidth::from_flag(0).unwrap(), Bandwidth::Wideband);
        assert_eq!(Bandwidth::from_flag(1).unwrap().flag(), 1);
        assert!(matches!(Bandwidth::from_flag(2), Err(Error::Flag(2))));
    }

    #[test]
    fn white_noise_is_normalized() {
        let fe = Frontend::new(FrontendConfig::default()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let w = Waveform::new((0..16000).map(|_| rng.random_range(-0.5..0.5)).collect(), 16000).unwrap();
        let f = fe.log_mel(&w, "noise", Bandwidth::Wideband).unwrap();
        assert_eq!(f.dim, 40);
        assert!(f.frames.iter().all(|v| v.is_finite()));
        for j in 0..40 {
            let col: Vec<f64> = (0..f.n_frames).map(|t| f.frame(t)[j]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() <= 1e-6 && (var - 1.0).abs() <= 1e-6, "dim {j}: {mean} {var}");
        }
    }

    #[test]
    fn tone_peaks_in_covering_filter() {
        let fe = Frontend::new(FrontendConfig::default()).unwrap();
        let raw = fe.log_mel_raw(&tone(1000.0, 16000, 4000)).unwrap();
        let bank = fe.bank(16000).unwrap();
        let row = &raw[5 * 40..6 * 40];
        let argmax = (0..40).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        let bin = (1000.0 / bank.bin_hz(1)).round() as usize;
        assert!(bank.row(argmax)[bin] > 0.0);
        // and it is the filter whose center lies nearest the tone
        let nearest = (0..40)
            .min_by(|&a, &b| {
                (bank.centers_hz[a] - 1000.0).abs().total_cmp(&(bank.centers_hz[b] - 1000.0).abs())
            })
            .unwrap();
        assert_eq!(argmax, nearest);
    }

    #[test]
    fn silence_hits_log_floor() {
        let fe = Frontend::new(FrontendConfig::default()).unwrap();
        let raw = fe.log_mel_raw(&Waveform::new(vec![0.0; 1600], 8000).unwrap()).unwrap();
        assert!(raw.iter().all(|&v| v == 1e-10f64.ln()));
    }

    #[test]
    fn scenarios_route_rates() {
        let fe = Frontend::new(FrontendConfig::default()).unwrap();
        let nb = tone(500.0, 8000, 8000);
        let native = fe.featurize_utterance(&nb, "n", Bandwidth::Narrowband, FeatureScenario::Native).unwrap();
        let up = fe.featurize_utterance(&nb, "n", Bandwidth::Narrowband, FeatureScenario::Upsample16k).unwrap();
        assert_eq!((native.dim, up.dim), (40, 40));
        assert_eq!(native.bandwidth, Bandwidth::Narrowband);
        assert_eq!(up.bandwidth, Bandwidth::Narrowband);
        // upsampled analysis sees 16000 samples: same frame count, different values
        assert_eq!(native.n_frames, 98);
        assert_eq!(up.n_frames, 98);
        assert_ne!(native.frames, up.frames);

        let wb = tone(500.0, 16000, 16000);
        let a = fe.featurize_utterance(&wb, "w", Bandwidth::Wideband, FeatureScenario::Native).unwrap();
        let b = fe.featurize_utterance(&wb, "w", Bandwidth::Wideband, FeatureScenario::Upsample16k).unwrap();
        assert_eq!(a, b);

        assert!(matches!(
            fe.featurize_utterance(&wb, "w", Bandwidth::Narrowband, FeatureScenario::Native),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn featurization_is_deterministic() {
        let fe = Frontend::new(FrontendConfig::default()).unwrap();
        let w = tone(700.0, 16000, 5000);
        let a = fe.log_mel(&w, "x", Bandwidth::Wideband).unwrap();
        let b = fe.log_mel(&w, "x", Bandwidth::Wideband).unwrap();
        assert!(a.frames.iter().zip(&b.frames).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn scenario_names_parse() {
        for s in FeatureScenario::ALL {
            assert_eq!(s.name().parse::<FeatureScenario>().unwrap(), s);
            assert_eq!(FeatureScenario::from_code(s.code()).unwrap(), s);
        }
        assert!("am5".parse::<FeatureScenario>().is_err());
    }
}
