//! Audio I/O, band-limiting and 8 kHz <-> 16 kHz sample-rate conversion.

mod filter;
mod resample;
mod wav;

pub use filter::{band_limit, bessel_i0, kaiser, FilterKernel, KAISER_BETA};
pub use resample::{resample, ZERO_CROSSINGS};
pub use wav::{decode_wav, encode_wav, read_wav, write_wav};

use crate::error::{Error, Result};

pub const NARROWBAND_RATE: u32 = 8000;
pub const WIDEBAND_RATE: u32 = 16000;

/// Mono audio at a fixed sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, rate: u32) -> Result<Self> {
        if rate == 0 {
            return Err(Error::Config("sampling rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!("sample {i} is not finite")));
        }
        Ok(Waveform { samples, rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.rate as f64
    }
}

pub(crate) fn check_supported_rate(rate: u32) -> Result<()> {
    if rate == NARROWBAND_RATE || rate == WIDEBAND_RATE {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "unsupported sampling rate {rate} Hz (expected 8000 or 16000)"
        )))
    }
}

/// Root-mean-square of a slice; zero for an empty slice.
pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Indices of the central `fraction` of a signal of length `len`.
pub fn central_range(len: usize, fraction: f64) -> std::ops::Range<usize> {
    let margin = ((1.0 - fraction) / 2.0 * len as f64).round() as usize;
    margin..len.saturating_sub(margin).max(margin)
}
